#ifndef ADVFIELD_ADVFIELD_HPP
#define ADVFIELD_ADVFIELD_HPP

#include "advfield/attack.hpp"
#include "advfield/augment.hpp"
#include "advfield/baselines.hpp"
#include "advfield/common.hpp"
#include "advfield/detector.hpp"
#include "advfield/geometry.hpp"
#include "advfield/io.hpp"
#include "advfield/metrics.hpp"
#include "advfield/nn.hpp"
#include "advfield/point_cloud.hpp"
#include "advfield/rotation_groups.hpp"
#include "advfield/segmenter.hpp"
#include "advfield/simulator.hpp"
#include "advfield/vector_field.hpp"

#endif
