#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "advfield/advfield.hpp"

#ifndef ADVFIELD_GIT_DESCRIBE
#define ADVFIELD_GIT_DESCRIBE "unknown"
#endif

namespace fs = std::filesystem;
using namespace advfield;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

std::string format(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  detail::write_bytes(path, text);
}

/// The subcommand's full option set in config-file form, followed by the
/// build and timing keys. Passing it back through --config reruns the step.
void write_manifest(const CLI::App& sub, const fs::path& path, double wall_seconds) {
  std::string text = "# advfield " + sub.get_name() + "\n";
  text += sub.config_to_str(true, false);
  text += "git_describe=\"" + std::string(ADVFIELD_GIT_DESCRIBE) + "\"\n";
  text += "wall_time_s=" + format(wall_seconds) + "\n";
  write_text(path, text);
}

int class_id(const std::string& name) { return ClassTable::standard().id_of(name); }

FieldDims field_dims_for(int cls) {
  if (cls == classes::kCar) return kCarDims;
  if (cls == classes::kPerson) return kPersonDims;
  throw ConfigError("no field dimensions for class '" + ClassTable::standard().name(cls) + "' (use car or person)");
}

double default_step_for(int cls) { return cls == classes::kPerson ? 0.05 : 0.2; }

struct LoadedVictim {
  std::optional<SegNetMini> seg;
  std::optional<DetHeadMini> det;

  Victim view() const {
    Victim v;
    if (seg) v.seg = &*seg;
    if (det) v.det = &*det;
    return v;
  }
};

LoadedVictim load_victim(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("victim checkpoint not found: " + path.string());
  LoadedVictim v;
  const std::string task = checkpoint_task(path);
  if (task == "seg")
    v.seg = load_seg(path);
  else if (task == "det")
    v.det = load_det(path);
  else
    throw ConfigError(path.string() + ": unknown task '" + task + "'");
  return v;
}

std::vector<Scene> load_data(const fs::path& dir) { return read_dataset(dir); }

// ---------------------------------------------------------------------------

struct SimulateOpts {
  std::uint64_t seed = 1;
  std::string domain = "normal";
  int scenes = 10;
  int objects = 10;
  int first_index = 0;
  int channels = 32;
  double azimuth = 0.4;
  std::string out;
};

void run_simulate(const SimulateOpts& o) {
  if (o.scenes < 1) throw ConfigError("--scenes must be at least 1");
  if (o.objects < 1) throw ConfigError("--objects must be at least 1");
  if (o.first_index < 0) throw ConfigError("--first-index must be non-negative");
  SensorSpec sensor;
  sensor.channels = o.channels;
  sensor.azimuth_resolution_deg = o.azimuth;
  sensor.validate();
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < o.scenes; ++i) seeds.push_back(scene_seed(o.seed, static_cast<std::size_t>(o.first_index + i)));
  const Domain domain = parse_domain(o.domain);
  std::vector<std::string> warnings;
  std::vector<Scene> scenes(seeds.size());
  std::vector<std::vector<std::string>> w(seeds.size());
  parallel_for(seeds.size(), [&](std::size_t i) {
    scenes[i] = generate_layout(seeds[i], domain, o.objects, sensor, &w[i]);
    raycast(scenes[i]);
  });
  for (const auto& ws : w)
    for (const auto& s : ws) std::cerr << "warning: " << s << "\n";
  write_dataset(scenes, o.out, {{"objects", std::to_string(o.objects)}});
  std::size_t points = 0;
  for (const auto& s : scenes) points += s.cloud.size();
  std::cout << "wrote " << scenes.size() << " scenes (" << points << " points) to " << o.out << "\n";
}

struct TrainOpts {
  std::string task = "seg";
  std::string data;
  int epochs = 0;  // 0: task default
  double lr = 0.005;
  std::uint64_t seed = 1;
  std::string augment_bank;
  int k = 2;
  std::string out;
};

void run_train(const TrainOpts& o) {
  const std::vector<Scene> data = load_data(o.data);
  std::optional<FieldBank> bank;
  if (!o.augment_bank.empty()) bank = load_bank(o.augment_bank);
  TrainLog log;
  AugmentStats stats;
  if (o.task == "seg") {
    SegTrainConfig cfg;
    cfg.epochs = o.epochs > 0 ? o.epochs : 25;
    cfg.lr = o.lr;
    cfg.seed = o.seed;
    const SegNetMini net = train_seg_augmented(data, bank ? &*bank : nullptr, cfg, o.k, &log, &stats);
    save_victim(net, o.out);
  } else if (o.task == "det") {
    DetTrainConfig cfg;
    cfg.epochs = o.epochs > 0 ? o.epochs : 30;
    cfg.lr = o.lr;
    cfg.seed = o.seed;
    const DetHeadMini net = train_det_augmented(data, bank ? &*bank : nullptr, cfg, o.k, &log, &stats);
    save_victim(net, o.out);
  } else {
    throw ConfigError("--task must be seg or det");
  }
  std::string csv = "epoch,loss\n";
  for (std::size_t e = 0; e < log.epoch_loss.size(); ++e) csv += std::to_string(e) + "," + format(log.epoch_loss[e]) + "\n";
  write_text(o.out + ".loss.csv", csv);
  if (bank)
    std::cout << "augmented " << stats.deformed.load() << " scenes, " << stats.no_object.load()
              << " without an eligible object\n";
  std::cout << "final epoch loss " << format(log.epoch_loss.empty() ? 0.0 : log.epoch_loss.back()) << "\n";
}

struct AttackOpts {
  std::string mode = "untargeted";
  std::string cls = "car";
  std::string target;
  std::string victim;
  std::string data;
  std::string probe;
  int groups = 12;
  int variants = 6;
  double eps = 0.3;
  double psi = 0.3;
  int iters = 50;
  double lr = 0.0;    // 0: 0.05 for detection, 0.01 for segmentation
  double step = 0.0;  // 0: class default
  int k = 2;
  std::uint64_t seed = 1;
  std::string boxes = "gt";
  double drop_boxes = 0.0;
  bool no_intensity = false;
  int batch = 4;
  std::string out;
};

AttackConfig attack_config(const AttackOpts& o) {
  AttackConfig cfg;
  cfg.mode = parse_attack_mode(o.mode);
  cfg.adversarial_class = class_id(o.cls);
  if (cfg.mode == AttackMode::seg_targeted) {
    if (o.target.empty()) throw ConfigError("--target is required for targeted attacks");
    cfg.target_class = class_id(o.target);
  } else if (!o.target.empty()) {
    throw ConfigError("--target only applies to targeted attacks");
  }
  if (cfg.mode == AttackMode::detection && cfg.adversarial_class != classes::kCar)
    throw ConfigError("the detector only detects cars; use --class car");
  cfg.epsilon = o.eps;
  cfg.psi = o.psi;
  cfg.iterations = o.iters;
  cfg.lr = o.lr > 0.0 ? o.lr : (cfg.mode == AttackMode::detection ? 0.05 : 0.01);
  cfg.k = o.k;
  cfg.groups = o.groups;
  cfg.variants = o.variants;
  cfg.dims = field_dims_for(cfg.adversarial_class);
  cfg.step = o.step > 0.0 ? o.step : default_step_for(cfg.adversarial_class);
  cfg.intensity = !o.no_intensity;
  cfg.boxes = parse_box_source(o.boxes);
  cfg.drop_fraction = o.drop_boxes;
  cfg.seed = o.seed;
  cfg.batch_scenes = o.batch;
  cfg.validate();
  return cfg;
}

void run_attack(const AttackOpts& o) {
  const AttackConfig cfg = attack_config(o);
  const LoadedVictim victim = load_victim(o.victim);
  if ((cfg.mode == AttackMode::detection) != victim.det.has_value())
    throw ConfigError("attack mode '" + o.mode + "' does not match the victim checkpoint");
  const std::vector<Scene> data = load_data(o.data);
  const std::vector<Scene> probe = o.probe.empty() ? std::vector<Scene>{} : load_data(o.probe);
  FieldBank bank = make_bank(cfg.adversarial_class, o.cls, cfg.groups, cfg.variants, cfg.dims, cfg.step, cfg.epsilon,
                             cfg.psi, cfg.intensity, cfg.seed);
  const AttackTrace trace = fit_bank(bank, data, victim.view(), cfg, probe, data.size());
  for (const auto& w : trace.warnings) std::cerr << "warning: " << w << "\n";
  save_bank(bank, o.out);
  write_text(o.out + ".trace.csv", trace_csv(trace));
  std::cout << "fitted " << bank.fields.size() << " fields x " << (bank.fields.empty() ? 0 : bank.fields[0].size())
            << " vectors";
  if (!probe.empty() && !trace.probe_metric.empty())
    std::cout << "; probe " << format(trace.probe_clean) << " -> " << format(trace.probe_metric.back());
  std::cout << "\n";
}

struct BaselineOpts {
  std::string kind = "l2";
  AttackOpts attack;
  double lambda = 0.1;
};

void run_baseline(const BaselineOpts& o) {
  AttackOpts ao = o.attack;
  if (ao.lr <= 0.0) ao.lr = 0.05;
  const AttackConfig cfg = attack_config(ao);
  const BaselineKind kind = parse_baseline_kind(o.kind);
  const LoadedVictim victim = load_victim(ao.victim);
  if ((cfg.mode == AttackMode::detection) != victim.det.has_value())
    throw ConfigError("attack mode '" + ao.mode + "' does not match the victim checkpoint");
  std::vector<Scene> scenes = load_data(ao.data);
  std::vector<PointCloud> out(scenes.size());
  for (std::size_t s = 0; s < scenes.size(); ++s)
    out[s] = baseline_attack_scene(kind, scenes[s], s, victim.view(), cfg, o.lambda);
  for (std::size_t s = 0; s < scenes.size(); ++s) scenes[s].cloud = std::move(out[s]);
  write_dataset(scenes, ao.out, {{"baseline", to_string(kind)}});
  std::cout << "wrote " << scenes.size() << " attacked scenes to " << ao.out << "\n";
}

struct EvalOpts {
  std::string victim;
  std::string data;
  std::string metrics = "miou";
  std::string bank;
  std::string attacked;
  std::string boxes = "gt";
  std::uint64_t attack_seed = 1;
  int k = 2;
  std::uint64_t seed = 1;
  std::string out;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

void run_eval(const EvalOpts& o) {
  const LoadedVictim lv = load_victim(o.victim);
  const Victim victim = lv.view();
  const std::vector<Scene> scenes = load_data(o.data);
  const ClassTable table = ClassTable::standard();
  fs::create_directories(o.out);

  // Attacked clouds, from a bank or a baseline dataset.
  std::optional<std::vector<PointCloud>> attacked;
  if (!o.bank.empty() && !o.attacked.empty()) throw ConfigError("give either --bank or --attacked, not both");
  if (!o.bank.empty()) {
    const FieldBank bank = load_bank(o.bank);
    AttackConfig cfg;
    cfg.mode = lv.det ? AttackMode::detection : AttackMode::seg_untargeted;
    cfg.adversarial_class = bank.class_id;
    cfg.groups = bank.groups;
    cfg.variants = bank.variants;
    cfg.epsilon = bank.epsilon;
    cfg.psi = bank.psi;
    cfg.boxes = parse_box_source(o.boxes);
    cfg.seed = o.attack_seed;
    cfg.k = o.k;
    std::vector<PointCloud> a(scenes.size());
    parallel_for(scenes.size(), [&](std::size_t s) { a[s] = attack_scene(scenes[s], bank, cfg, s); });
    attacked = std::move(a);
  } else if (!o.attacked.empty()) {
    const std::vector<Scene> as = load_data(o.attacked);
    if (as.size() != scenes.size()) throw ConfigError("--attacked holds a different number of scenes than --data");
    attacked = clouds_of(as);
  }

  std::string summary;
  for (const std::string& m : split_list(o.metrics)) {
    if (m == "miou") {
      if (!victim.seg) throw ConfigError("miou needs a segmentation victim");
      const IouReport clean = iou_report(seg_confusion(*victim.seg, scenes));
      std::optional<IouReport> att;
      if (attacked) {
        ConfusionMatrix cm(victim.seg->num_classes());
        std::vector<ConfusionMatrix> cms(attacked->size(), ConfusionMatrix(victim.seg->num_classes()));
        parallel_for(attacked->size(), [&](std::size_t s) {
          cms[s].add((*attacked)[s].semantic, victim.seg->predict((*attacked)[s]));
        });
        for (const auto& c : cms) cm += c;
        att = iou_report(cm);
      }
      std::string csv = attacked ? "class,iou,present,attacked_iou\n" : "class,iou,present\n";
      for (std::size_t c = 0; c < clean.iou.size(); ++c) {
        csv += table.name(c) + "," + format(clean.iou[c]) + "," + (clean.present[c] ? "1" : "0");
        if (att) csv += "," + format(att->iou[c]);
        csv += "\n";
      }
      csv += "mean," + format(clean.mean) + ",1";
      if (att) csv += "," + format(att->mean);
      csv += "\n";
      write_text(fs::path(o.out) / "miou.csv", csv);
      summary += "mIoU " + format(clean.mean) + (att ? " (attacked " + format(att->mean) + ")" : "") + "\n";
    } else if (m == "ap") {
      if (!victim.det) throw ConfigError("ap needs a detection victim");
      const auto dets = detect_all(*victim.det, clouds_of(scenes));
      const auto gt = visible_car_boxes(scenes);
      std::string csv = "iou_threshold,ap\n";
      for (double thr : {0.5, 0.7}) {
        const double ap = average_precision(dets, gt, thr);
        csv += format(thr) + "," + format(ap) + "\n";
        summary += "AP@" + format(thr) + " " + format(ap) + "\n";
      }
      write_text(fs::path(o.out) / "ap.csv", csv);
    } else if (m == "asr") {
      if (!victim.det) throw ConfigError("asr needs a detection victim");
      if (!attacked) throw ConfigError("asr needs --bank or --attacked");
      const auto clean = detect_all(*victim.det, clouds_of(scenes));
      const auto att = detect_all(*victim.det, *attacked);
      std::vector<std::vector<OrientedBox>> gt;
      for (const auto& s : scenes) gt.push_back(s.boxes_of(classes::kCar));
      const AsrResult r = asr(clean, att, gt, 0.7);
      write_text(fs::path(o.out) / "asr.csv", "asr_percent,detected_clean,lost\n" + format(r.percent) + "," +
                                                   std::to_string(r.detected_clean) + "," + std::to_string(r.lost) +
                                                   "\n");
      summary += "ASR " + format(r.percent) + "% of " + std::to_string(r.detected_clean) + " detected cars\n";
    } else if (m == "distance-bins") {
      if (!victim.seg) throw ConfigError("distance-bins needs a segmentation victim");
      std::array<ConfusionMatrix, kDistanceBins> bins;
      bins.fill(ConfusionMatrix(victim.seg->num_classes()));
      std::vector<std::array<ConfusionMatrix, kDistanceBins>> per(scenes.size());
      parallel_for(scenes.size(), [&](std::size_t s) {
        const PointCloud& c = attacked ? (*attacked)[s] : scenes[s].cloud;
        per[s] = distance_binned_confusion(c.positions, victim.seg->predict(c), c.semantic,
                                           scenes[s].sensor.origin(), victim.seg->num_classes());
      });
      for (const auto& p : per)
        for (int b = 0; b < kDistanceBins; ++b) bins[b] += p[b];
      std::string csv = "bin_start_m,bin_end_m,class,iou,present\n";
      for (int b = 0; b < kDistanceBins; ++b) {
        const IouReport r = iou_report(bins[b]);
        for (std::size_t c = 0; c < r.iou.size(); ++c)
          csv += format(b * kDistanceBinWidth) + "," + format((b + 1) * kDistanceBinWidth) + "," + table.name(c) + "," +
                 format(r.iou[c]) + "," + (r.present[c] ? "1" : "0") + "\n";
      }
      write_text(fs::path(o.out) / "distance_bins.csv", csv);
      summary += "distance bins written\n";
    } else if (m == "intensity-suite") {
      const auto rows = intensity_suite(victim, scenes, o.seed);
      std::string csv = victim.seg ? "transform,class,iou,present\n" : "transform,ap\n";
      for (const auto& r : rows) {
        if (victim.seg) {
          for (std::size_t c = 0; c < r.report.iou.size(); ++c)
            csv += std::string("\"") + to_string(r.transform) + "\"," + table.name(c) + "," + format(r.report.iou[c]) +
                   "," + (r.report.present[c] ? "1" : "0") + "\n";
          csv += std::string("\"") + to_string(r.transform) + "\",mean," + format(r.report.mean) + ",1\n";
          summary += std::string("intensity ") + to_string(r.transform) + ": mIoU " + format(r.report.mean) + "\n";
        } else {
          csv += std::string("\"") + to_string(r.transform) + "\"," + format(r.ap) + "\n";
          summary += std::string("intensity ") + to_string(r.transform) + ": AP@0.5 " + format(r.ap) + "\n";
        }
      }
      write_text(fs::path(o.out) / "intensity_suite.csv", csv);
    } else {
      throw ConfigError("unknown metric '" + m + "' (expected miou, ap, asr, distance-bins, intensity-suite)");
    }
  }
  write_text(fs::path(o.out) / "summary.txt", summary);
  std::cout << summary;
}

struct AnalyzeOpts {
  std::string bank;
  std::uint64_t init_seed = 0;
  bool has_init_seed = false;
  std::string out;
};

void run_analyze(const AnalyzeOpts& o) {
  const FieldBank bank = load_bank(o.bank);
  const auto stats = analyze_fields(bank, o.has_init_seed ? o.init_seed : bank.init_seed);
  write_text(o.out, field_stats_csv(stats));
  std::size_t active = 0, roots = 0;
  for (const auto& s : stats) {
    active += s.active;
    roots += s.roots;
  }
  std::cout << active << " of " << roots << " vectors active\n";
}

void add_attack_options(CLI::App* sub, AttackOpts& a) {
  sub->add_option("--mode", a.mode, "untargeted, targeted or detection")->capture_default_str();
  sub->add_option("--class", a.cls, "adversarial class")->capture_default_str();
  sub->add_option("--target", a.target, "target class (targeted mode)");
  sub->add_option("--victim", a.victim, "victim checkpoint")->required();
  sub->add_option("--data", a.data, "dataset directory")->required();
  sub->add_option("--eps", a.eps, "spatial bound (m)")->capture_default_str();
  sub->add_option("--psi", a.psi, "intensity bound")->capture_default_str();
  sub->add_option("--iters", a.iters, "iterations")->capture_default_str();
  sub->add_option("--lr", a.lr, "step size (0: mode default)")->capture_default_str();
  sub->add_option("--seed", a.seed, "seed")->capture_default_str();
  sub->add_option("--boxes", a.boxes, "gt or axis-aligned")->capture_default_str();
  sub->add_option("--drop-boxes", a.drop_boxes, "fraction of boxes dropped")->capture_default_str();
  sub->add_flag("--no-intensity", a.no_intensity, "leave intensities unchanged");
}

std::string unquote(std::string v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') v = v.substr(1, v.size() - 2);
  return v;
}

/// Replaces `--config FILE` after the subcommand by the file's key=value
/// entries as flags, placed before the remaining arguments so that those
/// still override. Keys the subcommand does not know (build and timing
/// records) are skipped.
std::vector<std::string> expand_config(CLI::App& app, int argc, char** argv) {
  std::vector<std::string> in(argv, argv + argc), out;
  std::size_t sub_pos = in.size();
  CLI::App* sub = nullptr;
  for (std::size_t i = 1; i < in.size(); ++i) {
    if (auto* s = app.get_subcommand_no_throw(in[i])) {
      sub_pos = i;
      sub = s;
      break;
    }
  }
  if (!sub) return in;
  std::string file;
  std::vector<std::string> rest;
  for (std::size_t i = sub_pos + 1; i < in.size(); ++i) {
    if (in[i] == "--config" && i + 1 < in.size()) {
      file = in[++i];
    } else if (in[i].rfind("--config=", 0) == 0) {
      file = in[i].substr(9);
    } else {
      rest.push_back(in[i]);
    }
  }
  out.assign(in.begin(), in.begin() + static_cast<std::ptrdiff_t>(sub_pos) + 1);
  if (!file.empty()) {
    if (!fs::exists(file)) throw ConfigError("config file not found: " + file);
    std::istringstream text(detail::read_bytes(file));
    for (std::string line; std::getline(text, line);) {
      if (line.empty() || line[0] == '#' || line[0] == '[') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError(file + ": expected key=value, got '" + line + "'");
      const std::string key = line.substr(0, eq);
      const std::string value = unquote(line.substr(eq + 1));
      if (key == "config") continue;
      const CLI::Option* opt = sub->get_option_no_throw("--" + key);
      if (!opt) continue;
      if (opt->get_expected_max() == 0) {
        if (value == "true" || value == "1") out.push_back("--" + key);
        continue;
      }
      if (value.empty()) continue;
      out.push_back("--" + key);
      out.push_back(value);
    }
  }
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial vector fields for LiDAR perception"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (default: ADVFIELD_THREADS or all cores)");

  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string config_unused;
  auto configure = [&config_unused](CLI::App* sub) {
    sub->add_option("--config", config_unused, "rerun from a manifest (explicit flags override it)");
  };

  SimulateOpts sim;
  auto* s_sim = app.add_subcommand("simulate", "ray-cast a synthetic dataset");
  configure(s_sim);
  s_sim->add_option("--seed", sim.seed, "base seed")->capture_default_str();
  s_sim->add_option("--domain", sim.domain, "normal, rare or damaged")->capture_default_str();
  s_sim->add_option("--scenes", sim.scenes, "number of scenes")->capture_default_str();
  s_sim->add_option("--objects", sim.objects, "objects per scene")->capture_default_str();
  s_sim->add_option("--first-index", sim.first_index, "index of the first scene")->capture_default_str();
  s_sim->add_option("--channels", sim.channels, "elevation channels")->capture_default_str();
  s_sim->add_option("--azimuth", sim.azimuth, "azimuth resolution (deg)")->capture_default_str();
  s_sim->add_option("--out", sim.out, "output directory")->required();

  TrainOpts tr;
  auto* s_tr = app.add_subcommand("train-victim", "train a segmentation or detection victim");
  configure(s_tr);
  s_tr->add_option("--task", tr.task, "seg or det")->capture_default_str();
  s_tr->add_option("--data", tr.data, "training dataset")->required();
  s_tr->add_option("--epochs", tr.epochs, "epochs (0: task default)")->capture_default_str();
  s_tr->add_option("--lr", tr.lr, "learning rate")->capture_default_str();
  s_tr->add_option("--seed", tr.seed, "seed")->capture_default_str();
  s_tr->add_option("--augment-bank", tr.augment_bank, "field bank for adversarial augmentation");
  s_tr->add_option("--k", tr.k, "nearest vectors per point")->capture_default_str();
  s_tr->add_option("--out", tr.out, "checkpoint path")->required();

  AttackOpts at;
  auto* s_at = app.add_subcommand("attack", "fit a vector field bank against a victim");
  configure(s_at);
  add_attack_options(s_at, at);
  s_at->add_option("--G", at.groups, "rotation groups")->capture_default_str();
  s_at->add_option("--N", at.variants, "variants per group")->capture_default_str();
  s_at->add_option("--step", at.step, "lattice step (0: class default)")->capture_default_str();
  s_at->add_option("--k", at.k, "nearest vectors per point")->capture_default_str();
  s_at->add_option("--batch", at.batch, "scenes per update")->capture_default_str();
  s_at->add_option("--probe", at.probe, "held-out dataset scored after every iteration");
  s_at->add_option("--out", at.out, "bank path (.vfb)")->required();

  BaselineOpts bl;
  auto* s_bl = app.add_subcommand("baseline-attack", "sample-specific baseline attacks");
  configure(s_bl);
  s_bl->add_option("--kind", bl.kind, "l2, chamfer, remove or generate")->capture_default_str();
  add_attack_options(s_bl, bl.attack);
  s_bl->add_option("--lambda", bl.lambda, "Chamfer weight")->capture_default_str();
  s_bl->add_option("--out", bl.attack.out, "output dataset directory")->required();

  EvalOpts ev;
  auto* s_ev = app.add_subcommand("eval", "evaluate a victim");
  configure(s_ev);
  s_ev->add_option("--victim", ev.victim, "victim checkpoint")->required();
  s_ev->add_option("--data", ev.data, "dataset directory")->required();
  s_ev->add_option("--metrics", ev.metrics, "comma list of miou, ap, asr, distance-bins, intensity-suite")
      ->capture_default_str();
  s_ev->add_option("--bank", ev.bank, "attack the data with this bank");
  s_ev->add_option("--attacked", ev.attacked, "attacked copy of --data (e.g. a baseline output)");
  s_ev->add_option("--boxes", ev.boxes, "anchor boxes for --bank: gt or axis-aligned")->capture_default_str();
  s_ev->add_option("--attack-seed", ev.attack_seed, "seed for --bank box selection")->capture_default_str();
  s_ev->add_option("--k", ev.k, "nearest vectors per point")->capture_default_str();
  s_ev->add_option("--seed", ev.seed, "seed for the intensity suite")->capture_default_str();
  s_ev->add_option("--out", ev.out, "report directory")->required();

  AnalyzeOpts an;
  auto* s_an = app.add_subcommand("analyze-fields", "per-field activity statistics");
  configure(s_an);
  s_an->add_option("--bank", an.bank, "bank path")->required();
  auto* init = s_an->add_option("--init-seed", an.init_seed, "initialization seed (default: the bank's)");
  s_an->add_option("--out", an.out, "CSV path")->required();

  std::vector<std::string> args;
  try {
    args = expand_config(app, argc, argv);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  std::vector<char*> cargs;
  for (auto& a : args) cargs.push_back(a.data());
  try {
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  if (threads < 0) {
    std::cerr << "error: --threads must be non-negative\n";
    return kExitConfig;
  }
  set_thread_count(threads);
  const auto t0 = std::chrono::steady_clock::now();
  auto wall = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
  try {
    if (s_sim->parsed()) {
      run_simulate(sim);
      write_manifest(*s_sim, fs::path(sim.out) / "manifest.txt", wall());
    } else if (s_tr->parsed()) {
      run_train(tr);
      write_manifest(*s_tr, tr.out + ".manifest", wall());
    } else if (s_at->parsed()) {
      run_attack(at);
      write_manifest(*s_at, at.out + ".manifest", wall());
    } else if (s_bl->parsed()) {
      run_baseline(bl);
      write_manifest(*s_bl, fs::path(bl.attack.out) / "manifest.txt", wall());
    } else if (s_ev->parsed()) {
      run_eval(ev);
      write_manifest(*s_ev, fs::path(ev.out) / "manifest.txt", wall());
    } else if (s_an->parsed()) {
      an.has_init_seed = init->count() > 0;
      run_analyze(an);
      write_manifest(*s_an, an.out + ".manifest", wall());
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return 0;
}
