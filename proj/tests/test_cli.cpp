#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

class TempDir {
public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("advfield_cli_" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

private:
  fs::path path_;
};

struct RunResult {
  int code = -1;
  std::string output;
};

RunResult run(const std::string& args, const fs::path& log_dir) {
  const fs::path log = log_dir / "cli.log";
  const std::string cmd = std::string(ADVFIELD_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  r.output.assign(std::istreambuf_iterator<char>(in), {});
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Every file under `root` (or `root` itself), keyed by relative path;
// manifests are skipped because they record wall time.
std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  if (fs::is_regular_file(root)) {
    out[root.filename().string()] = slurp(root);
    return out;
  }
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const std::string name = fs::relative(e.path(), root).string();
    if (name.find("manifest") != std::string::npos) continue;
    out[name] = slurp(e.path());
  }
  return out;
}

const char* kTinySim = "--scenes 3 --channels 8 --azimuth 2 --objects 8";

}  // namespace

TEST(Cli, UsageErrorsExitWithConfigCode) {
  TempDir t;
  EXPECT_EQ(run("", t.path()).code, 2);
  EXPECT_EQ(run("frobnicate", t.path()).code, 2);
  EXPECT_EQ(run("simulate", t.path()).code, 2);  // --out missing
  EXPECT_EQ(run("simulate --out " + (t / "d") + " --scenes nope", t.path()).code, 2);
  EXPECT_EQ(run("--help", t.path()).code, 0);
  const RunResult r = run("simulate --out " + (t / "d") + " --domain foggy", t.path());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("foggy"), std::string::npos);
  EXPECT_EQ(run("--threads -1 simulate --out " + (t / "d"), t.path()).code, 2);
  EXPECT_EQ(run("simulate --config " + (t / "missing.txt") + " --out " + (t / "d"), t.path()).code, 2);
}

TEST(Cli, MissingInputsExitWithConfigCode) {
  TempDir t;
  ASSERT_EQ(run(std::string("simulate ") + kTinySim + " --out " + (t / "data"), t.path()).code, 0);
  EXPECT_EQ(run("train-victim --data " + (t / "nowhere") + " --out " + (t / "v.ckpt"), t.path()).code, 2);
  EXPECT_EQ(run("train-victim --task tree --epochs 1 --data " + (t / "data") + " --out " + (t / "v.ckpt"), t.path()).code, 2);
  EXPECT_EQ(run("eval --victim " + (t / "none.ckpt") + " --data " + (t / "data") + " --out " + (t / "r"), t.path()).code,
            2);
  ASSERT_EQ(run("train-victim --epochs 1 --data " + (t / "data") + " --out " + (t / "v.ckpt"), t.path()).code, 0);
  EXPECT_EQ(run("eval --victim " + (t / "v.ckpt") + " --data " + (t / "data") + " --metrics miou,magic --out " +
                    (t / "r"),
                t.path())
                .code,
            2);
  EXPECT_EQ(run("attack --mode sideways --victim " + (t / "v.ckpt") + " --data " + (t / "data") + " --out " +
                    (t / "b.vfb"),
                t.path())
                .code,
            2);
}

TEST(Cli, DivergentTrainingExitsWithNumericCode) {
  TempDir t;
  ASSERT_EQ(run(std::string("simulate ") + kTinySim + " --out " + (t / "data"), t.path()).code, 0);
  const RunResult r =
      run("train-victim --epochs 3 --lr 1e308 --data " + (t / "data") + " --out " + (t / "v.ckpt"), t.path());
  EXPECT_EQ(r.code, 3) << r.output;
}

// Runs every subcommand once, then reruns each from its manifest with 1 and
// 4 worker threads and compares the outputs byte for byte.
TEST(Cli, ManifestRerunsAreBitIdentical) {
  TempDir t;
  struct Step {
    std::string name, args, out, manifest;
  };
  const std::string data = t / "data", ckpt = t / "v.ckpt", bank = t / "b.vfb";
  const std::vector<Step> steps{
      {"simulate", std::string(kTinySim) + " --seed 5 --domain damaged", data, data + "/manifest.txt"},
      {"train-victim", "--epochs 2 --data " + data, ckpt, ckpt + ".manifest"},
      {"attack", "--victim " + ckpt + " --data " + data + " --probe " + data + " --G 2 --N 2 --iters 2", bank,
       bank + ".manifest"},
      {"baseline-attack", "--kind generate --iters 2 --victim " + ckpt + " --data " + data, t / "gen",
       t / "gen/manifest.txt"},
      {"eval",
       "--victim " + ckpt + " --data " + data + " --bank " + bank + " --metrics miou,distance-bins,intensity-suite",
       t / "report", t / "report/manifest.txt"},
      {"analyze-fields", "--bank " + bank, t / "fields.csv", t / "fields.csv.manifest"},
  };
  for (const auto& s : steps) {
    const RunResult first = run(s.name + " " + s.args + " --out " + s.out, t.path());
    ASSERT_EQ(first.code, 0) << s.name << ": " << first.output;
    ASSERT_TRUE(fs::exists(s.manifest)) << s.name;
    const auto want = snapshot(s.out);
    ASSERT_FALSE(want.empty());
    for (int threads : {1, 4}) {
      const std::string again = s.out + ".rerun" + std::to_string(threads);
      const RunResult r = run("--threads " + std::to_string(threads) + " " + s.name + " --config " + s.manifest +
                                  " --out " + again,
                              t.path());
      ASSERT_EQ(r.code, 0) << s.name << ": " << r.output;
      const auto got = snapshot(again);
      ASSERT_EQ(got.size(), want.size()) << s.name;
      for (const auto& [name, bytes] : want) {
        const std::string key = fs::is_regular_file(s.out) ? fs::path(again).filename().string() : name;
        ASSERT_TRUE(got.count(key)) << s.name << " lost " << name;
        EXPECT_TRUE(got.at(key) == bytes) << s.name << ": " << name << " differs with " << threads << " threads";
      }
    }
  }
  // Side files of single-file outputs are deterministic too.
  EXPECT_EQ(slurp(ckpt + ".loss.csv"), slurp(ckpt + ".rerun4.loss.csv"));
  EXPECT_EQ(slurp(bank + ".trace.csv"), slurp(bank + ".rerun1.trace.csv"));
  const std::string manifest = slurp(ckpt + ".manifest");
  EXPECT_NE(manifest.find("epochs=2"), std::string::npos);
  EXPECT_NE(manifest.find("wall_time_s="), std::string::npos);
  EXPECT_NE(manifest.find("git_describe="), std::string::npos);
}

TEST(Cli, ExplicitFlagsOverrideTheManifest) {
  TempDir t;
  ASSERT_EQ(run(std::string("simulate ") + kTinySim + " --out " + (t / "a"), t.path()).code, 0);
  ASSERT_EQ(run("simulate --config " + (t / "a/manifest.txt") + " --scenes 1 --out " + (t / "b"), t.path()).code, 0);
  const std::string m = slurp(t.path() / "b/manifest.txt");
  EXPECT_NE(m.find("scenes=1"), std::string::npos);
  EXPECT_NE(m.find("channels=8"), std::string::npos);
}
