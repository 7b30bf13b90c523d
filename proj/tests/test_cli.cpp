#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mfds/datakit.hpp"
#include "mfds/evalkit.hpp"

// End-to-end exercises of the command-line tool: generate -> train -> eval
// -> fold -> predict, plus resume and config-precedence behavior.
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run_cli(const std::string& args) {
  std::string cmd = std::string(MFDS_CLI_PATH) + " " + args + " 2>&1";
  std::array<char, 4096> buf;
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  EXPECT_NE(pipe, nullptr);
  while (fgets(buf.data(), buf.size(), pipe)) r.output += buf.data();
  int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path work_dir() {
  static fs::path dir = [] {
    fs::path p = fs::temp_directory_path() / "mfds_cli_e2e";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

// Tiny-but-complete configuration shared by the pipeline tests.
std::string tiny_sets() {
  return "--set model.base_channels=8 --set model.gsem_reduction=2 "
         "--set model.dfim_reduction=2 --set model.cbam_reduction=2 "
         "--set model.scm_grids=1,2,4 --set synth.size=32 "
         "--set train.batch_size=2";
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST(CliGenerate, WritesTriplesAndHonestSummary) {
  fs::path out = work_dir() / "data" / "train";
  RunResult r = run_cli("generate --count 6 --seed 5 " + tiny_sets() + " --out " + out.string());
  ASSERT_EQ(r.exit_code, 0) << r.output;
  mfds::Dataset ds = mfds::Dataset::open(out.string(), "");
  ASSERT_EQ(ds.size(), 6u);

  // The reported change fraction must equal a recount from the masks.
  double reported = -1;
  size_t pos = r.output.find("change-pixel fraction ");
  ASSERT_NE(pos, std::string::npos) << r.output;
  reported = std::stod(r.output.substr(pos + 22));
  int64_t change = 0, total = 0;
  for (size_t i = 0; i < ds.size(); ++i) {
    mfds::SamplePair p = ds.load(i);
    for (auto v : p.gt.data) change += v;
    total += static_cast<int64_t>(p.gt.data.size());
  }
  EXPECT_NEAR(reported, static_cast<double>(change) / total, 5e-7);
}

TEST(CliGenerate, SameSeedBitIdenticalFiles) {
  fs::path d1 = work_dir() / "gen_a", d2 = work_dir() / "gen_b";
  ASSERT_EQ(run_cli("generate --count 2 --seed 9 " + tiny_sets() + " --out " + d1.string())
                .exit_code,
            0);
  ASSERT_EQ(run_cli("generate --count 2 --seed 9 " + tiny_sets() + " --out " + d2.string())
                .exit_code,
            0);
  for (const char* sub : {"A", "B", "label"})
    for (const auto& e : fs::directory_iterator(d1 / sub)) {
      fs::path other = d2 / sub / e.path().filename();
      ASSERT_TRUE(fs::exists(other));
      EXPECT_EQ(slurp(e.path()), slurp(other)) << e.path();
    }
}

TEST(CliGenerate, UnwritableOutDirFails) {
  RunResult r = run_cli("generate --count 1 " + tiny_sets() + " --out /proc/nope/cannot");
  EXPECT_NE(r.exit_code, 0);
  EXPECT_FALSE(r.output.empty());
}

TEST(CliPipeline, TrainEvalFoldPredictAndResume) {
  fs::path data = work_dir() / "data";
  fs::path run = work_dir() / "run";
  // Training data were produced by CliGenerate.WritesTriplesAndHonestSummary.
  ASSERT_TRUE(fs::is_directory(data / "train"));

  RunResult tr = run_cli("train --data " + data.string() + " --out " + run.string() +
                         " --epochs 2 --seed 3 --lr 0.001 " + tiny_sets());
  ASSERT_EQ(tr.exit_code, 0) << tr.output;
  ASSERT_TRUE(fs::exists(run / "best.ckpt"));
  ASSERT_TRUE(fs::exists(run / "last.ckpt"));

  // One log record per epoch.
  {
    std::ifstream log(run / "train_log.jsonl");
    std::string line;
    int lines = 0;
    int last_epoch = -1;
    while (std::getline(log, line)) {
      ++lines;
      last_epoch = static_cast<int>(line.find("\"epoch\":") != std::string::npos
                                        ? std::stoi(line.substr(line.find("\"epoch\":") + 8))
                                        : -1);
    }
    EXPECT_EQ(lines, 2);
    EXPECT_EQ(last_epoch, 1);
  }

  // Resume continues the epoch numbering.
  RunResult rs = run_cli("train --data " + data.string() + " --out " + run.string() +
                         " --epochs 1 --seed 3 " + tiny_sets() + " --resume " +
                         (run / "last.ckpt").string());
  ASSERT_EQ(rs.exit_code, 0) << rs.output;
  {
    std::ifstream log(run / "train_log.jsonl");
    std::string line, last;
    int lines = 0;
    while (std::getline(log, line)) {
      ++lines;
      last = line;
    }
    EXPECT_EQ(lines, 3);
    EXPECT_NE(last.find("\"epoch\":2"), std::string::npos) << last;
  }

  // Evaluate with overlays and a machine-readable record.
  fs::path overlays = work_dir() / "overlays";
  fs::path metrics = work_dir() / "metrics.jsonl";
  RunResult ev = run_cli("eval --checkpoint " + (run / "best.ckpt").string() + " --data " +
                         data.string() + " --split train --overlay-dir " + overlays.string() +
                         " --metrics-out " + metrics.string() + " " + tiny_sets());
  ASSERT_EQ(ev.exit_code, 0) << ev.output;
  for (const char* name : {"F1", "IoU", "Precision", "Recall", "OA"})
    EXPECT_NE(ev.output.find(name), std::string::npos) << ev.output;
  EXPECT_TRUE(fs::exists(metrics));
  size_t overlay_count = std::distance(fs::directory_iterator(overlays), {});
  EXPECT_EQ(overlay_count, 6u);

  // Fold, verify, re-evaluate: metrics agree within 0.001 percentage points.
  fs::path folded = run / "folded.ckpt";
  RunResult fo = run_cli("fold --in " + (run / "best.ckpt").string() + " --out-checkpoint " +
                         folded.string() + " --probes 4 --probe-size 32");
  ASSERT_EQ(fo.exit_code, 0) << fo.output;
  EXPECT_NE(fo.output.find("max |pre - post|"), std::string::npos);

  RunResult ev2 = run_cli("eval --checkpoint " + folded.string() + " --data " + data.string() +
                          " --split train --metrics-out " + (work_dir() / "m2.jsonl").string() +
                          " " + tiny_sets());
  ASSERT_EQ(ev2.exit_code, 0) << ev2.output;
  auto parse_metric = [](const std::string& out, const std::string& name) {
    size_t pos = out.find(name);
    return std::stod(out.substr(pos + name.size()));
  };
  for (const char* name : {"F1", "IoU", "Precision", "Recall", "OA"})
    EXPECT_NEAR(parse_metric(ev.output, name), parse_metric(ev2.output, name), 1e-3) << name;

  // Double fold produces an identical checkpoint file.
  fs::path folded2 = run / "folded2.ckpt";
  RunResult fo2 = run_cli("fold --in " + folded.string() + " --out-checkpoint " +
                          folded2.string() + " --probes 2 --probe-size 32");
  ASSERT_EQ(fo2.exit_code, 0) << fo2.output;
  EXPECT_EQ(slurp(folded), slurp(folded2));

  // Predict on one generated pair; the mask must equal a re-threshold of the
  // written heatmap.
  fs::path pair_a = data / "train" / "A" / "synth-5-0.png";
  fs::path pair_b = data / "train" / "B" / "synth-5-0.png";
  fs::path pred = work_dir() / "pred" / "p0";
  RunResult pr = run_cli("predict --checkpoint " + (run / "best.ckpt").string() + " --image-a " +
                         pair_a.string() + " --image-b " + pair_b.string() + " --out-prefix " +
                         pred.string());
  ASSERT_EQ(pr.exit_code, 0) << pr.output;
  mfds::ImageU8 mask = mfds::read_png(pred.string() + "_mask.png");
  mfds::ImageU8 heat = mfds::read_png(pred.string() + "_heat.png");
  ASSERT_EQ(mask.h, 32);
  ASSERT_EQ(heat.w, 32);
  for (size_t i = 0; i < mask.data.size(); ++i) {
    EXPECT_EQ(mask.data[i], heat.data[i] >= 128 ? 255 : 0) << "pixel " << i;
    EXPECT_TRUE(mask.data[i] == 0 || mask.data[i] == 255);
  }
}

TEST(CliPredict, RejectsSizeMismatch) {
  fs::path dir = work_dir() / "mismatch";
  fs::create_directories(dir);
  mfds::write_png((dir / "a.png").string(), mfds::ImageU8(32, 32, 3));
  mfds::write_png((dir / "b.png").string(), mfds::ImageU8(32, 40, 3));
  fs::path ckpt = work_dir() / "run" / "best.ckpt";
  ASSERT_TRUE(fs::exists(ckpt));
  RunResult r = run_cli("predict --checkpoint " + ckpt.string() + " --image-a " +
                        (dir / "a.png").string() + " --image-b " + (dir / "b.png").string());
  EXPECT_NE(r.exit_code, 0);
  EXPECT_NE(r.output.find("differ"), std::string::npos) << r.output;
}

TEST(CliConfig, FileThenFlagPrecedence) {
  fs::path cfg = work_dir() / "run.cfg";
  std::ofstream os(cfg);
  os << "# test config\n"
     << "train.lr = 0.5\n"
     << "synth.size = 64\n"
     << "model.base_channels = 12\n";
  os.close();
  RunResult r = run_cli("print-config --config " + cfg.string() + " --lr 0.25");
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_NE(r.output.find("train.lr = 0.25"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("synth.size = 64"), std::string::npos);
  EXPECT_NE(r.output.find("model.base_channels = 12"), std::string::npos);

  RunResult bad = run_cli("print-config --set nonsense.key=1");
  EXPECT_EQ(bad.exit_code, 1);
}
