#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "psmmlab/metrics.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(PSMMLAB_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::set<std::string> parameter_names(const fs::path& ckpt) {
  std::ifstream in(ckpt / "index.txt");
  std::set<std::string> names;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') names.insert(line.substr(0, line.find(' ')));
  return names;
}

}  // namespace

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fixture::scratch_dir("cli");
    ASSERT_EQ(run("synth --root " + root().string() + " --subjects 3 --frames 4 --side 16 --seed 1"), 0);
    std::ofstream table(dir_ / "tiny.txt");
    table << "# one subject per split and ethnicity\n"
          << "1_1 train A,C,E color,depth,ir real,print,replay 1-1\n"
          << "1_1 valid A,C,E color,depth,ir real,print,replay 2-2\n"
          << "1_1 test A,C,E color,depth,ir real,print,replay 3-3\n"
          << "1_2 train A,C,E color,depth,ir real,print,replay 1-1\n"
          << "1_2 valid A,C,E color,depth,ir real,print,replay 2-2\n"
          << "1_2 test A,C,E color,depth,ir real,print,replay 3-3\n";
  }
  static fs::path root() { return dir_ / "data"; }
  static std::string common(const std::string& variant, const fs::path& out) {
    return "--root " + root().string() + " --protocol-table " + (dir_ / "tiny.txt").string() +
           " --preset toy --variant " + variant + " --k 3 --out " + out.string();
  }
  static std::string base(const std::string& variant, const fs::path& out, int epochs = 1) {
    return common(variant, out) + " --epochs " + std::to_string(epochs) + " --batch 6 --lr 0.01";
  }
  static inline fs::path dir_;
};

TEST_F(Cli, UsageAndInputErrors) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("train"), 2);
  EXPECT_EQ(run("train --root " + (dir_ / "missing").string() + " --preset toy"), 2);
  EXPECT_EQ(run("train " + base("psmm", dir_ / "bad") + " --variant bogus"), 2);
  EXPECT_EQ(run("split --root " + root().string() + " --protocol 1_1"), 2);  // no subject 201..300
  EXPECT_EQ(run("synth --root " + (dir_ / "s").string() + " --side 4"), 2);
}

TEST_F(Cli, SplitWritesManifests) {
  const fs::path out = dir_ / "split";
  ASSERT_EQ(run("split --root " + root().string() + " --protocol-table " + (dir_ / "tiny.txt").string() +
                " --protocol 1_1 --out " + out.string()),
            0);
  std::ifstream in(out / "valid.txt");
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    EXPECT_NE(line.find("_0002/"), std::string::npos) << line;
  }
  EXPECT_EQ(n, 3u * 4 * 3);
}

TEST_F(Cli, PoolWritesDynamicImages) {
  const fs::path data = dir_ / "pooldata";
  ASSERT_EQ(run("synth --root " + data.string() + " --subjects 1 --frames 4 --side 8"), 0);
  ASSERT_EQ(run("pool --root " + data.string() + " --k 2 --modalities ir"), 0);
  EXPECT_TRUE(fs::exists(data / "A_0001/real_1/ir/dyn/frame_0000.png"));
  EXPECT_TRUE(fs::exists(data / "A_0001/real_1/ir/dyn/frame_0002.png"));
  EXPECT_FALSE(fs::exists(data / "A_0001/real_1/ir/dyn/frame_0001.png"));
  EXPECT_FALSE(fs::exists(data / "A_0001/real_1/color/dyn"));
  // The catalog still sees the original clips only.
  EXPECT_EQ(run("pool --root " + data.string() + " --k 2 --modalities ir"), 0);
}

TEST_F(Cli, SameSeedSameCheckpointBytes) {
  const fs::path a = dir_ / "det_a", b = dir_ / "det_b";
  ASSERT_EQ(run("train " + base("nhf", a) + " --seed 5"), 0);
  ASSERT_EQ(run("train " + base("nhf", b) + " --seed 5"), 0);
  EXPECT_EQ(slurp(a / "checkpoint/weights.bin"), slurp(b / "checkpoint/weights.bin"));
  EXPECT_EQ(slurp(a / "checkpoint/index.txt"), slurp(b / "checkpoint/index.txt"));
  EXPECT_FALSE(slurp(a / "checkpoint/weights.bin").empty());
}

TEST_F(Cli, VariantsDifferInParameterNames) {
  const fs::path n = dir_ / "var_nhf", p = dir_ / "var_psmm";
  ASSERT_EQ(run("train " + base("nhf", n) + " --max-steps 1"), 0);
  ASSERT_EQ(run("train " + base("psmm", p) + " --max-steps 1"), 0);
  const auto a = parameter_names(n / "checkpoint"), b = parameter_names(p / "checkpoint");
  EXPECT_FALSE(a.empty());
  EXPECT_NE(a, b);
}

TEST_F(Cli, EvalRejectsIncompatibleCheckpoint) {
  const fs::path out = dir_ / "incompat";
  ASSERT_EQ(run("train " + base("nhf", out) + " --max-steps 1"), 0);
  EXPECT_EQ(run("eval " + common("psmm", out)), 4);
  EXPECT_EQ(run("eval " + common("nhf", out) + " --modalities color,depth"), 4);
  EXPECT_EQ(run("eval " + common("nhf", out) + " --norm none"), 4);
  ASSERT_EQ(run("eval " + common("nhf", out)), 0);
  std::ifstream in(out / "report.txt");
  const auto r = psmmlab::metrics::report_from_kv(psmmlab::metrics::read_kv(in));
  EXPECT_DOUBLE_EQ(r.rates.acer, (r.rates.apcer + r.rates.bpcer) / 2);
  EXPECT_TRUE(fs::exists(out / "scores_test.txt"));
  EXPECT_TRUE(fs::exists(out / "report_table.txt"));
}

TEST_F(Cli, TrainingLossDecreases) {
  const fs::path out = dir_ / "learn";
  ASSERT_EQ(run("train " + base("sdnet", out, 5) + " --seed 2"), 0);
  const std::string log = slurp(out / "train.log");
  auto loss_of_epoch = [&](int e) {
    const auto at = log.find("epoch=" + std::to_string(e) + " ");
    EXPECT_NE(at, std::string::npos) << log;
    const auto key = log.find("loss.total=", at);
    return std::stod(log.substr(key + 11));
  };
  EXPECT_LT(loss_of_epoch(5), loss_of_epoch(1));
}

TEST_F(Cli, ReportAggregatesAndChecksProtocols) {
  using psmmlab::metrics::EvalReport;
  auto write_report = [&](const std::string& name, const std::string& sub, double apcer, double bpcer) {
    EvalReport r;
    r.sub_protocol = sub;
    r.rates = {apcer, bpcer, (apcer + bpcer) / 2};
    std::ofstream out(dir_ / name);
    psmmlab::metrics::write_kv(out, r);
    return (dir_ / name).string();
  };
  const auto a = write_report("r1.txt", "1_1", 0.005, 0.008);
  const auto b = write_report("r2.txt", "1_2", 0.048, 0.040);
  const auto c = write_report("r3.txt", "1_3", 0.012, 0.018);
  const auto other = write_report("r4.txt", "2_1", 0.1, 0.1);
  const fs::path kv = dir_ / "agg.txt";
  ASSERT_EQ(run("report " + a + " " + b + " " + c + " --out " + kv.string()), 0);
  std::ifstream in(kv);
  const auto table = psmmlab::metrics::read_kv(in);
  const auto expect = psmmlab::metrics::aggregate_mean_std({0.5, 4.8, 1.2});
  EXPECT_NEAR(std::stod(table.at("avg.apcer")), expect.mean, 1e-5);
  EXPECT_NEAR(std::stod(table.at("std.apcer")), expect.std, 1e-5);
  EXPECT_EQ(run("report " + a + " " + other), 2);
  const fs::path single = dir_ / "agg1.txt";
  ASSERT_EQ(run("report " + a + " --out " + single.string()), 0);
  EXPECT_EQ(slurp(single).find("avg."), std::string::npos);
}

TEST_F(Cli, ReportOnPerfectScoresIsZero) {
  std::ofstream s(dir_ / "perfect_scores.txt");
  s << "A_0301/real_1 0.9 1 1_1\nA_0301/print_1 0.1 0 1_1\nA_0301/replay_1 0.2 0 1_1\n";
  s.close();
  const fs::path kv = dir_ / "perfect.txt";
  ASSERT_EQ(run("report " + (dir_ / "perfect_scores.txt").string() + " --out " + kv.string()), 0);
  std::ifstream in(kv);
  const auto t = psmmlab::metrics::read_kv(in);
  EXPECT_EQ(t.at("1_1.apcer"), "0");
  EXPECT_EQ(t.at("1_1.bpcer"), "0");
  EXPECT_EQ(t.at("1_1.acer"), "0");
}

TEST_F(Cli, GradcheckCommand) { EXPECT_EQ(run("gradcheck --variant psmm-wobf --probes 10"), 0); }
