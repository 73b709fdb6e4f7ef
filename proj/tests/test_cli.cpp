#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#ifndef OPR_CLI_PATH
#error "OPR_CLI_PATH must name the opr executable"
#endif

namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
};

fs::path scratch(const std::string& name) {
  const fs::path p = fs::path(testing::TempDir()) / ("opr_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Run run(const std::string& args, const fs::path& dir, const std::string& env = "") {
  const fs::path log = dir / "cmd.log";
  const std::string cmd = "cd '" + dir.string() + "' && " + env + " '" + std::string(OPR_CLI_PATH) + "' " + args +
                          " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

/// Small synthetic dataset and a short training run shared by several tests.
class TrainedModel : public testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(scratch("trained"));
    ASSERT_EQ(run("synth --out data --locations 9 --intervals 400 --seed 5", *dir_).code, 0);
    write(*dir_ / "train.cfg", "steps = 30\nbatch_size = 16\nchannels = 4\nwidth = 4\neval-every = 10\n");
    ASSERT_EQ(run("train --data data --config train.cfg --out model", *dir_).code, 0);
  }
  static void TearDownTestSuite() { delete dir_; }
  static fs::path* dir_;
};

fs::path* TrainedModel::dir_ = nullptr;

}  // namespace

TEST(Cli, HelpAndUnknownCommand) {
  const auto d = scratch("help");
  EXPECT_EQ(run("--help", d).code, 0);
  EXPECT_NE(run("frobnicate", d).code, 0);
}

TEST(Cli, IngestValidFiles) {
  const auto d = scratch("ingest");
  write(d / "loc.csv", "meter_id,lat,lon\nA,22.2800,114.1600\nB,22.2802,114.1600\nC,22.3000,114.1600\n");
  std::string rec = "meter_id,timestamp,state\n";
  for (int k = 0; k < 6; ++k) {
    const std::string ts = "2022-01-03T00:" + std::string(k * 5 < 10 ? "0" : "") + std::to_string(k * 5);
    rec += "A," + ts + "," + std::to_string(k % 2) + "\n";
    rec += "B," + ts + ",1\n";
    rec += "C," + ts + ",0\n";
  }
  write(d / "rec.csv", rec);
  const auto r = run("ingest --locations loc.csv --records rec.csv --format space --out ds", d);
  ASSERT_EQ(r.code, 0) << r.out;
  for (const char* f : {"occupancy.csv", "occupancy.meta.json", "locations.csv", "edges.csv"}) {
    EXPECT_TRUE(fs::exists(d / "ds" / f)) << f;
  }
  const auto meta = nlohmann::json::parse(slurp(d / "ds" / "occupancy.meta.json"));
  EXPECT_EQ(meta.at("num_locations"), 3);
  EXPECT_EQ(meta.at("num_intervals"), 6);
  // A and B are about 22 m apart, C is far away.
  EXPECT_EQ(slurp(d / "ds" / "edges.csv"), "meter_id_a,meter_id_b\nA,B\n");
}

TEST(Cli, IngestMissingHeaderNamesColumn) {
  const auto d = scratch("ingest_bad");
  write(d / "loc.csv", "meter_id,lat,lon\nA,22.28,114.16\n");
  write(d / "rec.csv", "meter_id,timestamp\nA,2022-01-03T00:00\n");
  const auto r = run("ingest --locations loc.csv --records rec.csv --out ds", d);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("state"), std::string::npos) << r.out;
}

TEST(Cli, MissingInputIsDataError) {
  const auto d = scratch("missing");
  EXPECT_EQ(run("bench --data nowhere --out b", d).code, 2);
}

TEST(Cli, UnknownConfigKeyIsConfigError) {
  const auto d = scratch("badcfg");
  write(d / "s.cfg", "locations = 4\nwarp_factor = 9\n");
  const auto r = run("synth --config s.cfg --out data", d);
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.out.find("warp-factor"), std::string::npos) << r.out;
}

TEST(Cli, InvalidConfigValueIsConfigError) {
  const auto d = scratch("badval");
  EXPECT_EQ(run("synth --out data --base-rate 3", d).code, 3);
  EXPECT_EQ(run("synth --out data --locations many", d).code, 3);
}

TEST(Cli, FlagsOverrideConfigAndSeedFallsBackToEnvironment) {
  const auto d = scratch("precedence");
  write(d / "s.cfg", "locations = 4\nintervals = 50\n");
  ASSERT_EQ(run("synth --config s.cfg --locations 6 --out a", d).code, 0);
  EXPECT_EQ(nlohmann::json::parse(slurp(d / "a" / "occupancy.meta.json")).at("num_locations"), 6);
  EXPECT_EQ(nlohmann::json::parse(slurp(d / "a" / "occupancy.meta.json")).at("num_intervals"), 50);

  ASSERT_EQ(run("synth --config s.cfg --out env1", d, "OPR_SEED=123").code, 0);
  ASSERT_EQ(run("synth --config s.cfg --seed 123 --out flag", d).code, 0);
  ASSERT_EQ(run("synth --config s.cfg --out dflt", d).code, 0);
  EXPECT_EQ(slurp(d / "env1" / "occupancy.csv"), slurp(d / "flag" / "occupancy.csv"));
  EXPECT_NE(slurp(d / "env1" / "occupancy.csv"), slurp(d / "dflt" / "occupancy.csv"));
  ASSERT_EQ(run("synth --config s.cfg --seed 7 --out env2", d, "OPR_SEED=123").code, 0);
  EXPECT_EQ(slurp(d / "env2" / "occupancy.csv"), slurp(d / "dflt" / "occupancy.csv"));
}

TEST(Cli, BenchOnConstantMatrix) {
  const auto d = scratch("bench");
  ASSERT_EQ(run("synth --out data --locations 8 --intervals 300 --base-rate 0 --spatial-correlation 0", d).code, 0);
  ASSERT_EQ(run("bench --data data --alpha 3 --out b --points 5", d).code, 0);
  const auto j = nlohmann::json::parse(slurp(d / "b" / "complexity.json"));
  EXPECT_EQ(j.at("esgraph_nodes"), 8);
  EXPECT_EQ(j.at("esgraph_edges"), 0);
  EXPECT_EQ(j.at("stgraph_cells"), 2400);
  const auto curve = slurp(d / "b" / "storage_curve.csv");
  EXPECT_EQ(curve.substr(0, 11), "n,f_ST,f_ES");
  EXPECT_EQ(std::count(curve.begin(), curve.end(), '\n'), 6);
}

TEST_F(TrainedModel, WritesArtifacts) {
  for (const char* f : {"model.ckpt", "model.json", "train_log.csv"}) EXPECT_TRUE(fs::exists(*dir_ / "model" / f)) << f;
  const auto manifest = nlohmann::json::parse(slurp(*dir_ / "model" / "model.json"));
  EXPECT_EQ(manifest.at("train").at("steps"), 30);
  EXPECT_EQ(manifest.at("train").at("model").at("width"), 4);
  EXPECT_EQ(manifest.at("num_vertices"), 9);
}

TEST_F(TrainedModel, EvalReportsThreeModels) {
  const auto r = run("eval --data data --checkpoint model/model.ckpt --baselines persistence,historical_mean "
                     "--scenarios --out report",
                     *dir_);
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = nlohmann::json::parse(slurp(*dir_ / "report" / "metrics.json"));
  std::set<std::string> models, scenarios;
  for (const auto& rep : j.at("reports")) {
    models.insert(rep.at("model"));
    scenarios.insert(rep.at("scenario"));
  }
  EXPECT_EQ(models, (std::set<std::string>{"opr-ltr", "persistence", "historical_mean"}));
  EXPECT_EQ(scenarios, (std::set<std::string>{"all", "workday", "weekend", "daytime", "nighttime"}));
  EXPECT_TRUE(fs::exists(*dir_ / "report" / "metrics.csv"));
  EXPECT_TRUE(fs::exists(*dir_ / "report" / "plot_data.csv"));
}

TEST_F(TrainedModel, EvalRejectsUnknownBaseline) {
  EXPECT_EQ(run("eval --data data --checkpoint model/model.ckpt --baselines oracle --out r2", *dir_).code, 3);
}

TEST_F(TrainedModel, RecommendTopThree) {
  for (const std::string when : {"300", "2022-01-04T01:00"}) {
    const auto r = run("recommend --checkpoint model/model.ckpt --data data --vertex S004 --time " + when + " --top 3",
                       *dir_);
    ASSERT_EQ(r.code, 0) << r.out;
    std::istringstream in(r.out);
    std::string line;
    std::vector<double> scores;
    while (std::getline(in, line)) {
      const auto comma = line.find(',');
      ASSERT_NE(comma, std::string::npos) << line;
      scores.push_back(std::stod(line.substr(comma + 1)));
    }
    ASSERT_EQ(scores.size(), 3u);
    EXPECT_GE(scores[0], scores[1]);
    EXPECT_GE(scores[1], scores[2]);
  }
  EXPECT_EQ(run("recommend --checkpoint model/model.ckpt --data data --vertex NOPE --time 3 --top 3", *dir_).code, 2);
  EXPECT_EQ(run("recommend --checkpoint model/model.ckpt --data data --vertex 4 --time 99999 --top 3", *dir_).code, 2);
}
