#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "congestion/hashing.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kData = CONGESTION_DATA_DIR;

fs::path scratch_root() { return fs::temp_directory_path() / ("congestion_cli_test_" + std::to_string(::getpid())); }

fs::path scratch(const std::string& name) {
  const fs::path p = scratch_root() / name;
  fs::remove_all(p);
  fs::create_directories(p.parent_path());
  return p;
}

struct Outcome {
  int code = -1;
  std::string log;
};

Outcome cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + CONGESTION_CLI + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int raw = std::system(cmd.c_str());
  Outcome o;
  o.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  o.log = ss.str();
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

// The bundled config with every referenced path made absolute, so copies can live anywhere.
json absolute_config() {
  json j = read_json(kData / "pipeline.json");
  j["data"]["path"] = (kData / j["data"]["path"].get<std::string>()).string();
  j["bn"]["scenarios"] = (kData / j["bn"]["scenarios"].get<std::string>()).string();
  for (auto& s : j["simulate"]["scenarios"]) s["file"] = (kData / s["file"].get<std::string>()).string();
  return j;
}

fs::path write_config(const json& j, const std::string& name) {
  const fs::path p = scratch(name);
  std::ofstream(p) << j.dump(2);
  return p;
}

// Drops the per-process scratch dir (logs, configs) once all tests ran.
struct ScratchCleanup : ::testing::Environment {
  void TearDown() override { fs::remove_all(scratch_root()); }
};
const auto* const kCleanup = ::testing::AddGlobalTestEnvironment(new ScratchCleanup);

const char* const kStages[] = {"ingest",   "cluster",  "automl",   "label",    "bn-train", "bn-eval",
                               "bn-query", "simulate", "validate", "report",   "plot"};

}  // namespace

class FixtureRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    out_ = new fs::path(scratch("full"));
    first_ = new Outcome(cli("run -c \"" + (kData / "pipeline.json").string() + "\" -o \"" + out_->string() + "\"",
                             scratch("full.log")));
  }
  static void TearDownTestSuite() {
    fs::remove_all(*out_);
    delete out_;
    delete first_;
  }
  static fs::path* out_;
  static Outcome* first_;
};

fs::path* FixtureRun::out_ = nullptr;
Outcome* FixtureRun::first_ = nullptr;

TEST_F(FixtureRun, EveryStagePassesAndManifestIsComplete) {
  ASSERT_EQ(first_->code, 0) << first_->log;
  const json m = read_json(*out_ / "manifest.json");
  EXPECT_EQ(m["seed"], 2022);
  EXPECT_FALSE(m["config_fingerprint"].get<std::string>().empty());
  for (const char* stage : kStages) {
    ASSERT_TRUE(m["stages"].contains(stage)) << stage;
    const json& outputs = m["stages"][stage]["outputs"];
    EXPECT_FALSE(outputs.empty()) << stage;
    for (const auto& [name, digest] : outputs.items()) {
      const fs::path f = *out_ / name;
      ASSERT_TRUE(fs::exists(f)) << name;
      EXPECT_EQ(congestion::file_digest(f), digest.get<std::string>()) << name;
    }
  }
}

TEST_F(FixtureRun, RerunWithUnchangedInputsIsNoOp) {
  ASSERT_EQ(first_->code, 0);
  const std::string before = slurp(*out_ / "manifest.json");
  const auto second =
      cli("run -c \"" + (kData / "pipeline.json").string() + "\" -o \"" + out_->string() + "\"", scratch("rerun.log"));
  ASSERT_EQ(second.code, 0) << second.log;
  for (const char* stage : kStages)
    EXPECT_NE(second.log.find(std::string(stage) + ": up to date"), std::string::npos) << stage << "\n" << second.log;
  EXPECT_EQ(slurp(*out_ / "manifest.json"), before);
}

TEST_F(FixtureRun, ForceRerunsAndReproducesManifest) {
  ASSERT_EQ(first_->code, 0);
  const std::string before = slurp(*out_ / "manifest.json");
  const auto again = cli("bn-train --force -c \"" + (kData / "pipeline.json").string() + "\" -o \"" + out_->string() + "\"",
                         scratch("force.log"));
  ASSERT_EQ(again.code, 0) << again.log;
  EXPECT_EQ(again.log.find("up to date"), std::string::npos);
  EXPECT_EQ(slurp(*out_ / "manifest.json"), before);
}

TEST_F(FixtureRun, ValidationTableHasEveryScenario) {
  ASSERT_EQ(first_->code, 0);
  const std::string csv = slurp(*out_ / "validation.csv");
  EXPECT_EQ(csv.rfind("scenario,bn_scenario,AQL,AWT,MQL,ANS,QL,SCI,RMSE,P_High,observed,predicted,agree,excluded\n", 0),
            0u);
  for (int k = 1; k <= 4; ++k) EXPECT_NE(csv.find("scenario_" + std::to_string(k) + ","), std::string::npos);
  EXPECT_TRUE(fs::exists(*out_ / "cumulative_waiting.svg"));
  EXPECT_TRUE(fs::exists(*out_ / "report.md"));
}

TEST(Cli, GoldenNetworkQueryIsByteIdentical) {
  const fs::path out = scratch("golden");
  const auto r = cli("bn-query -c \"" + (kData / "pipeline.json").string() + "\" -o \"" + out.string() +
                         "\" --network \"" + (kData / "golden" / "golden_network.json").string() + "\"",
                     scratch("golden.log"));
  ASSERT_EQ(r.code, 0) << r.log;
  EXPECT_EQ(slurp(out / "posteriors.csv"), slurp(kData / "golden" / "bn_scenario_posteriors.csv"));
  fs::remove_all(out);
}

TEST(Cli, MissingModelBeforeEvalIsPreconditionExit) {
  const fs::path out = scratch("empty");
  const auto r = cli("bn-eval -c \"" + (kData / "pipeline.json").string() + "\" -o \"" + out.string() + "\"",
                     scratch("empty.log"));
  EXPECT_EQ(r.code, 4) << r.log;
  EXPECT_NE(r.log.find("network.json"), std::string::npos);
  fs::remove_all(out);
}

TEST(Cli, ConfigErrorsExitTwo) {
  json bad = absolute_config();
  bad["bogus"] = 1;
  EXPECT_EQ(cli("run -c \"" + write_config(bad, "bogus.json").string() + "\" -o /tmp/unused", scratch("a.log")).code, 2);

  json no_seed = absolute_config();
  no_seed.erase("seed");
  const fs::path out = scratch("noseed");
  EXPECT_EQ(cli("ingest -c \"" + write_config(no_seed, "noseed.json").string() + "\" -o \"" + out.string() + "\"",
                scratch("b.log"))
                .code,
            2);

  EXPECT_EQ(cli("ingest -c \"" + (kData / "pipeline.json").string() + "\" --seed -3", scratch("c.log")).code, 2);
  EXPECT_EQ(cli("ingest -c /nonexistent/config.json", scratch("d.log")).code, 2);
  EXPECT_EQ(cli("bn-query -c \"" + (kData / "pipeline.json").string() + "\" --network /nonexistent/net.json",
                scratch("e.log"))
                .code,
            2);
  EXPECT_EQ(cli("no-such-stage", scratch("f.log")).code, 2);
  fs::remove_all(out);
}

TEST(Cli, MalformedDataExitsThree) {
  const fs::path csv = scratch("broken.csv");
  {
    std::ofstream o(csv);
    o << "this,is,not\nthe,expected,header\n";
  }
  json cfg = absolute_config();
  cfg["data"]["path"] = csv.string();
  const fs::path out = scratch("broken_out");
  const auto r = cli("ingest -c \"" + write_config(cfg, "broken.json").string() + "\" -o \"" + out.string() + "\"",
                     scratch("broken.log"));
  EXPECT_EQ(r.code, 3) << r.log;
  fs::remove_all(out);
}

TEST(Cli, SeedFlagOverridesConfig) {
  const fs::path a = scratch("seed_a");
  const fs::path b = scratch("seed_b");
  const std::string cfg = (kData / "pipeline.json").string();
  ASSERT_EQ(cli("ingest -c \"" + cfg + "\" -o \"" + a.string() + "\" --seed 11", scratch("sa.log")).code, 0);
  ASSERT_EQ(cli("ingest -c \"" + cfg + "\" -o \"" + b.string() + "\" --seed 12", scratch("sb.log")).code, 0);
  EXPECT_EQ(read_json(a / "manifest.json")["seed"], 11);
  EXPECT_EQ(read_json(b / "manifest.json")["seed"], 12);
  EXPECT_NE(read_json(a / "manifest.json")["config_fingerprint"], read_json(b / "manifest.json")["config_fingerprint"]);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Cli, SynthWritesRequestedRows) {
  const fs::path out = scratch("synth.csv");
  ASSERT_EQ(cli("synth --rows 50 --seed 3 -o \"" + out.string() + "\"", scratch("synth.log")).code, 0);
  const std::string text = slurp(out);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 51);
  const fs::path again = scratch("synth2.csv");
  ASSERT_EQ(cli("synth --rows 50 --seed 3 -o \"" + again.string() + "\"", scratch("synth2.log")).code, 0);
  EXPECT_EQ(slurp(again), text);
}
