#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "congestion/attribution.hpp"
#include "congestion/automl.hpp"
#include "congestion/bayesnet.hpp"
#include "congestion/clustering.hpp"
#include "congestion/dec.hpp"
#include "congestion/errors.hpp"
#include "congestion/ingest.hpp"
#include "json.hpp"

namespace congestion::pipeline {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitPrecondition = 4;
inline constexpr int kExitNumeric = 5;

int exit_code(ErrorKind kind);

struct BaselineSettings {
  std::vector<int> kmeans_k = {2, 3, 4, 5, 6};
  std::vector<int> hierarchical_k = {2, 3, 4, 5, 6};
  clustering::Linkage linkage = clustering::Linkage::kWard;
  std::vector<double> dbscan_eps = {1.5, 2.0, 2.5, 3.0, 3.5};
  int dbscan_min_pts = 5;
  // DBSCAN settings outside this cluster-count range are reported but not ranked.
  int min_clusters = 2;
  int max_clusters = 6;
  std::size_t max_rows = 5000;  // hierarchical fits a seeded subsample above this
};

struct ClusterSettings {
  dec::DecPipelineOptions dec;
  automl::ObjectiveSpace space = automl::ObjectiveSpace::kInput;
  std::size_t score_rows = 2000;
  BaselineSettings baselines;
};

struct AutomlSettings {
  automl::SearchSpace space = automl::SearchSpace::dec_default();
  automl::StudyConfig study;
  automl::DecObjectiveConfig objective;
};

struct LabelSettings {
  std::string model = "automl";  // or "dec"
  attribution::LabelRule rule = attribution::LabelRule::kOriented;
  std::vector<std::string> drivers = attribution::default_driver_features();
  attribution::Mode mode = attribution::Mode::kExact;
  int permutations = 256;
  std::size_t background_rows = 100;  // stratified by cluster
  std::size_t explain_rows = 100;     // 0 = every row
  int threads = 1;
};

struct BnSettings {
  std::string target = "Congestion";
  std::string positive = "High";
  bn::Constraints constraints;
  double alpha = 1.0;
  double test_fraction = 0.2;
  std::optional<std::filesystem::path> network;    // query this instead of the trained one
  std::optional<std::filesystem::path> scenarios;
};

struct SimEntry {
  std::filesystem::path file;
  std::string bn_scenario;
  bool exclude_from_agreement = false;
  std::string note;
};

struct SimulateSettings {
  std::vector<SimEntry> scenarios;
  double threshold = 0.5;
  std::string plot_title = "Cumulative waiting time";
};

struct PipelineConfig {
  std::filesystem::path base_dir;  // relative paths resolve against this
  nlohmann::json raw;
  std::optional<std::uint64_t> seed;
  std::filesystem::path output_dir = "out";

  std::optional<std::filesystem::path> data_path;
  std::size_t sample_rows = 0;  // 0 = keep every row
  std::vector<std::string> strata = {"Severity"};
  double max_reject_fraction = 0.05;
  ingest::Schema schema;
  ingest::PreprocessConfig preprocess = ingest::PreprocessConfig::defaults();

  ClusterSettings cluster;
  AutomlSettings automl;
  LabelSettings label;
  BnSettings bn;
  SimulateSettings simulate;

  // Throws ConfigError on unknown keys, bad values or missing referenced files.
  static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static PipelineConfig load(const std::filesystem::path& path);

  std::uint64_t require_seed() const;
  std::filesystem::path resolve(const std::filesystem::path& p) const;
  // Content hash of the config (output_dir excluded) and the effective seed.
  std::string fingerprint() const;
};

struct StageOptions {
  bool resume = false;  // reuse the study journal
  bool force = false;   // rerun even when the manifest says up to date
  std::ostream* log = nullptr;
};

inline const std::vector<std::string> kStages = {"ingest",   "cluster",  "automl",   "label",
                                                 "bn-train", "bn-eval",  "bn-query", "simulate",
                                                 "validate", "report",   "plot"};

// One stage; throws congestion::Error subclasses.
void run_stage(const std::string& stage, const PipelineConfig& config, const StageOptions& options);
// Every stage in order.
void run_all(const PipelineConfig& config, const StageOptions& options);

// Scoring helpers shared by the cluster stage and the acceptance suite.
struct BaselineScore {
  std::string method;
  std::map<std::string, double> params;
  int clusters = 0;
  std::optional<double> silhouette;
  std::string note;  // why a setting was not ranked
};

std::vector<BaselineScore> baseline_grid(const Matrix& data, const BaselineSettings& settings,
                                         std::size_t score_rows, std::uint64_t seed);
std::optional<double> best_baseline(const std::vector<BaselineScore>& scores);
nlohmann::json baseline_json(const BaselineScore& s);

}  // namespace congestion::pipeline
