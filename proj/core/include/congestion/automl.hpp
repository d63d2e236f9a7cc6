#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "congestion/dec.hpp"
#include "congestion/linalg.hpp"
#include "json.hpp"

namespace congestion::automl {

struct IntRange {
  long low = 0;
  long high = 0;
};

struct LogUniform {
  double low = 0.0;
  double high = 0.0;
};

struct Categorical {
  std::vector<double> choices;
};

using Domain = std::variant<IntRange, LogUniform, Categorical>;

struct SearchSpace {
  std::vector<std::pair<std::string, Domain>> parameters;  // sampled in this order

  void validate() const;
  bool empty() const { return parameters.empty(); }

  // hidden 32-256, latent 4-32, lr 1e-4..1e-2 log-uniform, batch {32,64,128}.
  static SearchSpace dec_default();
  static SearchSpace from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

using ParamSet = std::map<std::string, double>;

enum class TrialStatus { kRunning, kComplete, kPruned, kFailed };

std::string to_string(TrialStatus s);

struct TrialRecord {
  int id = 0;
  ParamSet params;
  std::map<int, double> checkpoints;  // epoch -> intermediate score
  std::optional<double> objective;
  TrialStatus status = TrialStatus::kRunning;
  std::uint64_t seed = 0;
  double duration_s = 0.0;  // wall clock; not part of any hashed artifact
  std::string error;
};

struct Study {
  std::vector<TrialRecord> trials;
  std::optional<int> best_trial;  // id
  const TrialRecord* best() const;
  std::vector<const TrialRecord*> completed() const;
};

enum class Sampler { kRandom, kGuided };

std::string to_string(Sampler s);
Sampler parse_sampler(const std::string& s);

inline constexpr int kGuidedStartupTrials = 10;
inline constexpr int kGuidedCandidates = 24;

// Random: independent draws per parameter. Guided: history (complete
// trials with objectives) split at the objective median into good/bad;
// each parameter gets a Parzen estimate per set and the candidate with the
// largest good/bad likelihood ratio among kGuidedCandidates draws from the
// good estimate is taken. Random below kGuidedStartupTrials.
ParamSet suggest(const SearchSpace& space, const std::vector<TrialRecord>& history, Sampler sampler,
                 std::uint64_t seed);

struct PrunerConfig {
  int warmup_trials = 5;
  int warmup_epochs = 5;
  bool enabled = true;
};

enum class PruneDecision { kContinue, kPrune };

// Median rule at one checkpoint: prune iff score < median of the completed
// trials' scores at the same epoch, once warmup is over.
PruneDecision prune_check(double score, int epoch, const std::vector<TrialRecord>& history,
                          const PrunerConfig& config);

// Trial objective: sampled parameters + per-trial seed; report() is called
// at each checkpoint and returns false when the trial should stop (pruned).
using Reporter = std::function<bool(int epoch, double score)>;
using Objective = std::function<double(const ParamSet& params, std::uint64_t seed, const Reporter& report)>;

struct StudyConfig {
  int n_trials = 20;
  std::uint64_t seed = 0;
  int parallelism = 1;
  Sampler sampler = Sampler::kGuided;
  PrunerConfig pruner;
};

// Thrown by reporters to unwind a pruned trial.
struct TrialPruned {};

// Append-only NDJSON log of trial events (started / checkpoint / pruned /
// completed / failed). Holds only deterministic fields.
class Journal {
 public:
  explicit Journal(std::filesystem::path path);
  void started(const TrialRecord& t);
  void checkpoint(int trial, int epoch, double score);
  void finished(const TrialRecord& t);

  // Rebuilds finished trials from an existing journal; trials that started
  // but never finished are dropped so they rerun.
  static std::vector<TrialRecord> replay(const std::filesystem::path& path);

 private:
  void append(const nlohmann::json& j);
  std::filesystem::path path_;
};

Study run_study(const SearchSpace& space, const Objective& objective, const StudyConfig& config,
                Journal* journal = nullptr, std::vector<TrialRecord> resumed = {});

// DEC objective: pretrain + refine with the sampled parameters, score the
// final hard labels by silhouette on `score_rows` of either the input
// matrix (default) or the latent embedding. Checkpoints use the same space.
enum class ObjectiveSpace { kInput, kLatent };

std::string to_string(ObjectiveSpace s);
ObjectiveSpace parse_objective_space(const std::string& s);

struct DecObjectiveConfig {
  int clusters = 2;
  int epochs = 50;
  int refine_epochs = 50;
  int checkpoint_every = 5;  // refinement epochs between pruning checkpoints
  double tol = 0.001;
  dec::KlDirection direction = dec::KlDirection::kAsPrinted;
  ObjectiveSpace space = ObjectiveSpace::kInput;
  std::size_t score_rows = 2000;  // fixed subsample for silhouette, 0 = all
};

Objective dec_objective(const Matrix& data, const DecObjectiveConfig& config);

// The objective's fixed scoring rows: all rows, or `limit` drawn with a
// constant seed so every caller scores the same subset.
std::vector<Eigen::Index> score_subset(Eigen::Index rows, std::size_t limit);
// Silhouette on the scoring subset, -1 with fewer than two clusters.
double scored_silhouette(const Matrix& data, const std::vector<int>& labels, std::size_t score_rows);
// What dec_objective reports for a finished fit.
double dec_score(const Matrix& data, const std::vector<int>& labels, const dec::DecModel& model,
                 ObjectiveSpace space, std::size_t score_rows);

// Rebuilds the DEC pipeline options a trial ran with.
dec::DecPipelineOptions dec_options(const ParamSet& params, const DecObjectiveConfig& config,
                                    std::uint64_t seed);

nlohmann::json trial_json(const TrialRecord& t);
nlohmann::json study_json(const Study& s);

}  // namespace congestion::automl
