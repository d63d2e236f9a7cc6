#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "congestion/dec.hpp"
#include "congestion/ingest.hpp"
#include "congestion/linalg.hpp"
#include "json.hpp"

namespace congestion::attribution {

// Scalar model evaluated on a batch of feature rows, one output per row.
using BatchFn = std::function<Vector(const Matrix&)>;

// A Shapley player: a contiguous run of feature columns (a one-hot group is
// one player).
struct Player {
  std::string name;
  int first_column = 0;
  int width = 1;
};

std::vector<Player> players_from_groups(const std::vector<ingest::FeatureGroup>& groups);
std::vector<Player> singleton_players(int columns);

struct AttributionResult {
  std::vector<double> phi;
  std::vector<double> std_error;  // sampled mode only
  double base = 0.0;              // mean model output over the background
  double output = 0.0;            // model output at the record
};

inline constexpr int kMaxExactPlayers = 15;

// Interventional Shapley values by full coalition enumeration: absent
// players take each background row's values and the model output is
// averaged over the background. Throws PreconditionError above
// kMaxExactPlayers players.
AttributionResult shapley_exact(const BatchFn& fn, const RowVector& record, const Matrix& background,
                                const std::vector<Player>& players);

// Permutation sampling: each permutation pairs with one uniformly drawn
// background row. Standard errors are per-player sample deviations over
// permutations divided by sqrt(n).
AttributionResult shapley_sampled(const BatchFn& fn, const RowVector& record, const Matrix& background,
                                  const std::vector<Player>& players, int n_permutations,
                                  std::uint64_t seed);

enum class Mode { kExact, kSampled };

struct ExplainOptions {
  Mode mode = Mode::kExact;
  int permutations = 256;
  std::uint64_t seed = 0;
  int threads = 1;
};

// Explains every row of `records`; row i of the result holds phi for that
// record. Per-record seeds are derived from options.seed and the row index,
// so output does not depend on the thread count.
struct BatchAttribution {
  Matrix phi;  // rows x players
  Vector base;
  Vector output;
};

BatchAttribution explain_rows(const std::function<BatchFn(Eigen::Index row)>& fn_for_row,
                              const Matrix& records, const Matrix& background,
                              const std::vector<Player>& players, const ExplainOptions& options);

// q of one cluster for a batch of transformed rows.
BatchFn membership_fn(const dec::DecModel& model, int cluster);

// End-to-end membership of a raw record: transform, encode, soft assignment.
double membership_score(const ingest::Preprocessor& pre, const dec::DecModel& model,
                        const ingest::AccidentRecord& record, int cluster);

struct ClusterProfile {
  int cluster = 0;
  std::size_t count = 0;
  bool empty = true;
  std::vector<std::string> features;
  std::vector<double> mean_phi;
  std::vector<double> mean_abs_phi;
  std::vector<double> mean_oriented_phi;  // phi times the sign of the feature level vs background
  std::vector<int> ranking;               // feature indices by mean |phi|, descending
  std::string label;                      // set by assign_congestion_labels
};

// Per-cluster means of the attribution rows. `orientation` (same shape as
// phi, entries in {-1, 0, 1}) is optional.
std::vector<ClusterProfile> cluster_profile(const Matrix& phi, const std::vector<int>& labels, int clusters,
                                            const std::vector<std::string>& features,
                                            const Matrix* orientation = nullptr);

enum class LabelRule {
  kSigned,    // larger sum of mean phi over drivers is High
  kOriented,  // larger sum of mean oriented phi over drivers is High
};

std::string to_string(LabelRule rule);
LabelRule parse_label_rule(const std::string& s);

std::vector<std::string> default_driver_features();

// Exactly two profiles. Ties fall to the larger mean |phi| sum, then the
// lower cluster id.
std::vector<ClusterProfile> assign_congestion_labels(std::vector<ClusterProfile> profiles,
                                                     const std::vector<std::string>& drivers,
                                                     LabelRule rule = LabelRule::kSigned);

// Feature level used for orientation: numeric groups use the scaled value;
// one-hot groups use the position of the active state in `ordinal_states`
// (falls back to dictionary order), -1 when no state is active.
Matrix feature_levels(const ingest::FeatureMatrix& features,
                      const std::map<std::string, std::vector<std::string>>& ordinal_states,
                      const ingest::Preprocessor& pre);

// sign(level - mean background level) per cell.
Matrix orientation_signs(const Matrix& levels, const Matrix& background_levels);

void write_attribution_csv(std::ostream& out, const std::vector<std::string>& row_ids,
                           const std::vector<std::string>& features, const Matrix& phi);

nlohmann::json profiles_json(const std::vector<ClusterProfile>& profiles, LabelRule rule,
                             const std::vector<std::string>& drivers);

}  // namespace congestion::attribution
