#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "congestion/categorical_table.hpp"
#include "json.hpp"

namespace congestion::bn {

using VariableSchema = VariableSpec;

// Parent indices per variable. Learned structures keep each list ascending.
using ParentSets = std::vector<std::vector<int>>;

// Discrete network. CPT rows enumerate parent configurations in the listed
// parent order with the last parent varying fastest; columns are the
// variable's own states in declared order.
struct DiscreteBayesNet {
  std::vector<VariableSchema> variables;
  ParentSets parents;
  std::vector<std::vector<double>> cpts;  // per variable, rows x states, row-major

  std::size_t size() const { return variables.size(); }
  int index(const std::string& name) const;  // -1 when absent
  int require_index(const std::string& name) const;
  int cardinality(int v) const { return static_cast<int>(variables[v].states.size()); }
  std::size_t parent_configs(int v) const;
  std::size_t parent_row(int v, const std::vector<int>& assignment) const;
  double probability(int v, std::size_t row, int state) const;

  // Throws DataError on cycles, bad dimensions or non-normalised rows.
  void validate() const;
  std::vector<int> topological_order() const;
};

// Topological order for arbitrary parent sets; empty optional when cyclic.
std::optional<std::vector<int>> topological_order(const ParentSets& parents);

// Maps a categorical table onto a schema by variable name; states are
// re-coded by name, unknown names throw DataError.
struct DataView {
  std::vector<VariableSchema> variables;
  std::vector<std::vector<int>> columns;  // per variable, -1 unobserved
  std::size_t rows = 0;

  static DataView make(const CategoricalTable& table, const std::vector<VariableSchema>& schema);
};

// Family BIC: log-likelihood of v given its parents under MLE estimates minus
// (ln n / 2) * q * (r - 1). Rows with an unobserved family cell are skipped;
// n is the total row count.
double family_bic(const DataView& data, int v, const std::vector<int>& parents);
double bic_score(const DataView& data, const ParentSets& parents);

struct Constraints {
  std::vector<std::pair<std::string, std::string>> required;
  std::vector<std::pair<std::string, std::string>> forbidden;
  std::vector<std::string> roots;  // never receive parents
  std::vector<std::string> sinks;  // never have children
  int max_parents = 3;

  static Constraints from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct LearnResult {
  ParentSets parents;
  double score = 0.0;
  int moves = 0;
};

// Greedy hill climbing from the required-edge graph over single-edge
// add/remove/reverse moves. Candidates are visited by (from, to) pair in
// index order, each pair trying add, remove, reverse; only strictly
// improving moves are taken and the first best one wins ties.
LearnResult learn_structure(const DataView& data, const Constraints& constraints);

struct FitResult {
  DiscreteBayesNet net;
  std::vector<std::string> warnings;
};

// Laplace-smoothed CPTs: (count + alpha) / (count_pa + alpha * r).
FitResult fit_cpts(const DataView& data, const ParentSets& parents, double alpha = 1.0);

using Evidence = std::map<std::string, std::string>;

struct Posterior {
  std::string variable;
  std::vector<std::string> states;
  std::vector<double> probabilities;

  double at(const std::string& state) const;
};

// Joint probability of a full assignment (state codes in variable order).
double joint_probability(const DiscreteBayesNet& net, const std::vector<int>& assignment);
double joint_probability(const DiscreteBayesNet& net, const std::map<std::string, std::string>& assignment);

// Evidence resolved to codes; -1 for unobserved.
std::vector<int> resolve_evidence(const DiscreteBayesNet& net, const Evidence& evidence);

// Variable elimination with a greedy min-degree order (lowest index on ties).
Posterior query(const DiscreteBayesNet& net, const std::string& target, const Evidence& evidence);
std::vector<double> query_codes(const DiscreteBayesNet& net, int target, const std::vector<int>& evidence);

// Same, eliminating hidden variables in the given order (must list every
// non-target, non-evidence variable exactly once).
std::vector<double> query_with_order(const DiscreteBayesNet& net, int target,
                                     const std::vector<int>& evidence,
                                     const std::vector<int>& order);

// Brute-force posterior by summing the joint over all full assignments.
std::vector<double> query_enumerate(const DiscreteBayesNet& net, int target,
                                    const std::vector<int>& evidence);

std::vector<int> min_degree_order(const DiscreteBayesNet& net, int target,
                                  const std::vector<int>& evidence);

// Argmax posterior state per row; exact ties go to `preferred`.
std::vector<int> predict(const DiscreteBayesNet& net, const CategoricalTable& rows,
                         const std::string& target, const std::string& preferred = "High");

struct ClassMetrics {
  std::string name;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
  std::size_t support = 0;
};

struct MetricReport {
  double accuracy = 0.0;
  std::optional<double> sensitivity;  // recall of the positive class
  std::optional<double> specificity;  // recall of the other class
  std::vector<ClassMetrics> classes;
  std::vector<std::vector<std::size_t>> confusion;  // [truth][prediction]

  nlohmann::json to_json() const;
};

// Binary report over state codes 0..classes.size()-1. Undefined ratios are
// left empty rather than zero.
MetricReport evaluate(const std::vector<int>& predictions, const std::vector<int>& truth,
                      const std::vector<std::string>& classes, int positive);

void write_metrics_csv(std::ostream& out, const MetricReport& report);

struct Scenario {
  std::string name;
  Evidence evidence;
};

std::vector<Scenario> parse_scenarios(const nlohmann::json& j);
std::vector<Scenario> load_scenarios(const std::filesystem::path& path);

struct ScenarioResult {
  Scenario scenario;
  Posterior posterior;
};

std::vector<ScenarioResult> scenario_report(const DiscreteBayesNet& net,
                                            const std::vector<Scenario>& scenarios,
                                            const std::string& target);

// Percent with two decimals, e.g. 0.4808 -> "48.08".
std::string percent2(double p);
nlohmann::json scenario_report_json(const std::vector<ScenarioResult>& results);

// Ancestral sampling; returns a complete table.
CategoricalTable sample(const DiscreteBayesNet& net, std::size_t n, std::uint64_t seed);

// Random DAG over `variables` nodes with 2..max_states states, at most
// max_parents parents per node, Dirichlet(1) CPT rows.
DiscreteBayesNet random_network(std::uint64_t seed, int variables, int max_states, int max_parents);

// Row indices for an 80/20-style split stratified by one column.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(
    const CategoricalTable& table, const std::string& column, double test_fraction,
    std::uint64_t seed);

nlohmann::json to_json(const DiscreteBayesNet& net);
DiscreteBayesNet net_from_json(const nlohmann::json& j);
void save_network(const std::filesystem::path& path, const DiscreteBayesNet& net);
DiscreteBayesNet load_network(const std::filesystem::path& path);

}  // namespace congestion::bn
