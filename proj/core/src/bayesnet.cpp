#include "congestion/bayesnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "congestion/csv.hpp"
#include "congestion/errors.hpp"

namespace congestion::bn {

int DiscreteBayesNet::index(const std::string& name) const {
  for (std::size_t i = 0; i < variables.size(); ++i) {
    if (variables[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

int DiscreteBayesNet::require_index(const std::string& name) const {
  const int i = index(name);
  if (i < 0) throw DataError("unknown variable '" + name + "'");
  return i;
}

std::size_t DiscreteBayesNet::parent_configs(int v) const {
  std::size_t q = 1;
  for (int p : parents[v]) q *= variables[p].states.size();
  return q;
}

std::size_t DiscreteBayesNet::parent_row(int v, const std::vector<int>& assignment) const {
  std::size_t row = 0;
  for (int p : parents[v]) row = row * variables[p].states.size() + static_cast<std::size_t>(assignment[p]);
  return row;
}

double DiscreteBayesNet::probability(int v, std::size_t row, int state) const {
  return cpts[v][row * variables[v].states.size() + static_cast<std::size_t>(state)];
}

std::optional<std::vector<int>> topological_order(const ParentSets& parents) {
  const int n = static_cast<int>(parents.size());
  std::vector<int> indegree(n, 0);
  std::vector<std::vector<int>> children(n);
  for (int v = 0; v < n; ++v) {
    for (int p : parents[v]) {
      if (p < 0 || p >= n) return std::nullopt;
      children[p].push_back(v);
      ++indegree[v];
    }
  }
  // Smallest ready index first, so the order is canonical.
  std::set<int> ready;
  for (int v = 0; v < n; ++v) {
    if (indegree[v] == 0) ready.insert(v);
  }
  std::vector<int> order;
  while (!ready.empty()) {
    const int v = *ready.begin();
    ready.erase(ready.begin());
    order.push_back(v);
    for (int c : children[v]) {
      if (--indegree[c] == 0) ready.insert(c);
    }
  }
  if (static_cast<int>(order.size()) != n) return std::nullopt;
  return order;
}

std::vector<int> DiscreteBayesNet::topological_order() const {
  auto order = bn::topological_order(parents);
  if (!order) throw DataError("network graph has a cycle");
  return *order;
}

void DiscreteBayesNet::validate() const {
  if (parents.size() != variables.size() || cpts.size() != variables.size()) {
    throw DataError("network arrays disagree on the variable count");
  }
  std::set<std::string> names;
  for (const auto& v : variables) {
    if (v.states.size() < 2) throw DataError("variable '" + v.name + "' needs at least 2 states");
    if (!names.insert(v.name).second) throw DataError("duplicate variable '" + v.name + "'");
    std::set<std::string> states(v.states.begin(), v.states.end());
    if (states.size() != v.states.size()) throw DataError("duplicate state in '" + v.name + "'");
  }
  topological_order();
  for (std::size_t v = 0; v < variables.size(); ++v) {
    const int vi = static_cast<int>(v);
    std::set<int> seen(parents[v].begin(), parents[v].end());
    if (seen.size() != parents[v].size()) throw DataError("repeated parent of '" + variables[v].name + "'");
    if (seen.count(vi)) throw DataError("self loop on '" + variables[v].name + "'");
    const std::size_t r = variables[v].states.size();
    const std::size_t q = parent_configs(vi);
    if (cpts[v].size() != q * r) {
      throw DataError("CPT of '" + variables[v].name + "' has wrong dimensions");
    }
    for (std::size_t row = 0; row < q; ++row) {
      double sum = 0.0;
      for (std::size_t s = 0; s < r; ++s) {
        const double p = cpts[v][row * r + s];
        if (!(p >= 0.0) || !std::isfinite(p)) {
          throw DataError("CPT of '" + variables[v].name + "' has an invalid entry");
        }
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-9) {
        throw DataError("CPT row of '" + variables[v].name + "' does not sum to 1");
      }
    }
  }
}

DataView DataView::make(const CategoricalTable& table, const std::vector<VariableSchema>& schema) {
  DataView view;
  view.variables = schema;
  view.rows = table.rows();
  std::vector<std::string> missing;
  for (const auto& var : schema) {
    const int col = table.column_index(var.name);
    if (col < 0) {
      missing.push_back(var.name);
      continue;
    }
    const auto& source = table.variables[static_cast<std::size_t>(col)];
    std::vector<int> remap(source.states.size(), -1);
    for (std::size_t s = 0; s < source.states.size(); ++s) {
      remap[s] = var.state_index(source.states[s]);
      if (remap[s] < 0) {
        throw DataError("state '" + source.states[s] + "' of '" + var.name + "' is not in the schema");
      }
    }
    std::vector<int> codes(table.rows());
    for (std::size_t r = 0; r < table.rows(); ++r) {
      const int c = table.at(r, static_cast<std::size_t>(col));
      codes[r] = c < 0 ? -1 : remap[static_cast<std::size_t>(c)];
    }
    view.columns.push_back(std::move(codes));
  }
  if (!missing.empty()) {
    std::string msg = "data lacks variables:";
    for (const auto& m : missing) msg += " " + m;
    throw DataError(msg);
  }
  return view;
}

double Posterior::at(const std::string& state) const {
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (states[i] == state) return probabilities[i];
  }
  throw DataError("posterior of '" + variable + "' has no state '" + state + "'");
}

namespace {

std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

nlohmann::json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

MetricReport evaluate(const std::vector<int>& predictions, const std::vector<int>& truth,
                      const std::vector<std::string>& classes, int positive) {
  if (predictions.size() != truth.size()) throw PreconditionError("prediction/truth length mismatch");
  if (classes.size() != 2) throw PreconditionError("evaluation expects two classes");
  if (positive < 0 || positive > 1) throw PreconditionError("positive class out of range");
  if (truth.empty()) throw PreconditionError("no labels to evaluate");
  MetricReport rep;
  rep.confusion.assign(2, std::vector<std::size_t>(2, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] > 1 || predictions[i] < 0 || predictions[i] > 1) {
      throw DataError("label code out of range");
    }
    ++rep.confusion[truth[i]][predictions[i]];
    correct += truth[i] == predictions[i];
  }
  rep.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());
  for (int c = 0; c < 2; ++c) {
    ClassMetrics m;
    m.name = classes[c];
    const std::size_t tp = rep.confusion[c][c];
    const std::size_t actual = rep.confusion[c][0] + rep.confusion[c][1];
    const std::size_t predicted = rep.confusion[0][c] + rep.confusion[1][c];
    m.support = actual;
    m.recall = ratio(tp, actual);
    m.precision = ratio(tp, predicted);
    if (m.precision && m.recall && (*m.precision + *m.recall) > 0.0) {
      m.f1 = 2.0 * *m.precision * *m.recall / (*m.precision + *m.recall);
    }
    rep.classes.push_back(m);
  }
  rep.sensitivity = rep.classes[positive].recall;
  rep.specificity = rep.classes[1 - positive].recall;
  return rep;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j;
  j["accuracy"] = accuracy;
  j["sensitivity"] = opt_json(sensitivity);
  j["specificity"] = opt_json(specificity);
  j["confusion"] = confusion;
  nlohmann::json cls = nlohmann::json::array();
  for (const auto& c : classes) {
    cls.push_back({{"class", c.name},
                   {"precision", opt_json(c.precision)},
                   {"recall", opt_json(c.recall)},
                   {"f1", opt_json(c.f1)},
                   {"support", c.support}});
  }
  j["classes"] = cls;
  return j;
}

void write_metrics_csv(std::ostream& out, const MetricReport& report) {
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string("undefined");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", *v);
    return std::string(buf);
  };
  out << "scope,metric,value\n";
  out << "overall,accuracy," << cell(report.accuracy) << '\n';
  out << "overall,sensitivity," << cell(report.sensitivity) << '\n';
  out << "overall,specificity," << cell(report.specificity) << '\n';
  for (const auto& c : report.classes) {
    const std::string scope = csv::escape(c.name);
    out << scope << ",precision," << cell(c.precision) << '\n';
    out << scope << ",recall," << cell(c.recall) << '\n';
    out << scope << ",f1," << cell(c.f1) << '\n';
    out << scope << ",support," << c.support << '\n';
  }
}

std::vector<Scenario> parse_scenarios(const nlohmann::json& j) {
  const nlohmann::json& list = j.is_object() && j.contains("scenarios") ? j.at("scenarios") : j;
  if (!list.is_array()) throw ConfigError("scenario file must hold a list");
  std::vector<Scenario> out;
  for (const auto& e : list) {
    Scenario s;
    s.name = e.at("name").get<std::string>();
    for (const auto& [k, v] : e.at("evidence").items()) s.evidence[k] = v.get<std::string>();
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Scenario> load_scenarios(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing scenario file " + path.string());
  try {
    return parse_scenarios(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad scenario file " + path.string() + ": " + e.what());
  }
}

std::vector<ScenarioResult> scenario_report(const DiscreteBayesNet& net,
                                            const std::vector<Scenario>& scenarios,
                                            const std::string& target) {
  std::vector<ScenarioResult> out;
  for (const auto& s : scenarios) out.push_back({s, query(net, target, s.evidence)});
  return out;
}

std::string percent2(double p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * p);
  return buf;
}

nlohmann::json scenario_report_json(const std::vector<ScenarioResult>& results) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : results) {
    nlohmann::json probs = nlohmann::json::object();
    nlohmann::json pct = nlohmann::json::object();
    for (std::size_t i = 0; i < r.posterior.states.size(); ++i) {
      probs[r.posterior.states[i]] = r.posterior.probabilities[i];
      pct[r.posterior.states[i]] = percent2(r.posterior.probabilities[i]);
    }
    arr.push_back({{"name", r.scenario.name},
                   {"evidence", r.scenario.evidence},
                   {"target", r.posterior.variable},
                   {"probabilities", probs},
                   {"percent", pct}});
  }
  return arr;
}

CategoricalTable sample(const DiscreteBayesNet& net, std::size_t n, std::uint64_t seed) {
  net.validate();
  const auto order = net.topological_order();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  CategoricalTable t;
  t.variables = net.variables;
  t.codes.resize(n * net.size());
  std::vector<int> a(net.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (int v : order) {
      const std::size_t row = net.parent_row(v, a);
      const int r = net.cardinality(v);
      double u = unif(rng);
      int s = 0;
      for (; s < r - 1; ++s) {
        u -= net.probability(v, row, s);
        if (u < 0.0) break;
      }
      a[v] = s;
    }
    t.row_ids.push_back(std::to_string(i));
    std::copy(a.begin(), a.end(), t.codes.begin() + static_cast<std::ptrdiff_t>(i * net.size()));
  }
  return t;
}

DiscreteBayesNet random_network(std::uint64_t seed, int variables, int max_states, int max_parents) {
  if (variables < 1 || max_states < 2 || max_parents < 0) throw PreconditionError("bad random network shape");
  std::mt19937_64 rng(seed);
  DiscreteBayesNet net;
  for (int v = 0; v < variables; ++v) {
    VariableSchema s;
    s.name = "X" + std::to_string(v);
    const int r = std::uniform_int_distribution<int>(2, max_states)(rng);
    for (int k = 0; k < r; ++k) s.states.push_back("s" + std::to_string(k));
    net.variables.push_back(std::move(s));
  }
  // Parents drawn from earlier nodes of a random permutation.
  std::vector<int> perm(static_cast<std::size_t>(variables));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  net.parents.assign(static_cast<std::size_t>(variables), {});
  for (int pos = 1; pos < variables; ++pos) {
    const int v = perm[pos];
    const int cap = std::min(max_parents, pos);
    const int count = std::uniform_int_distribution<int>(0, cap)(rng);
    std::vector<int> pool(perm.begin(), perm.begin() + pos);
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(static_cast<std::size_t>(count));
    std::sort(pool.begin(), pool.end());
    net.parents[v] = pool;
  }
  std::exponential_distribution<double> expo(1.0);
  for (int v = 0; v < variables; ++v) {
    const std::size_t q = net.parent_configs(v);
    const int r = net.cardinality(v);
    std::vector<double> cpt(q * static_cast<std::size_t>(r));
    for (std::size_t row = 0; row < q; ++row) {
      double sum = 0.0;
      for (int s = 0; s < r; ++s) sum += cpt[row * r + s] = expo(rng) + 1e-3;
      for (int s = 0; s < r; ++s) cpt[row * r + s] /= sum;
    }
    net.cpts.push_back(std::move(cpt));
  }
  return net;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(
    const CategoricalTable& table, const std::string& column, double test_fraction,
    std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test fraction must be in (0, 1)");
  const int col = table.column_index(column);
  if (col < 0) throw DataError("split column '" + column + "' missing");
  std::map<int, std::vector<std::size_t>> strata;
  for (std::size_t r = 0; r < table.rows(); ++r) strata[table.at(r, static_cast<std::size_t>(col))].push_back(r);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> train, test;
  for (auto& [code, rows] : strata) {
    std::shuffle(rows.begin(), rows.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(rows.size())));
    test.insert(test.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_test));
    train.insert(train.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_test), rows.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

nlohmann::json to_json(const DiscreteBayesNet& net) {
  nlohmann::json vars = nlohmann::json::array();
  for (std::size_t v = 0; v < net.size(); ++v) {
    const int vi = static_cast<int>(v);
    std::vector<std::string> parent_names;
    for (int p : net.parents[v]) parent_names.push_back(net.variables[p].name);
    const std::size_t r = net.variables[v].states.size();
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t row = 0; row < net.parent_configs(vi); ++row) {
      rows.push_back(std::vector<double>(net.cpts[v].begin() + static_cast<std::ptrdiff_t>(row * r),
                                         net.cpts[v].begin() + static_cast<std::ptrdiff_t>((row + 1) * r)));
    }
    vars.push_back({{"name", net.variables[v].name},
                    {"states", net.variables[v].states},
                    {"parents", parent_names},
                    {"cpt", rows}});
  }
  return {{"format", "congestion-bayesnet"}, {"version", 1}, {"variables", vars}};
}

DiscreteBayesNet net_from_json(const nlohmann::json& j) {
  try {
    if (!j.contains("version")) throw DataError("network file lacks a version field");
    if (j.at("version").get<int>() != 1) throw DataError("unsupported network version");
    DiscreteBayesNet net;
    const auto& vars = j.at("variables");
    for (const auto& e : vars) {
      net.variables.push_back({e.at("name").get<std::string>(), e.at("states").get<std::vector<std::string>>()});
    }
    net.parents.resize(net.size());
    net.cpts.resize(net.size());
    for (std::size_t v = 0; v < net.size(); ++v) {
      const auto& e = vars[v];
      for (const auto& pn : e.at("parents")) net.parents[v].push_back(net.require_index(pn.get<std::string>()));
      for (const auto& row : e.at("cpt")) {
        const auto values = row.get<std::vector<double>>();
        if (values.size() != net.variables[v].states.size()) {
          throw DataError("CPT row width mismatch for '" + net.variables[v].name + "'");
        }
        net.cpts[v].insert(net.cpts[v].end(), values.begin(), values.end());
      }
    }
    net.validate();
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed network file: ") + e.what());
  }
}

void save_network(const std::filesystem::path& path, const DiscreteBayesNet& net) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json(net).dump(1) << '\n';
}

DiscreteBayesNet load_network(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw PreconditionError("missing network file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed network file " + path.string() + ": " + e.what());
  }
  return net_from_json(j);
}

}  // namespace congestion::bn
