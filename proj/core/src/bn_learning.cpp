#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "congestion/bayesnet.hpp"
#include "congestion/errors.hpp"

namespace congestion::bn {

namespace {

// Counts n_jk over parent configuration j and own state k, skipping rows
// with an unobserved family cell. Returns the number of rows used.
std::size_t family_counts(const DataView& data, int v, const std::vector<int>& parents,
                          std::vector<double>& counts) {
  const std::size_t r = data.variables[v].states.size();
  std::size_t q = 1;
  for (int p : parents) q *= data.variables[p].states.size();
  counts.assign(q * r, 0.0);
  std::size_t used = 0;
  for (std::size_t i = 0; i < data.rows; ++i) {
    const int x = data.columns[v][i];
    if (x < 0) continue;
    std::size_t row = 0;
    bool complete = true;
    for (int p : parents) {
      const int c = data.columns[p][i];
      if (c < 0) {
        complete = false;
        break;
      }
      row = row * data.variables[p].states.size() + static_cast<std::size_t>(c);
    }
    if (!complete) continue;
    counts[row * r + static_cast<std::size_t>(x)] += 1.0;
    ++used;
  }
  return used;
}

}  // namespace

double family_bic(const DataView& data, int v, const std::vector<int>& parents) {
  if (data.rows == 0) throw DataError("BIC needs at least one row");
  std::vector<double> counts;
  family_counts(data, v, parents, counts);
  const std::size_t r = data.variables[v].states.size();
  const std::size_t q = counts.size() / r;
  double ll = 0.0;
  for (std::size_t j = 0; j < q; ++j) {
    double nj = 0.0;
    for (std::size_t k = 0; k < r; ++k) nj += counts[j * r + k];
    if (nj == 0.0) continue;
    for (std::size_t k = 0; k < r; ++k) {
      const double n = counts[j * r + k];
      if (n > 0.0) ll += n * std::log(n / nj);
    }
  }
  const double penalty = 0.5 * std::log(static_cast<double>(data.rows)) * static_cast<double>(q * (r - 1));
  return ll - penalty;
}

double bic_score(const DataView& data, const ParentSets& parents) {
  if (parents.size() != data.variables.size()) throw PreconditionError("structure/data size mismatch");
  double total = 0.0;
  for (std::size_t v = 0; v < parents.size(); ++v) total += family_bic(data, static_cast<int>(v), parents[v]);
  return total;
}

Constraints Constraints::from_json(const nlohmann::json& j) {
  Constraints c;
  auto edges = [](const nlohmann::json& arr) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& e : arr) {
      if (!e.is_array() || e.size() != 2) throw ConfigError("edge constraints are [from, to] pairs");
      out.emplace_back(e[0].get<std::string>(), e[1].get<std::string>());
    }
    return out;
  };
  if (j.contains("required")) c.required = edges(j.at("required"));
  if (j.contains("forbidden")) c.forbidden = edges(j.at("forbidden"));
  if (j.contains("roots")) c.roots = j.at("roots").get<std::vector<std::string>>();
  if (j.contains("sinks")) c.sinks = j.at("sinks").get<std::vector<std::string>>();
  c.max_parents = j.value("max_parents", 3);
  if (c.max_parents < 0) throw ConfigError("max_parents must be non-negative");
  return c;
}

nlohmann::json Constraints::to_json() const {
  auto edges = [](const std::vector<std::pair<std::string, std::string>>& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& [a, b] : v) arr.push_back({a, b});
    return arr;
  };
  return {{"required", edges(required)}, {"forbidden", edges(forbidden)}, {"roots", roots},
          {"sinks", sinks}, {"max_parents", max_parents}};
}

namespace {

struct EdgeRules {
  int n = 0;
  std::vector<char> forbidden;  // n*n, [from*n + to]
  std::vector<char> required;
  int max_parents = 3;

  bool allowed(int from, int to) const { return from != to && !forbidden[from * n + to]; }
  bool is_required(int from, int to) const { return required[from * n + to]; }
};

int lookup(const std::vector<VariableSchema>& vars, const std::string& name) {
  for (std::size_t i = 0; i < vars.size(); ++i) {
    if (vars[i].name == name) return static_cast<int>(i);
  }
  throw ConfigError("constraint names unknown variable '" + name + "'");
}

EdgeRules compile(const std::vector<VariableSchema>& vars, const Constraints& c) {
  EdgeRules rules;
  rules.n = static_cast<int>(vars.size());
  rules.max_parents = c.max_parents;
  rules.forbidden.assign(static_cast<std::size_t>(rules.n * rules.n), 0);
  rules.required.assign(static_cast<std::size_t>(rules.n * rules.n), 0);
  for (const auto& [a, b] : c.forbidden) rules.forbidden[lookup(vars, a) * rules.n + lookup(vars, b)] = 1;
  for (const auto& r : c.roots) {
    const int v = lookup(vars, r);
    for (int u = 0; u < rules.n; ++u) rules.forbidden[u * rules.n + v] = 1;
  }
  for (const auto& s : c.sinks) {
    const int v = lookup(vars, s);
    for (int u = 0; u < rules.n; ++u) rules.forbidden[v * rules.n + u] = 1;
  }
  for (const auto& [a, b] : c.required) {
    const int from = lookup(vars, a);
    const int to = lookup(vars, b);
    if (from == to) throw ConfigError("required self loop on '" + a + "'");
    if (rules.forbidden[from * rules.n + to]) {
      throw ConfigError("edge " + a + " -> " + b + " is both required and forbidden");
    }
    rules.required[from * rules.n + to] = 1;
  }
  return rules;
}

bool reachable(const ParentSets& parents, int from, int to) {
  // Walks parent links backwards from `to`; true when `from` is an ancestor.
  std::vector<char> seen(parents.size(), 0);
  std::vector<int> stack{to};
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    if (v == from) return true;
    for (int p : parents[v]) {
      if (!seen[p]) {
        seen[p] = 1;
        stack.push_back(p);
      }
    }
  }
  return false;
}

void insert_sorted(std::vector<int>& v, int x) { v.insert(std::lower_bound(v.begin(), v.end(), x), x); }
void erase_value(std::vector<int>& v, int x) { v.erase(std::find(v.begin(), v.end(), x)); }

class FamilyCache {
 public:
  explicit FamilyCache(const DataView& data) : data_(data) {}

  double score(int v, const std::vector<int>& parents) {
    auto key = std::make_pair(v, parents);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    const double s = family_bic(data_, v, parents);
    cache_.emplace(std::move(key), s);
    return s;
  }

 private:
  const DataView& data_;
  std::map<std::pair<int, std::vector<int>>, double> cache_;
};

}  // namespace

LearnResult learn_structure(const DataView& data, const Constraints& constraints) {
  if (data.rows == 0) throw DataError("structure learning needs data");
  const EdgeRules rules = compile(data.variables, constraints);
  const int n = rules.n;
  ParentSets parents(static_cast<std::size_t>(n));
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      if (rules.is_required(a, b)) insert_sorted(parents[b], a);
    }
  }
  if (!topological_order(parents)) throw ConfigError("required edges form a cycle");
  for (int v = 0; v < n; ++v) {
    if (static_cast<int>(parents[v].size()) > rules.max_parents) {
      throw ConfigError("required edges exceed max_parents at '" + data.variables[v].name + "'");
    }
  }

  FamilyCache cache(data);
  std::vector<double> family(static_cast<std::size_t>(n));
  for (int v = 0; v < n; ++v) family[v] = cache.score(v, parents[v]);

  enum class Move { kAdd, kRemove, kReverse };
  LearnResult result;
  const double eps = 1e-10;
  for (;;) {
    double best_delta = eps;
    int best_from = -1, best_to = -1;
    Move best_move = Move::kAdd;
    for (int from = 0; from < n; ++from) {
      for (int to = 0; to < n; ++to) {
        if (from == to) continue;
        const bool present = std::binary_search(parents[to].begin(), parents[to].end(), from);
        if (!present) {
          if (!rules.allowed(from, to)) continue;
          if (static_cast<int>(parents[to].size()) >= rules.max_parents) continue;
          if (reachable(parents, to, from)) continue;  // to is an ancestor of from
          auto np = parents[to];
          insert_sorted(np, from);
          const double delta = cache.score(to, np) - family[to];
          if (delta > best_delta) {
            best_delta = delta;
            best_from = from;
            best_to = to;
            best_move = Move::kAdd;
          }
          continue;
        }
        if (rules.is_required(from, to)) continue;
        auto without = parents[to];
        erase_value(without, from);
        const double remove_delta = cache.score(to, without) - family[to];
        if (remove_delta > best_delta) {
          best_delta = remove_delta;
          best_from = from;
          best_to = to;
          best_move = Move::kRemove;
        }
        // Reverse: drop from->to, add to->from.
        if (!rules.allowed(to, from)) continue;
        if (static_cast<int>(parents[from].size()) >= rules.max_parents) continue;
        ParentSets trial = parents;
        trial[to] = without;
        if (reachable(trial, from, to)) continue;  // from still reaches to another way
        auto np = parents[from];
        insert_sorted(np, to);
        const double delta = remove_delta + cache.score(from, np) - family[from];
        if (delta > best_delta) {
          best_delta = delta;
          best_from = from;
          best_to = to;
          best_move = Move::kReverse;
        }
      }
    }
    if (best_from < 0) break;
    switch (best_move) {
      case Move::kAdd:
        insert_sorted(parents[best_to], best_from);
        break;
      case Move::kRemove:
        erase_value(parents[best_to], best_from);
        break;
      case Move::kReverse:
        erase_value(parents[best_to], best_from);
        insert_sorted(parents[best_from], best_to);
        family[best_from] = cache.score(best_from, parents[best_from]);
        break;
    }
    family[best_to] = cache.score(best_to, parents[best_to]);
    ++result.moves;
  }
  result.parents = parents;
  result.score = 0.0;
  for (double f : family) result.score += f;
  return result;
}

FitResult fit_cpts(const DataView& data, const ParentSets& parents, double alpha) {
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
  if (parents.size() != data.variables.size()) throw PreconditionError("structure/data size mismatch");
  if (!topological_order(parents)) throw PreconditionError("structure has a cycle");
  FitResult res;
  res.net.variables = data.variables;
  res.net.parents = parents;
  for (std::size_t v = 0; v < parents.size(); ++v) {
    std::vector<double> counts;
    family_counts(data, static_cast<int>(v), parents[v], counts);
    const std::size_t r = data.variables[v].states.size();
    const std::size_t q = counts.size() / r;
    std::size_t uniform_rows = 0;
    for (std::size_t j = 0; j < q; ++j) {
      double total = 0.0;
      for (std::size_t k = 0; k < r; ++k) total += counts[j * r + k];
      const double den = total + alpha * static_cast<double>(r);
      for (std::size_t k = 0; k < r; ++k) {
        counts[j * r + k] = den > 0.0 ? (counts[j * r + k] + alpha) / den : 1.0 / static_cast<double>(r);
      }
      uniform_rows += den == 0.0;
    }
    if (uniform_rows > 0) {
      res.warnings.push_back(std::to_string(uniform_rows) + " unseen parent configuration(s) of '" +
                             data.variables[v].name + "' set to uniform");
    }
    res.net.cpts.push_back(std::move(counts));
  }
  res.net.validate();
  return res;
}

}  // namespace congestion::bn
