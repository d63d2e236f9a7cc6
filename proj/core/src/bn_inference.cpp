#include <algorithm>
#include <map>
#include <set>

#include "congestion/bayesnet.hpp"
#include "congestion/errors.hpp"

namespace congestion::bn {

double joint_probability(const DiscreteBayesNet& net, const std::vector<int>& assignment) {
  if (assignment.size() != net.size()) throw PreconditionError("assignment must cover every variable");
  for (std::size_t v = 0; v < net.size(); ++v) {
    if (assignment[v] < 0 || assignment[v] >= net.cardinality(static_cast<int>(v))) {
      throw DataError("invalid state for '" + net.variables[v].name + "'");
    }
  }
  double p = 1.0;
  for (int v : net.topological_order()) p *= net.probability(v, net.parent_row(v, assignment), assignment[v]);
  return p;
}

double joint_probability(const DiscreteBayesNet& net, const std::map<std::string, std::string>& assignment) {
  std::vector<int> codes(net.size(), -1);
  for (const auto& [name, state] : assignment) {
    const int v = net.require_index(name);
    codes[v] = net.variables[v].state_index(state);
    if (codes[v] < 0) throw DataError("invalid state '" + state + "' for '" + name + "'");
  }
  for (std::size_t v = 0; v < net.size(); ++v) {
    if (codes[v] < 0) throw PreconditionError("assignment lacks '" + net.variables[v].name + "'");
  }
  return joint_probability(net, codes);
}

std::vector<int> resolve_evidence(const DiscreteBayesNet& net, const Evidence& evidence) {
  std::vector<int> codes(net.size(), -1);
  for (const auto& [name, state] : evidence) {
    const int v = net.require_index(name);
    codes[v] = net.variables[v].state_index(state);
    if (codes[v] < 0) throw DataError("invalid state '" + state + "' for '" + name + "'");
  }
  return codes;
}

namespace {

// Table over an ascending variable list; the last variable varies fastest.
struct Factor {
  std::vector<int> vars;
  std::vector<int> cards;
  std::vector<double> values;
};

Factor cpt_factor(const DiscreteBayesNet& net, int v, const std::vector<int>& evidence) {
  Factor f;
  std::set<int> scope(net.parents[v].begin(), net.parents[v].end());
  scope.insert(v);
  for (int u : scope) {
    if (evidence[u] >= 0) continue;
    f.vars.push_back(u);
    f.cards.push_back(net.cardinality(u));
  }
  std::size_t size = 1;
  for (int c : f.cards) size *= static_cast<std::size_t>(c);
  f.values.resize(size);
  std::vector<int> a = evidence;
  std::vector<int> idx(f.vars.size(), 0);
  for (std::size_t k = 0; k < size; ++k) {
    for (std::size_t i = 0; i < f.vars.size(); ++i) a[f.vars[i]] = idx[i];
    f.values[k] = net.probability(v, net.parent_row(v, a), a[v]);
    for (std::size_t i = f.vars.size(); i-- > 0;) {
      if (++idx[i] < f.cards[i]) break;
      idx[i] = 0;
    }
  }
  return f;
}

Factor multiply(const Factor& x, const Factor& y) {
  Factor f;
  std::set_union(x.vars.begin(), x.vars.end(), y.vars.begin(), y.vars.end(), std::back_inserter(f.vars));
  std::size_t size = 1;
  std::vector<int> pos_x, pos_y;  // position of each result var in x / y or -1
  for (int v : f.vars) {
    auto ix = std::lower_bound(x.vars.begin(), x.vars.end(), v);
    auto iy = std::lower_bound(y.vars.begin(), y.vars.end(), v);
    const bool in_x = ix != x.vars.end() && *ix == v;
    const bool in_y = iy != y.vars.end() && *iy == v;
    const int card = in_x ? x.cards[ix - x.vars.begin()] : y.cards[iy - y.vars.begin()];
    f.cards.push_back(card);
    pos_x.push_back(in_x ? static_cast<int>(ix - x.vars.begin()) : -1);
    pos_y.push_back(in_y ? static_cast<int>(iy - y.vars.begin()) : -1);
    size *= static_cast<std::size_t>(card);
  }
  auto strides = [](const std::vector<int>& cards) {
    std::vector<std::size_t> s(cards.size(), 1);
    for (std::size_t i = cards.size(); i-- > 1;) s[i - 1] = s[i] * static_cast<std::size_t>(cards[i]);
    return s;
  };
  const auto sx = strides(x.cards);
  const auto sy = strides(y.cards);
  f.values.resize(size);
  std::vector<int> idx(f.vars.size(), 0);
  std::size_t ox = 0, oy = 0;
  for (std::size_t k = 0; k < size; ++k) {
    f.values[k] = x.values[ox] * y.values[oy];
    for (std::size_t i = f.vars.size(); i-- > 0;) {
      if (++idx[i] < f.cards[i]) {
        if (pos_x[i] >= 0) ox += sx[pos_x[i]];
        if (pos_y[i] >= 0) oy += sy[pos_y[i]];
        break;
      }
      if (pos_x[i] >= 0) ox -= sx[pos_x[i]] * static_cast<std::size_t>(f.cards[i] - 1);
      if (pos_y[i] >= 0) oy -= sy[pos_y[i]] * static_cast<std::size_t>(f.cards[i] - 1);
      idx[i] = 0;
    }
  }
  return f;
}

Factor sum_out(const Factor& x, int var) {
  const auto it = std::find(x.vars.begin(), x.vars.end(), var);
  const std::size_t p = static_cast<std::size_t>(it - x.vars.begin());
  std::size_t inner = 1;
  for (std::size_t i = p + 1; i < x.cards.size(); ++i) inner *= static_cast<std::size_t>(x.cards[i]);
  const std::size_t card = static_cast<std::size_t>(x.cards[p]);
  const std::size_t outer = x.values.size() / (inner * card);
  Factor f;
  f.vars = x.vars;
  f.cards = x.cards;
  f.vars.erase(f.vars.begin() + static_cast<std::ptrdiff_t>(p));
  f.cards.erase(f.cards.begin() + static_cast<std::ptrdiff_t>(p));
  f.values.assign(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t c = 0; c < card; ++c) {
      for (std::size_t i = 0; i < inner; ++i) f.values[o * inner + i] += x.values[(o * card + c) * inner + i];
    }
  }
  return f;
}

void check_query(const DiscreteBayesNet& net, int target, const std::vector<int>& evidence) {
  if (target < 0 || target >= static_cast<int>(net.size())) throw PreconditionError("query target out of range");
  if (evidence.size() != net.size()) throw PreconditionError("evidence vector size mismatch");
  if (evidence[target] >= 0) throw PreconditionError("query target is also evidence");
  for (std::size_t v = 0; v < net.size(); ++v) {
    if (evidence[v] >= net.cardinality(static_cast<int>(v))) throw DataError("evidence state out of range");
  }
}

std::vector<double> normalise(std::vector<double> p) {
  double z = 0.0;
  for (double x : p) z += x;
  if (!(z > 0.0)) throw PreconditionError("impossible evidence: zero marginal probability");
  for (double& x : p) x /= z;
  return p;
}

std::vector<double> eliminate(const DiscreteBayesNet& net, int target, const std::vector<int>& evidence,
                              const std::vector<int>& order) {
  std::vector<Factor> factors;
  for (std::size_t v = 0; v < net.size(); ++v) factors.push_back(cpt_factor(net, static_cast<int>(v), evidence));
  for (int var : order) {
    Factor product;
    product.values = {1.0};
    std::vector<Factor> rest;
    for (auto& f : factors) {
      if (std::binary_search(f.vars.begin(), f.vars.end(), var)) {
        product = multiply(product, f);
      } else {
        rest.push_back(std::move(f));
      }
    }
    if (!product.vars.empty()) rest.push_back(sum_out(product, var));
    factors = std::move(rest);
  }
  Factor result;
  result.values = {1.0};
  for (const auto& f : factors) result = multiply(result, f);
  if (result.vars != std::vector<int>{target}) throw PreconditionError("elimination order incomplete");
  return normalise(result.values);
}

}  // namespace

std::vector<int> min_degree_order(const DiscreteBayesNet& net, int target, const std::vector<int>& evidence) {
  const int n = static_cast<int>(net.size());
  // Moral-graph adjacency over unobserved variables.
  std::vector<std::set<int>> adj(static_cast<std::size_t>(n));
  for (int v = 0; v < n; ++v) {
    std::vector<int> family;
    for (int u : net.parents[v]) {
      if (evidence[u] < 0) family.push_back(u);
    }
    if (evidence[v] < 0) family.push_back(v);
    for (int a : family) {
      for (int b : family) {
        if (a != b) adj[a].insert(b);
      }
    }
  }
  std::set<int> remaining;
  for (int v = 0; v < n; ++v) {
    if (v != target && evidence[v] < 0) remaining.insert(v);
  }
  std::vector<int> order;
  while (!remaining.empty()) {
    int best = -1;
    std::size_t best_degree = 0;
    for (int v : remaining) {
      if (best < 0 || adj[v].size() < best_degree) {
        best = v;
        best_degree = adj[v].size();
      }
    }
    for (int a : adj[best]) {
      for (int b : adj[best]) {
        if (a != b) adj[a].insert(b);
      }
      adj[a].erase(best);
    }
    adj[best].clear();
    remaining.erase(best);
    order.push_back(best);
  }
  return order;
}

std::vector<double> query_with_order(const DiscreteBayesNet& net, int target, const std::vector<int>& evidence,
                                     const std::vector<int>& order) {
  check_query(net, target, evidence);
  std::vector<char> seen(net.size(), 0);
  for (int v : order) {
    if (v < 0 || v >= static_cast<int>(net.size()) || v == target || evidence[v] >= 0 || seen[v]) {
      throw PreconditionError("invalid elimination order");
    }
    seen[v] = 1;
  }
  return eliminate(net, target, evidence, order);
}

std::vector<double> query_codes(const DiscreteBayesNet& net, int target, const std::vector<int>& evidence) {
  check_query(net, target, evidence);
  return eliminate(net, target, evidence, min_degree_order(net, target, evidence));
}

Posterior query(const DiscreteBayesNet& net, const std::string& target, const Evidence& evidence) {
  const int t = net.require_index(target);
  Posterior post;
  post.variable = target;
  post.states = net.variables[t].states;
  post.probabilities = query_codes(net, t, resolve_evidence(net, evidence));
  return post;
}

std::vector<double> query_enumerate(const DiscreteBayesNet& net, int target, const std::vector<int>& evidence) {
  check_query(net, target, evidence);
  const auto order = net.topological_order();
  std::vector<double> acc(static_cast<std::size_t>(net.cardinality(target)), 0.0);
  std::vector<int> a(net.size(), 0);
  for (std::size_t v = 0; v < net.size(); ++v) {
    if (evidence[v] >= 0) a[v] = evidence[v];
  }
  for (;;) {
    double p = 1.0;
    for (int v : order) p *= net.probability(v, net.parent_row(v, a), a[v]);
    acc[static_cast<std::size_t>(a[target])] += p;
    std::size_t v = net.size();
    for (; v-- > 0;) {
      if (evidence[v] >= 0) continue;
      if (++a[v] < net.cardinality(static_cast<int>(v))) break;
      a[v] = 0;
    }
    if (v == static_cast<std::size_t>(-1)) break;
  }
  return normalise(acc);
}

std::vector<int> predict(const DiscreteBayesNet& net, const CategoricalTable& rows, const std::string& target,
                         const std::string& preferred) {
  const int t = net.require_index(target);
  const int pref = net.variables[t].state_index(preferred);
  if (pref < 0) throw DataError("target '" + target + "' has no state '" + preferred + "'");
  // Network variable -> table column, with state re-coding by name.
  std::vector<int> column(net.size(), -1);
  std::vector<std::vector<int>> remap(net.size());
  for (std::size_t v = 0; v < net.size(); ++v) {
    if (static_cast<int>(v) == t) continue;
    const int c = rows.column_index(net.variables[v].name);
    if (c < 0) continue;
    column[v] = c;
    for (const auto& s : rows.variables[static_cast<std::size_t>(c)].states) {
      remap[v].push_back(net.variables[v].state_index(s));
    }
  }
  std::map<std::vector<int>, int> memo;
  std::vector<int> out;
  out.reserve(rows.rows());
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    std::vector<int> ev(net.size(), -1);
    for (std::size_t v = 0; v < net.size(); ++v) {
      if (column[v] < 0) continue;
      const int code = rows.at(r, static_cast<std::size_t>(column[v]));
      ev[v] = code < 0 ? -1 : remap[v][static_cast<std::size_t>(code)];
    }
    auto it = memo.find(ev);
    if (it == memo.end()) {
      const auto post = query_codes(net, t, ev);
      int best = pref;
      for (int s = 0; s < static_cast<int>(post.size()); ++s) {
        if (post[s] > post[best]) best = s;
      }
      it = memo.emplace(ev, best).first;
    }
    out.push_back(it->second);
  }
  return out;
}

}  // namespace congestion::bn
