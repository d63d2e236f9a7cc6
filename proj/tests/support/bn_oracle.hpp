#pragma once

// Posterior by summing the joint over every full assignment, written
// against the CPT layout only (parent rows are mixed-radix over the listed
// parents, last parent fastest).

#include <cstddef>
#include <vector>

#include "congestion/bayesnet.hpp"

namespace bn_oracle {

inline double joint(const congestion::bn::DiscreteBayesNet& net, const std::vector<int>& x) {
  double p = 1.0;
  for (std::size_t v = 0; v < net.size(); ++v) {
    std::size_t row = 0;
    for (int pa : net.parents[v]) row = row * net.variables[static_cast<std::size_t>(pa)].states.size() + static_cast<std::size_t>(x[static_cast<std::size_t>(pa)]);
    const std::size_t r = net.variables[v].states.size();
    p *= net.cpts[v][row * r + static_cast<std::size_t>(x[v])];
  }
  return p;
}

// evidence: -1 = unobserved.
inline std::vector<double> posterior(const congestion::bn::DiscreteBayesNet& net, int target,
                                     const std::vector<int>& evidence) {
  const std::size_t n = net.size();
  std::vector<int> x(n, 0);
  for (std::size_t v = 0; v < n; ++v)
    if (evidence[v] >= 0) x[v] = evidence[v];
  std::vector<double> acc(net.variables[static_cast<std::size_t>(target)].states.size(), 0.0);
  while (true) {
    acc[static_cast<std::size_t>(x[static_cast<std::size_t>(target)])] += joint(net, x);
    std::size_t v = 0;
    for (; v < n; ++v) {
      if (evidence[v] >= 0) continue;
      if (++x[v] < static_cast<int>(net.variables[v].states.size())) break;
      x[v] = 0;
    }
    if (v == n) break;
  }
  double z = 0.0;
  for (double a : acc) z += a;
  for (double& a : acc) a /= z;
  return acc;
}

}  // namespace bn_oracle
