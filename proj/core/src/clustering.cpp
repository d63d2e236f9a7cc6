#include "congestion/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <unordered_map>

#include "congestion/errors.hpp"

namespace congestion::clustering {

namespace {

double squared_distance(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
  double s = 0.0;
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    const double diff = a(i, c) - b(j, c);
    s += diff * diff;
  }
  return s;
}

std::size_t condensed_index(std::size_t n, std::size_t i, std::size_t j) {
  if (i > j) std::swap(i, j);
  return n * i - i * (i + 1) / 2 + (j - i - 1);
}

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

void fix_sign(Matrix& components) {
  for (Eigen::Index c = 0; c < components.cols(); ++c) {
    Eigen::Index arg = 0;
    components.col(c).cwiseAbs().maxCoeff(&arg);
    if (components(arg, c) < 0) components.col(c) *= -1.0;
  }
}

}  // namespace

std::size_t ClusterAssignment::noise_count() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), kNoise));
}

std::vector<int> canonical_labels(const std::vector<int>& labels) {
  std::unordered_map<int, int> remap;
  std::vector<int> out;
  out.reserve(labels.size());
  for (int l : labels) {
    if (l == kNoise) {
      out.push_back(kNoise);
      continue;
    }
    auto [it, inserted] = remap.emplace(l, static_cast<int>(remap.size()));
    out.push_back(it->second);
  }
  return out;
}

KMeansResult kmeans_fit(const Matrix& data, const KMeansOptions& opt) {
  const Eigen::Index n = data.rows();
  const Eigen::Index d = data.cols();
  if (opt.k < 1) throw PreconditionError("k-means needs k >= 1");
  if (n < opt.k) throw PreconditionError("k-means needs at least k rows");
  const Eigen::Index k = opt.k;

  std::mt19937_64 rng(opt.seed);
  Matrix centroids(k, d);
  std::vector<double> nearest(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  {
    std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
    centroids.row(0) = data.row(first(rng));
    for (Eigen::Index c = 1; c < k; ++c) {
      double total = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        auto& ni = nearest[static_cast<std::size_t>(i)];
        ni = std::min(ni, squared_distance(data, i, centroids, c - 1));
        total += ni;
      }
      Eigen::Index chosen = 0;
      if (total > 0.0) {
        double target = std::uniform_real_distribution<double>(0.0, total)(rng);
        chosen = n - 1;
        for (Eigen::Index i = 0; i < n; ++i) {
          target -= nearest[static_cast<std::size_t>(i)];
          if (target < 0.0) {
            chosen = i;
            break;
          }
        }
      } else {
        chosen = std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng);
      }
      centroids.row(c) = data.row(chosen);
    }
  }

  KMeansResult res;
  std::vector<int> labels(static_cast<std::size_t>(n), 0);
  std::vector<double> cost(static_cast<std::size_t>(n), 0.0);
  for (int iter = 0; iter < opt.max_iter; ++iter) {
    double inertia = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      int arg = 0;
      for (Eigen::Index c = 0; c < k; ++c) {
        const double dist = squared_distance(data, i, centroids, c);
        if (dist < best) {
          best = dist;
          arg = static_cast<int>(c);
        }
      }
      labels[static_cast<std::size_t>(i)] = arg;
      cost[static_cast<std::size_t>(i)] = best;
      inertia += best;
    }
    res.inertia_history.push_back(inertia);
    res.iterations = iter + 1;

    Matrix updated = Matrix::Zero(k, d);
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto l = labels[static_cast<std::size_t>(i)];
      updated.row(l) += data.row(i);
      ++counts[static_cast<std::size_t>(l)];
    }
    for (Eigen::Index c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        updated.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
        continue;
      }
      // Empty cluster: reseed at the point farthest from its centroid.
      const auto far = std::max_element(cost.begin(), cost.end()) - cost.begin();
      updated.row(c) = data.row(far);
      cost[static_cast<std::size_t>(far)] = 0.0;
      ++res.empty_cluster_reseeds;
    }
    const double shift = (updated - centroids).rowwise().norm().maxCoeff();
    centroids = std::move(updated);
    if (shift < opt.tol) break;
  }
  // Final assignment against the final centroids.
  double inertia = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (Eigen::Index c = 0; c < k; ++c) {
      const double dist = squared_distance(data, i, centroids, c);
      if (dist < best) {
        best = dist;
        arg = static_cast<int>(c);
      }
    }
    labels[static_cast<std::size_t>(i)] = arg;
    inertia += best;
  }
  res.inertia = inertia;
  res.centroids = std::move(centroids);
  res.assignment.labels = std::move(labels);
  res.assignment.k = opt.k;
  res.assignment.method = "kmeans";
  res.assignment.parameters = {{"k", opt.k}, {"seed", static_cast<double>(opt.seed)}};
  return res;
}

Linkage parse_linkage(const std::string& name) {
  if (name == "single") return Linkage::kSingle;
  if (name == "complete") return Linkage::kComplete;
  if (name == "average") return Linkage::kAverage;
  if (name == "ward") return Linkage::kWard;
  throw ConfigError("unknown linkage '" + name + "'");
}

std::string to_string(Linkage linkage) {
  switch (linkage) {
    case Linkage::kSingle: return "single";
    case Linkage::kComplete: return "complete";
    case Linkage::kAverage: return "average";
    case Linkage::kWard: return "ward";
  }
  return "?";
}

ClusterAssignment hierarchical_fit(const Matrix& data, const HierarchicalOptions& opt) {
  const auto n = static_cast<std::size_t>(data.rows());
  if (opt.k < 1 || static_cast<std::size_t>(opt.k) > n) {
    throw PreconditionError("hierarchical clustering needs 1 <= k <= n");
  }
  if (n > opt.max_rows) {
    throw PreconditionError("hierarchical clustering on " + std::to_string(n) +
                            " rows exceeds the O(n^2) memory cap of " + std::to_string(opt.max_rows));
  }
  const bool ward = opt.linkage == Linkage::kWard;
  std::vector<double> dist(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double sq = squared_distance(data, static_cast<Eigen::Index>(i), data,
                                         static_cast<Eigen::Index>(j));
      dist[condensed_index(n, i, j)] = ward ? sq : std::sqrt(sq);
    }
  }
  std::vector<std::size_t> size(n, 1);
  std::vector<char> active(n, 1);
  struct Merge {
    std::size_t a, b;
    double height;
  };
  std::vector<Merge> merges;
  merges.reserve(n ? n - 1 : 0);
  std::vector<std::size_t> chain;
  std::size_t remaining = n;
  while (remaining > 1) {
    if (chain.empty()) {
      for (std::size_t i = 0; i < n; ++i) {
        if (active[i]) {
          chain.push_back(i);
          break;
        }
      }
    }
    std::size_t a = 0;
    std::size_t b = 0;
    while (true) {
      a = chain.back();
      const std::size_t prev = chain.size() >= 2 ? chain[chain.size() - 2] : n;
      double best = std::numeric_limits<double>::infinity();
      b = n;
      if (prev != n) {
        best = dist[condensed_index(n, a, prev)];
        b = prev;
      }
      for (std::size_t c = 0; c < n; ++c) {
        if (!active[c] || c == a) continue;
        const double dc = dist[condensed_index(n, a, c)];
        if (dc < best || (dc == best && c < b && b != prev)) {
          best = dc;
          b = c;
        }
      }
      if (b == prev) break;
      chain.push_back(b);
    }
    chain.pop_back();
    chain.pop_back();
    const std::size_t keep = std::min(a, b);
    const std::size_t drop = std::max(a, b);
    const double dab = dist[condensed_index(n, a, b)];
    merges.push_back({keep, drop, ward ? std::sqrt(dab) : dab});
    const double na = static_cast<double>(size[keep]);
    const double nb = static_cast<double>(size[drop]);
    for (std::size_t c = 0; c < n; ++c) {
      if (!active[c] || c == keep || c == drop) continue;
      const double dka = dist[condensed_index(n, c, keep)];
      const double dkb = dist[condensed_index(n, c, drop)];
      double updated = 0.0;
      switch (opt.linkage) {
        case Linkage::kSingle: updated = std::min(dka, dkb); break;
        case Linkage::kComplete: updated = std::max(dka, dkb); break;
        case Linkage::kAverage: updated = (na * dka + nb * dkb) / (na + nb); break;
        case Linkage::kWard: {
          const double nk = static_cast<double>(size[c]);
          updated = ((na + nk) * dka + (nb + nk) * dkb - nk * dab) / (na + nb + nk);
          break;
        }
      }
      dist[condensed_index(n, c, keep)] = updated;
    }
    size[keep] += size[drop];
    active[drop] = 0;
    --remaining;
  }
  // Creation order breaks height ties so children always precede parents.
  std::stable_sort(merges.begin(), merges.end(),
                   [](const Merge& x, const Merge& y) { return x.height < y.height; });
  UnionFind uf(n);
  const std::size_t cut = n - static_cast<std::size_t>(opt.k);
  for (std::size_t m = 0; m < cut; ++m) uf.unite(merges[m].a, merges[m].b);
  std::vector<int> raw(n);
  for (std::size_t i = 0; i < n; ++i) raw[i] = static_cast<int>(uf.find(i));

  ClusterAssignment out;
  out.labels = canonical_labels(raw);
  out.k = opt.k;
  out.method = "hierarchical";
  out.parameters = {{"k", opt.k}, {"linkage", static_cast<double>(opt.linkage)}};
  return out;
}

ClusterAssignment dbscan_fit(const Matrix& data, const DbscanOptions& opt) {
  if (!(opt.eps > 0.0)) throw PreconditionError("DBSCAN eps must be positive");
  if (opt.min_pts < 1) throw PreconditionError("DBSCAN min_pts must be >= 1");
  const Eigen::Index n = data.rows();
  const double eps2 = opt.eps * opt.eps;
  constexpr int kUnvisited = -2;
  std::vector<int> labels(static_cast<std::size_t>(n), kUnvisited);
  std::vector<Eigen::Index> neighbours;
  auto region = [&](Eigen::Index p) {
    neighbours.clear();
    for (Eigen::Index q = 0; q < n; ++q) {
      if (squared_distance(data, p, data, q) <= eps2) neighbours.push_back(q);
    }
  };
  int next = 0;
  std::deque<Eigen::Index> seeds;
  for (Eigen::Index p = 0; p < n; ++p) {
    if (labels[static_cast<std::size_t>(p)] != kUnvisited) continue;
    region(p);
    if (static_cast<int>(neighbours.size()) < opt.min_pts) {
      labels[static_cast<std::size_t>(p)] = kNoise;
      continue;
    }
    const int cluster = next++;
    labels[static_cast<std::size_t>(p)] = cluster;
    seeds.assign(neighbours.begin(), neighbours.end());
    while (!seeds.empty()) {
      const Eigen::Index q = seeds.front();
      seeds.pop_front();
      auto& lq = labels[static_cast<std::size_t>(q)];
      if (lq == kNoise) lq = cluster;
      if (lq != kUnvisited) continue;
      lq = cluster;
      region(q);
      if (static_cast<int>(neighbours.size()) >= opt.min_pts) {
        for (Eigen::Index r : neighbours) {
          const int lr = labels[static_cast<std::size_t>(r)];
          if (lr == kUnvisited || lr == kNoise) seeds.push_back(r);
        }
      }
    }
  }
  ClusterAssignment out;
  out.labels = std::move(labels);
  out.k = next;
  out.method = "dbscan";
  out.parameters = {{"eps", opt.eps}, {"min_pts", opt.min_pts}};
  return out;
}

double silhouette(const Matrix& data, const std::vector<int>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != data.rows()) {
    throw PreconditionError("silhouette: label count does not match rows");
  }
  std::vector<int> canon = canonical_labels(labels);
  int k = 0;
  for (int l : canon) k = std::max(k, l + 1);
  if (k < 2) throw PreconditionError("silhouette undefined: fewer than 2 non-noise clusters");
  std::vector<Eigen::Index> idx;
  for (std::size_t i = 0; i < canon.size(); ++i) {
    if (canon[i] != kNoise) idx.push_back(static_cast<Eigen::Index>(i));
  }
  const std::size_t m = idx.size();
  const auto ku = static_cast<std::size_t>(k);
  std::vector<double> sums(m * ku, 0.0);
  std::vector<std::size_t> counts(ku, 0);
  for (std::size_t a = 0; a < m; ++a) ++counts[static_cast<std::size_t>(canon[static_cast<std::size_t>(idx[a])])];
  for (std::size_t a = 0; a < m; ++a) {
    const auto la = static_cast<std::size_t>(canon[static_cast<std::size_t>(idx[a])]);
    for (std::size_t b = a + 1; b < m; ++b) {
      const auto lb = static_cast<std::size_t>(canon[static_cast<std::size_t>(idx[b])]);
      const double dd = std::sqrt(squared_distance(data, idx[a], data, idx[b]));
      sums[a * ku + lb] += dd;
      sums[b * ku + la] += dd;
    }
  }
  double total = 0.0;
  for (std::size_t a = 0; a < m; ++a) {
    const auto la = static_cast<std::size_t>(canon[static_cast<std::size_t>(idx[a])]);
    if (counts[la] <= 1) continue;
    const double intra = sums[a * ku + la] / static_cast<double>(counts[la] - 1);
    double inter = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < ku; ++c) {
      if (c == la || counts[c] == 0) continue;
      inter = std::min(inter, sums[a * ku + c] / static_cast<double>(counts[c]));
    }
    const double denom = std::max(intra, inter);
    if (denom > 0.0) total += (inter - intra) / denom;
  }
  return total / static_cast<double>(m);
}

LinearProjection pca_fit(const Matrix& data, int r) {
  const Eigen::Index n = data.rows();
  const Eigen::Index d = data.cols();
  if (r < 1 || r > std::min(n, d)) throw PreconditionError("PCA needs 1 <= r <= min(n, d)");
  LinearProjection p;
  p.mean = data.colwise().mean().transpose();
  const Matrix centered = data.rowwise() - p.mean.transpose();
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericError("PCA eigendecomposition failed");
  const Eigen::VectorXd values = eig.eigenvalues().reverse();
  const Eigen::MatrixXd vectors = eig.eigenvectors().rowwise().reverse();
  const double total = std::max(0.0, values.sum());
  const double floor = 1e-12 * std::max(1.0, values.cwiseAbs().maxCoeff());
  p.components = vectors.leftCols(r);
  fix_sign(p.components);
  p.explained_variance_share = Vector::Zero(r);
  for (int i = 0; i < r; ++i) {
    if (total > 0.0 && values(i) > floor) p.explained_variance_share(i) = values(i) / total;
  }
  p.centered = true;
  return p;
}

LinearProjection svd_fit(const Matrix& data, int r) {
  const Eigen::Index n = data.rows();
  const Eigen::Index d = data.cols();
  if (r < 1 || r > std::min(n, d)) throw PreconditionError("SVD needs 1 <= r <= min(n, d)");
  Eigen::BDCSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(data), Eigen::ComputeThinV);
  LinearProjection p;
  p.components = svd.matrixV().leftCols(r);
  fix_sign(p.components);
  p.mean = Vector::Zero(d);
  p.centered = false;
  return p;
}

Matrix project(const LinearProjection& p, const Matrix& data) {
  if (data.cols() != p.components.rows()) throw PreconditionError("projection width mismatch");
  return (data.rowwise() - p.mean.transpose()) * p.components;
}

Matrix reconstruct(const LinearProjection& p, const Matrix& reduced) {
  Matrix out = reduced * p.components.transpose();
  out.rowwise() += p.mean.transpose();
  return out;
}

Matrix svd_reduce(const Matrix& data, int r) { return project(svd_fit(data, r), data); }

void write_assignment_csv(std::ostream& out, const std::vector<std::string>& row_ids,
                          const ClusterAssignment& a) {
  out << "row_id,label\n";
  for (std::size_t i = 0; i < a.labels.size(); ++i) out << row_ids.at(i) << ',' << a.labels[i] << '\n';
}

}  // namespace congestion::clustering
