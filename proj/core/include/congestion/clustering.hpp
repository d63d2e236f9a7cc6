#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "congestion/linalg.hpp"

namespace congestion::clustering {

inline constexpr int kNoise = -1;

struct ClusterAssignment {
  std::vector<int> labels;  // kNoise for DBSCAN noise
  int k = 0;                // clusters, excluding noise
  std::string method;
  std::map<std::string, double> parameters;

  std::size_t noise_count() const;
};

// Relabels clusters by first appearance so equal partitions compare equal.
std::vector<int> canonical_labels(const std::vector<int>& labels);

struct KMeansOptions {
  int k = 2;
  std::uint64_t seed = 0;
  int max_iter = 300;
  double tol = 1e-8;
};

struct KMeansResult {
  ClusterAssignment assignment;
  Matrix centroids;
  std::vector<double> inertia_history;  // one entry per Lloyd iteration
  double inertia = 0.0;
  int iterations = 0;
  int empty_cluster_reseeds = 0;
};

// k-means++ seeding followed by Lloyd iterations.
KMeansResult kmeans_fit(const Matrix& data, const KMeansOptions& options);

enum class Linkage { kSingle, kComplete, kAverage, kWard };

Linkage parse_linkage(const std::string& name);
std::string to_string(Linkage linkage);

struct HierarchicalOptions {
  int k = 2;
  Linkage linkage = Linkage::kWard;
  std::size_t max_rows = 10000;  // condensed distance matrix memory guard
};

// Agglomerative clustering via nearest-neighbour chains on a condensed
// distance matrix; merges sorted by height (then lowest pair index) before
// the cut.
ClusterAssignment hierarchical_fit(const Matrix& data, const HierarchicalOptions& options);

struct DbscanOptions {
  double eps = 0.5;
  int min_pts = 5;
};

// Points are scanned in row order; a border point joins the first cluster
// that reaches it.
ClusterAssignment dbscan_fit(const Matrix& data, const DbscanOptions& options);

// Mean silhouette over non-noise points. Singleton-cluster points contribute 0.
// Throws PreconditionError with fewer than 2 non-noise clusters.
double silhouette(const Matrix& data, const std::vector<int>& labels);

struct LinearProjection {
  Matrix components;               // d x r, orthonormal columns
  Vector explained_variance_share;  // PCA only; empty for SVD
  Vector mean;                      // zeros when uncentered
  bool centered = true;
};

LinearProjection pca_fit(const Matrix& data, int r);
LinearProjection svd_fit(const Matrix& data, int r);
Matrix project(const LinearProjection& projection, const Matrix& data);
Matrix reconstruct(const LinearProjection& projection, const Matrix& reduced);
Matrix svd_reduce(const Matrix& data, int r);

void write_assignment_csv(std::ostream& out, const std::vector<std::string>& row_ids,
                          const ClusterAssignment& assignment);

}  // namespace congestion::clustering
