#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "congestion/autoencoder.hpp"
#include "congestion/clustering.hpp"
#include "json.hpp"

namespace congestion::dec {

// Which KL divergence the refinement minimises. kAsPrinted is
// sum q log(q/p); kCanonical is the usual DEC objective sum p log(p/q).
enum class KlDirection { kAsPrinted, kCanonical };

struct DecModel {
  AutoencoderParams autoencoder;
  Matrix centroids;  // K x latent
  double nu = 1.0;   // Student-t degrees of freedom
  KlDirection direction = KlDirection::kAsPrinted;
  std::string preprocessor_fingerprint;

  int clusters() const { return static_cast<int>(centroids.rows()); }
};

struct TrainConfig {
  double learning_rate = 2e-4;
  int batch_size = 64;
  int epochs = 50;          // pretraining epochs
  int refine_epochs = 50;   // clustering refinement budget
  int update_interval = 1;  // target refresh period, in refinement epochs
  double tol = 0.001;       // stop when label-change fraction falls below this
  double reconstruction_weight = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Student-t soft assignment; rows sum to one.
Matrix soft_assign(const Matrix& latent, const Matrix& centroids, double nu = 1.0);
Matrix soft_assign(const DecModel& model, const Matrix& latent);

// Sharpened target p_ij = (q_ij^2 / f_j) / sum_j' (q_ij'^2 / f_j'), f_j = sum_i q_ij.
Matrix target_distribution(const Matrix& q);

// Sum over all cells of q log(q/p) (kAsPrinted) or p log(p/q) (kCanonical).
// Cells whose leading factor is 0 contribute 0. Throws NumericError when the
// loss is infinite.
double clustering_loss(const Matrix& q, const Matrix& p,
                       KlDirection direction = KlDirection::kAsPrinted);

struct ClusteringGrad {
  Matrix latent;     // dL/dz, n x latent
  Matrix centroids;  // dL/dmu, K x latent
};

// Loss (summed over the batch) and its gradient with the target p held fixed.
double clustering_loss_and_grad(const Matrix& latent, const Matrix& centroids, double nu,
                                const Matrix& p, KlDirection direction, ClusteringGrad& grad);

std::vector<int> hard_labels(const Matrix& q);

// k-means on the encoded rows; centroids are the resulting means.
Matrix init_centroids(const AutoencoderParams& autoencoder, const Matrix& data, int clusters,
                      std::uint64_t seed, std::vector<int>* labels = nullptr);

struct DecFitResult {
  DecModel model;
  clustering::ClusterAssignment assignment;
  int epochs_run = 0;
  bool converged = false;
  bool collapsed = false;
  bool stopped_by_callback = false;
  std::vector<double> loss_history;  // mean per-row clustering loss per epoch
  std::vector<std::string> warnings;
};

// Called after every target refresh with the refinement epoch, the current
// hard labels and the model being refined; returning false stops the fit
// (used for pruning).
struct DecModel;
using RefineCallback = std::function<bool(int epoch, const std::vector<int>& labels, const DecModel& model)>;

// Joint refinement of encoder weights and centroids. model.centroids must be
// initialised (see init_centroids); initial_labels are the labels those
// centroids induce.
DecFitResult dec_fit(DecModel model, const Matrix& data, const TrainConfig& config,
                     const std::vector<int>& initial_labels, const RefineCallback& on_refresh = {});

// Pretrain, initialise centroids and refine in one call.
struct DecPipelineOptions {
  std::vector<int> hidden = {190};
  int latent_dim = 19;
  int clusters = 2;
  double nu = 1.0;
  KlDirection direction = KlDirection::kAsPrinted;
  TrainConfig train;
};

DecFitResult fit_dec_pipeline(const Matrix& data, const DecPipelineOptions& options,
                              const RefineCallback& on_refresh = {});

// Checkpoint container: JSON with format/version, widths, activations,
// row-major float64 weights, centroids, nu and the preprocessor fingerprint.
nlohmann::json to_json(const DecModel& model);
DecModel model_from_json(const nlohmann::json& j);
void save_model(const std::filesystem::path& path, const DecModel& model);
DecModel load_model(const std::filesystem::path& path);

std::string to_string(KlDirection d);
KlDirection parse_direction(const std::string& s);

}  // namespace congestion::dec
