#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "congestion/linalg.hpp"

namespace congestion::dec {

enum class Activation { kRelu, kLinear };

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::kLinear;

  Eigen::Index in() const { return weight.cols(); }
  Eigen::Index out() const { return weight.rows(); }
};

using LayerStack = std::vector<DenseLayer>;

// Symmetric fully-connected autoencoder: input -> hidden... -> latent -> ...hidden -> input.
// Hidden layers are rectified; latent and output are linear.
struct AutoencoderParams {
  LayerStack encoder;
  LayerStack decoder;

  int input_dim() const;
  int latent_dim() const;
  std::vector<int> widths() const;
  std::size_t parameter_count() const;
  bool all_finite() const;

  // He initialisation for rectified layers, Glorot for linear ones.
  static AutoencoderParams init(int input_dim, const std::vector<int>& hidden, int latent_dim,
                                std::uint64_t seed);
};

// Layer inputs and pre-activations recorded during a forward pass.
struct Tape {
  std::vector<Matrix> inputs;
  std::vector<Matrix> pre_activations;
};

Matrix forward_stack(const LayerStack& layers, const Matrix& x, Tape* tape = nullptr);

struct LayerGrad {
  Matrix weight;
  Vector bias;
};

// Backpropagates d_out through the stack; returns the gradient w.r.t. the stack input.
Matrix backward_stack(const LayerStack& layers, const Tape& tape, const Matrix& d_out,
                      std::vector<LayerGrad>& grads);

struct ForwardResult {
  Matrix latent;
  Matrix reconstruction;
};

ForwardResult ae_forward(const AutoencoderParams& params, const Matrix& batch);
Matrix encode(const AutoencoderParams& params, const Matrix& batch);

// (1/N) sum_i ||x_i - xhat_i||^2
double reconstruction_loss(const Matrix& batch, const Matrix& reconstruction);

// Flat parameter views, encoder layers first, weights row-major then bias.
Vector flatten(const LayerStack& layers);
void unflatten(LayerStack& layers, const Vector& flat);
Vector flatten(const std::vector<LayerGrad>& grads);
std::size_t parameter_count(const LayerStack& layers);

// Reconstruction loss and its gradient w.r.t. every autoencoder parameter
// (encoder then decoder, flattened).
double reconstruction_loss_and_grad(const AutoencoderParams& params, const Matrix& batch,
                                    Vector& grad);

struct AdamOptimizer {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  Vector m;
  Vector v;
  long step = 0;

  // In-place adaptive-moment update of a flat parameter vector.
  void apply(Vector& params, const Vector& grad, double lr);
};

struct StepResult {
  double loss = 0.0;
};

// One Adam step on the reconstruction loss. Throws NumericError when the
// gradient is non-finite.
StepResult train_step(AutoencoderParams& params, AdamOptimizer& adam, const Matrix& batch,
                      double lr, long batch_index = 0);

struct PretrainConfig {
  double learning_rate = 2e-4;
  int batch_size = 64;
  int epochs = 50;
  std::uint64_t seed = 0;
};

struct PretrainResult {
  std::vector<double> epoch_loss;  // mean reconstruction loss over the epoch's batches
  double final_loss = 0.0;         // full-data reconstruction loss after training
};

PretrainResult pretrain(AutoencoderParams& params, const Matrix& data, const PretrainConfig& config,
                        const std::function<void(int epoch, double loss)>& on_epoch = {});

// Row indices shuffled per epoch, deterministic for a seed.
std::vector<std::vector<Eigen::Index>> minibatches(Eigen::Index rows, int batch_size,
                                                   std::uint64_t seed);

Matrix gather_rows(const Matrix& data, const std::vector<Eigen::Index>& rows);

}  // namespace congestion::dec
