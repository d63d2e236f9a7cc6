#pragma once

// Central finite-difference oracles shared by the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>

#include "congestion/autoencoder.hpp"
#include "congestion/dec.hpp"

namespace gradcheck {

using congestion::Matrix;
using congestion::Vector;

// |a - n| / max(|a|, |n|); both exactly zero (dead rectifier units) count as 0.
// The 1e-7 floor keeps pure round-off on ~zero entries from reading as error.
inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-7});
  return std::abs(analytic - numeric) / scale;
}

inline double max_relative_error(const Vector& analytic, const std::function<double(const Vector&)>& f,
                                 Vector at, double eps = 1e-5) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < at.size(); ++i) {
    const double keep = at(i);
    at(i) = keep + eps;
    const double up = f(at);
    at(i) = keep - eps;
    const double down = f(at);
    at(i) = keep;
    worst = std::max(worst, relative_error(analytic(i), (up - down) / (2 * eps)));
  }
  return worst;
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

// Init leaves biases at zero, so a row with every hidden unit dead encodes to
// exactly 0 and lands on a rectifier kink downstream. Random biases keep the
// check at differentiable points.
inline congestion::dec::AutoencoderParams random_net(int input, const std::vector<int>& hidden, int latent,
                                                     std::uint64_t seed) {
  auto p = congestion::dec::AutoencoderParams::init(input, hidden, latent, seed);
  std::mt19937_64 rng(seed ^ 0xb1a5ULL);
  std::normal_distribution<double> g(0.0, 0.5);
  for (auto* stack : {&p.encoder, &p.decoder})
    for (auto& l : *stack)
      for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = g(rng);
  return p;
}

// Reconstruction-loss gradient of every autoencoder parameter.
inline double autoencoder_error(int input, const std::vector<int>& hidden, int latent, int rows,
                                std::uint64_t seed) {
  using namespace congestion::dec;
  const auto params = random_net(input, hidden, latent, seed);
  const Matrix x = random_matrix(rows, input, seed + 1);
  Vector grad;
  reconstruction_loss_and_grad(params, x, grad);
  const std::size_t enc = parameter_count(params.encoder);
  Vector flat(grad.size());
  flat << flatten(params.encoder), flatten(params.decoder);
  return max_relative_error(grad, [&](const Vector& theta) {
    AutoencoderParams p = params;
    unflatten(p.encoder, theta.head(static_cast<Eigen::Index>(enc)));
    unflatten(p.decoder, theta.tail(theta.size() - static_cast<Eigen::Index>(enc)));
    return reconstruction_loss(x, ae_forward(p, x).reconstruction);
  }, flat);
}

// Clustering-loss gradient w.r.t. encoder weights (chained through the
// encoder) and centroids, with the target distribution held fixed.
inline double clustering_error(int input, const std::vector<int>& hidden, int latent, int clusters,
                               int rows, congestion::dec::KlDirection direction, std::uint64_t seed) {
  using namespace congestion::dec;
  const auto params = random_net(input, hidden, latent, seed);
  const Matrix x = random_matrix(rows, input, seed + 1);
  const Matrix mu = random_matrix(clusters, latent, seed + 2);
  const double nu = 1.0;
  const Matrix p = target_distribution(soft_assign(encode(params, x), mu, nu));

  Tape tape;
  const Matrix z = forward_stack(params.encoder, x, &tape);
  ClusteringGrad g;
  clustering_loss_and_grad(z, mu, nu, p, direction, g);
  std::vector<LayerGrad> layer_grads;
  backward_stack(params.encoder, tape, g.latent, layer_grads);
  const Vector enc_grad = flatten(layer_grads);

  const Eigen::Index ne = enc_grad.size();
  Vector analytic(ne + mu.size());
  analytic << enc_grad, Eigen::Map<const Vector>(g.centroids.data(), g.centroids.size());
  Vector theta(ne + mu.size());
  theta << flatten(params.encoder), Eigen::Map<const Vector>(mu.data(), mu.size());

  return max_relative_error(analytic, [&](const Vector& t) {
    LayerStack enc = params.encoder;
    unflatten(enc, t.head(ne));
    Matrix m(mu.rows(), mu.cols());
    Eigen::Map<Vector>(m.data(), m.size()) = t.tail(mu.size());
    return clustering_loss(soft_assign(forward_stack(enc, x), m, nu), p, direction);
  }, theta);
}

}  // namespace gradcheck
