#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "../support/gradcheck.hpp"
#include "congestion/clustering.hpp"
#include "congestion/dec.hpp"
#include "congestion/errors.hpp"

using namespace congestion;
using namespace congestion::dec;

namespace {

Matrix two_blobs(int per, int dim, double sep, std::uint64_t seed, std::vector<int>* truth = nullptr) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Matrix m(2 * per, dim);
  for (int i = 0; i < 2 * per; ++i) {
    const int c = i < per ? 0 : 1;
    for (int j = 0; j < dim; ++j) m(i, j) = g(rng) + (c == 1 && j == 0 ? sep : 0.0);
    if (truth) truth->push_back(c);
  }
  return m;
}

AutoencoderParams identity_encoder(int dim) {
  auto p = AutoencoderParams::init(dim, {}, dim, 1);
  p.encoder[0].weight = Matrix::Identity(dim, dim);
  p.encoder[0].bias = Vector::Zero(dim);
  return p;
}

}  // namespace

TEST(Autoencoder, ShapesAndParameterCount) {
  const auto p = AutoencoderParams::init(4, {3}, 2, 7);
  EXPECT_EQ(p.widths(), (std::vector<int>{4, 3, 2, 3, 4}));
  EXPECT_EQ(p.parameter_count(), 15u + 8u + 9u + 16u);
  EXPECT_EQ(p.encoder[0].activation, Activation::kRelu);
  EXPECT_EQ(p.encoder[1].activation, Activation::kLinear);
  EXPECT_EQ(p.decoder.back().activation, Activation::kLinear);
}

TEST(Autoencoder, ZeroWeightsGiveZeroReconstruction) {
  auto p = AutoencoderParams::init(3, {4}, 2, 1);
  for (auto* stack : {&p.encoder, &p.decoder})
    for (auto& l : *stack) {
      l.weight.setZero();
      l.bias.setZero();
    }
  const Matrix x = gradcheck::random_matrix(5, 3, 2);
  EXPECT_EQ(ae_forward(p, x).reconstruction.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Autoencoder, LinearOneOneOneIdentity) {
  auto p = AutoencoderParams::init(1, {}, 1, 1);
  p.encoder[0].weight(0, 0) = 2.0;
  p.encoder[0].bias(0) = 0.0;
  p.decoder[0].weight(0, 0) = 0.5;
  p.decoder[0].bias(0) = 0.0;
  Matrix x(3, 1);
  x << -1.5, 0.0, 4.0;
  EXPECT_TRUE((ae_forward(p, x).reconstruction.array() == x.array()).all());
}

// Re-implementation oracle: plain loops over the documented arithmetic.
TEST(Autoencoder, ForwardMatchesLoopReimplementation) {
  const auto p = AutoencoderParams::init(5, {4}, 3, 9);
  const Matrix x = gradcheck::random_matrix(6, 5, 10);
  const auto out = ae_forward(p, x);
  auto layer = [](const DenseLayer& l, const std::vector<double>& in) {
    std::vector<double> o(static_cast<std::size_t>(l.out()));
    for (Eigen::Index r = 0; r < l.out(); ++r) {
      double s = l.bias(r);
      for (Eigen::Index c = 0; c < l.in(); ++c) s += l.weight(r, c) * in[static_cast<std::size_t>(c)];
      o[static_cast<std::size_t>(r)] = l.activation == Activation::kRelu ? std::max(0.0, s) : s;
    }
    return o;
  };
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    std::vector<double> h(x.row(i).data(), x.row(i).data() + x.cols());
    for (const auto& l : p.encoder) h = layer(l, h);
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(out.latent(i, j), h[j], 1e-12);
    for (const auto& l : p.decoder) h = layer(l, h);
    for (int j = 0; j < 5; ++j) EXPECT_NEAR(out.reconstruction(i, j), h[j], 1e-12);
  }
}

TEST(Autoencoder, ReconstructionLossArithmetic) {
  Matrix x(1, 2), xh(1, 2);
  x << 1, 0;
  xh << 0, 0;
  EXPECT_DOUBLE_EQ(reconstruction_loss(x, xh), 1.0);
  EXPECT_DOUBLE_EQ(reconstruction_loss(x, x), 0.0);
  const Matrix a = gradcheck::random_matrix(4, 3, 1), b = gradcheck::random_matrix(4, 3, 2);
  const Matrix scaled = a + 3.0 * (b - a);
  EXPECT_NEAR(reconstruction_loss(a, scaled), 9.0 * reconstruction_loss(a, b), 1e-12);
}

TEST(Autoencoder, GradientMatchesFiniteDifferences) {
  // 4-3-2-3-4 net: 48 parameters.
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) EXPECT_LT(gradcheck::autoencoder_error(4, {3}, 2, 8, seed), 1e-4);
  // Two hidden layers per side, still under 200 parameters.
  EXPECT_LT(gradcheck::autoencoder_error(5, {6, 4}, 2, 10, 6), 1e-4);
}

TEST(Autoencoder, ZeroLearningRateLeavesParamsUnchanged) {
  auto p = AutoencoderParams::init(4, {3}, 2, 3);
  const auto before = p;
  AdamOptimizer adam;
  train_step(p, adam, gradcheck::random_matrix(8, 4, 4), 0.0);
  EXPECT_TRUE((flatten(p.encoder).array() == flatten(before.encoder).array()).all());
  EXPECT_TRUE((flatten(p.decoder).array() == flatten(before.decoder).array()).all());
}

TEST(Autoencoder, MemorisesTenRows) {
  auto p = AutoencoderParams::init(6, {8}, 4, 5);
  const Matrix x = gradcheck::random_matrix(10, 6, 6);
  AdamOptimizer adam;
  const double first = train_step(p, adam, x, 1e-2).loss;
  double last = first;
  for (int i = 1; i < 200; ++i) last = train_step(p, adam, x, 1e-2).loss;
  EXPECT_LT(last, first);
}

TEST(Autoencoder, NonFiniteGradientAborts) {
  auto p = AutoencoderParams::init(2, {2}, 1, 5);
  Matrix x(1, 2);
  x << std::numeric_limits<double>::infinity(), 0;
  AdamOptimizer adam;
  EXPECT_THROW(train_step(p, adam, x, 1e-3, 17), NumericError);
}

TEST(Pretrain, RecoversRankTwoData) {
  const Matrix a = gradcheck::random_matrix(200, 2, 7), b = gradcheck::random_matrix(2, 6, 8);
  const Matrix x = 0.5 * a * b;
  auto p = AutoencoderParams::init(6, {16}, 3, 9);
  const auto r = pretrain(p, x, {3e-3, 16, 400, 10});
  EXPECT_LT(r.final_loss, 1e-3);
  EXPECT_EQ(r.epoch_loss.size(), 400u);
}

TEST(Pretrain, ZeroEpochsIsNoop) {
  auto p = AutoencoderParams::init(3, {4}, 2, 1);
  const auto before = flatten(p.encoder);
  pretrain(p, gradcheck::random_matrix(10, 3, 2), {1e-3, 4, 0, 1});
  EXPECT_TRUE((flatten(p.encoder).array() == before.array()).all());
}

TEST(Pretrain, MinibatchesCoverEveryRowOnce) {
  const auto b = minibatches(10, 4, 3);
  ASSERT_EQ(b.size(), 3u);
  std::vector<int> seen(10, 0);
  for (const auto& batch : b)
    for (auto r : batch) ++seen[static_cast<std::size_t>(r)];
  for (int s : seen) EXPECT_EQ(s, 1);
  EXPECT_EQ(minibatches(10, 4, 3), b);
}

TEST(SoftAssign, HandValues) {
  Matrix z(1, 1), mu(2, 1);
  z << 0;
  mu << 0, 1;
  const Matrix q = soft_assign(z, mu, 1.0);
  EXPECT_NEAR(q(0, 0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(q(0, 1), 1.0 / 3.0, 1e-15);

  mu << -1, 1;
  EXPECT_DOUBLE_EQ(soft_assign(z, mu, 1.0)(0, 0), 0.5);

  mu << 0, 1e4;
  EXPECT_GT(soft_assign(z, mu, 1.0)(0, 0), 1 - 1e-7);
}

TEST(SoftAssign, RowsAreStochasticAndInterior) {
  const Matrix z = gradcheck::random_matrix(50, 3, 1);
  const Matrix mu = gradcheck::random_matrix(4, 3, 2);
  const Matrix q = soft_assign(z, mu, 1.0);
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    EXPECT_NEAR(q.row(i).sum(), 1.0, 1e-12);
    EXPECT_GT(q.row(i).minCoeff(), 0.0);
    EXPECT_LT(q.row(i).maxCoeff(), 1.0);
  }
}

TEST(TargetDistribution, HandValues) {
  Matrix q1(1, 2);
  q1 << 0.8, 0.2;
  const Matrix p1 = target_distribution(q1);
  EXPECT_NEAR(p1(0, 0), 0.8, 1e-15);
  EXPECT_NEAR(p1(0, 1), 0.2, 1e-15);

  Matrix q(2, 2);
  q << 0.9, 0.1, 0.5, 0.5;
  const Matrix p = target_distribution(q);
  // f = [1.4, 0.6]; row 2: (0.25/1.4, 0.25/0.6) normalised = (0.3, 0.7),
  // sharpened toward the second cluster.
  const double a = 0.25 / 1.4, b = 0.25 / 0.6;
  EXPECT_NEAR(p(1, 0), a / (a + b), 1e-15);
  EXPECT_NEAR(p(1, 0), 0.3, 1e-12);
  EXPECT_NEAR(p(1, 1), 0.7, 1e-12);
  // Row 1: (0.81/1.4, 0.01/0.6) normalised.
  EXPECT_NEAR(p(0, 0), (0.81 / 1.4) / (0.81 / 1.4 + 0.01 / 0.6), 1e-15);

  Matrix u = Matrix::Constant(3, 3, 1.0 / 3.0);
  EXPECT_LT((target_distribution(u) - u).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(TargetDistribution, SharpensNonUniformRowsWithEqualFrequencies) {
  // Balanced columns so f is uniform and sharpening is strict per row.
  const Matrix z = gradcheck::random_matrix(40, 2, 3);
  Matrix mu(2, 2);
  mu << -1, 0, 1, 0;
  Matrix zz(80, 2);
  zz << z, -z;  // mirror image keeps cluster masses equal
  const Matrix q = soft_assign(zz, mu, 1.0);
  const Matrix p = target_distribution(q);
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-12);
    if (std::abs(q(i, 0) - 0.5) > 1e-9) EXPECT_GT(p.row(i).maxCoeff(), q.row(i).maxCoeff());
  }
}

TEST(ClusteringLoss, HandValueAndGibbs) {
  Matrix q(1, 2), p(1, 2);
  q << 0.5, 0.5;
  p << 0.9, 0.1;
  EXPECT_NEAR(clustering_loss(q, p), 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1), 1e-15);
  EXPECT_NEAR(clustering_loss(q, p), 0.5108, 5e-5);
  EXPECT_NEAR(clustering_loss(q, p, KlDirection::kCanonical),
              0.9 * std::log(0.9 / 0.5) + 0.1 * std::log(0.1 / 0.5), 1e-15);
  EXPECT_EQ(clustering_loss(q, q), 0.0);

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int t = 0; t < 200; ++t) {
    Matrix a(3, 4), b(3, 4);
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      a.data()[i] = u(rng);
      b.data()[i] = u(rng);
    }
    a = a.array().colwise() / a.rowwise().sum().array();
    b = b.array().colwise() / b.rowwise().sum().array();
    EXPECT_GE(clustering_loss(a, b), 0.0);
    EXPECT_GE(clustering_loss(a, b, KlDirection::kCanonical), 0.0);
  }
}

TEST(ClusteringLoss, ZeroTargetUnderPositiveMassIsInfinite) {
  Matrix q(1, 2), p(1, 2);
  q << 0.5, 0.5;
  p << 1.0, 0.0;
  EXPECT_THROW(clustering_loss(q, p), NumericError);
  q << 1.0, 0.0;
  EXPECT_EQ(clustering_loss(q, p), 0.0);  // 0 log 0 terms vanish
}

TEST(ClusteringLoss, GradientMatchesFiniteDifferences) {
  for (auto dir : {KlDirection::kAsPrinted, KlDirection::kCanonical}) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      EXPECT_LT(gradcheck::clustering_error(4, {3}, 2, 2, 12, dir, seed), 1e-4) << to_string(dir);
      EXPECT_LT(gradcheck::clustering_error(6, {5}, 3, 3, 12, dir, seed), 1e-4) << to_string(dir);
    }
  }
}

TEST(InitCentroids, TwoDistinctLatentPoints) {
  Matrix x(6, 2);
  x << 0, 0, 0, 0, 0, 0, 5, 5, 5, 5, 5, 5;
  Matrix c = init_centroids(identity_encoder(2), x, 2, 3);
  if (c(0, 0) > c(1, 0)) c.row(0).swap(c.row(1));
  EXPECT_NEAR((c.row(0) - RowVector::Zero(2)).norm(), 0.0, 1e-12);
  EXPECT_NEAR((c.row(1) - RowVector::Constant(2, 5.0)).norm(), 0.0, 1e-12);
}

TEST(InitCentroids, NearGeneratorMeansAndDeterministic) {
  const Matrix x = two_blobs(1000, 2, 10.0, 4);
  Matrix c = init_centroids(identity_encoder(2), x, 2, 7);
  EXPECT_TRUE((c.array() == init_centroids(identity_encoder(2), x, 2, 7).array()).all());
  if (c(0, 0) > c(1, 0)) c.row(0).swap(c.row(1));
  RowVector m0(2), m1(2);
  m0 << 0, 0;
  m1 << 10, 0;
  EXPECT_LT((c.row(0) - m0).norm(), 0.1);
  EXPECT_LT((c.row(1) - m1).norm(), 0.1);
}

TEST(DecFit, TwoBlobsSeparateInInputSpace) {
  std::vector<int> truth;
  // Separation large against the within-blob spread, so the generator
  // partition itself scores about 0.87.
  const Matrix x = two_blobs(150, 4, 20.0, 5, &truth);
  DecPipelineOptions opt;
  opt.hidden = {16};
  opt.latent_dim = 3;
  opt.train.learning_rate = 1e-3;
  opt.train.batch_size = 32;
  opt.train.epochs = 30;
  opt.train.refine_epochs = 20;
  opt.train.seed = 11;
  const auto r = fit_dec_pipeline(x, opt);
  EXPECT_GT(clustering::silhouette(x, r.assignment.labels), 0.8);
  EXPECT_EQ(clustering::canonical_labels(r.assignment.labels), clustering::canonical_labels(truth));
}

TEST(DecFit, ToleranceOneStopsAtFirstLabelComparison) {
  const Matrix x = two_blobs(40, 4, 8.0, 6);
  DecPipelineOptions opt;
  opt.hidden = {8};
  opt.latent_dim = 2;
  opt.train.epochs = 2;
  opt.train.refine_epochs = 30;
  opt.train.tol = 1.0;
  const auto r = fit_dec_pipeline(x, opt);
  EXPECT_TRUE(r.converged);
  // Refresh at epoch 0 is the k-means baseline; the epoch-1 refresh stops.
  EXPECT_EQ(r.epochs_run, 1);
}

TEST(DecFit, BitReproducible) {
  const Matrix x = two_blobs(60, 4, 4.0, 7);
  DecPipelineOptions opt;
  opt.hidden = {8};
  opt.latent_dim = 2;
  opt.train.epochs = 5;
  opt.train.refine_epochs = 5;
  opt.train.seed = 3;
  const auto a = fit_dec_pipeline(x, opt);
  const auto b = fit_dec_pipeline(x, opt);
  EXPECT_EQ(a.assignment.labels, b.assignment.labels);
  EXPECT_EQ(a.loss_history, b.loss_history);
  EXPECT_TRUE((a.model.centroids.array() == b.model.centroids.array()).all());
  EXPECT_EQ(to_json(a.model).dump(), to_json(b.model).dump());
}

TEST(DecFit, RejectsBadConfig) {
  TrainConfig c;
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.tol = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(DecModelIo, CheckpointRoundTrip) {
  const Matrix x = two_blobs(30, 3, 5.0, 8);
  DecPipelineOptions opt;
  opt.hidden = {4};
  opt.latent_dim = 2;
  opt.train.epochs = 2;
  opt.train.refine_epochs = 2;
  auto r = fit_dec_pipeline(x, opt);
  r.model.preprocessor_fingerprint = "abc123";
  r.model.direction = KlDirection::kCanonical;
  const auto path = std::filesystem::temp_directory_path() / "congestion_dec_roundtrip.json";
  save_model(path, r.model);
  const auto back = load_model(path);
  std::filesystem::remove(path);
  EXPECT_EQ(back.preprocessor_fingerprint, "abc123");
  EXPECT_EQ(back.direction, KlDirection::kCanonical);
  EXPECT_TRUE((encode(back.autoencoder, x).array() == encode(r.model.autoencoder, x).array()).all());
  EXPECT_TRUE((back.centroids.array() == r.model.centroids.array()).all());
  EXPECT_EQ(to_json(back).dump(), to_json(r.model).dump());
}

TEST(DecModelIo, DirectionNames) {
  EXPECT_EQ(parse_direction("as_printed"), KlDirection::kAsPrinted);
  EXPECT_EQ(parse_direction("canonical"), KlDirection::kCanonical);
  EXPECT_THROW(parse_direction("reverse"), ConfigError);
}

TEST(HardLabels, ArgmaxFirstOnTies) {
  Matrix q(3, 2);
  q << 0.7, 0.3, 0.5, 0.5, 0.2, 0.8;
  EXPECT_EQ(hard_labels(q), (std::vector<int>{0, 0, 1}));
}
