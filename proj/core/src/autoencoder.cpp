#include "congestion/autoencoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "congestion/errors.hpp"

namespace congestion::dec {

namespace {

DenseLayer make_layer(int in, int out, Activation act, std::mt19937_64& rng) {
  DenseLayer layer;
  layer.activation = act;
  const double scale = act == Activation::kRelu ? std::sqrt(2.0 / in) : std::sqrt(2.0 / (in + out));
  std::normal_distribution<double> normal(0.0, scale);
  layer.weight.resize(out, in);
  for (Eigen::Index r = 0; r < out; ++r) {
    for (Eigen::Index c = 0; c < in; ++c) layer.weight(r, c) = normal(rng);
  }
  layer.bias = Vector::Zero(out);
  return layer;
}

}  // namespace

int AutoencoderParams::input_dim() const {
  return encoder.empty() ? 0 : static_cast<int>(encoder.front().in());
}

int AutoencoderParams::latent_dim() const {
  return encoder.empty() ? 0 : static_cast<int>(encoder.back().out());
}

std::vector<int> AutoencoderParams::widths() const {
  std::vector<int> w;
  if (encoder.empty()) return w;
  w.push_back(static_cast<int>(encoder.front().in()));
  for (const auto& l : encoder) w.push_back(static_cast<int>(l.out()));
  for (const auto& l : decoder) w.push_back(static_cast<int>(l.out()));
  return w;
}

std::size_t AutoencoderParams::parameter_count() const {
  return dec::parameter_count(encoder) + dec::parameter_count(decoder);
}

bool AutoencoderParams::all_finite() const {
  for (const auto* stack : {&encoder, &decoder}) {
    for (const auto& l : *stack) {
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    }
  }
  return true;
}

AutoencoderParams AutoencoderParams::init(int input_dim, const std::vector<int>& hidden,
                                          int latent_dim, std::uint64_t seed) {
  if (input_dim < 1 || latent_dim < 1) throw ConfigError("autoencoder widths must be positive");
  for (int h : hidden) {
    if (h < 1) throw ConfigError("hidden widths must be positive");
  }
  std::mt19937_64 rng(seed);
  AutoencoderParams p;
  int prev = input_dim;
  for (int h : hidden) {
    p.encoder.push_back(make_layer(prev, h, Activation::kRelu, rng));
    prev = h;
  }
  p.encoder.push_back(make_layer(prev, latent_dim, Activation::kLinear, rng));
  prev = latent_dim;
  for (auto it = hidden.rbegin(); it != hidden.rend(); ++it) {
    p.decoder.push_back(make_layer(prev, *it, Activation::kRelu, rng));
    prev = *it;
  }
  p.decoder.push_back(make_layer(prev, input_dim, Activation::kLinear, rng));
  return p;
}

Matrix forward_stack(const LayerStack& layers, const Matrix& x, Tape* tape) {
  if (tape) {
    tape->inputs.clear();
    tape->pre_activations.clear();
  }
  Matrix h = x;
  for (const auto& layer : layers) {
    if (h.cols() != layer.in()) throw PreconditionError("layer input width mismatch");
    Matrix z = h * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    if (tape) {
      tape->inputs.push_back(h);
      tape->pre_activations.push_back(z);
    }
    if (layer.activation == Activation::kRelu) z = z.cwiseMax(0.0);
    h = std::move(z);
  }
  return h;
}

Matrix backward_stack(const LayerStack& layers, const Tape& tape, const Matrix& d_out,
                      std::vector<LayerGrad>& grads) {
  grads.resize(layers.size());
  Matrix delta = d_out;
  for (std::size_t li = layers.size(); li-- > 0;) {
    const auto& layer = layers[li];
    if (layer.activation == Activation::kRelu) {
      delta = delta.cwiseProduct((tape.pre_activations[li].array() > 0.0).cast<double>().matrix());
    }
    grads[li].weight = delta.transpose() * tape.inputs[li];
    grads[li].bias = delta.colwise().sum().transpose();
    delta = delta * layer.weight;
  }
  return delta;
}

ForwardResult ae_forward(const AutoencoderParams& params, const Matrix& batch) {
  if (batch.cols() != params.input_dim()) {
    throw PreconditionError("batch has " + std::to_string(batch.cols()) + " columns, network expects " +
                            std::to_string(params.input_dim()));
  }
  ForwardResult r;
  r.latent = forward_stack(params.encoder, batch);
  r.reconstruction = forward_stack(params.decoder, r.latent);
  if (!r.latent.allFinite() || !r.reconstruction.allFinite()) {
    throw NumericError("non-finite activation in autoencoder forward pass");
  }
  return r;
}

Matrix encode(const AutoencoderParams& params, const Matrix& batch) {
  if (batch.cols() != params.input_dim()) throw PreconditionError("batch width mismatch");
  return forward_stack(params.encoder, batch);
}

double reconstruction_loss(const Matrix& batch, const Matrix& reconstruction) {
  if (batch.rows() != reconstruction.rows() || batch.cols() != reconstruction.cols()) {
    throw PreconditionError("reconstruction shape mismatch");
  }
  if (batch.rows() == 0) return 0.0;
  return (batch - reconstruction).squaredNorm() / static_cast<double>(batch.rows());
}

std::size_t parameter_count(const LayerStack& layers) {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

Vector flatten(const LayerStack& layers) {
  Vector flat(static_cast<Eigen::Index>(parameter_count(layers)));
  Eigen::Index pos = 0;
  for (const auto& l : layers) {
    flat.segment(pos, l.weight.size()) = Eigen::Map<const Vector>(l.weight.data(), l.weight.size());
    pos += l.weight.size();
    flat.segment(pos, l.bias.size()) = l.bias;
    pos += l.bias.size();
  }
  return flat;
}

void unflatten(LayerStack& layers, const Vector& flat) {
  Eigen::Index pos = 0;
  for (auto& l : layers) {
    Eigen::Map<Vector>(l.weight.data(), l.weight.size()) = flat.segment(pos, l.weight.size());
    pos += l.weight.size();
    l.bias = flat.segment(pos, l.bias.size());
    pos += l.bias.size();
  }
  if (pos != flat.size()) throw PreconditionError("flat parameter size mismatch");
}

Vector flatten(const std::vector<LayerGrad>& grads) {
  Eigen::Index total = 0;
  for (const auto& g : grads) total += g.weight.size() + g.bias.size();
  Vector flat(total);
  Eigen::Index pos = 0;
  for (const auto& g : grads) {
    flat.segment(pos, g.weight.size()) = Eigen::Map<const Vector>(g.weight.data(), g.weight.size());
    pos += g.weight.size();
    flat.segment(pos, g.bias.size()) = g.bias;
    pos += g.bias.size();
  }
  return flat;
}

double reconstruction_loss_and_grad(const AutoencoderParams& params, const Matrix& batch,
                                    Vector& grad) {
  Tape enc_tape;
  Tape dec_tape;
  const Matrix latent = forward_stack(params.encoder, batch, &enc_tape);
  const Matrix recon = forward_stack(params.decoder, latent, &dec_tape);
  const double n = static_cast<double>(batch.rows());
  const Matrix residual = recon - batch;
  const double loss = residual.squaredNorm() / n;
  const Matrix d_recon = (2.0 / n) * residual;
  std::vector<LayerGrad> dec_grads;
  std::vector<LayerGrad> enc_grads;
  const Matrix d_latent = backward_stack(params.decoder, dec_tape, d_recon, dec_grads);
  backward_stack(params.encoder, enc_tape, d_latent, enc_grads);
  const Vector ge = flatten(enc_grads);
  const Vector gd = flatten(dec_grads);
  grad.resize(ge.size() + gd.size());
  grad << ge, gd;
  return loss;
}

void AdamOptimizer::apply(Vector& params, const Vector& grad, double lr) {
  if (m.size() != params.size()) {
    m = Vector::Zero(params.size());
    v = Vector::Zero(params.size());
    step = 0;
  }
  ++step;
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  params.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + epsilon);
}

StepResult train_step(AutoencoderParams& params, AdamOptimizer& adam, const Matrix& batch,
                      double lr, long batch_index) {
  if (!(lr >= 0.0)) throw PreconditionError("learning rate must be non-negative");
  Vector grad;
  StepResult r;
  r.loss = reconstruction_loss_and_grad(params, batch, grad);
  if (!grad.allFinite() || !std::isfinite(r.loss)) {
    throw NumericError("non-finite gradient at batch " + std::to_string(batch_index));
  }
  if (lr == 0.0) return r;
  Vector flat(grad.size());
  const Vector fe = flatten(params.encoder);
  const Vector fd = flatten(params.decoder);
  flat << fe, fd;
  adam.apply(flat, grad, lr);
  unflatten(params.encoder, flat.head(fe.size()));
  unflatten(params.decoder, flat.tail(fd.size()));
  return r;
}

std::vector<std::vector<Eigen::Index>> minibatches(Eigen::Index rows, int batch_size,
                                                   std::uint64_t seed) {
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(rows));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  std::vector<std::vector<Eigen::Index>> batches;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

Matrix gather_rows(const Matrix& data, const std::vector<Eigen::Index>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), data.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = data.row(rows[i]);
  return out;
}

PretrainResult pretrain(AutoencoderParams& params, const Matrix& data, const PretrainConfig& config,
                        const std::function<void(int, double)>& on_epoch) {
  if (data.rows() == 0) throw PreconditionError("pretrain needs a nonempty matrix");
  if (data.cols() != params.input_dim()) throw PreconditionError("pretrain: matrix width mismatch");
  PretrainResult result;
  AdamOptimizer adam;
  long batch_index = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto batches =
        minibatches(data.rows(), config.batch_size, config.seed + static_cast<std::uint64_t>(epoch));
    double sum = 0.0;
    for (const auto& rows : batches) {
      sum += train_step(params, adam, gather_rows(data, rows), config.learning_rate, batch_index++).loss;
    }
    const double mean = sum / static_cast<double>(batches.size());
    result.epoch_loss.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  result.final_loss = reconstruction_loss(data, ae_forward(params, data).reconstruction);
  return result;
}

}  // namespace congestion::dec
