#include "congestion/dec.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "congestion/errors.hpp"

namespace congestion::dec {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  if (epochs < 0 || refine_epochs < 0) throw ConfigError("epochs must be non-negative");
  if (update_interval < 1) throw ConfigError("update interval must be positive");
  if (!(tol > 0.0 && tol <= 1.0)) throw ConfigError("convergence threshold must be in (0, 1]");
  if (reconstruction_weight < 0.0) throw ConfigError("reconstruction weight must be non-negative");
}

Matrix soft_assign(const Matrix& latent, const Matrix& centroids, double nu) {
  if (latent.cols() != centroids.cols()) throw PreconditionError("latent/centroid width mismatch");
  if (centroids.rows() == 0) throw PreconditionError("centroids not initialised");
  const double power = -(nu + 1.0) / 2.0;
  Matrix q(latent.rows(), centroids.rows());
  for (Eigen::Index i = 0; i < latent.rows(); ++i) {
    for (Eigen::Index j = 0; j < centroids.rows(); ++j) {
      const double d2 = (latent.row(i) - centroids.row(j)).squaredNorm();
      q(i, j) = std::pow(1.0 + d2 / nu, power);
    }
    q.row(i) /= q.row(i).sum();
  }
  return q;
}

Matrix soft_assign(const DecModel& model, const Matrix& latent) {
  return soft_assign(latent, model.centroids, model.nu);
}

Matrix target_distribution(const Matrix& q) {
  const RowVector f = q.colwise().sum();
  Matrix p(q.rows(), q.cols());
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    for (Eigen::Index j = 0; j < q.cols(); ++j) p(i, j) = q(i, j) * q(i, j) / f(j);
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

double clustering_loss(const Matrix& q, const Matrix& p, KlDirection direction) {
  if (q.rows() != p.rows() || q.cols() != p.cols()) throw PreconditionError("q/p shape mismatch");
  const Matrix& lead = direction == KlDirection::kAsPrinted ? q : p;
  const Matrix& other = direction == KlDirection::kAsPrinted ? p : q;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    for (Eigen::Index j = 0; j < q.cols(); ++j) {
      const double a = lead(i, j);
      if (a == 0.0) continue;
      if (other(i, j) == 0.0) throw NumericError("infinite clustering loss: zero target cell");
      loss += a * std::log(a / other(i, j));
    }
  }
  return loss;
}

double clustering_loss_and_grad(const Matrix& latent, const Matrix& centroids, double nu,
                                const Matrix& p, KlDirection direction, ClusteringGrad& grad) {
  const Eigen::Index n = latent.rows();
  const Eigen::Index k = centroids.rows();
  const Matrix q = soft_assign(latent, centroids, nu);
  const double loss = clustering_loss(q, p, direction);

  // dL/dq
  Matrix g(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) {
      g(i, j) = direction == KlDirection::kAsPrinted ? std::log(q(i, j) / p(i, j)) + 1.0
                                                     : -p(i, j) / q(i, j);
    }
  }
  grad.latent = Matrix::Zero(n, latent.cols());
  grad.centroids = Matrix::Zero(k, latent.cols());
  const double coeff = -(nu + 1.0) / nu;
  for (Eigen::Index i = 0; i < n; ++i) {
    // q_ij = t_ij / T_i, so dL/dt_ij * t_ij = q_ij (g_ij - sum_k g_ik q_ik).
    const double mean_g = g.row(i).dot(q.row(i));
    for (Eigen::Index j = 0; j < k; ++j) {
      const RowVector diff = latent.row(i) - centroids.row(j);
      const double d2 = diff.squaredNorm();
      // dt/dd = -(nu+1)/(2 nu) * t / (1 + d/nu); dd/dz = 2 diff.
      const double dl_dd = q(i, j) * (g(i, j) - mean_g) * 0.5 * coeff / (1.0 + d2 / nu);
      grad.latent.row(i) += 2.0 * dl_dd * diff;
      grad.centroids.row(j) -= 2.0 * dl_dd * diff;
    }
  }
  return loss;
}

std::vector<int> hard_labels(const Matrix& q) {
  std::vector<int> labels(static_cast<std::size_t>(q.rows()));
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    Eigen::Index arg = 0;
    q.row(i).maxCoeff(&arg);
    labels[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return labels;
}

Matrix init_centroids(const AutoencoderParams& autoencoder, const Matrix& data, int clusters,
                      std::uint64_t seed, std::vector<int>* labels) {
  const Matrix latent = encode(autoencoder, data);
  clustering::KMeansOptions opt;
  opt.k = clusters;
  opt.seed = seed;
  auto km = clustering::kmeans_fit(latent, opt);
  if (labels) *labels = km.assignment.labels;
  return km.centroids;
}

namespace {

double label_change_fraction(const std::vector<int>& a, const std::vector<int>& b) {
  std::size_t changed = 0;
  for (std::size_t i = 0; i < a.size(); ++i) changed += a[i] != b[i];
  return a.empty() ? 0.0 : static_cast<double>(changed) / static_cast<double>(a.size());
}

}  // namespace

DecFitResult dec_fit(DecModel model, const Matrix& data, const TrainConfig& config,
                     const std::vector<int>& initial_labels, const RefineCallback& on_refresh) {
  config.validate();
  const int k = model.clusters();
  if (k < 2) throw PreconditionError("DEC needs K >= 2");
  if (model.centroids.cols() != model.autoencoder.latent_dim()) {
    throw PreconditionError("centroids do not match the latent width");
  }
  if (static_cast<Eigen::Index>(initial_labels.size()) != data.rows()) {
    throw PreconditionError("initial labels do not match the data rows");
  }
  DecFitResult res;
  std::vector<int> previous = initial_labels;
  Matrix p;
  AdamOptimizer adam;
  const bool train_decoder = config.reconstruction_weight > 0.0;
  const Eigen::Index enc_size = static_cast<Eigen::Index>(parameter_count(model.autoencoder.encoder));
  const Eigen::Index dec_size =
      train_decoder ? static_cast<Eigen::Index>(parameter_count(model.autoencoder.decoder)) : 0;
  const Eigen::Index cen_size = model.centroids.size();
  long batch_index = 0;

  for (int epoch = 0; epoch < config.refine_epochs; ++epoch) {
    if (epoch % config.update_interval == 0) {
      const Matrix q = soft_assign(model, encode(model.autoencoder, data));
      p = target_distribution(q);
      const std::vector<int> labels = hard_labels(q);
      const RowVector f = q.colwise().sum();
      if (f.minCoeff() < 1.0) {
        res.collapsed = true;
        res.warnings.push_back("cluster collapse at refinement epoch " + std::to_string(epoch) +
                               ": expected cluster size below 1");
        previous = labels;
        break;
      }
      const double change = label_change_fraction(labels, previous);
      previous = labels;
      if (on_refresh && !on_refresh(epoch, labels, model)) {
        res.stopped_by_callback = true;
        break;
      }
      // The first refresh reproduces the k-means labels, so it never counts.
      if (epoch > 0 && change < config.tol) {
        res.converged = true;
        break;
      }
    }
    const auto batches = minibatches(data.rows(), config.batch_size,
                                     config.seed ^ (0x5eedULL + static_cast<std::uint64_t>(epoch)));
    double epoch_loss = 0.0;
    for (const auto& rows : batches) {
      const Matrix x = gather_rows(data, rows);
      const Matrix pb = gather_rows(p, rows);
      const double b = static_cast<double>(rows.size());
      Tape enc_tape;
      const Matrix z = forward_stack(model.autoencoder.encoder, x, &enc_tape);
      ClusteringGrad cg;
      const double loss =
          clustering_loss_and_grad(z, model.centroids, model.nu, pb, model.direction, cg);
      epoch_loss += loss;
      Matrix dz = cg.latent / b;
      Vector dec_grad;
      if (train_decoder) {
        Tape dec_tape;
        const Matrix recon = forward_stack(model.autoencoder.decoder, z, &dec_tape);
        const Matrix d_recon = (2.0 * config.reconstruction_weight / b) * (recon - x);
        std::vector<LayerGrad> dg;
        dz += backward_stack(model.autoencoder.decoder, dec_tape, d_recon, dg);
        dec_grad = flatten(dg);
      }
      std::vector<LayerGrad> eg;
      backward_stack(model.autoencoder.encoder, enc_tape, dz, eg);

      Vector grad(enc_size + dec_size + cen_size);
      Vector flat(enc_size + dec_size + cen_size);
      grad.head(enc_size) = flatten(eg);
      flat.head(enc_size) = flatten(model.autoencoder.encoder);
      if (train_decoder) {
        grad.segment(enc_size, dec_size) = dec_grad;
        flat.segment(enc_size, dec_size) = flatten(model.autoencoder.decoder);
      }
      const Matrix dmu = cg.centroids / b;
      grad.tail(cen_size) = Eigen::Map<const Vector>(dmu.data(), cen_size);
      flat.tail(cen_size) = Eigen::Map<const Vector>(model.centroids.data(), cen_size);
      if (!grad.allFinite()) {
        throw NumericError("non-finite clustering gradient at batch " + std::to_string(batch_index));
      }
      adam.apply(flat, grad, config.learning_rate);
      unflatten(model.autoencoder.encoder, flat.head(enc_size));
      if (train_decoder) unflatten(model.autoencoder.decoder, flat.segment(enc_size, dec_size));
      Eigen::Map<Vector>(model.centroids.data(), cen_size) = flat.tail(cen_size);
      ++batch_index;
    }
    res.loss_history.push_back(epoch_loss / static_cast<double>(data.rows()));
    res.epochs_run = epoch + 1;
  }
  if (!model.autoencoder.all_finite() || !model.centroids.allFinite()) {
    throw NumericError("non-finite parameters after DEC refinement");
  }
  const Matrix q = soft_assign(model, encode(model.autoencoder, data));
  res.assignment.labels = hard_labels(q);
  res.assignment.k = k;
  res.assignment.method = "dec";
  res.assignment.parameters = {{"K", k}, {"nu", model.nu}};
  res.model = std::move(model);
  return res;
}

DecFitResult fit_dec_pipeline(const Matrix& data, const DecPipelineOptions& opt,
                              const RefineCallback& on_refresh) {
  opt.train.validate();
  DecModel model;
  model.autoencoder = AutoencoderParams::init(static_cast<int>(data.cols()), opt.hidden,
                                              opt.latent_dim, opt.train.seed);
  model.nu = opt.nu;
  model.direction = opt.direction;
  PretrainConfig pc;
  pc.learning_rate = opt.train.learning_rate;
  pc.batch_size = opt.train.batch_size;
  pc.epochs = opt.train.epochs;
  pc.seed = opt.train.seed + 1;
  pretrain(model.autoencoder, data, pc);
  std::vector<int> labels;
  model.centroids = init_centroids(model.autoencoder, data, opt.clusters, opt.train.seed + 2, &labels);
  return dec_fit(std::move(model), data, opt.train, labels, on_refresh);
}

std::string to_string(KlDirection d) {
  return d == KlDirection::kAsPrinted ? "q_log_q_over_p" : "p_log_p_over_q";
}

KlDirection parse_direction(const std::string& s) {
  if (s == "q_log_q_over_p" || s == "as_printed") return KlDirection::kAsPrinted;
  if (s == "p_log_p_over_q" || s == "canonical") return KlDirection::kCanonical;
  throw ConfigError("unknown KL direction '" + s + "'");
}

namespace {

nlohmann::json matrix_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()},
          {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

Matrix matrix_from(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw DataError("matrix size mismatch");
  Matrix m(rows, cols);
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

nlohmann::json stack_json(const LayerStack& layers) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& l : layers) {
    arr.push_back({{"activation", l.activation == Activation::kRelu ? "relu" : "linear"},
                   {"weight", matrix_json(l.weight)},
                   {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
  }
  return arr;
}

LayerStack stack_from(const nlohmann::json& arr) {
  LayerStack layers;
  for (const auto& e : arr) {
    DenseLayer l;
    const std::string act = e.at("activation");
    if (act == "relu") {
      l.activation = Activation::kRelu;
    } else if (act == "linear") {
      l.activation = Activation::kLinear;
    } else {
      throw DataError("unknown activation '" + act + "'");
    }
    l.weight = matrix_from(e.at("weight"));
    const auto b = e.at("bias").get<std::vector<double>>();
    l.bias = Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size()));
    if (l.bias.size() != l.weight.rows()) throw DataError("bias width mismatch");
    layers.push_back(std::move(l));
  }
  return layers;
}

}  // namespace

nlohmann::json to_json(const DecModel& m) {
  return {{"format", "congestion-dec-model"},
          {"version", 1},
          {"widths", m.autoencoder.widths()},
          {"encoder", stack_json(m.autoencoder.encoder)},
          {"decoder", stack_json(m.autoencoder.decoder)},
          {"centroids", matrix_json(m.centroids)},
          {"nu", m.nu},
          {"kl_direction", to_string(m.direction)},
          {"preprocessor_fingerprint", m.preprocessor_fingerprint}};
}

DecModel model_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "congestion-dec-model") throw DataError("not a DEC model checkpoint");
  if (!j.contains("version")) throw DataError("model checkpoint lacks a version field");
  if (j.at("version").get<int>() != 1) throw DataError("unsupported model checkpoint version");
  DecModel m;
  m.autoencoder.encoder = stack_from(j.at("encoder"));
  m.autoencoder.decoder = stack_from(j.at("decoder"));
  m.centroids = matrix_from(j.at("centroids"));
  m.nu = j.at("nu").get<double>();
  m.direction = parse_direction(j.at("kl_direction").get<std::string>());
  m.preprocessor_fingerprint = j.value("preprocessor_fingerprint", "");
  if (m.autoencoder.widths() != j.at("widths").get<std::vector<int>>()) {
    throw DataError("checkpoint widths do not match its layers");
  }
  if (m.centroids.cols() != m.autoencoder.latent_dim()) throw DataError("centroid width mismatch");
  return m;
}

void save_model(const std::filesystem::path& path, const DecModel& model) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json(model).dump() << '\n';
}

DecModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing model file " + path.string());
  return model_from_json(nlohmann::json::parse(in));
}

}  // namespace congestion::dec
