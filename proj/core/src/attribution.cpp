#include "congestion/attribution.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <thread>

#include "congestion/csv.hpp"
#include "congestion/errors.hpp"
#include "congestion/hashing.hpp"

namespace congestion::attribution {

std::vector<Player> players_from_groups(const std::vector<ingest::FeatureGroup>& groups) {
  std::vector<Player> out;
  for (const auto& g : groups) {
    out.push_back({g.name, static_cast<int>(g.first_column), static_cast<int>(g.width)});
  }
  return out;
}

std::vector<Player> singleton_players(int columns) {
  std::vector<Player> out;
  for (int c = 0; c < columns; ++c) out.push_back({"x" + std::to_string(c), c, 1});
  return out;
}

namespace {

void check_inputs(const RowVector& record, const Matrix& background, const std::vector<Player>& players) {
  if (players.empty()) throw PreconditionError("no Shapley players");
  if (background.rows() == 0) throw PreconditionError("empty background set");
  if (background.cols() != record.size()) throw PreconditionError("background width mismatch");
  for (const auto& p : players) {
    if (p.first_column < 0 || p.width < 1 || p.first_column + p.width > record.size()) {
      throw PreconditionError("player '" + p.name + "' is out of range");
    }
  }
}

void copy_player(Matrix& dst, Eigen::Index row, const RowVector& src, const Player& p) {
  dst.row(row).segment(p.first_column, p.width) = src.segment(p.first_column, p.width);
}

double single(const BatchFn& fn, const RowVector& x) {
  Matrix m(1, x.size());
  m.row(0) = x;
  return fn(m)(0);
}

}  // namespace

AttributionResult shapley_exact(const BatchFn& fn, const RowVector& record, const Matrix& background,
                                const std::vector<Player>& players) {
  check_inputs(record, background, players);
  const int m = static_cast<int>(players.size());
  if (m > kMaxExactPlayers) {
    throw PreconditionError(std::to_string(m) + " players exceed the exact limit of " +
                            std::to_string(kMaxExactPlayers) + "; use the sampled estimator");
  }
  const std::size_t masks = std::size_t{1} << m;
  const Eigen::Index nb = background.rows();
  // v(S): background-averaged output with players in S taken from the record.
  std::vector<double> value(masks);
  Matrix batch(nb, record.size());
  for (std::size_t s = 0; s < masks; ++s) {
    batch = background;
    for (int g = 0; g < m; ++g) {
      if (s & (std::size_t{1} << g)) {
        for (Eigen::Index b = 0; b < nb; ++b) copy_player(batch, b, record, players[g]);
      }
    }
    value[s] = fn(batch).mean();
  }
  // weight(|S|) = |S|! (m - |S| - 1)! / m!
  std::vector<double> weight(static_cast<std::size_t>(m));
  for (int k = 0; k < m; ++k) {
    weight[k] = std::exp(std::lgamma(k + 1.0) + std::lgamma(m - k + 0.0) - std::lgamma(m + 1.0));
  }
  AttributionResult res;
  res.phi.assign(static_cast<std::size_t>(m), 0.0);
  for (std::size_t s = 0; s < masks; ++s) {
    const int size = std::popcount(s);
    for (int g = 0; g < m; ++g) {
      const std::size_t bit = std::size_t{1} << g;
      if (s & bit) continue;
      res.phi[g] += weight[size] * (value[s | bit] - value[s]);
    }
  }
  res.base = value[0];
  res.output = value[masks - 1];
  return res;
}

AttributionResult shapley_sampled(const BatchFn& fn, const RowVector& record, const Matrix& background,
                                  const std::vector<Player>& players, int n_permutations, std::uint64_t seed) {
  check_inputs(record, background, players);
  if (n_permutations < 1) throw PreconditionError("n_permutations must be at least 1");
  const int m = static_cast<int>(players.size());
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, background.rows() - 1);
  std::vector<int> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> sum(static_cast<std::size_t>(m), 0.0), sum_sq(static_cast<std::size_t>(m), 0.0);
  Matrix path(m + 1, record.size());
  for (int t = 0; t < n_permutations; ++t) {
    std::shuffle(order.begin(), order.end(), rng);
    const Eigen::Index b = pick(rng);
    path.row(0) = background.row(b);
    for (int i = 0; i < m; ++i) {
      path.row(i + 1) = path.row(i);
      copy_player(path, i + 1, record, players[order[i]]);
    }
    const Vector out = fn(path);
    for (int i = 0; i < m; ++i) {
      const double c = out(i + 1) - out(i);
      sum[order[i]] += c;
      sum_sq[order[i]] += c * c;
    }
  }
  AttributionResult res;
  const double n = n_permutations;
  for (int g = 0; g < m; ++g) {
    const double mean = sum[g] / n;
    res.phi.push_back(mean);
    const double var = n > 1 ? std::max(0.0, (sum_sq[g] - n * mean * mean) / (n - 1.0)) : 0.0;
    res.std_error.push_back(std::sqrt(var / n));
  }
  res.base = fn(background).mean();
  res.output = single(fn, record);
  return res;
}

BatchAttribution explain_rows(const std::function<BatchFn(Eigen::Index row)>& fn_for_row, const Matrix& records,
                              const Matrix& background, const std::vector<Player>& players,
                              const ExplainOptions& options) {
  const Eigen::Index n = records.rows();
  BatchAttribution out;
  out.phi = Matrix::Zero(n, static_cast<Eigen::Index>(players.size()));
  out.base = Vector::Zero(n);
  out.output = Vector::Zero(n);
  auto work = [&](Eigen::Index i) {
    const BatchFn fn = fn_for_row(i);
    const RowVector x = records.row(i);
    const AttributionResult r =
        options.mode == Mode::kExact
            ? shapley_exact(fn, x, background, players)
            : shapley_sampled(fn, x, background, players, options.permutations,
                              mix64(options.seed ^ static_cast<std::uint64_t>(i)));
    for (std::size_t g = 0; g < r.phi.size(); ++g) out.phi(i, static_cast<Eigen::Index>(g)) = r.phi[g];
    out.base(i) = r.base;
    out.output(i) = r.output;
  };
  const int threads = std::max(1, options.threads);
  if (threads == 1 || n < 2) {
    for (Eigen::Index i = 0; i < n; ++i) work(i);
    return out;
  }
  // Strided row partition; every row writes only its own slot.
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (Eigen::Index i = t; i < n; i += threads) work(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

BatchFn membership_fn(const dec::DecModel& model, int cluster) {
  if (cluster < 0 || cluster >= model.clusters()) throw PreconditionError("cluster id out of range");
  return [&model, cluster](const Matrix& x) -> Vector {
    const Matrix q = dec::soft_assign(model, dec::encode(model.autoencoder, x));
    return q.col(cluster);
  };
}

double membership_score(const ingest::Preprocessor& pre, const dec::DecModel& model,
                        const ingest::AccidentRecord& record, int cluster) {
  std::vector<std::string> missing;
  auto check = [&](const std::string& column) {
    try {
      ingest::field(pre.schema, record, column);
    } catch (const DataError&) {
      missing.push_back(column);
    }
  };
  for (const auto& s : pre.numeric) check(s.column);
  for (const auto& d : pre.categorical) check(d.column);
  if (!missing.empty()) {
    std::string msg = "record lacks evidence columns:";
    for (const auto& m : missing) msg += " " + m;
    throw DataError(msg);
  }
  const auto fm = ingest::transform(pre, {record});
  if (fm.values.cols() != model.autoencoder.input_dim()) throw PreconditionError("model/preprocessor width mismatch");
  return membership_fn(model, cluster)(fm.values)(0);
}

std::vector<ClusterProfile> cluster_profile(const Matrix& phi, const std::vector<int>& labels, int clusters,
                                            const std::vector<std::string>& features, const Matrix* orientation) {
  if (static_cast<Eigen::Index>(labels.size()) != phi.rows()) {
    throw PreconditionError("attributions do not cover the clustered records");
  }
  if (static_cast<Eigen::Index>(features.size()) != phi.cols()) throw PreconditionError("feature name count mismatch");
  if (orientation && (orientation->rows() != phi.rows() || orientation->cols() != phi.cols())) {
    throw PreconditionError("orientation shape mismatch");
  }
  const std::size_t m = features.size();
  std::vector<ClusterProfile> out(static_cast<std::size_t>(clusters));
  for (int c = 0; c < clusters; ++c) {
    auto& p = out[c];
    p.cluster = c;
    p.features = features;
    p.mean_phi.assign(m, 0.0);
    p.mean_abs_phi.assign(m, 0.0);
    p.mean_oriented_phi.assign(m, 0.0);
  }
  for (Eigen::Index i = 0; i < phi.rows(); ++i) {
    const int c = labels[static_cast<std::size_t>(i)];
    if (c < 0) continue;
    if (c >= clusters) throw PreconditionError("label out of range");
    auto& p = out[c];
    ++p.count;
    for (std::size_t f = 0; f < m; ++f) {
      const double v = phi(i, static_cast<Eigen::Index>(f));
      p.mean_phi[f] += v;
      p.mean_abs_phi[f] += std::abs(v);
      if (orientation) p.mean_oriented_phi[f] += v * (*orientation)(i, static_cast<Eigen::Index>(f));
    }
  }
  for (auto& p : out) {
    p.empty = p.count == 0;
    if (!p.empty) {
      const double n = static_cast<double>(p.count);
      for (std::size_t f = 0; f < m; ++f) {
        p.mean_phi[f] /= n;
        p.mean_abs_phi[f] /= n;
        p.mean_oriented_phi[f] /= n;
      }
    }
    p.ranking.resize(m);
    std::iota(p.ranking.begin(), p.ranking.end(), 0);
    std::stable_sort(p.ranking.begin(), p.ranking.end(),
                     [&](int a, int b) { return p.mean_abs_phi[a] > p.mean_abs_phi[b]; });
  }
  return out;
}

std::string to_string(LabelRule rule) { return rule == LabelRule::kSigned ? "signed" : "oriented"; }

LabelRule parse_label_rule(const std::string& s) {
  if (s == "signed") return LabelRule::kSigned;
  if (s == "oriented") return LabelRule::kOriented;
  throw ConfigError("unknown label rule '" + s + "'");
}

std::vector<std::string> default_driver_features() {
  return {"Traffic_Signal", "Junction", "Crossing", "Precipitation_mm", "Severity", "Severe_Weather"};
}

std::vector<ClusterProfile> assign_congestion_labels(std::vector<ClusterProfile> profiles,
                                                     const std::vector<std::string>& drivers, LabelRule rule) {
  if (profiles.size() != 2) {
    throw PreconditionError("congestion labels need exactly 2 clusters, got " + std::to_string(profiles.size()));
  }
  if (drivers.empty()) throw ConfigError("driver feature list is empty");
  double score[2] = {0.0, 0.0};
  double magnitude[2] = {0.0, 0.0};
  for (int c = 0; c < 2; ++c) {
    const auto& p = profiles[c];
    for (const auto& d : drivers) {
      const auto it = std::find(p.features.begin(), p.features.end(), d);
      if (it == p.features.end()) throw ConfigError("driver feature '" + d + "' is not attributed");
      const auto f = static_cast<std::size_t>(it - p.features.begin());
      score[c] += rule == LabelRule::kSigned ? p.mean_phi[f] : p.mean_oriented_phi[f];
      magnitude[c] += p.mean_abs_phi[f];
    }
  }
  int high;
  if (score[0] != score[1]) {
    high = score[0] > score[1] ? 0 : 1;
  } else if (magnitude[0] != magnitude[1]) {
    high = magnitude[0] > magnitude[1] ? 0 : 1;
  } else {
    high = profiles[0].cluster < profiles[1].cluster ? 0 : 1;
  }
  profiles[high].label = "High";
  profiles[1 - high].label = "Low";
  return profiles;
}

Matrix feature_levels(const ingest::FeatureMatrix& features,
                      const std::map<std::string, std::vector<std::string>>& ordinal_states,
                      const ingest::Preprocessor& pre) {
  const Eigen::Index n = features.values.rows();
  Matrix levels(n, static_cast<Eigen::Index>(features.groups.size()));
  for (std::size_t g = 0; g < features.groups.size(); ++g) {
    const auto& grp = features.groups[g];
    const auto col = static_cast<Eigen::Index>(grp.first_column);
    if (grp.kind == ingest::FeatureKind::kScaledNumeric) {
      levels.col(static_cast<Eigen::Index>(g)) = features.values.col(col);
      continue;
    }
    const auto dict = std::find_if(pre.categorical.begin(), pre.categorical.end(),
                                   [&](const auto& d) { return d.column == grp.name; });
    std::vector<double> level_of(grp.width);
    for (std::size_t k = 0; k < grp.width; ++k) {
      level_of[k] = static_cast<double>(k);
      const auto ord = ordinal_states.find(grp.name);
      if (ord != ordinal_states.end() && dict != pre.categorical.end()) {
        const auto pos = std::find(ord->second.begin(), ord->second.end(), dict->states[k]);
        if (pos != ord->second.end()) level_of[k] = static_cast<double>(pos - ord->second.begin());
      }
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      double v = -1.0;
      for (std::size_t k = 0; k < grp.width; ++k) {
        if (features.values(i, col + static_cast<Eigen::Index>(k)) > 0.5) v = level_of[k];
      }
      levels(i, static_cast<Eigen::Index>(g)) = v;
    }
  }
  return levels;
}

Matrix orientation_signs(const Matrix& levels, const Matrix& background_levels) {
  if (levels.cols() != background_levels.cols()) throw PreconditionError("level width mismatch");
  const RowVector mean = background_levels.colwise().mean();
  Matrix out(levels.rows(), levels.cols());
  for (Eigen::Index i = 0; i < levels.rows(); ++i) {
    for (Eigen::Index j = 0; j < levels.cols(); ++j) {
      const double d = levels(i, j) - mean(j);
      out(i, j) = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
    }
  }
  return out;
}

void write_attribution_csv(std::ostream& out, const std::vector<std::string>& row_ids,
                           const std::vector<std::string>& features, const Matrix& phi) {
  out << "row_id,feature,phi\n";
  for (Eigen::Index i = 0; i < phi.rows(); ++i) {
    for (Eigen::Index f = 0; f < phi.cols(); ++f) {
      out << csv::escape(row_ids[static_cast<std::size_t>(i)]) << ','
          << csv::escape(features[static_cast<std::size_t>(f)]) << ',' << csv::format_double(phi(i, f)) << '\n';
    }
  }
}

nlohmann::json profiles_json(const std::vector<ClusterProfile>& profiles, LabelRule rule,
                             const std::vector<std::string>& drivers) {
  nlohmann::json arr = nlohmann::json::array();
  nlohmann::json labels = nlohmann::json::object();
  for (const auto& p : profiles) {
    nlohmann::json feats = nlohmann::json::array();
    for (int f : p.ranking) {
      feats.push_back({{"feature", p.features[f]},
                       {"mean_phi", p.mean_phi[f]},
                       {"mean_abs_phi", p.mean_abs_phi[f]},
                       {"mean_oriented_phi", p.mean_oriented_phi[f]}});
    }
    arr.push_back({{"cluster", p.cluster}, {"count", p.count}, {"empty", p.empty},
                   {"label", p.label}, {"features", feats}});
    if (!p.label.empty()) labels[std::to_string(p.cluster)] = p.label;
  }
  return {{"rule", to_string(rule)}, {"drivers", drivers}, {"profiles", arr}, {"cluster_labels", labels}};
}

}  // namespace congestion::attribution
