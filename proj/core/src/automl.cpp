#include "congestion/automl.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <future>
#include <mutex>
#include <numeric>
#include <random>
#include <set>

#include "congestion/clustering.hpp"
#include "congestion/errors.hpp"
#include "congestion/hashing.hpp"

namespace congestion::automl {

void SearchSpace::validate() const {
  if (parameters.empty()) throw ConfigError("search space is empty");
  std::set<std::string> names;
  for (const auto& [name, dom] : parameters) {
    if (!names.insert(name).second) throw ConfigError("duplicate search parameter '" + name + "'");
    if (const auto* r = std::get_if<IntRange>(&dom)) {
      if (r->low > r->high) throw ConfigError("range of '" + name + "' is not ordered");
    } else if (const auto* l = std::get_if<LogUniform>(&dom)) {
      if (!(l->low > 0.0) || !(l->low <= l->high)) {
        throw ConfigError("log-uniform range of '" + name + "' needs 0 < low <= high");
      }
    } else if (std::get<Categorical>(dom).choices.empty()) {
      throw ConfigError("categorical '" + name + "' has no choices");
    }
  }
}

SearchSpace SearchSpace::dec_default() {
  SearchSpace s;
  s.parameters = {{"hidden", IntRange{32, 256}},
                  {"latent", IntRange{4, 32}},
                  {"lr", LogUniform{1e-4, 1e-2}},
                  {"batch", Categorical{{32, 64, 128}}}};
  return s;
}

SearchSpace SearchSpace::from_json(const nlohmann::json& j) {
  SearchSpace s;
  for (const auto& e : j) {
    const std::string name = e.at("name");
    const std::string type = e.at("type");
    if (type == "int") {
      s.parameters.emplace_back(name, IntRange{e.at("low").get<long>(), e.at("high").get<long>()});
    } else if (type == "log_uniform") {
      s.parameters.emplace_back(name, LogUniform{e.at("low").get<double>(), e.at("high").get<double>()});
    } else if (type == "categorical") {
      s.parameters.emplace_back(name, Categorical{e.at("choices").get<std::vector<double>>()});
    } else {
      throw ConfigError("unknown parameter type '" + type + "'");
    }
  }
  s.validate();
  return s;
}

nlohmann::json SearchSpace::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [name, dom] : parameters) {
    if (const auto* r = std::get_if<IntRange>(&dom)) {
      arr.push_back({{"name", name}, {"type", "int"}, {"low", r->low}, {"high", r->high}});
    } else if (const auto* l = std::get_if<LogUniform>(&dom)) {
      arr.push_back({{"name", name}, {"type", "log_uniform"}, {"low", l->low}, {"high", l->high}});
    } else {
      arr.push_back({{"name", name}, {"type", "categorical"}, {"choices", std::get<Categorical>(dom).choices}});
    }
  }
  return arr;
}

std::string to_string(TrialStatus s) {
  switch (s) {
    case TrialStatus::kRunning: return "running";
    case TrialStatus::kComplete: return "complete";
    case TrialStatus::kPruned: return "pruned";
    case TrialStatus::kFailed: return "failed";
  }
  return "unknown";
}

namespace {

TrialStatus parse_status(const std::string& s) {
  if (s == "complete") return TrialStatus::kComplete;
  if (s == "pruned") return TrialStatus::kPruned;
  if (s == "failed") return TrialStatus::kFailed;
  throw DataError("unknown trial status '" + s + "'");
}

}  // namespace

const TrialRecord* Study::best() const {
  if (!best_trial) return nullptr;
  for (const auto& t : trials) {
    if (t.id == *best_trial) return &t;
  }
  return nullptr;
}

std::vector<const TrialRecord*> Study::completed() const {
  std::vector<const TrialRecord*> out;
  for (const auto& t : trials) {
    if (t.status == TrialStatus::kComplete && t.objective) out.push_back(&t);
  }
  return out;
}

std::string to_string(Sampler s) { return s == Sampler::kRandom ? "random" : "guided"; }

Sampler parse_sampler(const std::string& s) {
  if (s == "random") return Sampler::kRandom;
  if (s == "guided" || s == "tpe") return Sampler::kGuided;
  throw ConfigError("unknown sampler '" + s + "'");
}

namespace {

double draw_random(const Domain& dom, std::mt19937_64& rng) {
  if (const auto* r = std::get_if<IntRange>(&dom)) {
    return static_cast<double>(std::uniform_int_distribution<long>(r->low, r->high)(rng));
  }
  if (const auto* l = std::get_if<LogUniform>(&dom)) {
    const double u = std::uniform_real_distribution<double>(std::log(l->low), std::log(l->high))(rng);
    return std::clamp(std::exp(u), l->low, l->high);
  }
  const auto& c = std::get<Categorical>(dom).choices;
  return c[std::uniform_int_distribution<std::size_t>(0, c.size() - 1)(rng)];
}

// One-dimensional Parzen estimate in a transformed space (log for
// log-uniform, identity for integers) with a uniform prior component.
struct Parzen {
  double low = 0.0, high = 1.0;
  std::vector<double> centers;
  double bandwidth = 1.0;

  static Parzen fit(double low, double high, std::vector<double> obs) {
    Parzen p;
    p.low = low;
    p.high = high;
    p.centers = std::move(obs);
    const double range = std::max(high - low, 1e-12);
    const double n = static_cast<double>(p.centers.size());
    p.bandwidth = std::max(range * std::pow(n + 1.0, -0.2) * 0.5, range * 1e-3);
    return p;
  }

  double density(double x) const {
    const double range = std::max(high - low, 1e-12);
    const double w = 1.0 / (static_cast<double>(centers.size()) + 1.0);
    double d = w / range;
    const double norm = 1.0 / (bandwidth * std::sqrt(2.0 * M_PI));
    for (double c : centers) {
      const double z = (x - c) / bandwidth;
      d += w * norm * std::exp(-0.5 * z * z);
    }
    return d;
  }

  double draw(std::mt19937_64& rng) const {
    const std::size_t k = std::uniform_int_distribution<std::size_t>(0, centers.size())(rng);
    if (k == centers.size()) return std::uniform_real_distribution<double>(low, high)(rng);
    std::normal_distribution<double> noise(centers[k], bandwidth);
    for (int tries = 0; tries < 16; ++tries) {
      const double x = noise(rng);
      if (x >= low && x <= high) return x;
    }
    return std::clamp(centers[k], low, high);
  }
};

double to_space(const Domain& dom, double v) {
  return std::holds_alternative<LogUniform>(dom) ? std::log(v) : v;
}

}  // namespace

ParamSet suggest(const SearchSpace& space, const std::vector<TrialRecord>& history, Sampler sampler,
                 std::uint64_t seed) {
  space.validate();
  std::mt19937_64 rng(seed);
  std::vector<const TrialRecord*> done;
  for (const auto& t : history) {
    if (t.status == TrialStatus::kComplete && t.objective) done.push_back(&t);
  }
  ParamSet out;
  if (sampler == Sampler::kRandom || static_cast<int>(done.size()) < kGuidedStartupTrials) {
    for (const auto& [name, dom] : space.parameters) out[name] = draw_random(dom, rng);
    return out;
  }
  // Split at the median: the better half (ties by trial id) is "good".
  std::stable_sort(done.begin(), done.end(),
                   [](const TrialRecord* a, const TrialRecord* b) { return *a->objective > *b->objective; });
  const std::size_t n_good = std::max<std::size_t>(1, done.size() / 2);
  std::vector<const TrialRecord*> good(done.begin(), done.begin() + static_cast<std::ptrdiff_t>(n_good));
  std::vector<const TrialRecord*> bad(done.begin() + static_cast<std::ptrdiff_t>(n_good), done.end());

  std::vector<ParamSet> candidates(kGuidedCandidates);
  std::vector<double> score(kGuidedCandidates, 0.0);
  for (const auto& [name, dom] : space.parameters) {
    auto values = [&](const std::vector<const TrialRecord*>& set) {
      std::vector<double> v;
      for (const auto* t : set) {
        const auto it = t->params.find(name);
        if (it != t->params.end()) v.push_back(to_space(dom, it->second));
      }
      return v;
    };
    if (const auto* cat = std::get_if<Categorical>(&dom)) {
      const std::size_t c = cat->choices.size();
      auto freq = [&](const std::vector<const TrialRecord*>& set) {
        std::vector<double> f(c, 1.0);
        double total = static_cast<double>(c);
        for (const auto* t : set) {
          const auto it = t->params.find(name);
          if (it == t->params.end()) continue;
          for (std::size_t k = 0; k < c; ++k) {
            if (cat->choices[k] == it->second) {
              f[k] += 1.0;
              total += 1.0;
            }
          }
        }
        for (double& x : f) x /= total;
        return f;
      };
      const auto fg = freq(good);
      const auto fb = freq(bad);
      std::discrete_distribution<std::size_t> pick(fg.begin(), fg.end());
      for (int i = 0; i < kGuidedCandidates; ++i) {
        const std::size_t k = pick(rng);
        candidates[i][name] = cat->choices[k];
        score[i] += std::log(fg[k] / fb[k]);
      }
      continue;
    }
    double lo, hi;
    if (const auto* r = std::get_if<IntRange>(&dom)) {
      lo = static_cast<double>(r->low);
      hi = static_cast<double>(r->high);
    } else {
      const auto& l = std::get<LogUniform>(dom);
      lo = std::log(l.low);
      hi = std::log(l.high);
    }
    const Parzen pg = Parzen::fit(lo, hi, values(good));
    const Parzen pb = Parzen::fit(lo, hi, values(bad));
    for (int i = 0; i < kGuidedCandidates; ++i) {
      double x = pg.draw(rng);
      if (const auto* r = std::get_if<IntRange>(&dom)) {
        x = std::clamp(std::round(x), static_cast<double>(r->low), static_cast<double>(r->high));
        candidates[i][name] = x;
      } else {
        const auto& l = std::get<LogUniform>(dom);
        candidates[i][name] = std::clamp(std::exp(x), l.low, l.high);
      }
      score[i] += std::log(pg.density(x) / pb.density(x));
    }
  }
  const auto best = std::max_element(score.begin(), score.end()) - score.begin();
  return candidates[static_cast<std::size_t>(best)];
}

PruneDecision prune_check(double score, int epoch, const std::vector<TrialRecord>& history,
                          const PrunerConfig& config) {
  if (!config.enabled) return PruneDecision::kContinue;
  int completed = 0;
  for (const auto& t : history) completed += t.status == TrialStatus::kComplete;
  if (completed < config.warmup_trials || epoch < config.warmup_epochs) return PruneDecision::kContinue;
  std::vector<double> scores;
  for (const auto& t : history) {
    if (t.status != TrialStatus::kComplete && t.status != TrialStatus::kPruned) continue;
    const auto it = t.checkpoints.find(epoch);
    if (it != t.checkpoints.end()) scores.push_back(it->second);
  }
  if (scores.empty()) return PruneDecision::kContinue;
  std::sort(scores.begin(), scores.end());
  const std::size_t n = scores.size();
  const double median = n % 2 ? scores[n / 2] : 0.5 * (scores[n / 2 - 1] + scores[n / 2]);
  return score < median ? PruneDecision::kPrune : PruneDecision::kContinue;
}

Journal::Journal(std::filesystem::path path) : path_(std::move(path)) {}

void Journal::append(const nlohmann::json& j) {
  std::ofstream out(path_, std::ios::app);
  if (!out) throw DataError("cannot append to journal " + path_.string());
  out << j.dump() << '\n';
  out.flush();
}

void Journal::started(const TrialRecord& t) {
  append({{"event", "started"}, {"trial", t.id}, {"params", t.params}, {"seed", t.seed}});
}

void Journal::checkpoint(int trial, int epoch, double score) {
  append({{"event", "checkpoint"}, {"trial", trial}, {"epoch", epoch}, {"score", score}});
}

void Journal::finished(const TrialRecord& t) {
  nlohmann::json j = trial_json(t);
  j["event"] = to_string(t.status);
  append(j);
}

std::vector<TrialRecord> Journal::replay(const std::filesystem::path& path) {
  std::vector<TrialRecord> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      break;  // torn final line from a crash
    }
    const std::string ev = j.value("event", "");
    if (ev != "complete" && ev != "pruned" && ev != "failed") continue;
    TrialRecord t;
    t.id = j.at("trial").get<int>();
    t.params = j.at("params").get<ParamSet>();
    t.seed = j.at("seed").get<std::uint64_t>();
    t.status = parse_status(ev);
    for (const auto& [k, v] : j.at("checkpoints").items()) t.checkpoints[std::stoi(k)] = v.get<double>();
    if (!j.at("objective").is_null()) t.objective = j.at("objective").get<double>();
    t.error = j.value("error", "");
    out.push_back(std::move(t));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

namespace {

void update_best(Study& s) {
  s.best_trial.reset();
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& t : s.trials) {
    if (t.status == TrialStatus::kComplete && t.objective && *t.objective > best) {
      best = *t.objective;
      s.best_trial = t.id;
    }
  }
}

}  // namespace

Study run_study(const SearchSpace& space, const Objective& objective, const StudyConfig& config,
                Journal* journal, std::vector<TrialRecord> resumed) {
  space.validate();
  if (config.n_trials < 1) throw ConfigError("n_trials must be at least 1");
  if (config.parallelism < 1) throw ConfigError("parallelism must be at least 1");
  Study study;
  std::set<int> done_ids;
  for (auto& t : resumed) {
    if (t.id < config.n_trials && done_ids.insert(t.id).second) study.trials.push_back(std::move(t));
  }
  std::vector<int> pending;
  for (int id = 0; id < config.n_trials; ++id) {
    if (!done_ids.count(id)) pending.push_back(id);
  }
  std::mutex journal_mutex;

  auto run_one = [&](int id, const std::vector<TrialRecord>& history) {
    TrialRecord t;
    t.id = id;
    t.seed = derive_seed(config.seed, "automl/trial/" + std::to_string(id));
    t.params = suggest(space, history, config.sampler,
                       derive_seed(config.seed, "automl/suggest/" + std::to_string(id)));
    if (journal) {
      std::lock_guard<std::mutex> lock(journal_mutex);
      journal->started(t);
    }
    bool pruned = false;
    const Reporter report = [&](int epoch, double score) {
      t.checkpoints[epoch] = score;
      if (journal) {
        std::lock_guard<std::mutex> lock(journal_mutex);
        journal->checkpoint(id, epoch, score);
      }
      if (prune_check(score, epoch, history, config.pruner) == PruneDecision::kPrune) {
        pruned = true;
        return false;
      }
      return true;
    };
    const auto start = std::chrono::steady_clock::now();
    try {
      const double value = objective(t.params, t.seed, report);
      if (pruned) {
        t.status = TrialStatus::kPruned;
      } else if (!std::isfinite(value)) {
        t.status = TrialStatus::kFailed;
        t.error = "non-finite objective";
      } else {
        t.status = TrialStatus::kComplete;
        t.objective = value;
      }
    } catch (const TrialPruned&) {
      t.status = TrialStatus::kPruned;
    } catch (const std::exception& e) {
      t.status = TrialStatus::kFailed;
      t.error = e.what();
    }
    if (t.status == TrialStatus::kPruned && t.checkpoints.empty()) {
      t.status = TrialStatus::kFailed;
      t.error = "pruned without a checkpoint";
    }
    t.duration_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (journal) {
      std::lock_guard<std::mutex> lock(journal_mutex);
      journal->finished(t);
    }
    return t;
  };

  // Waves of `parallelism` trials share one history snapshot.
  for (std::size_t next = 0; next < pending.size();) {
    const std::size_t wave = std::min<std::size_t>(static_cast<std::size_t>(config.parallelism), pending.size() - next);
    std::vector<TrialRecord> history = study.trials;
    std::sort(history.begin(), history.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    std::vector<TrialRecord> finished(wave);
    if (wave == 1) {
      finished[0] = run_one(pending[next], history);
    } else {
      std::vector<std::future<TrialRecord>> futures;
      for (std::size_t i = 0; i < wave; ++i) {
        futures.push_back(std::async(std::launch::async, run_one, pending[next + i], std::cref(history)));
      }
      for (std::size_t i = 0; i < wave; ++i) finished[i] = futures[i].get();
    }
    for (auto& t : finished) study.trials.push_back(std::move(t));
    next += wave;
  }
  std::sort(study.trials.begin(), study.trials.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  update_best(study);
  return study;
}

std::string to_string(ObjectiveSpace s) { return s == ObjectiveSpace::kInput ? "input" : "latent"; }

ObjectiveSpace parse_objective_space(const std::string& s) {
  if (s == "input") return ObjectiveSpace::kInput;
  if (s == "latent") return ObjectiveSpace::kLatent;
  throw ConfigError("unknown objective space '" + s + "'");
}

dec::DecPipelineOptions dec_options(const ParamSet& params, const DecObjectiveConfig& config, std::uint64_t seed) {
  auto get = [&](const std::string& k, double fallback) {
    const auto it = params.find(k);
    return it == params.end() ? fallback : it->second;
  };
  dec::DecPipelineOptions o;
  o.hidden = {static_cast<int>(std::lround(get("hidden", 190)))};
  o.latent_dim = static_cast<int>(std::lround(get("latent", 19)));
  o.clusters = config.clusters;
  o.direction = config.direction;
  o.train.learning_rate = get("lr", 2e-4);
  o.train.batch_size = static_cast<int>(std::lround(get("batch", 64)));
  o.train.epochs = config.epochs;
  o.train.refine_epochs = config.refine_epochs;
  o.train.tol = config.tol;
  o.train.seed = seed;
  return o;
}

std::vector<Eigen::Index> score_subset(Eigen::Index rows, std::size_t limit) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(rows));
  std::iota(idx.begin(), idx.end(), 0);
  if (limit == 0 || idx.size() <= limit) return idx;
  // Fixed across trials so every trial is scored on the same rows.
  std::mt19937_64 rng(0x5111ULL);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

namespace {

double safe_silhouette(const Matrix& x, const std::vector<int>& labels) {
  std::set<int> distinct(labels.begin(), labels.end());
  distinct.erase(clustering::kNoise);
  if (distinct.size() < 2) return -1.0;
  return clustering::silhouette(x, labels);
}

std::vector<int> pick_labels(const std::vector<int>& labels, const std::vector<Eigen::Index>& subset) {
  std::vector<int> out;
  out.reserve(subset.size());
  for (auto i : subset) out.push_back(labels[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace

double scored_silhouette(const Matrix& data, const std::vector<int>& labels, std::size_t score_rows) {
  const auto subset = score_subset(data.rows(), score_rows);
  return safe_silhouette(dec::gather_rows(data, subset), pick_labels(labels, subset));
}

double dec_score(const Matrix& data, const std::vector<int>& labels, const dec::DecModel& model,
                 ObjectiveSpace space, std::size_t score_rows) {
  if (space == ObjectiveSpace::kInput) return scored_silhouette(data, labels, score_rows);
  const auto subset = score_subset(data.rows(), score_rows);
  return safe_silhouette(dec::encode(model.autoencoder, dec::gather_rows(data, subset)),
                         pick_labels(labels, subset));
}

Objective dec_objective(const Matrix& data, const DecObjectiveConfig& config) {
  const auto subset = score_subset(data.rows(), config.score_rows);
  const Matrix scored = dec::gather_rows(data, subset);
  return [&data, config, subset, scored](const ParamSet& params, std::uint64_t seed, const Reporter& report) {
    const auto opt = dec_options(params, config, seed);
    auto pick = [&](const std::vector<int>& labels) { return pick_labels(labels, subset); };
    auto score = [&](const std::vector<int>& labels, const dec::DecModel& model) {
      if (config.space == ObjectiveSpace::kLatent)
        return safe_silhouette(dec::encode(model.autoencoder, scored), pick(labels));
      return safe_silhouette(scored, pick(labels));
    };
    const dec::RefineCallback cb = [&](int epoch, const std::vector<int>& labels, const dec::DecModel& model) {
      if (config.checkpoint_every <= 0 || epoch == 0 || epoch % config.checkpoint_every != 0) return true;
      return report(epoch, score(labels, model));
    };
    const auto fit = dec::fit_dec_pipeline(data, opt, cb);
    if (fit.stopped_by_callback) return 0.0;
    return score(fit.assignment.labels, fit.model);
  };
}

nlohmann::json trial_json(const TrialRecord& t) {
  nlohmann::json cps = nlohmann::json::object();
  for (const auto& [e, s] : t.checkpoints) cps[std::to_string(e)] = s;
  nlohmann::json j = {{"trial", t.id},
                      {"params", t.params},
                      {"seed", t.seed},
                      {"status", to_string(t.status)},
                      {"checkpoints", cps},
                      {"objective", t.objective ? nlohmann::json(*t.objective) : nlohmann::json(nullptr)}};
  if (!t.error.empty()) j["error"] = t.error;
  return j;
}

nlohmann::json study_json(const Study& s) {
  nlohmann::json trials = nlohmann::json::array();
  for (const auto& t : s.trials) trials.push_back(trial_json(t));
  return {{"direction", "maximize"},
          {"best_trial", s.best_trial ? nlohmann::json(*s.best_trial) : nlohmann::json(nullptr)},
          {"trials", trials}};
}

}  // namespace congestion::automl
