#include "pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <future>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "congestion/csv.hpp"
#include "congestion/hashing.hpp"
#include "congestion/simulator.hpp"

namespace congestion::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig: return kExitConfig;
    case ErrorKind::kData: return kExitData;
    case ErrorKind::kPrecondition: return kExitPrecondition;
    case ErrorKind::kNumeric: return kExitNumeric;
  }
  return kExitInternal;
}

namespace {

constexpr const char* kToolVersion = "0.3.0";
constexpr int kManifestVersion = 1;

// ---- config parsing ------------------------------------------------------

void check_keys(const json& j, const std::string& section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("section '" + section + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw ConfigError("unknown key '" + k + "' in section '" + section + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

void parse_cluster(const json& j, ClusterSettings& c) {
  check_keys(j, "cluster",
             {"clusters", "hidden", "latent", "nu", "kl_direction", "learning_rate", "batch_size", "epochs",
              "refine_epochs", "update_interval", "tol", "reconstruction_weight", "objective_space", "score_rows",
              "baselines"});
  auto& d = c.dec;
  read(j, "clusters", d.clusters);
  read(j, "hidden", d.hidden);
  read(j, "latent", d.latent_dim);
  read(j, "nu", d.nu);
  if (j.contains("kl_direction")) d.direction = dec::parse_direction(j.at("kl_direction").get<std::string>());
  read(j, "learning_rate", d.train.learning_rate);
  read(j, "batch_size", d.train.batch_size);
  read(j, "epochs", d.train.epochs);
  read(j, "refine_epochs", d.train.refine_epochs);
  read(j, "update_interval", d.train.update_interval);
  read(j, "tol", d.train.tol);
  read(j, "reconstruction_weight", d.train.reconstruction_weight);
  if (j.contains("objective_space")) c.space = automl::parse_objective_space(j.at("objective_space").get<std::string>());
  read(j, "score_rows", c.score_rows);
  if (d.clusters < 2) throw ConfigError("cluster.clusters must be at least 2");
  if (d.latent_dim < 1) throw ConfigError("cluster.latent must be positive");
  d.train.validate();
  if (j.contains("baselines")) {
    const json& b = j.at("baselines");
    check_keys(b, "cluster.baselines",
               {"kmeans_k", "hierarchical_k", "linkage", "dbscan_eps", "dbscan_min_pts", "min_clusters",
                "max_clusters", "max_rows"});
    auto& s = c.baselines;
    read(b, "kmeans_k", s.kmeans_k);
    read(b, "hierarchical_k", s.hierarchical_k);
    if (b.contains("linkage")) s.linkage = clustering::parse_linkage(b.at("linkage").get<std::string>());
    read(b, "dbscan_eps", s.dbscan_eps);
    read(b, "dbscan_min_pts", s.dbscan_min_pts);
    read(b, "min_clusters", s.min_clusters);
    read(b, "max_clusters", s.max_clusters);
    read(b, "max_rows", s.max_rows);
  }
}

void parse_automl(const json& j, AutomlSettings& a) {
  check_keys(j, "automl",
             {"n_trials", "sampler", "parallelism", "space", "epochs", "refine_epochs", "checkpoint_every", "tol",
              "kl_direction", "objective_space", "score_rows", "pruner"});
  read(j, "n_trials", a.study.n_trials);
  if (j.contains("sampler")) a.study.sampler = automl::parse_sampler(j.at("sampler").get<std::string>());
  read(j, "parallelism", a.study.parallelism);
  if (j.contains("space")) a.space = automl::SearchSpace::from_json(j.at("space"));
  read(j, "epochs", a.objective.epochs);
  read(j, "refine_epochs", a.objective.refine_epochs);
  read(j, "checkpoint_every", a.objective.checkpoint_every);
  read(j, "tol", a.objective.tol);
  if (j.contains("kl_direction"))
    a.objective.direction = dec::parse_direction(j.at("kl_direction").get<std::string>());
  if (j.contains("objective_space"))
    a.objective.space = automl::parse_objective_space(j.at("objective_space").get<std::string>());
  read(j, "score_rows", a.objective.score_rows);
  if (j.contains("pruner")) {
    const json& p = j.at("pruner");
    check_keys(p, "automl.pruner", {"enabled", "warmup_trials", "warmup_epochs"});
    read(p, "enabled", a.study.pruner.enabled);
    read(p, "warmup_trials", a.study.pruner.warmup_trials);
    read(p, "warmup_epochs", a.study.pruner.warmup_epochs);
  }
  if (a.study.n_trials < 1) throw ConfigError("automl.n_trials must be at least 1");
  if (a.study.parallelism < 1) throw ConfigError("automl.parallelism must be at least 1");
  a.space.validate();
}

void parse_label(const json& j, LabelSettings& l) {
  check_keys(j, "label",
             {"model", "rule", "drivers", "mode", "permutations", "background_rows", "explain_rows", "threads"});
  read(j, "model", l.model);
  if (l.model != "automl" && l.model != "dec") throw ConfigError("label.model must be 'automl' or 'dec'");
  if (j.contains("rule")) l.rule = attribution::parse_label_rule(j.at("rule").get<std::string>());
  read(j, "drivers", l.drivers);
  if (j.contains("mode")) {
    const auto m = j.at("mode").get<std::string>();
    if (m == "exact") {
      l.mode = attribution::Mode::kExact;
    } else if (m == "sampled") {
      l.mode = attribution::Mode::kSampled;
    } else {
      throw ConfigError("label.mode must be 'exact' or 'sampled'");
    }
  }
  read(j, "permutations", l.permutations);
  read(j, "background_rows", l.background_rows);
  read(j, "explain_rows", l.explain_rows);
  read(j, "threads", l.threads);
  if (l.background_rows == 0) throw ConfigError("label.background_rows must be positive");
  if (l.threads < 1) throw ConfigError("label.threads must be at least 1");
}

void parse_bn(const json& j, BnSettings& b, const PipelineConfig& cfg) {
  check_keys(j, "bn", {"target", "positive", "constraints", "alpha", "test_fraction", "network", "scenarios"});
  read(j, "target", b.target);
  read(j, "positive", b.positive);
  if (j.contains("constraints")) {
    b.constraints = bn::Constraints::from_json(j.at("constraints"));
  } else {
    b.constraints.sinks = {b.target};
  }
  read(j, "alpha", b.alpha);
  read(j, "test_fraction", b.test_fraction);
  if (j.contains("network") && !j.at("network").is_null()) b.network = cfg.resolve(j.at("network").get<std::string>());
  if (j.contains("scenarios") && !j.at("scenarios").is_null())
    b.scenarios = cfg.resolve(j.at("scenarios").get<std::string>());
  if (!(b.alpha > 0)) throw ConfigError("bn.alpha must be positive");
  if (!(b.test_fraction > 0 && b.test_fraction < 1)) throw ConfigError("bn.test_fraction must lie in (0, 1)");
}

void parse_simulate(const json& j, SimulateSettings& s, const PipelineConfig& cfg) {
  check_keys(j, "simulate", {"scenarios", "threshold", "plot_title"});
  read(j, "threshold", s.threshold);
  read(j, "plot_title", s.plot_title);
  if (!(s.threshold > 0 && s.threshold < 1)) throw ConfigError("simulate.threshold must lie in (0, 1)");
  if (j.contains("scenarios")) {
    for (const auto& e : j.at("scenarios")) {
      SimEntry entry;
      if (e.is_string()) {
        entry.file = cfg.resolve(e.get<std::string>());
      } else {
        check_keys(e, "simulate.scenarios[]", {"file", "bn_scenario", "exclude_from_agreement", "note"});
        entry.file = cfg.resolve(e.at("file").get<std::string>());
        read(e, "bn_scenario", entry.bn_scenario);
        read(e, "exclude_from_agreement", entry.exclude_from_agreement);
        read(e, "note", entry.note);
      }
      s.scenarios.push_back(entry);
    }
  }
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw ConfigError("config references missing " + what + ": " + p.string());
}

// ---- file helpers ---------------------------------------------------------

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot open " + p.string());
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw DataError(p.string() + ": " + e.what());
  }
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
  if (!out) throw DataError("write failed: " + p.string());
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

template <typename F>
void write_with(const fs::path& p, F&& body) {
  std::ostringstream o;
  body(o);
  write_text(p, o.str());
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Seeded index subset, returned sorted. n == 0 or n >= total keeps everything.
std::vector<std::size_t> choose_rows(std::size_t total, std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  if (n == 0 || n >= total) return idx;
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// Per-label proportional subset (largest remainder), sorted.
std::vector<std::size_t> stratified_rows(const std::vector<int>& labels, std::size_t n, std::uint64_t seed) {
  if (n == 0 || n >= labels.size()) return choose_rows(labels.size(), 0, seed);
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);
  std::vector<std::size_t> sizes;
  for (const auto& [l, rows] : groups) sizes.push_back(rows.size());
  const auto quota = ingest::apportion(sizes, n);
  std::vector<std::size_t> out;
  std::size_t g = 0;
  for (const auto& [l, rows] : groups) {
    const std::size_t q = quota[g++];
    if (q == 0) continue;  // choose_rows reads 0 as "all"
    for (auto k : choose_rows(rows.size(), q, derive_seed(seed, std::to_string(l)))) out.push_back(rows[k]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---- manifest -------------------------------------------------------------

class Context {
 public:
  Context(const PipelineConfig& cfg, const StageOptions& opt)
      : cfg_(cfg), opt_(opt), out_(cfg.resolve(cfg.output_dir)), seed_(cfg.require_seed()) {
    fs::create_directories(out_);
    if (fs::exists(manifest_path())) {
      manifest_ = read_json(manifest_path());
      if (manifest_.value("config_fingerprint", "") != cfg.fingerprint()) manifest_ = json::object();
    }
    if (fs::exists(timings_path())) timings_ = read_json(timings_path());
    if (!timings_.is_object()) timings_ = json::object();
  }

  const PipelineConfig& cfg() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  std::uint64_t seed(const std::string& name) const { return derive_seed(seed_, name); }
  fs::path out(const std::string& rel) const { return out_ / rel; }
  bool resume() const { return opt_.resume; }
  std::ostream& log() const { return opt_.log ? *opt_.log : std::cerr; }

  // Artifacts the stage reads. Output-dir files are named relative to it,
  // external files by their config-relative path.
  void input(const std::string& name, const fs::path& path, const std::string& stage) {
    if (!fs::is_regular_file(path)) {
      throw PreconditionError(stage + " needs " + name + " (missing " + path.string() + ")");
    }
    inputs_[name] = file_digest(path);
  }
  void output(const std::string& rel) { outputs_.push_back(rel); }

  // True when the manifest already records this stage with the same key and
  // every recorded output is still on disk with its hash.
  bool begin(const std::string& stage, const json& settings) {
    stage_ = stage;
    started_ = std::chrono::steady_clock::now();
    json k = {{"stage", stage}, {"settings", settings}, {"seed", seed_}, {"inputs", inputs_},
              {"tool", kToolVersion}};
    key_ = hex64(fnv1a64(k.dump()));
    if (opt_.force || !manifest_.contains("stages") || !manifest_["stages"].contains(stage)) return false;
    const json& rec = manifest_["stages"][stage];
    if (rec.value("key", "") != key_) return false;
    for (const auto& [rel, h] : rec.at("outputs").items()) {
      const fs::path p = out(rel);
      if (!fs::is_regular_file(p) || file_digest(p) != h.get<std::string>()) return false;
    }
    log() << stage << ": up to date\n";
    inputs_.clear();
    return true;
  }

  void finish() {
    json outs = json::object();
    for (const auto& rel : outputs_) outs[rel] = file_digest(out(rel));
    json& stages = manifest_["stages"];
    if (!stages.is_object()) stages = json::object();
    stages[stage_] = {{"key", key_}, {"inputs", inputs_}, {"outputs", outs}};
    manifest_["format"] = "congestion-manifest";
    manifest_["version"] = kManifestVersion;
    manifest_["tool_version"] = kToolVersion;
    manifest_["config_fingerprint"] = cfg_.fingerprint();
    manifest_["seed"] = seed_;
    manifest_["artifact_versions"] = {{"dec_model", 1}, {"network", 1}, {"manifest", kManifestVersion},
                                      {"study_journal", 1}};
    write_json(manifest_path(), manifest_);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
    timings_[stage_] = secs;
    write_json(timings_path(), timings_);
    log() << stage_ << ": done (" << fmt("%.1f", secs) << " s, " << outputs_.size() << " artifacts)\n";
    inputs_.clear();
    outputs_.clear();
  }

 private:
  fs::path manifest_path() const { return out_ / "manifest.json"; }
  fs::path timings_path() const { return out_ / "timings.json"; }

  const PipelineConfig& cfg_;
  StageOptions opt_;
  fs::path out_;
  std::uint64_t seed_;
  json manifest_ = json::object();
  json timings_ = json::object();
  std::string stage_;
  std::string key_;
  std::chrono::steady_clock::time_point started_;
  std::map<std::string, std::string> inputs_;
  std::vector<std::string> outputs_;
};

json section(const PipelineConfig& cfg, const char* name) {
  return cfg.raw.contains(name) ? cfg.raw.at(name) : json::object();
}

// ---- shared loading -------------------------------------------------------

ingest::Preprocessor load_preprocessor(const Context& c) {
  return ingest::Preprocessor::from_json(read_json(c.out("preprocessor.json")));
}

std::vector<ingest::AccidentRecord> load_sample(const Context& c, const ingest::Schema& schema) {
  auto res = ingest::load_records(c.out("sample.csv"), schema, {0.0});
  return std::move(res.records);
}

Matrix features_of(const Context& c, ingest::Preprocessor* pre_out = nullptr) {
  auto pre = load_preprocessor(c);
  const auto records = load_sample(c, pre.schema);
  auto fm = ingest::transform(pre, records);
  if (pre_out) *pre_out = std::move(pre);
  return std::move(fm.values);
}

std::vector<VariableSpec> variables_from_json(const json& j) {
  std::vector<VariableSpec> out;
  for (const auto& v : j) out.push_back({v.at("name").get<std::string>(), v.at("states").get<std::vector<std::string>>()});
  return out;
}

json variables_json(const std::vector<VariableSpec>& vars) {
  json arr = json::array();
  for (const auto& v : vars) arr.push_back({{"name", v.name}, {"states", v.states}});
  return arr;
}

void write_labels_csv(const fs::path& p, const std::vector<std::string>& ids, const std::vector<int>& labels) {
  write_with(p, [&](std::ostream& o) {
    o << "row_id,label\n";
    for (std::size_t i = 0; i < ids.size(); ++i) o << csv::escape(ids[i]) << ',' << labels[i] << '\n';
  });
}

std::vector<std::size_t> cluster_sizes(const std::vector<int>& labels, int k) {
  std::vector<std::size_t> sizes(static_cast<std::size_t>(k), 0);
  for (int l : labels) {
    if (l >= 0 && l < k) ++sizes[static_cast<std::size_t>(l)];
  }
  return sizes;
}

// ---- stages ---------------------------------------------------------------

void stage_ingest(Context& c) {
  const auto& cfg = c.cfg();
  if (!cfg.data_path) throw ConfigError("data.path is required for ingest");
  c.input(cfg.data_path->filename().string(), *cfg.data_path, "ingest");
  if (c.begin("ingest", {{"data", section(cfg, "data")}, {"schema", section(cfg, "schema")},
                         {"preprocess", section(cfg, "preprocess")}}))
    return;

  auto loaded = ingest::load_records(*cfg.data_path, cfg.schema, {cfg.max_reject_fraction});
  auto records = cfg.sample_rows > 0
                     ? ingest::stratified_sample(loaded.records, cfg.sample_rows, cfg.strata, c.seed("ingest/sample"),
                                                 cfg.schema)
                     : loaded.records;
  if (records.empty()) throw DataError("no usable records in " + cfg.data_path->string());

  const auto pre = ingest::fit_preprocessor(records, cfg.schema, cfg.preprocess);
  const auto fm = ingest::transform(pre, records);
  const auto disc = ingest::discretize(pre, records);

  write_with(c.out("sample.csv"), [&](std::ostream& o) { ingest::write_records_csv(o, cfg.schema, records); });
  write_json(c.out("preprocessor.json"), pre.to_json());
  write_with(c.out("features.csv"), [&](std::ostream& o) { ingest::write_feature_csv(o, fm); });
  write_with(c.out("bn_table.csv"), [&](std::ostream& o) { ingest::write_table_csv(o, disc.table); });
  write_json(c.out("bn_schema.json"), variables_json(disc.table.variables));
  write_with(c.out("hour_histogram.csv"),
             [&](std::ostream& o) { ingest::write_histogram_csv(o, ingest::hourly_histogram(records)); });
  json reasons = json::array();
  for (std::size_t i = 0; i < std::min<std::size_t>(loaded.reject_reasons.size(), 20); ++i)
    reasons.push_back(loaded.reject_reasons[i]);
  write_json(c.out("ingest_report.json"), {{"loaded", loaded.records.size()},
                                            {"rejected", loaded.rejected},
                                            {"reject_reasons", reasons},
                                            {"sampled", records.size()},
                                            {"feature_columns", fm.column_names.size()},
                                            {"unseen_states", fm.unseen_states},
                                            {"clamped", disc.clamped},
                                            {"preprocessor_fingerprint", pre.fingerprint()}});
  for (const char* f : {"sample.csv", "preprocessor.json", "features.csv", "bn_table.csv", "bn_schema.json",
                        "hour_histogram.csv", "ingest_report.json"})
    c.output(f);
  c.finish();
}

void stage_cluster(Context& c) {
  const auto& cfg = c.cfg();
  c.input("sample.csv", c.out("sample.csv"), "cluster");
  c.input("preprocessor.json", c.out("preprocessor.json"), "cluster");
  if (c.begin("cluster", section(cfg, "cluster"))) return;

  ingest::Preprocessor pre;
  const Matrix x = features_of(c, &pre);
  auto opts = cfg.cluster.dec;
  opts.train.seed = c.seed("cluster/dec");
  auto fit = dec::fit_dec_pipeline(x, opts);
  fit.model.preprocessor_fingerprint = pre.fingerprint();
  const double s_obj = automl::dec_score(x, fit.assignment.labels, fit.model, cfg.cluster.space, cfg.cluster.score_rows);
  const double s_in = automl::scored_silhouette(x, fit.assignment.labels, cfg.cluster.score_rows);

  const auto grid = baseline_grid(x, cfg.cluster.baselines, cfg.cluster.score_rows, c.seed("cluster/baselines"));
  json rows = json::array();
  for (const auto& b : grid) rows.push_back(baseline_json(b));
  const auto best = best_baseline(grid);

  const auto records = load_sample(c, pre.schema);
  std::vector<std::string> ids;
  for (const auto& r : records) ids.push_back(r.id);

  dec::save_model(c.out("dec_model.json"), fit.model);
  write_labels_csv(c.out("dec_assignments.csv"), ids, fit.assignment.labels);
  json warnings = fit.warnings;
  write_json(c.out("cluster_report.json"),
             {{"rows", x.rows()},
              {"columns", x.cols()},
              {"objective_space", automl::to_string(cfg.cluster.space)},
              {"dec",
               {{"silhouette", s_obj},
                {"silhouette_input", s_in},
                {"epochs_run", fit.epochs_run},
                {"converged", fit.converged},
                {"collapsed", fit.collapsed},
                {"cluster_sizes", cluster_sizes(fit.assignment.labels, fit.model.clusters())},
                {"warnings", warnings}}},
              {"baselines", rows},
              {"best_baseline", best ? json(*best) : json(nullptr)}});
  for (const char* f : {"dec_model.json", "dec_assignments.csv", "cluster_report.json"}) c.output(f);
  c.finish();
}

void stage_automl(Context& c) {
  const auto& cfg = c.cfg();
  c.input("sample.csv", c.out("sample.csv"), "automl");
  c.input("preprocessor.json", c.out("preprocessor.json"), "automl");
  json settings = section(cfg, "automl");
  settings["clusters"] = cfg.cluster.dec.clusters;
  if (c.begin("automl", settings)) return;

  ingest::Preprocessor pre;
  const Matrix x = features_of(c, &pre);
  auto objective_cfg = cfg.automl.objective;
  objective_cfg.clusters = cfg.cluster.dec.clusters;
  auto study_cfg = cfg.automl.study;
  study_cfg.seed = c.seed("automl/study");

  const fs::path journal_path = c.out("study_journal.ndjson");
  std::vector<automl::TrialRecord> resumed;
  if (c.resume()) {
    resumed = automl::Journal::replay(journal_path);
    if (!resumed.empty()) c.log() << "automl: resuming with " << resumed.size() << " finished trials\n";
    // Rewrite the journal with only the replayed trials so torn entries vanish.
    fs::remove(journal_path);
    automl::Journal rewrite(journal_path);
    for (const auto& t : resumed) {
      rewrite.started(t);
      for (const auto& [e, s] : t.checkpoints) rewrite.checkpoint(t.id, e, s);
      rewrite.finished(t);
    }
  } else {
    fs::remove(journal_path);
  }
  automl::Journal journal(journal_path);
  const auto objective = automl::dec_objective(x, objective_cfg);
  const auto study = automl::run_study(cfg.automl.space, objective, study_cfg, &journal, std::move(resumed));
  const auto* best = study.best();
  if (!best) throw NumericError("automl: no trial completed");

  // Refit the winning configuration; the fit is a pure function of params + seed.
  auto fit = dec::fit_dec_pipeline(x, automl::dec_options(best->params, objective_cfg, best->seed));
  fit.model.preprocessor_fingerprint = pre.fingerprint();
  const double refit = automl::dec_score(x, fit.assignment.labels, fit.model, objective_cfg.space, objective_cfg.score_rows);

  const auto records = load_sample(c, pre.schema);
  std::vector<std::string> ids;
  for (const auto& r : records) ids.push_back(r.id);

  json sj = automl::study_json(study);
  sj["best_objective"] = *best->objective;
  sj["refit_objective"] = refit;
  sj["objective_space"] = automl::to_string(objective_cfg.space);
  sj["sampler"] = automl::to_string(study_cfg.sampler);
  sj["space"] = cfg.automl.space.to_json();
  write_json(c.out("study.json"), sj);
  dec::save_model(c.out("automl_model.json"), fit.model);
  write_labels_csv(c.out("automl_assignments.csv"), ids, fit.assignment.labels);
  for (const char* f : {"study_journal.ndjson", "study.json", "automl_model.json", "automl_assignments.csv"})
    c.output(f);
  c.finish();
}

void stage_label(Context& c) {
  const auto& cfg = c.cfg();
  const auto& ls = cfg.label;
  const std::string model_file = ls.model == "automl" ? "automl_model.json" : "dec_model.json";
  for (const std::string f : {"sample.csv", "preprocessor.json", "bn_table.csv", "bn_schema.json"})
    c.input(f, c.out(f), "label");
  c.input(model_file, c.out(model_file), "label");
  json settings = section(cfg, "label");
  settings["bn_target"] = cfg.bn.target;
  if (c.begin("label", settings)) return;

  const auto pre = load_preprocessor(c);
  const auto model = dec::load_model(c.out(model_file));
  if (!model.preprocessor_fingerprint.empty() && model.preprocessor_fingerprint != pre.fingerprint()) {
    throw PreconditionError("label: " + model_file + " was trained with a different preprocessor");
  }
  if (model.clusters() != 2) throw PreconditionError("label: congestion labels need a 2-cluster model");
  const auto records = load_sample(c, pre.schema);
  const auto fm = ingest::transform(pre, records);
  const auto labels = dec::hard_labels(dec::soft_assign(model, dec::encode(model.autoencoder, fm.values)));

  const auto bg_idx = stratified_rows(labels, ls.background_rows, c.seed("label/background"));
  const auto ex_idx = choose_rows(records.size(), ls.explain_rows, c.seed("label/explain"));
  auto subset = [&](const std::vector<std::size_t>& idx) {
    std::vector<ingest::AccidentRecord> out;
    for (auto i : idx) out.push_back(records[i]);
    return ingest::transform(pre, out);
  };
  const auto bg = subset(bg_idx);
  const auto ex = subset(ex_idx);
  std::vector<int> ex_labels;
  for (auto i : ex_idx) ex_labels.push_back(labels[i]);

  const auto players = attribution::players_from_groups(fm.groups);
  std::vector<std::string> names;
  for (const auto& p : players) names.push_back(p.name);
  attribution::ExplainOptions eo;
  eo.mode = ls.mode;
  eo.permutations = ls.permutations;
  eo.seed = c.seed("label/shapley");
  eo.threads = ls.threads;
  const auto att = attribution::explain_rows(
      [&](Eigen::Index row) { return attribution::membership_fn(model, ex_labels[static_cast<std::size_t>(row)]); },
      ex.values, bg.values, players, eo);

  std::map<std::string, std::vector<std::string>> ordinal;
  for (const auto& g : fm.groups) {
    auto st = ingest::ordered_states(pre.schema, g.name);
    if (!st.empty()) ordinal[g.name] = st;
  }
  const Matrix orient = attribution::orientation_signs(attribution::feature_levels(ex, ordinal, pre),
                                                       attribution::feature_levels(bg, ordinal, pre));
  auto profiles = attribution::cluster_profile(att.phi, ex_labels, 2, names, &orient);
  for (const auto& p : profiles) {
    if (p.empty) throw PreconditionError("label: cluster " + std::to_string(p.cluster) + " has no explained rows");
  }
  profiles = attribution::assign_congestion_labels(profiles, ls.drivers, ls.rule);
  std::map<int, std::string> state_of;
  for (const auto& p : profiles) state_of[p.cluster] = p.label;

  auto table = ingest::read_table_csv(c.out("bn_table.csv"), variables_from_json(read_json(c.out("bn_schema.json"))));
  if (table.rows() != records.size()) throw DataError("label: bn_table.csv row count does not match the sample");
  if (table.column_index(cfg.bn.target) >= 0) throw DataError("label: table already has a " + cfg.bn.target + " column");
  VariableSpec target{cfg.bn.target, {"Low", "High"}};
  CategoricalTable labeled;
  labeled.variables = table.variables;
  labeled.variables.push_back(target);
  labeled.row_ids = table.row_ids;
  labeled.codes.reserve(table.rows() * labeled.cols());
  for (std::size_t r = 0; r < table.rows(); ++r) {
    for (std::size_t col = 0; col < table.cols(); ++col) labeled.codes.push_back(table.at(r, col));
    labeled.codes.push_back(target.state_index(state_of.at(labels[r])));
  }

  std::vector<std::string> ex_ids;
  for (auto i : ex_idx) ex_ids.push_back(records[i].id);
  write_with(c.out("attribution.csv"), [&](std::ostream& o) { attribution::write_attribution_csv(o, ex_ids, names, att.phi); });
  json pj = attribution::profiles_json(profiles, ls.rule, ls.drivers);
  write_json(c.out("profiles.json"), {{"profiles", pj},
                                      {"explained_rows", ex_idx.size()},
                                      {"background_rows", bg_idx.size()},
                                      {"model", model_file},
                                      {"mode", ls.mode == attribution::Mode::kExact ? "exact" : "sampled"}});
  write_with(c.out("labeled_table.csv"), [&](std::ostream& o) { ingest::write_table_csv(o, labeled); });
  write_json(c.out("labeled_schema.json"), variables_json(labeled.variables));
  for (const char* f : {"attribution.csv", "profiles.json", "labeled_table.csv", "labeled_schema.json"}) c.output(f);
  c.finish();
}

CategoricalTable load_labeled(const Context& c) {
  return ingest::read_table_csv(c.out("labeled_table.csv"), variables_from_json(read_json(c.out("labeled_schema.json"))));
}

double p_state(const bn::DiscreteBayesNet& net, const std::string& target, const std::string& state,
               const bn::Evidence& ev) {
  return bn::query(net, target, ev).at(state);
}

void stage_bn_train(Context& c) {
  const auto& cfg = c.cfg();
  const auto& b = cfg.bn;
  c.input("labeled_table.csv", c.out("labeled_table.csv"), "bn-train");
  c.input("labeled_schema.json", c.out("labeled_schema.json"), "bn-train");
  if (c.begin("bn-train", section(cfg, "bn"))) return;

  const auto table = load_labeled(c);
  if (table.column_index(b.target) < 0) throw DataError("bn-train: no " + b.target + " column");
  const auto [train, test] = bn::stratified_split(table, b.target, b.test_fraction, c.seed("bn/split"));
  const auto view = bn::DataView::make(table.select_rows(train), table.variables);
  const auto learned = bn::learn_structure(view, b.constraints);
  auto fitted = bn::fit_cpts(view, learned.parents, b.alpha);
  const auto& net = fitted.net;

  // Monotonicity checks on the fresh model; recorded, not enforced.
  json checks = json::array();
  auto check = [&](const std::string& var, const std::string& hi, const std::string& lo) {
    const int v = net.index(var);
    if (v < 0 || net.variables[v].state_index(hi) < 0 || net.variables[v].state_index(lo) < 0) return;
    const double ph = p_state(net, b.target, b.positive, {{var, hi}});
    const double pl = p_state(net, b.target, b.positive, {{var, lo}});
    checks.push_back({{"variable", var}, {"high", hi}, {"low", lo}, {"p_high_given_high", ph},
                      {"p_high_given_low", pl}, {"holds", ph >= pl}});
  };
  check("Severity", "Fatal", "Minor");
  check("Junction", "Yes", "No");

  json edges = json::array();
  for (std::size_t v = 0; v < net.size(); ++v) {
    for (int p : net.parents[v]) edges.push_back({net.variables[p].name, net.variables[v].name});
  }
  bn::save_network(c.out("network.json"), net);
  write_json(c.out("split.json"), {{"train", train}, {"test", test}});
  write_json(c.out("bn_train_report.json"), {{"bic", learned.score},
                                             {"moves", learned.moves},
                                             {"edges", edges},
                                             {"train_rows", train.size()},
                                             {"test_rows", test.size()},
                                             {"warnings", fitted.warnings},
                                             {"monotonicity", checks}});
  for (const char* f : {"network.json", "split.json", "bn_train_report.json"}) c.output(f);
  c.finish();
}

void stage_bn_eval(Context& c) {
  const auto& cfg = c.cfg();
  const auto& b = cfg.bn;
  for (const std::string f : {"network.json", "split.json", "labeled_table.csv", "labeled_schema.json"})
    c.input(f, c.out(f), "bn-eval");
  if (c.begin("bn-eval", section(cfg, "bn"))) return;

  const auto net = bn::load_network(c.out("network.json"));
  const auto table = load_labeled(c);
  const auto split = read_json(c.out("split.json"));
  const auto test = table.select_rows(split.at("test").get<std::vector<std::size_t>>());
  const int tcol = test.column_index(b.target);
  if (tcol < 0) throw DataError("bn-eval: no " + b.target + " column");
  const auto& classes = net.variables[net.require_index(b.target)].states;
  if (classes != test.variables[tcol].states) throw DataError("bn-eval: target states differ between network and table");
  const int positive = test.variables[tcol].state_index(b.positive);
  if (positive < 0) throw ConfigError("bn.positive '" + b.positive + "' is not a state of " + b.target);

  const auto pred = bn::predict(net, test, b.target, b.positive);
  std::vector<int> truth;
  for (std::size_t r = 0; r < test.rows(); ++r) truth.push_back(test.at(r, tcol));
  const auto report = bn::evaluate(pred, truth, classes, positive);
  std::vector<std::size_t> counts(classes.size(), 0);
  for (int t : truth) {
    if (t >= 0) ++counts[static_cast<std::size_t>(t)];
  }
  const double majority = truth.empty() ? 0.0
                                        : static_cast<double>(*std::max_element(counts.begin(), counts.end())) /
                                              static_cast<double>(truth.size());
  json j = report.to_json();
  j["majority_baseline"] = majority;
  j["test_rows"] = test.rows();
  write_json(c.out("metrics.json"), j);
  write_with(c.out("metrics.csv"), [&](std::ostream& o) { bn::write_metrics_csv(o, report); });
  c.output("metrics.json");
  c.output("metrics.csv");
  c.finish();
}

void stage_bn_query(Context& c) {
  const auto& cfg = c.cfg();
  const auto& b = cfg.bn;
  if (!b.scenarios) throw ConfigError("bn.scenarios is required for bn-query");
  const fs::path net_path = b.network ? *b.network : c.out("network.json");
  c.input(b.network ? "network:" + b.network->filename().string() : "network.json", net_path, "bn-query");
  c.input("scenarios:" + b.scenarios->filename().string(), *b.scenarios, "bn-query");
  if (c.begin("bn-query", {{"target", b.target}})) return;

  const auto net = bn::load_network(net_path);
  const auto scenarios = bn::load_scenarios(*b.scenarios);
  const auto results = bn::scenario_report(net, scenarios, b.target);
  write_json(c.out("posteriors.json"), bn::scenario_report_json(results));
  write_with(c.out("posteriors.csv"), [&](std::ostream& o) {
    o << "scenario,state,percent\n";
    for (const auto& r : results) {
      for (std::size_t i = 0; i < r.posterior.states.size(); ++i) {
        o << csv::escape(r.scenario.name) << ',' << csv::escape(r.posterior.states[i]) << ','
          << bn::percent2(r.posterior.probabilities[i]) << '\n';
      }
    }
  });
  c.output("posteriors.json");
  c.output("posteriors.csv");
  c.finish();
}

std::vector<sim::SimScenario> load_sim_scenarios(Context& c, const std::string& stage) {
  const auto& entries = c.cfg().simulate.scenarios;
  if (entries.empty()) throw ConfigError("simulate.scenarios is empty");
  std::vector<sim::SimScenario> out;
  std::set<std::string> names;
  for (const auto& e : entries) {
    c.input("scenario:" + e.file.filename().string(), e.file, stage);
    out.push_back(sim::load_scenario(e.file));
    if (!names.insert(out.back().name).second) throw ConfigError("duplicate simulator scenario name " + out.back().name);
  }
  return out;
}

void stage_simulate(Context& c) {
  auto scenarios = load_sim_scenarios(c, "simulate");
  if (c.begin("simulate", section(c.cfg(), "simulate"))) return;

  // Scenarios are independent; each also runs its baseline on a second thread.
  std::vector<std::future<sim::SimResult>> jobs;
  for (const auto& s : scenarios) jobs.push_back(std::async(std::launch::async, [s] { return sim::run_scenario(s); }));
  json summary = json::array();
  for (auto& job : jobs) {
    const auto r = job.get();
    const std::string base = "sim/" + r.scenario.name;
    json m = r.metrics.to_json();
    write_json(c.out(base + "_metrics.json"), {{"scenario", r.scenario.to_json()}, {"metrics", m}});
    write_with(c.out(base + "_series.csv"), [&](std::ostream& o) { sim::write_series_csv(o, r.series); });
    write_with(c.out(base + "_baseline.csv"), [&](std::ostream& o) { sim::write_series_csv(o, r.baseline_series); });
    for (const auto& suffix : {"_metrics.json", "_series.csv", "_baseline.csv"}) c.output(base + suffix);
    summary.push_back({{"scenario", r.scenario.name}, {"metrics", m}});
  }
  write_json(c.out("sim_summary.json"), summary);
  c.output("sim_summary.json");
  c.finish();
}

void stage_validate(Context& c) {
  const auto& cfg = c.cfg();
  const auto scenarios = load_sim_scenarios(c, "validate");
  c.input("posteriors.json", c.out("posteriors.json"), "validate");
  for (const auto& s : scenarios) {
    const std::string rel = "sim/" + s.name + "_metrics.json";
    c.input(rel, c.out(rel), "validate");
  }
  if (c.begin("validate", {{"simulate", section(cfg, "simulate")}, {"target", cfg.bn.target},
                           {"positive", cfg.bn.positive}}))
    return;

  std::map<std::string, json> posteriors;
  for (const auto& p : read_json(c.out("posteriors.json"))) posteriors[p.at("name").get<std::string>()] = p;

  json rows = json::array();
  int compared = 0, agreed = 0;
  std::ostringstream table;
  table << "scenario,bn_scenario,AQL,AWT,MQL,ANS,QL,SCI,RMSE,P_High,observed,predicted,agree,excluded\n";
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    const auto& e = cfg.simulate.scenarios[i];
    const json mj = read_json(c.out("sim/" + scenarios[i].name + "_metrics.json")).at("metrics");
    sim::SimMetrics m;
    m.aql = mj.at("AQL");
    m.awt = mj.at("AWT");
    m.mql = mj.at("MQL");
    m.ans = mj.at("ANS");
    m.ql_m = mj.at("QL");
    m.sci = mj.at("SCI");
    if (!mj.at("RMSE").is_null()) m.rmse = mj.at("RMSE").get<double>();
    json row = {{"scenario", scenarios[i].name}, {"metrics", mj}, {"bn_scenario", e.bn_scenario},
                {"excluded", e.exclude_from_agreement}};
    if (!e.note.empty()) row["note"] = e.note;
    std::string p_cell, obs, pred, agree;
    if (!e.bn_scenario.empty()) {
      const auto it = posteriors.find(e.bn_scenario);
      if (it == posteriors.end()) throw PreconditionError("validate: posteriors.json has no scenario " + e.bn_scenario);
      const auto& probs = it->second.at("probabilities");
      if (!probs.contains(cfg.bn.positive)) throw DataError("validate: posterior lacks state " + cfg.bn.positive);
      const double p = probs.at(cfg.bn.positive);
      const auto v = sim::compare_with_bn(m, p, cfg.simulate.threshold);
      row["p_high"] = p;
      row["observed"] = v.observed_high ? "High" : "Low";
      row["predicted"] = v.predicted_high ? "High" : "Low";
      row["agree"] = v.agree;
      if (!e.exclude_from_agreement) {
        ++compared;
        agreed += v.agree ? 1 : 0;
      }
      p_cell = fmt("%.4f", p);
      obs = row["observed"].get<std::string>();
      pred = row["predicted"].get<std::string>();
      agree = v.agree ? "yes" : "no";
    }
    rows.push_back(row);
    table << csv::escape(scenarios[i].name) << ',' << csv::escape(e.bn_scenario) << ',' << fmt("%.3f", m.aql) << ','
          << fmt("%.3f", m.awt) << ',' << m.mql << ',' << fmt("%.3f", m.ans) << ',' << fmt("%.1f", m.ql_m) << ','
          << fmt("%.4f", m.sci) << ',' << (m.rmse ? fmt("%.4f", *m.rmse) : "") << ',' << p_cell << ',' << obs << ','
          << pred << ',' << agree << ',' << (e.exclude_from_agreement ? "yes" : "no") << '\n';
  }
  write_json(c.out("validation.json"), {{"threshold", cfg.simulate.threshold},
                                        {"rows", rows},
                                        {"compared", compared},
                                        {"agreed", agreed}});
  write_text(c.out("validation.csv"), table.str());
  c.output("validation.json");
  c.output("validation.csv");
  c.finish();
}

std::string cell(const json& v, const char* f = "%.4f") {
  if (v.is_null()) return "n/a";
  if (v.is_number()) return fmt(f, v.get<double>());
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

void stage_report(Context& c) {
  for (const char* f : {"cluster_report.json", "metrics.json", "posteriors.json"}) c.input(f, c.out(f), "report");
  const bool have_study = fs::exists(c.out("study.json"));
  const bool have_validation = fs::exists(c.out("validation.json"));
  if (have_study) c.input("study.json", c.out("study.json"), "report");
  if (have_validation) c.input("validation.json", c.out("validation.json"), "report");
  if (c.begin("report", json::object())) return;

  const json cl = read_json(c.out("cluster_report.json"));
  const json mt = read_json(c.out("metrics.json"));
  const json po = read_json(c.out("posteriors.json"));
  std::ostringstream md;
  json rj;

  md << "# Congestion pipeline report\n\n## Clustering silhouettes\n\n"
     << "| method | setting | clusters | silhouette |\n|---|---|---|---|\n";
  for (const auto& b : cl.at("baselines")) {
    std::string setting;
    for (const auto& [k, v] : b.at("params").items()) setting += (setting.empty() ? "" : ", ") + k + "=" + cell(v, "%g");
    md << "| " << b.at("method").get<std::string>() << " | " << setting << " | " << b.at("clusters") << " | "
       << (b.contains("note") ? b.at("note").get<std::string>() : cell(b.at("silhouette"))) << " |\n";
  }
  md << "| DEC | defaults | " << cl.at("dec").at("cluster_sizes").size() << " | " << cell(cl.at("dec").at("silhouette"))
     << " |\n";
  rj["clustering"] = {{"best_baseline", cl.at("best_baseline")}, {"dec", cl.at("dec").at("silhouette")}};
  if (have_study) {
    const json st = read_json(c.out("study.json"));
    md << "| DEC + AutoML | best of " << st.at("trials").size() << " trials | "
       << cl.at("dec").at("cluster_sizes").size() << " | " << cell(st.at("best_objective")) << " |\n";
    rj["clustering"]["automl"] = st.at("best_objective");
  }
  md << "\nSilhouettes for DEC are measured in the " << cl.at("objective_space").get<std::string>()
     << " space; baselines in the input space.\n";

  md << "\n## Network evaluation\n\n| metric | value |\n|---|---|\n";
  md << "| accuracy | " << cell(mt.at("accuracy")) << " |\n";
  md << "| sensitivity | " << cell(mt.at("sensitivity")) << " |\n";
  md << "| specificity | " << cell(mt.at("specificity")) << " |\n";
  md << "| majority baseline | " << cell(mt.at("majority_baseline")) << " |\n";
  for (const auto& k : mt.at("classes")) {
    const std::string n = k.at("class");
    md << "| " << n << " precision | " << cell(k.at("precision")) << " |\n";
    md << "| " << n << " recall | " << cell(k.at("recall")) << " |\n";
    md << "| " << n << " F1 | " << cell(k.at("f1")) << " |\n";
  }
  rj["evaluation"] = mt;

  md << "\n## Scenario posteriors\n\n| scenario | evidence | posterior (%) |\n|---|---|---|\n";
  for (const auto& s : po) {
    std::string ev, pc;
    for (const auto& [k, v] : s.at("evidence").items()) ev += (ev.empty() ? "" : ", ") + k + "=" + v.get<std::string>();
    for (const auto& [k, v] : s.at("percent").items()) pc += (pc.empty() ? "" : ", ") + k + " " + v.get<std::string>();
    md << "| " << s.at("name").get<std::string>() << " | " << ev << " | " << pc << " |\n";
  }
  rj["posteriors"] = po;

  if (have_validation) {
    const json va = read_json(c.out("validation.json"));
    md << "\n## Simulation vs network\n\n| scenario | AWT (s) | QL (m) | SCI | P(High) | observed | predicted | agree |\n"
       << "|---|---|---|---|---|---|---|---|\n";
    for (const auto& r : va.at("rows")) {
      const auto& m = r.at("metrics");
      md << "| " << r.at("scenario").get<std::string>() << " | " << cell(m.at("AWT"), "%.1f") << " | "
         << cell(m.at("QL"), "%.1f") << " | " << cell(m.at("SCI")) << " | "
         << (r.contains("p_high") ? cell(r.at("p_high")) : "n/a") << " | "
         << (r.contains("observed") ? cell(r.at("observed")) : "n/a") << " | "
         << (r.contains("predicted") ? cell(r.at("predicted")) : "n/a") << " | "
         << (r.contains("agree") ? (r.at("excluded").get<bool>() ? "excluded" : (r.at("agree").get<bool>() ? "yes" : "no"))
                                 : "n/a")
         << " |\n";
    }
    md << "\nAgreement: " << va.at("agreed") << " of " << va.at("compared") << " compared scenarios.\n";
    rj["validation"] = va;
  }
  write_text(c.out("report.md"), md.str());
  write_json(c.out("report.json"), rj);
  c.output("report.md");
  c.output("report.json");
  c.finish();
}

sim::Curve read_curve(const fs::path& p, const std::string& label) {
  const auto t = csv::read(p);
  const auto col = [&](const std::string& name) {
    const auto it = std::find(t.header.begin(), t.header.end(), name);
    if (it == t.header.end()) throw DataError(p.string() + ": no column " + name);
    return static_cast<std::size_t>(it - t.header.begin());
  };
  const auto ct = col("t"), cw = col("cum_waiting");
  sim::Curve c{label, {}, {}};
  for (const auto& r : t.rows) {
    c.t.push_back(std::stod(r.at(ct)));
    c.y.push_back(std::stod(r.at(cw)));
  }
  return c;
}

void stage_plot(Context& c) {
  const auto scenarios = load_sim_scenarios(c, "plot");
  for (const auto& s : scenarios) {
    const std::string rel = "sim/" + s.name + "_series.csv";
    c.input(rel, c.out(rel), "plot");
  }
  if (c.begin("plot", {{"title", c.cfg().simulate.plot_title}})) return;
  std::vector<sim::Curve> curves;
  for (const auto& s : scenarios) curves.push_back(read_curve(c.out("sim/" + s.name + "_series.csv"), s.name));
  write_text(c.out("cumulative_waiting.svg"), sim::render_cumulative_waiting_svg(curves, c.cfg().simulate.plot_title));
  c.output("cumulative_waiting.svg");
  c.finish();
}

}  // namespace

// ---- config ---------------------------------------------------------------

fs::path PipelineConfig::resolve(const fs::path& p) const {
  if (p.is_absolute() || base_dir.empty()) return p;
  return base_dir / p;
}

std::uint64_t PipelineConfig::require_seed() const {
  if (!seed) throw ConfigError("a seed is required (config 'seed' or --seed)");
  return *seed;
}

std::string PipelineConfig::fingerprint() const {
  json j = raw;
  j.erase("output_dir");
  j["seed"] = seed ? json(*seed) : json(nullptr);
  if (bn.network) j["bn_network_override"] = bn.network->filename().string();
  if (bn.scenarios) j["bn_scenarios_override"] = bn.scenarios->filename().string();
  return hex64(fnv1a64(j.dump()));
}

PipelineConfig PipelineConfig::from_json(const json& j, const fs::path& base_dir) {
  PipelineConfig c;
  c.base_dir = base_dir;
  c.raw = j;
  try {
    check_keys(j, "root",
               {"seed", "output_dir", "data", "schema", "preprocess", "cluster", "automl", "label", "bn", "simulate"});
    if (j.contains("seed") && !j.at("seed").is_null()) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("data")) {
      const json& d = j.at("data");
      check_keys(d, "data", {"path", "sample_rows", "strata", "max_reject_fraction"});
      if (d.contains("path")) c.data_path = c.resolve(d.at("path").get<std::string>());
      read(d, "sample_rows", c.sample_rows);
      read(d, "strata", c.strata);
      read(d, "max_reject_fraction", c.max_reject_fraction);
    }
    if (j.contains("schema")) c.schema = ingest::Schema::from_json(j.at("schema"));
    if (j.contains("preprocess")) c.preprocess = ingest::PreprocessConfig::from_json(j.at("preprocess"));
    if (j.contains("cluster")) parse_cluster(j.at("cluster"), c.cluster);
    c.automl.objective.clusters = c.cluster.dec.clusters;
    if (j.contains("automl")) parse_automl(j.at("automl"), c.automl);
    if (j.contains("label")) parse_label(j.at("label"), c.label);
    parse_bn(j.contains("bn") ? j.at("bn") : json::object(), c.bn, c);
    if (j.contains("simulate")) parse_simulate(j.at("simulate"), c.simulate, c);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (c.data_path) require_file(*c.data_path, "data file");
  if (c.bn.network) require_file(*c.bn.network, "network");
  if (c.bn.scenarios) require_file(*c.bn.scenarios, "scenario file");
  for (const auto& e : c.simulate.scenarios) require_file(e.file, "simulator scenario");
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

// ---- public helpers -------------------------------------------------------

std::vector<BaselineScore> baseline_grid(const Matrix& data, const BaselineSettings& s, std::size_t score_rows,
                                         std::uint64_t seed) {
  std::vector<BaselineScore> out;
  auto score = [&](BaselineScore b, const Matrix& x, const std::vector<int>& labels) {
    std::set<int> distinct(labels.begin(), labels.end());
    distinct.erase(clustering::kNoise);
    b.clusters = static_cast<int>(distinct.size());
    if (b.clusters < s.min_clusters || b.clusters > s.max_clusters) {
      b.note = "cluster count outside " + std::to_string(s.min_clusters) + ".." + std::to_string(s.max_clusters);
    } else {
      b.silhouette = automl::scored_silhouette(x, labels, score_rows);
    }
    out.push_back(std::move(b));
  };
  for (int k : s.kmeans_k) {
    const auto r = clustering::kmeans_fit(data, {k, derive_seed(seed, "kmeans/" + std::to_string(k)), 300, 1e-8});
    score({"k-means", {{"k", k}}, 0, std::nullopt, ""}, data, r.assignment.labels);
  }
  Matrix hdata = data;
  if (static_cast<std::size_t>(data.rows()) > s.max_rows) {
    const auto idx = choose_rows(static_cast<std::size_t>(data.rows()), s.max_rows, derive_seed(seed, "hierarchical"));
    std::vector<Eigen::Index> rows(idx.begin(), idx.end());
    hdata = dec::gather_rows(data, rows);
  }
  for (int k : s.hierarchical_k) {
    const auto a = clustering::hierarchical_fit(hdata, {k, s.linkage, s.max_rows});
    score({"hierarchical-" + clustering::to_string(s.linkage), {{"k", k}}, 0, std::nullopt, ""}, hdata, a.labels);
  }
  for (double eps : s.dbscan_eps) {
    const auto a = clustering::dbscan_fit(data, {eps, s.dbscan_min_pts});
    score({"dbscan", {{"eps", eps}, {"min_pts", s.dbscan_min_pts}}, 0, std::nullopt, ""}, data, a.labels);
  }
  return out;
}

std::optional<double> best_baseline(const std::vector<BaselineScore>& scores) {
  std::optional<double> best;
  for (const auto& b : scores) {
    if (b.silhouette && (!best || *b.silhouette > *best)) best = b.silhouette;
  }
  return best;
}

json baseline_json(const BaselineScore& s) {
  json j = {{"method", s.method}, {"params", s.params}, {"clusters", s.clusters},
            {"silhouette", s.silhouette ? json(*s.silhouette) : json(nullptr)}};
  if (!s.note.empty()) j["note"] = s.note;
  return j;
}

void run_stage(const std::string& stage, const PipelineConfig& config, const StageOptions& options) {
  Context c(config, options);
  if (stage == "ingest") {
    stage_ingest(c);
  } else if (stage == "cluster") {
    stage_cluster(c);
  } else if (stage == "automl") {
    stage_automl(c);
  } else if (stage == "label") {
    stage_label(c);
  } else if (stage == "bn-train") {
    stage_bn_train(c);
  } else if (stage == "bn-eval") {
    stage_bn_eval(c);
  } else if (stage == "bn-query") {
    stage_bn_query(c);
  } else if (stage == "simulate") {
    stage_simulate(c);
  } else if (stage == "validate") {
    stage_validate(c);
  } else if (stage == "report") {
    stage_report(c);
  } else if (stage == "plot") {
    stage_plot(c);
  } else {
    throw ConfigError("unknown stage '" + stage + "'");
  }
}

void run_all(const PipelineConfig& config, const StageOptions& options) {
  for (const auto& s : kStages) run_stage(s, config, options);
}

}  // namespace congestion::pipeline
