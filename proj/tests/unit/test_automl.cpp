#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "congestion/automl.hpp"
#include "congestion/clustering.hpp"
#include "congestion/errors.hpp"

using namespace congestion;
using namespace congestion::automl;

namespace {

SearchSpace lr_only() {
  SearchSpace s;
  s.parameters = {{"lr", LogUniform{1e-4, 1e-2}}};
  return s;
}

// Deterministic toy objective over dec_default parameters; checkpoint scores
// grow linearly with epoch toward the final value (monotone by construction).
double toy_value(const ParamSet& p) {
  const double d = std::log10(p.at("lr")) + 3.0;
  return 1.0 - d * d - std::abs(p.at("latent") - 19.0) / 100.0;
}

Objective monotone_objective(int epochs = 20, int every = 5) {
  return [=](const ParamSet& p, std::uint64_t, const Reporter& report) {
    const double v = toy_value(p);
    for (int e = every; e <= epochs; e += every) {
      if (!report(e, v * e / epochs)) return v * e / epochs;
    }
    return v;
  };
}

TrialRecord done(int id, double objective, std::map<int, double> checkpoints = {}) {
  TrialRecord t;
  t.id = id;
  t.objective = objective;
  t.status = TrialStatus::kComplete;
  t.checkpoints = std::move(checkpoints);
  return t;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("congestion_" + name);
}

}  // namespace

TEST(SearchSpace, DefaultBracketsReferenceConfiguration) {
  const auto s = SearchSpace::dec_default();
  ASSERT_EQ(s.parameters.size(), 4u);
  const auto& hidden = std::get<IntRange>(s.parameters[0].second);
  EXPECT_LE(hidden.low, 190);
  EXPECT_GE(hidden.high, 190);
  const auto& lr = std::get<LogUniform>(s.parameters[2].second);
  EXPECT_LE(lr.low, 2e-4);
  EXPECT_GE(lr.high, 2e-4);
  const auto back = SearchSpace::from_json(s.to_json());
  EXPECT_EQ(back.to_json(), s.to_json());
}

TEST(SearchSpace, RejectsIllFormedBounds) {
  SearchSpace s;
  s.parameters = {{"lr", LogUniform{0.0, 1.0}}};
  EXPECT_THROW(s.validate(), ConfigError);
  s.parameters = {{"h", IntRange{10, 5}}};
  EXPECT_THROW(s.validate(), ConfigError);
  s.parameters = {{"b", Categorical{{}}}};
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Suggest, EmptyHistoryDrawsWithinBounds) {
  const auto space = SearchSpace::dec_default();
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    for (auto sampler : {Sampler::kRandom, Sampler::kGuided}) {
      const auto p = suggest(space, {}, sampler, seed);
      EXPECT_GE(p.at("lr"), 1e-4);
      EXPECT_LE(p.at("lr"), 1e-2);
      EXPECT_GE(p.at("hidden"), 32);
      EXPECT_LE(p.at("hidden"), 256);
      EXPECT_EQ(p.at("hidden"), std::round(p.at("hidden")));
      EXPECT_GE(p.at("latent"), 4);
      EXPECT_LE(p.at("latent"), 32);
      const double b = p.at("batch");
      EXPECT_TRUE(b == 32 || b == 64 || b == 128);
    }
  }
  EXPECT_EQ(suggest(space, {}, Sampler::kGuided, 5), suggest(space, {}, Sampler::kRandom, 5));
}

TEST(Suggest, LogUniformCoversDecades) {
  int low_decade = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) low_decade += suggest(lr_only(), {}, Sampler::kRandom, seed).at("lr") < 1e-3;
  // Half of a two-decade log-uniform range lies below 1e-3.
  EXPECT_NEAR(low_decade / 1000.0, 0.5, 0.06);
}

// Monte Carlo oracle on the ratio rule: objective peaked at lr = 1e-3.
TEST(Suggest, GuidedSamplerConcentratesNearOptimum) {
  std::vector<TrialRecord> history;
  for (int i = 0; i < 50; ++i) {
    auto p = suggest(lr_only(), {}, Sampler::kRandom, 1000 + i);
    const double d = std::log10(p.at("lr")) + 3.0;
    auto t = done(i, -d * d);
    t.params = p;
    history.push_back(t);
  }
  int inside = 0;
  const int draws = 500;
  for (int i = 0; i < draws; ++i) {
    const double lr = suggest(lr_only(), history, Sampler::kGuided, 77 + i).at("lr");
    inside += lr >= 3e-4 && lr <= 3e-3;
  }
  EXPECT_GE(inside / static_cast<double>(draws), 0.6);
}

TEST(Suggest, GuidedFallsBackBelowStartupTrials) {
  std::vector<TrialRecord> history;
  for (int i = 0; i < kGuidedStartupTrials - 1; ++i) {
    auto t = done(i, i);
    t.params = {{"lr", 1e-3}};
    history.push_back(t);
  }
  for (std::uint64_t seed = 0; seed < 20; ++seed)
    EXPECT_EQ(suggest(lr_only(), history, Sampler::kGuided, seed), suggest(lr_only(), {}, Sampler::kRandom, seed));
}

TEST(Pruner, WarmupAlwaysContinues) {
  std::vector<TrialRecord> history;
  for (int i = 0; i < 4; ++i) history.push_back(done(i, 1.0, {{5, 1.0}}));
  EXPECT_EQ(prune_check(-5.0, 5, history, {}), PruneDecision::kContinue);
  history.push_back(done(4, 1.0, {{4, 1.0}}));
  EXPECT_EQ(prune_check(-5.0, 4, history, {}), PruneDecision::kContinue);  // epoch warmup
}

TEST(Pruner, MedianRule) {
  std::vector<TrialRecord> history = {done(0, 0.1, {{5, 0.1}}), done(1, 0.2, {{5, 0.2}}), done(2, 0.3, {{5, 0.3}}),
                                      done(3, 0.5), done(4, 0.6)};
  EXPECT_EQ(prune_check(0.15, 5, history, {}), PruneDecision::kPrune);
  EXPECT_EQ(prune_check(0.2, 5, history, {}), PruneDecision::kContinue);
  EXPECT_EQ(prune_check(0.25, 5, history, {}), PruneDecision::kContinue);
  EXPECT_EQ(prune_check(0.15, 10, history, {}), PruneDecision::kContinue);  // no scores at epoch 10
  PrunerConfig off;
  off.enabled = false;
  EXPECT_EQ(prune_check(-1.0, 5, history, off), PruneDecision::kContinue);
}

TEST(RunStudy, SingleTrialIsBest) {
  StudyConfig cfg;
  cfg.n_trials = 1;
  cfg.seed = 3;
  const auto s = run_study(SearchSpace::dec_default(), monotone_objective(), cfg);
  ASSERT_EQ(s.trials.size(), 1u);
  ASSERT_TRUE(s.best_trial);
  EXPECT_EQ(*s.best_trial, 0);
  EXPECT_EQ(s.best()->objective, s.trials[0].objective);
  EXPECT_THROW(run_study(SearchSpace::dec_default(), monotone_objective(), {0, 3}), ConfigError);
}

TEST(RunStudy, ReproducibleWithFixedSeed) {
  StudyConfig cfg;
  cfg.n_trials = 25;
  cfg.seed = 9;
  const auto a = run_study(SearchSpace::dec_default(), monotone_objective(), cfg);
  const auto b = run_study(SearchSpace::dec_default(), monotone_objective(), cfg);
  ASSERT_EQ(a.trials.size(), b.trials.size());
  for (std::size_t i = 0; i < a.trials.size(); ++i) EXPECT_EQ(trial_json(a.trials[i]), trial_json(b.trials[i]));
  cfg.seed = 10;
  const auto c = run_study(SearchSpace::dec_default(), monotone_objective(), cfg);
  EXPECT_NE(trial_json(a.trials[0]), trial_json(c.trials[0]));
}

TEST(RunStudy, BestIsMaximumOfCompleteTrials) {
  StudyConfig cfg;
  cfg.n_trials = 30;
  cfg.seed = 4;
  const auto s = run_study(SearchSpace::dec_default(), monotone_objective(), cfg);
  ASSERT_TRUE(s.best());
  for (const auto* t : s.completed()) EXPECT_GE(*s.best()->objective, *t->objective);
  for (const auto& t : s.trials) {
    if (t.status == TrialStatus::kPruned) EXPECT_FALSE(t.checkpoints.empty());
    if (t.status == TrialStatus::kComplete) EXPECT_TRUE(t.objective.has_value());
  }
}

TEST(RunStudy, BestNonDecreasingInTrialCountForNestedRuns) {
  StudyConfig cfg;
  cfg.seed = 12;
  double previous = -INFINITY;
  for (int n : {5, 10, 20, 30}) {
    cfg.n_trials = n;
    const auto s = run_study(SearchSpace::dec_default(), monotone_objective(), cfg);
    ASSERT_TRUE(s.best());
    EXPECT_GE(*s.best()->objective, previous);
    previous = *s.best()->objective;
  }
}

TEST(RunStudy, PruningKeepsTheBestTrialOnMonotoneObjective) {
  StudyConfig cfg;
  cfg.n_trials = 40;
  cfg.seed = 21;
  cfg.sampler = Sampler::kRandom;  // same parameters with and without pruning
  cfg.pruner.enabled = false;
  const auto full = run_study(SearchSpace::dec_default(), monotone_objective(), cfg);
  cfg.pruner.enabled = true;
  const auto pruned = run_study(SearchSpace::dec_default(), monotone_objective(), cfg);
  ASSERT_TRUE(full.best_trial && pruned.best_trial);
  EXPECT_EQ(*pruned.best_trial, *full.best_trial);
  int n_pruned = 0;
  for (const auto& t : pruned.trials) n_pruned += t.status == TrialStatus::kPruned;
  EXPECT_GT(n_pruned, 0);
}

TEST(RunStudy, FailuresAreRecordedNotFatal) {
  StudyConfig cfg;
  cfg.n_trials = 4;
  const Objective flaky = [](const ParamSet& p, std::uint64_t, const Reporter&) {
    if (p.at("batch") == 64) throw NumericError("boom");
    return 0.5;
  };
  const auto s = run_study(SearchSpace::dec_default(), flaky, cfg);
  EXPECT_EQ(s.trials.size(), 4u);
  for (const auto& t : s.trials) {
    if (t.params.at("batch") == 64) {
      EXPECT_EQ(t.status, TrialStatus::kFailed);
      EXPECT_EQ(t.error, "boom");
    }
  }
}

TEST(RunStudy, ParallelWavesKeepTrialSeedsAndParams) {
  StudyConfig cfg;
  cfg.n_trials = 8;
  cfg.seed = 5;
  cfg.sampler = Sampler::kRandom;
  cfg.pruner.enabled = false;
  const auto serial = run_study(SearchSpace::dec_default(), monotone_objective(), cfg);
  cfg.parallelism = 3;
  const auto parallel = run_study(SearchSpace::dec_default(), monotone_objective(), cfg);
  ASSERT_EQ(serial.trials.size(), parallel.trials.size());
  for (std::size_t i = 0; i < serial.trials.size(); ++i) EXPECT_EQ(trial_json(serial.trials[i]), trial_json(parallel.trials[i]));
}

TEST(Journal, ResumeAfterCrashMatchesUninterruptedRun) {
  const auto path = temp_path("journal.ndjson");
  std::filesystem::remove(path);
  StudyConfig cfg;
  cfg.n_trials = 14;
  cfg.seed = 31;
  Journal journal(path);
  const auto full = run_study(SearchSpace::dec_default(), monotone_objective(), cfg, &journal);

  // Cut the log in the middle of trial 9: started, maybe a checkpoint, no finish.
  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  in.close();
  std::size_t cut = 0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto j = nlohmann::json::parse(lines[i]);
    if (j["trial"] == 9 && j["event"] == "started") cut = i + 1;
  }
  ASSERT_GT(cut, 0u);
  {
    std::ofstream out(path, std::ios::trunc);
    for (std::size_t i = 0; i < cut; ++i) out << lines[i] << "\n";
  }
  auto resumed = Journal::replay(path);
  EXPECT_EQ(resumed.size(), 9u);
  const auto again = run_study(SearchSpace::dec_default(), monotone_objective(), cfg, nullptr, resumed);
  std::filesystem::remove(path);
  ASSERT_EQ(again.trials.size(), full.trials.size());
  for (std::size_t i = 0; i < full.trials.size(); ++i) {
    auto a = trial_json(full.trials[i]);
    auto b = trial_json(again.trials[i]);
    EXPECT_EQ(a, b) << i;
  }
  EXPECT_EQ(again.best_trial, full.best_trial);
}

TEST(ScoreSubset, FixedAndSorted) {
  const auto a = score_subset(1000, 100);
  EXPECT_EQ(a.size(), 100u);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(a, score_subset(1000, 100));
  EXPECT_EQ(score_subset(50, 100).size(), 50u);
  EXPECT_EQ(score_subset(50, 0).size(), 50u);
}

TEST(ScoredSilhouette, MatchesSilhouetteOnAllRowsAndFlagsOneCluster) {
  Matrix x(4, 2);
  x << 0, 0, 0, 1, 10, 0, 10, 1;
  EXPECT_DOUBLE_EQ(scored_silhouette(x, {0, 0, 1, 1}, 0), clustering::silhouette(x, {0, 0, 1, 1}));
  EXPECT_EQ(scored_silhouette(x, {0, 0, 0, 0}, 0), -1.0);
}

TEST(DecObjective, SmallStudyRunsAndScoresInRange) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  Matrix x(120, 4);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = g(rng) + (i < 60 && j == 0 ? 8.0 : 0.0);
  DecObjectiveConfig oc;
  oc.epochs = 3;
  oc.refine_epochs = 6;
  oc.checkpoint_every = 2;
  SearchSpace space;
  space.parameters = {{"hidden", IntRange{4, 8}}, {"latent", IntRange{2, 3}}, {"lr", LogUniform{1e-3, 1e-2}},
                      {"batch", Categorical{{16, 32}}}};
  StudyConfig cfg;
  cfg.n_trials = 3;
  cfg.seed = 8;
  const auto s = run_study(space, dec_objective(x, oc), cfg);
  ASSERT_TRUE(s.best());
  EXPECT_GE(*s.best()->objective, -1.0);
  EXPECT_LE(*s.best()->objective, 1.0);
  // Refitting with the recorded parameters and seed reproduces the objective.
  const auto* best = s.best();
  const auto fit = dec::fit_dec_pipeline(x, dec_options(best->params, oc, best->seed));
  EXPECT_EQ(dec_score(x, fit.assignment.labels, fit.model, oc.space, oc.score_rows), *best->objective);
  const auto js = study_json(s);
  EXPECT_EQ(js["direction"], "maximize");
  EXPECT_EQ(js["trials"].size(), 3u);
}
