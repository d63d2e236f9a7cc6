#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "congestion/errors.hpp"
#include "congestion/simulator.hpp"

using namespace congestion;
using namespace congestion::sim;

namespace {

SimScenario quiet_scenario(double total_s = 400.0) {
  SimScenario s;
  s.name = "quiet";
  s.demand.assign(4, 0.0);
  s.total_s = total_s;
  return s;
}

SimScenario data_scenario(int k) {
  return load_scenario(std::string(CONGESTION_DATA_DIR) + "/scenarios/sim_scenario_" + std::to_string(k) + ".json");
}

bool any_crashed(const Simulation& sim) {
  return std::any_of(sim.vehicles().begin(), sim.vehicles().end(),
                     [](const Vehicle& v) { return v.state == VehicleState::kCrashed; });
}

bool same_series(const std::vector<StepSample>& a, const std::vector<StepSample>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const StepSample& x = a[i];
    const StepSample& y = b[i];
    if (std::memcmp(&x.t, &y.t, sizeof(double)) != 0 || x.queued != y.queued || x.active != y.active ||
        std::memcmp(&x.mean_speed, &y.mean_speed, sizeof(double)) != 0 ||
        std::memcmp(&x.cum_waiting_s, &y.cum_waiting_s, sizeof(double)) != 0 ||
        std::memcmp(&x.queue_m, &y.queue_m, sizeof(double)) != 0 || x.queued_by_arm != y.queued_by_arm)
      return false;
  }
  return true;
}

}  // namespace

TEST(Network, DefaultIsFourArmsOf250m) {
  const RoadNetwork n = build_network(RoadNetwork{});
  EXPECT_EQ(n.arms, 4);
  EXPECT_DOUBLE_EQ(n.lane_length_m, 250.0);
  EXPECT_DOUBLE_EQ(n.speed_limit_mps, 13.9);
}

TEST(Network, RejectsBadGeometry) {
  RoadNetwork n;
  n.lane_length_m = 0.0;
  EXPECT_THROW(build_network(n), ConfigError);
  n = RoadNetwork{};
  n.arms = 1;
  EXPECT_THROW(build_network(n), ConfigError);
  n = RoadNetwork{};
  n.signal.amber_s = 0.0;
  EXPECT_THROW(build_network(n), ConfigError);
  n = RoadNetwork{};
  n.crossing_from_junction_m = 300.0;
  EXPECT_THROW(build_network(n), ConfigError);
}

TEST(Network, TwoArmLayoutRuns) {
  SimScenario s;
  s.network.arms = 2;
  s.demand = {0.1, 0.1};
  s.total_s = 600.0;
  ASSERT_NO_THROW(build_network(s.network));
  Simulation sim(s, false);
  sim.run();
  EXPECT_GT(sim.counters().spawned, 0);
  // Two arms: every vehicle goes straight across to the other arm.
  for (const Vehicle& v : sim.vehicles())
    if (v.lane < 2) EXPECT_EQ(v.destination, 1 - v.lane);
}

TEST(Network, SignalHasOneGreenGroupAtATime) {
  SimScenario s = quiet_scenario(400.0);
  Simulation sim(s, false);
  const SignalPlan p = sim.effective_signal();
  while (sim.time() < 2 * p.cycle()) {
    const bool g0 = sim.green(0) || sim.green(2);
    const bool g1 = sim.green(1) || sim.green(3);
    EXPECT_FALSE(g0 && g1) << "t=" << sim.time();
    EXPECT_EQ(sim.green(0), sim.green(2));
    EXPECT_EQ(sim.green(1), sim.green(3));
    if (sim.crossing_blocked()) EXPECT_FALSE(g0 || g1);
    sim.step();
  }
}

TEST(Network, PedestrianActivityStretchesCycle) {
  SimScenario s = quiet_scenario();
  s.pedestrian_activity = 1.0;
  Simulation sim(s, false);
  EXPECT_DOUBLE_EQ(sim.effective_signal().pedestrian_s, 12.0);
  EXPECT_DOUBLE_EQ(sim.effective_signal().cycle(), 2 * 33.0 + 12.0);
}

TEST(Step, FreeFlowMatchesClosedForm) {
  SimScenario s = quiet_scenario();
  s.network.lane_length_m = 1000.0;
  s.network.crossing_from_junction_m = -1.0;
  Simulation sim(s, false);
  sim.set_signal_override(true);
  sim.place_vehicle(0, 0.0, 0.0, 2);
  const double a = s.vehicle.accel;
  const double vmax = s.network.speed_limit_mps;
  for (int k = 1; k <= 60; ++k) {
    sim.step();
    ASSERT_EQ(sim.vehicles().size(), 1u);
    const double expect = std::min(a * k * s.dt_s, vmax);
    EXPECT_NEAR(sim.vehicles()[0].speed, expect, 1e-12) << "step " << k;
  }
  EXPECT_DOUBLE_EQ(sim.vehicles()[0].speed, vmax);
}

TEST(Step, FollowerStopsBehindStoppedLeader) {
  SimScenario s = quiet_scenario();
  s.network.crossing_from_junction_m = -1.0;
  Simulation sim(s, false);
  sim.set_signal_override(false);  // all red: the leader stays at the stop line
  const double len = s.network.lane_length_m;
  sim.place_vehicle(0, len, 0.0, 2);
  sim.place_vehicle(0, len - s.vehicle.length_m - 10.0, s.network.speed_limit_mps, 2);
  double min_gap = 1e9;
  for (int k = 0; k < 40; ++k) {
    ASSERT_NO_THROW(sim.step());
    const auto& v = sim.vehicles();
    ASSERT_EQ(v.size(), 2u);
    const double gap = v[0].position - v[0].length - v[1].position;
    min_gap = std::min(min_gap, gap);
  }
  EXPECT_GT(min_gap, 0.0);
  EXPECT_LT(sim.vehicles()[1].speed, 0.1);
  EXPECT_EQ(sim.vehicles()[1].state, VehicleState::kQueued);
}

TEST(Step, PedestrianPhaseHoldsTrafficAtCrossing) {
  SimScenario s = quiet_scenario();
  s.pedestrian_activity = 2.0;  // 18 s phase, long enough to come to rest
  Simulation sim(s, false);
  const SignalPlan p = sim.effective_signal();
  // Run up to the pedestrian phase, then drop a vehicle just upstream of the crossing.
  while (!sim.crossing_blocked()) sim.step();
  const double cpos = s.network.lane_length_m - s.network.crossing_from_junction_m;
  sim.place_vehicle(0, cpos - 15.0, 5.0, 2);
  const double end = sim.time() + p.pedestrian_s - 1.0;
  while (sim.time() < end) {
    sim.step();
    ASSERT_LE(sim.vehicles()[0].position, cpos + 1e-9);
  }
  EXPECT_LT(sim.vehicles()[0].speed, 0.1);
}

TEST(Spawn, ZeroDemandNeverSpawns) {
  SimScenario s = quiet_scenario(1000.0);
  Simulation sim(s, false);
  sim.run();
  EXPECT_EQ(sim.counters().spawned, 0);
  for (const StepSample& x : sim.series()) {
    EXPECT_EQ(x.active, 0);
    EXPECT_EQ(x.queued, 0);
  }
}

TEST(Spawn, PoissonCountsConcentrate) {
  const double lambda = 0.2;
  const double T = 1000.0;
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    SimScenario s = quiet_scenario(T);
    s.demand = {lambda, 0.0, 0.0, 0.0};
    s.seed = seed;
    Simulation sim(s, false);
    sim.run();
    // Entry deferrals only delay vehicles by a step or two, so spawned tracks arrivals.
    const double n = static_cast<double>(sim.counters().spawned);
    EXPECT_LE(std::abs(n - lambda * T), 3.0 * std::sqrt(lambda * T)) << "seed " << seed;
  }
}

TEST(Spawn, PeakFlagDoublesArrivals) {
  SimScenario s = quiet_scenario(2000.0);
  s.demand = {0.05, 0.05, 0.05, 0.05};
  Simulation off(s, false);
  off.run();
  s.peak = true;
  Simulation on(s, false);
  on.run();
  const double ratio = static_cast<double>(on.counters().spawned) / off.counters().spawned;
  EXPECT_GT(ratio, 1.7);
  EXPECT_LT(ratio, 2.3);
}

TEST(Spawn, BlockedEntryDefersArrivals) {
  SimScenario s = quiet_scenario(100.0);
  s.demand = {0.5, 0.0, 0.0, 0.0};
  Simulation sim(s, false);
  sim.add_blockage(0, 0.0, 10.0, 1e9);
  sim.run();
  EXPECT_EQ(sim.counters().spawned, 0);
  EXPECT_GT(sim.counters().deferred, 0);
}

TEST(Accident, CrashedExactlyDuringWindow) {
  SimScenario s = quiet_scenario(1000.0);
  AccidentSpec a;
  a.near_junction = true;
  a.start_s = 600.0;
  a.duration_s = 300.0;
  s.accident = a;
  Simulation sim(s, true);
  sim.set_signal_override(false);
  sim.place_vehicle(0, s.network.lane_length_m, 0.0, 2);
  while (sim.time() < s.total_s) {
    const double before = sim.time();
    sim.step();
    const bool inside = before >= 600.0 && before < 900.0;
    EXPECT_EQ(any_crashed(sim), inside) << "step starting at t=" << before;
  }
  // On expiry the crashed vehicle departs.
  EXPECT_TRUE(sim.vehicles().empty());
  EXPECT_EQ(sim.counters().departed, 1);
  EXPECT_EQ(sim.counters().materialized, 0);
}

TEST(Accident, EmptyArmMaterializesObstacle) {
  SimScenario s = quiet_scenario(200.0);
  AccidentSpec a;
  a.start_s = 10.0;
  a.duration_s = 50.0;
  s.accident = a;
  Simulation sim(s, true);
  sim.run();
  EXPECT_EQ(sim.counters().materialized, 1);
}

TEST(Accident, EightyMetreFootprintQueuesFollowers) {
  SimScenario s = quiet_scenario(200.0);
  s.network.crossing_from_junction_m = -1.0;
  AccidentSpec a;
  apply_severity(a, "Fatal");
  ASSERT_DOUBLE_EQ(a.blockage_m, 80.0);
  a.from_junction_m = 20.0;
  a.start_s = 0.0;
  a.duration_s = 150.0;
  s.accident = a;
  Simulation sim(s, true);
  sim.set_signal_override(true);
  sim.place_vehicle(0, 5.0, 10.0, 2);
  for (int k = 0; k < 200; ++k) sim.step();
  const double zone_begin = s.network.lane_length_m - a.from_junction_m - a.blockage_m;
  ASSERT_EQ(sim.vehicles().size(), 1u);
  const Vehicle& v = sim.vehicles()[0];
  EXPECT_LE(v.position, zone_begin + 1e-9);
  EXPECT_GT(v.position, zone_begin - 10.0);
  EXPECT_EQ(v.state, VehicleState::kQueued);
  EXPECT_GT(sim.series().back().longest_chain_m, 0.0);
  // After the zone clears the follower drives off.
  while (sim.time() < s.total_s) sim.step();
  EXPECT_TRUE(sim.vehicles().empty() || sim.vehicles()[0].position > zone_begin);
}

TEST(Accident, ZeroDurationLeavesTrajectoryUnchanged) {
  SimScenario s = data_scenario(1);
  s.total_s = 900.0;
  s.accident->duration_s = 0.0;
  Simulation with(s, true);
  with.run();
  Simulation without(s, false);
  without.run();
  EXPECT_TRUE(same_series(with.series(), without.series()));
}

TEST(Accident, SeverityMapping) {
  AccidentSpec a;
  apply_severity(a, "Minor");
  EXPECT_EQ(a.blockage_m, 10.0);
  EXPECT_EQ(a.lanes_blocked, 1);
  apply_severity(a, "Moderate");
  EXPECT_EQ(a.blockage_m, 30.0);
  EXPECT_EQ(a.lanes_blocked, 1);
  apply_severity(a, "Severe");
  EXPECT_EQ(a.blockage_m, 50.0);
  EXPECT_EQ(a.lanes_blocked, 2);
  apply_severity(a, "Fatal");
  EXPECT_EQ(a.blockage_m, 80.0);
  EXPECT_EQ(a.lanes_blocked, 2);
  EXPECT_THROW(apply_severity(a, "Catastrophic"), ConfigError);
}

TEST(Scenario, ValidationRejectsBadWindowAndBlockage) {
  SimScenario s = quiet_scenario(1000.0);
  AccidentSpec a;
  a.start_s = 900.0;
  a.duration_s = 200.0;
  s.accident = a;
  EXPECT_THROW(s.validate(), ConfigError);
  s.accident->duration_s = 50.0;
  s.accident->blockage_m = 300.0;
  EXPECT_THROW(s.validate(), ConfigError);
  s.accident->blockage_m = 10.0;
  EXPECT_NO_THROW(s.validate());
  s.demand = {0.1, 0.1};
  EXPECT_THROW(s.validate(), ConfigError);
  s.demand = {0.1, -0.1, 0.1, 0.1};
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Scenario, JsonRoundTrip) {
  const SimScenario s = data_scenario(4);
  const SimScenario back = SimScenario::from_json(s.to_json());
  EXPECT_EQ(back.to_json(), s.to_json());
  ASSERT_TRUE(back.accident.has_value());
  EXPECT_TRUE(back.accident->near_junction);
  EXPECT_EQ(back.accident->blockage_m, 80.0);
  EXPECT_TRUE(back.peak);
}

TEST(Scenario, MissingFileIsConfigError) {
  EXPECT_THROW(load_scenario("/nonexistent/scenario.json"), ConfigError);
}

TEST(Metrics, HandBuiltSeries) {
  std::vector<StepSample> series(3);
  const int q[] = {0, 2, 4};
  for (int i = 0; i < 3; ++i) {
    series[i].t = 0.5 * (i + 1);
    series[i].queued = q[i];
    series[i].active = 4;
    series[i].mean_speed = 3.0 * i;
    series[i].queue_m = 10.0 * i;
    series[i].longest_chain_m = 7.5 * i;
  }
  const SimMetrics m = collect_metrics(series, nullptr, Counters{}, 13.9, 100.0);
  EXPECT_DOUBLE_EQ(m.aql, 2.0);
  EXPECT_EQ(m.mql, 4);
  EXPECT_DOUBLE_EQ(m.ans, 3.0);
  EXPECT_DOUBLE_EQ(m.ql_m, 15.0);
  EXPECT_DOUBLE_EQ(m.sci, (0.0 + 0.1 + 0.2) / 3.0);
  EXPECT_FALSE(m.rmse.has_value());
}

TEST(Metrics, WarmupStepsAreExcluded) {
  std::vector<StepSample> series(4);
  for (int i = 0; i < 4; ++i) {
    series[i].t = 100.0 * (i + 1);
    series[i].queued = i == 0 ? 50 : 1;
  }
  const SimMetrics m = collect_metrics(series, nullptr, Counters{}, 13.9, 100.0, 100.0);
  EXPECT_DOUBLE_EQ(m.aql, 1.0);
  EXPECT_EQ(m.mql, 1);
}

TEST(Metrics, AwtAveragesDepartedAndActive) {
  Counters c;
  c.departed = 3;
  c.active = 1;
  c.departed_waiting_s = 30.0;
  c.active_waiting_s = 10.0;
  EXPECT_DOUBLE_EQ(collect_metrics({}, nullptr, c, 13.9, 100.0).awt, 10.0);
}

TEST(Metrics, RmseAgainstSelfIsZeroAndSciSmallWithoutAccident) {
  SimScenario s = data_scenario(1);
  s.accident.reset();
  const SimResult r = run_scenario(s);
  ASSERT_TRUE(r.metrics.rmse.has_value());
  EXPECT_EQ(*r.metrics.rmse, 0.0);
  EXPECT_LT(r.metrics.sci, 0.1);
}

TEST(Metrics, ZeroDemandScenarioIsAllZero) {
  SimScenario s = quiet_scenario(600.0);
  const SimResult r = run_scenario(s);
  EXPECT_EQ(r.metrics.aql, 0.0);
  EXPECT_EQ(r.metrics.mql, 0);
  EXPECT_EQ(r.metrics.awt, 0.0);
  EXPECT_EQ(r.metrics.sci, 0.0);
  EXPECT_EQ(r.metrics.ql_m, 0.0);
  EXPECT_EQ(*r.metrics.rmse, 0.0);
}

TEST(Properties, ConservationAndNoOverlapEveryStep) {
  const SimScenario s = data_scenario(4);
  Simulation sim(s, true);
  while (sim.time() < s.total_s) {
    ASSERT_NO_THROW(sim.step());
    const Counters& c = sim.counters();
    ASSERT_EQ(c.spawned, c.departed + static_cast<long>(sim.vehicles().size()));
    for (int lane = 0; lane < 2 * s.network.arms; ++lane) {
      std::vector<const Vehicle*> on;
      for (const Vehicle& v : sim.vehicles())
        if (v.lane == lane) on.push_back(&v);
      std::sort(on.begin(), on.end(), [](auto* a, auto* b) { return a->position > b->position; });
      for (std::size_t k = 1; k < on.size(); ++k)
        ASSERT_GE(on[k - 1]->position - on[k - 1]->length - on[k]->position, -1e-6);
      for (const Vehicle* v : on) {
        ASSERT_GE(v->position, -1e-9);
        ASSERT_LE(v->position, s.network.lane_length_m + 1e-9);
        ASSERT_GE(v->speed, 0.0);
      }
    }
  }
}

TEST(Properties, DeterministicRuns) {
  const SimScenario s = data_scenario(2);
  const SimResult a = run_scenario(s);
  const SimResult b = run_scenario(s);
  EXPECT_TRUE(same_series(a.series, b.series));
  EXPECT_TRUE(same_series(a.baseline_series, b.baseline_series));
  EXPECT_EQ(a.metrics.to_json().dump(), b.metrics.to_json().dump());
}

TEST(Properties, LongerAccidentNeverReducesWaiting) {
  SimScenario s = data_scenario(2);
  double last = -1.0;
  for (double d : {0.0, 100.0, 300.0, 600.0, 1000.0, 1400.0}) {
    s.accident->duration_s = d;
    Simulation sim(s, true);
    sim.run();
    const double w = sim.series().back().cum_waiting_s;
    EXPECT_GE(w, last) << "duration " << d;
    last = w;
  }
}

TEST(Properties, AwtBoundedByThreeCyclesWithoutAccident) {
  for (double act : {0.0, 1.0, 2.0}) {
    SimScenario s = data_scenario(1);
    s.accident.reset();
    s.pedestrian_activity = act;
    const SimResult r = run_scenario(s);
    const double cycle = Simulation(s, false).effective_signal().cycle();
    EXPECT_LE(r.metrics.awt, 3.0 * cycle) << "activity " << act;
  }
}

TEST(Properties, MetricInvariantsOnReferenceScenarios) {
  for (int k = 1; k <= 4; ++k) {
    const SimScenario s = data_scenario(k);
    const SimResult r = run_scenario(s);
    const SimMetrics& m = r.metrics;
    EXPECT_GE(m.mql, m.aql) << k;
    EXPECT_GE(m.ql_m, 0.0) << k;
    EXPECT_GE(m.sci, 0.0) << k;
    EXPECT_LE(m.sci, 1.0) << k;
    EXPECT_LE(m.ans, s.network.speed_limit_mps) << k;
    ASSERT_TRUE(m.rmse.has_value());
  }
}

TEST(Scenarios, MinorOffPeakBelowFatalPeak) {
  const SimResult s1 = run_scenario(data_scenario(1));
  const SimResult s4 = run_scenario(data_scenario(4));
  EXPECT_LT(s1.metrics.sci, s4.metrics.sci);
  EXPECT_LT(s1.series.back().cum_waiting_s, s4.series.back().cum_waiting_s);
}

TEST(Compare, ReferenceVerdicts) {
  SimMetrics m;
  m.sci = 0.85;
  Verdict v = compare_with_bn(m, 0.9812);
  EXPECT_TRUE(v.observed_high);
  EXPECT_TRUE(v.predicted_high);
  EXPECT_TRUE(v.agree);
  m.sci = 0.35;
  v = compare_with_bn(m, 0.4808);
  EXPECT_FALSE(v.observed_high);
  EXPECT_FALSE(v.predicted_high);
  EXPECT_TRUE(v.agree);
  m.sci = 0.35;
  v = compare_with_bn(m, 0.9812);
  EXPECT_FALSE(v.agree);
}

TEST(Compare, ThresholdBoundaryIsHigh) {
  SimMetrics m;
  m.sci = 0.5;
  const Verdict v = compare_with_bn(m, 0.5);
  EXPECT_TRUE(v.observed_high);
  EXPECT_TRUE(v.predicted_high);
  m.sci = 0.3;
  EXPECT_TRUE(compare_with_bn(m, 0.3, 0.3).observed_high);
  EXPECT_THROW(compare_with_bn(m, 0.5, 0.0), PreconditionError);
  EXPECT_THROW(compare_with_bn(m, 0.5, 1.0), PreconditionError);
}

TEST(Output, SeriesCsvAndSvg) {
  std::vector<StepSample> series(2);
  series[0].t = 0.5;
  series[0].queued = 1;
  series[0].cum_waiting_s = 0.5;
  series[0].queued_by_arm = {1, 0};
  series[1].t = 1.0;
  series[1].queued = 2;
  series[1].mean_speed = 1.25;
  series[1].cum_waiting_s = 1.5;
  series[1].queued_by_arm = {1, 1};
  std::ostringstream out;
  write_series_csv(out, series);
  EXPECT_EQ(out.str(),
            "t,queued_count,mean_speed,cum_waiting,queue_m,queued_arm0,queued_arm1\n"
            "0.5,1,0.0000,0.5,0.00,1,0\n"
            "1.0,2,1.2500,1.5,0.00,1,1\n");
  const std::string svg = render_cumulative_waiting_svg({{"a", {0, 1}, {0, 2}}, {"b", {0, 1}, {0, 1}}}, "waiting");
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  EXPECT_NE(svg.find("waiting"), std::string::npos);
}
