#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

namespace congestion::sim {

// Signal plan: opposing arms (arm % 2) share a phase group. One cycle is
// group 0 green, group 0 amber, group 1 green, group 1 amber, then an
// all-red pedestrian phase which also closes the mid-arm crossing.
struct SignalPlan {
  double green_s = 30.0;
  double amber_s = 3.0;
  double pedestrian_s = 6.0;

  double cycle() const { return 2.0 * (green_s + amber_s) + pedestrian_s; }
};

struct RoadNetwork {
  int arms = 4;
  double lane_length_m = 250.0;
  double speed_limit_mps = 13.9;
  // Mid-arm pedestrian crossing, measured from the junction; negative = none.
  double crossing_from_junction_m = 100.0;
  SignalPlan signal;

  static RoadNetwork from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// Throws ConfigError on invalid geometry.
RoadNetwork build_network(const RoadNetwork& config);

struct VehicleParams {
  double length_m = 5.0;
  double min_gap_m = 2.5;
  double accel = 2.6;   // m/s^2
  double decel = 4.5;   // comfortable braking, m/s^2
  double tau_s = 1.0;   // reaction time in the safe-speed rule
};

enum class VehicleState { kMoving, kQueued, kCrashed, kDeparted };

struct Vehicle {
  int id = 0;
  int lane = 0;        // 0..arms-1 inbound, arms..2*arms-1 outbound
  double position = 0; // front bumper, metres from lane start
  double speed = 0;
  double length = 5.0;
  double waiting_s = 0;
  int destination = 0;
  VehicleState state = VehicleState::kMoving;
};

struct AccidentSpec {
  int arm = 0;
  // Distance of the crash front from the junction on the inbound lane.
  // Ignored when near_junction is set (the crash is at the stop line).
  double from_junction_m = 100.0;
  bool near_junction = false;
  double start_s = 600.0;
  double duration_s = 300.0;
  double blockage_m = 10.0;
  int lanes_blocked = 1;  // more than the inbound lane count also closes the exit lane

  static AccidentSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// Minor 10 m / 1 lane, Moderate 30 m / 1, Severe 50 m / 2, Fatal 80 m / 2.
void apply_severity(AccidentSpec& spec, const std::string& severity);

struct SimScenario {
  std::string name;
  std::vector<double> demand;  // veh/s per arm, before the peak factor
  bool peak = false;
  double peak_factor = 2.0;
  std::optional<AccidentSpec> accident;
  double pedestrian_activity = 0.0;  // in [0, 2]; stretches the pedestrian phase by (1 + activity)
  double total_s = 2000.0;
  double dt_s = 0.5;
  double warmup_s = 0.0;  // steps at or before this time are left out of the metrics
  std::uint64_t seed = 1;
  RoadNetwork network;
  VehicleParams vehicle;

  void validate() const;
  static SimScenario from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

SimScenario load_scenario(const std::filesystem::path& path);

struct StepSample {
  double t = 0;
  int queued = 0;
  int active = 0;             // non-crashed vehicles on the network
  double mean_speed = 0;      // over active, non-crashed vehicles; 0 when empty
  double cum_waiting_s = 0;   // network total
  double queue_m = 0;         // queued-chain metres on approach lanes
  double longest_chain_m = 0;
  std::vector<int> queued_by_arm;  // approach lanes
};

struct Counters {
  long spawned = 0;
  long departed = 0;
  long deferred = 0;        // arrival attempts postponed because the entry was occupied
  long materialized = 0;    // crash obstacles created with no vehicle at the spot
  long active = 0;
  long crashed_active = 0;
  double departed_waiting_s = 0;
  double active_waiting_s = 0;
};

struct SimMetrics {
  double aql = 0;
  double awt = 0;
  int mql = 0;
  double ans = 0;
  double ql_m = 0;
  double sci = 0;
  std::optional<double> rmse;  // empty without a baseline
  Counters counters;

  nlohmann::json to_json() const;
};

struct SimResult {
  SimScenario scenario;
  SimMetrics metrics;
  std::vector<StepSample> series;
  std::vector<StepSample> baseline_series;
};

// Deterministic state machine; exposed for stepping in tests.
class Simulation {
 public:
  explicit Simulation(SimScenario scenario, bool with_accident = true);

  double time() const { return t_; }
  // spawn + accident handling + car-following over one dt. Throws
  // NumericError with a state dump if an invariant breaks.
  void step();
  void run();

  const std::vector<Vehicle>& vehicles() const { return vehicles_; }
  const std::vector<StepSample>& series() const { return series_; }
  const Counters& counters() const { return counters_; }
  const SimScenario& scenario() const { return sc_; }
  bool green(int arm) const;
  bool amber(int arm) const;
  bool crossing_blocked() const;
  SignalPlan effective_signal() const;
  std::string dump() const;

  // Test hooks: place a vehicle directly (bypasses arrivals).
  int place_vehicle(int lane, double position, double speed, int destination);
  void set_signal_override(std::optional<bool> all_green) { all_green_ = all_green; }
  void add_blockage(int lane, double begin, double end, double until_s);

 private:
  struct Blockage {
    int lane;
    double begin;
    double end;
    double until;
    int vehicle;  // crashed vehicle id or -1 when materialized
  };
  struct Arrival {
    double t;
    int destination;
  };

  int lanes() const { return 2 * sc_.network.arms; }
  double lane_length() const { return sc_.network.lane_length_m; }
  bool entry_free(int lane, double needed) const;
  void spawn();
  void inject_accident();
  void expire_blockages();
  void move();
  void sample();
  void check_invariants() const;
  std::vector<int> lane_order(int lane) const;  // active vehicle indices, front first

  SimScenario sc_;
  bool with_accident_;
  double t_ = 0;
  long step_index_ = 0;
  bool injected_ = false;
  std::optional<bool> all_green_;
  std::vector<Vehicle> vehicles_;  // active, including crashed
  std::set<int> held_;             // ids caught inside a blockage zone
  std::vector<Blockage> blockages_;
  std::vector<std::vector<Arrival>> arrivals_;
  std::vector<std::size_t> next_arrival_;
  std::vector<std::vector<int>> latent_;  // per arm, destinations waiting to enter
  std::vector<StepSample> series_;
  Counters counters_;
  int next_id_ = 0;
  double cum_waiting_ = 0;
};

// Metrics from a finished run over steps with t > warmup_s; baseline may be null.
SimMetrics collect_metrics(const std::vector<StepSample>& series, const std::vector<StepSample>* baseline,
                           const Counters& counters, double v_max, double approach_lane_m, double warmup_s = 0.0);

// Runs the scenario and its accident-free baseline (same seed, same arrivals).
SimResult run_scenario(const SimScenario& scenario);

struct Verdict {
  bool observed_high = false;
  bool predicted_high = false;
  bool agree = false;
  double sci = 0;
  double p_high = 0;
};

// Observed High iff SCI >= threshold; predicted High iff P(High) >= threshold.
Verdict compare_with_bn(const SimMetrics& metrics, double p_high, double threshold = 0.5);

void write_series_csv(std::ostream& out, const std::vector<StepSample>& series);

struct Curve {
  std::string label;
  std::vector<double> t;
  std::vector<double> y;
};

// Line chart of cumulative waiting time curves.
std::string render_cumulative_waiting_svg(const std::vector<Curve>& curves, const std::string& title);

}  // namespace congestion::sim
