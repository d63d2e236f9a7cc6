#include "congestion/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <thread>

#include "congestion/errors.hpp"
#include "congestion/hashing.hpp"

namespace congestion::sim {

namespace {

constexpr double kQueuedSpeed = 0.1;
constexpr double kChainGap = 10.0;  // metres; stopped vehicles closer than this form one chain
constexpr double kEps = 1e-9;

using nlohmann::json;

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scenario field '") + key + "': " + e.what());
  }
}

double unit_draw(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Krauss safe speed for a net gap g to an obstacle moving at vl.
double safe_speed(double g, double vl, double v, const VehicleParams& p) {
  if (g <= 0.0) return 0.0;
  const double denom = (v + vl) / (2.0 * p.decel) + p.tau_s;
  return std::max(0.0, vl + (g - vl * p.tau_s) / denom);
}

}  // namespace

RoadNetwork RoadNetwork::from_json(const json& j) {
  RoadNetwork n;
  if (!j.is_object()) throw ConfigError("network must be an object");
  n.arms = get_or(j, "arms", n.arms);
  n.lane_length_m = get_or(j, "lane_length_m", n.lane_length_m);
  n.speed_limit_mps = get_or(j, "speed_limit_mps", n.speed_limit_mps);
  if (j.contains("crossing_from_junction_m"))
    n.crossing_from_junction_m = j.at("crossing_from_junction_m").is_null()
                                     ? -1.0
                                     : get_or(j, "crossing_from_junction_m", -1.0);
  if (j.contains("signal")) {
    const json& s = j.at("signal");
    n.signal.green_s = get_or(s, "green_s", n.signal.green_s);
    n.signal.amber_s = get_or(s, "amber_s", n.signal.amber_s);
    n.signal.pedestrian_s = get_or(s, "pedestrian_s", n.signal.pedestrian_s);
  }
  return n;
}

json RoadNetwork::to_json() const {
  json j{{"arms", arms},
         {"lane_length_m", lane_length_m},
         {"speed_limit_mps", speed_limit_mps},
         {"signal", {{"green_s", signal.green_s}, {"amber_s", signal.amber_s}, {"pedestrian_s", signal.pedestrian_s}}}};
  j["crossing_from_junction_m"] = crossing_from_junction_m < 0 ? json(nullptr) : json(crossing_from_junction_m);
  return j;
}

RoadNetwork build_network(const RoadNetwork& config) {
  if (config.arms < 2) throw ConfigError("network needs at least 2 arms");
  if (!(config.lane_length_m > 0.0)) throw ConfigError("lane length must be positive");
  if (!(config.speed_limit_mps > 0.0)) throw ConfigError("speed limit must be positive");
  const SignalPlan& s = config.signal;
  if (!(s.green_s > 0.0) || !(s.amber_s > 0.0) || !(s.pedestrian_s > 0.0))
    throw ConfigError("signal phase durations must be positive");
  if (config.crossing_from_junction_m >= config.lane_length_m)
    throw ConfigError("crossing lies beyond the lane");
  return config;
}

AccidentSpec AccidentSpec::from_json(const json& j) {
  AccidentSpec a;
  if (!j.is_object()) throw ConfigError("accident must be an object");
  if (j.contains("severity")) apply_severity(a, get_or<std::string>(j, "severity", ""));
  a.arm = get_or(j, "arm", a.arm);
  a.from_junction_m = get_or(j, "from_junction_m", a.from_junction_m);
  a.near_junction = get_or(j, "near_junction", a.near_junction);
  a.start_s = get_or(j, "start_s", a.start_s);
  a.duration_s = get_or(j, "duration_s", a.duration_s);
  a.blockage_m = get_or(j, "blockage_m", a.blockage_m);
  a.lanes_blocked = get_or(j, "lanes_blocked", a.lanes_blocked);
  return a;
}

json AccidentSpec::to_json() const {
  return json{{"arm", arm},
              {"from_junction_m", from_junction_m},
              {"near_junction", near_junction},
              {"start_s", start_s},
              {"duration_s", duration_s},
              {"blockage_m", blockage_m},
              {"lanes_blocked", lanes_blocked}};
}

void apply_severity(AccidentSpec& spec, const std::string& severity) {
  if (severity == "Minor") {
    spec.blockage_m = 10.0;
    spec.lanes_blocked = 1;
  } else if (severity == "Moderate") {
    spec.blockage_m = 30.0;
    spec.lanes_blocked = 1;
  } else if (severity == "Severe") {
    spec.blockage_m = 50.0;
    spec.lanes_blocked = 2;
  } else if (severity == "Fatal") {
    spec.blockage_m = 80.0;
    spec.lanes_blocked = 2;
  } else {
    throw ConfigError("unknown severity '" + severity + "'");
  }
}

void SimScenario::validate() const {
  build_network(network);
  if (static_cast<int>(demand.size()) != network.arms)
    throw ConfigError("demand needs one rate per arm");
  for (double d : demand)
    if (!(d >= 0.0) || !std::isfinite(d)) throw ConfigError("demand rates must be finite and >= 0");
  if (!(peak_factor > 0.0)) throw ConfigError("peak_factor must be positive");
  if (!(dt_s > 0.0)) throw ConfigError("time step must be positive");
  if (!(total_s > 0.0)) throw ConfigError("total time must be positive");
  if (!(warmup_s >= 0.0 && warmup_s < total_s)) throw ConfigError("warmup_s must lie in [0, total_s)");
  if (!(pedestrian_activity >= 0.0 && pedestrian_activity <= 2.0))
    throw ConfigError("pedestrian_activity must lie in [0, 2]");
  if (!(vehicle.length_m > 0.0) || !(vehicle.min_gap_m >= 0.0) || !(vehicle.accel > 0.0) ||
      !(vehicle.decel > 0.0) || !(vehicle.tau_s > 0.0))
    throw ConfigError("vehicle parameters must be positive");
  if (accident) {
    const AccidentSpec& a = *accident;
    if (a.arm < 0 || a.arm >= network.arms) throw ConfigError("accident arm out of range");
    if (!(a.start_s >= 0.0) || !(a.duration_s >= 0.0) || a.start_s + a.duration_s > total_s + kEps)
      throw ConfigError("accident window must lie within the simulated time");
    if (!(a.blockage_m > 0.0) || a.blockage_m > network.lane_length_m)
      throw ConfigError("blockage length must be in (0, lane length]");
    if (a.lanes_blocked < 1) throw ConfigError("lanes_blocked must be >= 1");
    if (!a.near_junction && !(a.from_junction_m >= 0.0 && a.from_junction_m <= network.lane_length_m))
      throw ConfigError("accident position lies outside the lane");
  }
}

SimScenario SimScenario::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("scenario must be a JSON object");
  SimScenario s;
  s.name = get_or<std::string>(j, "name", "");
  if (j.contains("network")) s.network = RoadNetwork::from_json(j.at("network"));
  if (j.contains("vehicle")) {
    const json& v = j.at("vehicle");
    s.vehicle.length_m = get_or(v, "length_m", s.vehicle.length_m);
    s.vehicle.min_gap_m = get_or(v, "min_gap_m", s.vehicle.min_gap_m);
    s.vehicle.accel = get_or(v, "accel", s.vehicle.accel);
    s.vehicle.decel = get_or(v, "decel", s.vehicle.decel);
    s.vehicle.tau_s = get_or(v, "tau_s", s.vehicle.tau_s);
  }
  if (!j.contains("demand")) throw ConfigError("scenario needs 'demand'");
  const json& d = j.at("demand");
  if (d.is_number()) {
    s.demand.assign(static_cast<std::size_t>(std::max(s.network.arms, 0)), d.get<double>());
  } else {
    s.demand = get_or<std::vector<double>>(j, "demand", {});
  }
  s.peak = get_or(j, "peak", s.peak);
  s.peak_factor = get_or(j, "peak_factor", s.peak_factor);
  if (j.contains("accident") && !j.at("accident").is_null()) s.accident = AccidentSpec::from_json(j.at("accident"));
  s.pedestrian_activity = get_or(j, "pedestrian_activity", s.pedestrian_activity);
  s.total_s = get_or(j, "total_s", s.total_s);
  s.dt_s = get_or(j, "dt_s", s.dt_s);
  s.warmup_s = get_or(j, "warmup_s", s.warmup_s);
  s.seed = get_or<std::uint64_t>(j, "seed", s.seed);
  s.validate();
  return s;
}

json SimScenario::to_json() const {
  json j{{"name", name},
         {"demand", demand},
         {"peak", peak},
         {"peak_factor", peak_factor},
         {"pedestrian_activity", pedestrian_activity},
         {"total_s", total_s},
         {"dt_s", dt_s},
         {"warmup_s", warmup_s},
         {"seed", seed},
         {"network", network.to_json()},
         {"vehicle",
          {{"length_m", vehicle.length_m},
           {"min_gap_m", vehicle.min_gap_m},
           {"accel", vehicle.accel},
           {"decel", vehicle.decel},
           {"tau_s", vehicle.tau_s}}}};
  j["accident"] = accident ? accident->to_json() : json(nullptr);
  return j;
}

SimScenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("scenario " + path.string() + ": " + e.what());
  }
  SimScenario s = SimScenario::from_json(j);
  if (s.name.empty()) s.name = path.stem().string();
  return s;
}

json SimMetrics::to_json() const {
  json j{{"AQL", aql}, {"AWT", awt}, {"MQL", mql}, {"ANS", ans}, {"QL", ql_m}, {"SCI", sci}};
  j["RMSE"] = rmse ? json(*rmse) : json(nullptr);
  j["counters"] = {{"spawned", counters.spawned},
                   {"departed", counters.departed},
                   {"deferred", counters.deferred},
                   {"materialized", counters.materialized},
                   {"active", counters.active}};
  return j;
}

Simulation::Simulation(SimScenario scenario, bool with_accident)
    : sc_(std::move(scenario)), with_accident_(with_accident && sc_.accident.has_value()) {
  sc_.validate();
  const int arms = sc_.network.arms;
  arrivals_.resize(static_cast<std::size_t>(arms));
  next_arrival_.assign(static_cast<std::size_t>(arms), 0);
  latent_.resize(static_cast<std::size_t>(arms));
  // Arrivals are drawn up front so the baseline run sees the same demand.
  for (int a = 0; a < arms; ++a) {
    const double rate = sc_.demand[static_cast<std::size_t>(a)] * (sc_.peak ? sc_.peak_factor : 1.0);
    if (rate <= 0.0) continue;
    std::mt19937_64 rng(derive_seed(sc_.seed, "sim/arrivals/" + std::to_string(a)));
    double t = 0.0;
    for (;;) {
      t += -std::log1p(-unit_draw(rng)) / rate;
      if (t >= sc_.total_s) break;
      int dest = static_cast<int>(unit_draw(rng) * (arms - 1));
      dest = std::min(dest, arms - 2);
      if (dest >= a) ++dest;  // no U-turns
      arrivals_[static_cast<std::size_t>(a)].push_back({t, dest});
    }
  }
}

SignalPlan Simulation::effective_signal() const {
  SignalPlan p = sc_.network.signal;
  p.pedestrian_s *= 1.0 + sc_.pedestrian_activity;
  return p;
}

bool Simulation::green(int arm) const {
  if (all_green_) return *all_green_;
  const SignalPlan p = effective_signal();
  const double c = std::fmod(t_, p.cycle());
  const double start = (arm % 2 == 0) ? 0.0 : p.green_s + p.amber_s;
  return c >= start && c < start + p.green_s;
}

bool Simulation::amber(int arm) const {
  if (all_green_) return false;
  const SignalPlan p = effective_signal();
  const double c = std::fmod(t_, p.cycle());
  const double start = ((arm % 2 == 0) ? 0.0 : p.green_s + p.amber_s) + p.green_s;
  return c >= start && c < start + p.amber_s;
}

bool Simulation::crossing_blocked() const {
  if (all_green_ || sc_.network.crossing_from_junction_m < 0) return false;
  const SignalPlan p = effective_signal();
  return std::fmod(t_, p.cycle()) >= 2.0 * (p.green_s + p.amber_s);
}

std::vector<int> Simulation::lane_order(int lane) const {
  std::vector<int> idx;
  for (std::size_t i = 0; i < vehicles_.size(); ++i)
    if (vehicles_[i].lane == lane) idx.push_back(static_cast<int>(i));
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    const Vehicle& va = vehicles_[static_cast<std::size_t>(a)];
    const Vehicle& vb = vehicles_[static_cast<std::size_t>(b)];
    if (va.position != vb.position) return va.position > vb.position;
    return va.id < vb.id;
  });
  return idx;
}

bool Simulation::entry_free(int lane, double needed) const {
  for (const Blockage& b : blockages_)
    if (b.lane == lane && b.begin < needed) return false;
  for (const Vehicle& v : vehicles_)
    if (v.lane == lane && v.position - v.length < needed) return false;
  return true;
}

int Simulation::place_vehicle(int lane, double position, double speed, int destination) {
  if (lane < 0 || lane >= lanes()) throw PreconditionError("lane out of range");
  Vehicle v;
  v.id = next_id_++;
  v.lane = lane;
  v.position = position;
  v.speed = speed;
  v.length = sc_.vehicle.length_m;
  v.destination = destination;
  v.state = speed < kQueuedSpeed ? VehicleState::kQueued : VehicleState::kMoving;
  vehicles_.push_back(v);
  ++counters_.spawned;
  return v.id;
}

void Simulation::add_blockage(int lane, double begin, double end, double until_s) {
  if (lane < 0 || lane >= lanes()) throw PreconditionError("lane out of range");
  for (const Vehicle& v : vehicles_)
    if (v.lane == lane && v.position > begin && v.position - v.length < end) held_.insert(v.id);
  blockages_.push_back({lane, begin, end, until_s, -1});
}

void Simulation::spawn() {
  const int arms = sc_.network.arms;
  const VehicleParams& p = sc_.vehicle;
  const double vmax = sc_.network.speed_limit_mps;
  for (int a = 0; a < arms; ++a) {
    auto& queue = latent_[static_cast<std::size_t>(a)];
    const auto& arr = arrivals_[static_cast<std::size_t>(a)];
    std::size_t& next = next_arrival_[static_cast<std::size_t>(a)];
    std::size_t fresh = 0;
    while (next < arr.size() && arr[next].t < t_ + sc_.dt_s) {
      queue.push_back(arr[next].destination);
      ++next;
      ++fresh;
    }
    std::size_t entered = 0;
    while (!queue.empty() && entry_free(a, p.min_gap_m)) {
      // Entry speed limited by the last vehicle on the lane.
      double v0 = vmax;
      for (const Vehicle& o : vehicles_) {
        if (o.lane != a) continue;
        const double gap = o.position - o.length - p.min_gap_m;
        if (gap < 1e6) v0 = std::min(v0, safe_speed(gap, o.speed, vmax, p));
      }
      for (const Blockage& b : blockages_)
        if (b.lane == a) v0 = std::min(v0, safe_speed(b.begin - p.min_gap_m, 0.0, vmax, p));
      Vehicle v;
      v.id = next_id_++;
      v.lane = a;
      v.position = 0.0;
      v.speed = v0;
      v.length = p.length_m;
      v.destination = queue.front();
      v.state = v0 < kQueuedSpeed ? VehicleState::kQueued : VehicleState::kMoving;
      vehicles_.push_back(v);
      queue.erase(queue.begin());
      ++counters_.spawned;
      ++entered;
    }
    // Fresh arrivals that could not enter this step.
    if (fresh > entered) counters_.deferred += static_cast<long>(fresh - entered);
  }
}

void Simulation::inject_accident() {
  const AccidentSpec& a = *sc_.accident;
  injected_ = true;
  if (a.duration_s <= 0.0) return;
  const double len = lane_length();
  const double until = a.start_s + a.duration_s;
  const double from_j = a.near_junction ? 0.0 : a.from_junction_m;

  // Inbound lane: zone [p - L, p], p measured from the lane start.
  const double p = len - from_j;
  const double begin = std::max(0.0, p - a.blockage_m);
  int crashed = -1;
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> inside;
  for (const Vehicle& v : vehicles_) {
    if (v.lane != a.arm || !(v.position > begin && v.position - v.length < p)) continue;
    inside.push_back(v.id);
    const double d = std::abs(v.position - p);
    if (d < best) {
      best = d;
      crashed = v.id;
    }
  }
  for (Vehicle& v : vehicles_) {
    if (v.id == crashed) {
      v.speed = 0.0;
      v.state = VehicleState::kCrashed;
    } else if (std::find(inside.begin(), inside.end(), v.id) != inside.end()) {
      held_.insert(v.id);
      v.speed = 0.0;
    }
  }
  if (crashed < 0) ++counters_.materialized;
  blockages_.push_back({a.arm, begin, p, until, crashed});

  // Two or more lanes blocked: the exit lane of the same arm closes too.
  if (a.lanes_blocked >= 2) {
    const int out = sc_.network.arms + a.arm;
    const double ob = from_j;
    const double oe = std::min(len, from_j + a.blockage_m);
    for (Vehicle& v : vehicles_) {
      if (v.lane == out && v.position > ob && v.position - v.length < oe) {
        held_.insert(v.id);
        v.speed = 0.0;
      }
    }
    blockages_.push_back({out, ob, oe, until, -1});
  }
}

void Simulation::expire_blockages() {
  std::vector<Blockage> keep;
  for (const Blockage& b : blockages_) {
    if (b.until > t_ + kEps) {
      keep.push_back(b);
      continue;
    }
    if (b.vehicle >= 0) {
      auto it = std::find_if(vehicles_.begin(), vehicles_.end(), [&](const Vehicle& v) { return v.id == b.vehicle; });
      if (it != vehicles_.end()) {
        ++counters_.departed;
        counters_.departed_waiting_s += it->waiting_s;
        vehicles_.erase(it);
      }
    }
  }
  blockages_ = std::move(keep);
  // Release vehicles no longer inside any zone.
  for (auto it = held_.begin(); it != held_.end();) {
    bool still = false;
    for (const Vehicle& v : vehicles_) {
      if (v.id != *it) continue;
      for (const Blockage& b : blockages_)
        if (b.lane == v.lane && v.position > b.begin && v.position - v.length < b.end) still = true;
    }
    it = still ? std::next(it) : held_.erase(it);
  }
}

void Simulation::move() {
  const VehicleParams& p = sc_.vehicle;
  const double dt = sc_.dt_s;
  const double vmax = sc_.network.speed_limit_mps;
  const double len = lane_length();
  const int arms = sc_.network.arms;
  const bool cross = crossing_blocked();
  const double cfj = sc_.network.crossing_from_junction_m;
  const double exit_needed = p.min_gap_m + vmax * dt;

  std::vector<char> dest_open(static_cast<std::size_t>(arms));
  for (int a = 0; a < arms; ++a) dest_open[static_cast<std::size_t>(a)] = entry_free(arms + a, exit_needed);

  std::vector<double> next_speed(vehicles_.size(), 0.0);
  for (int lane = 0; lane < lanes(); ++lane) {
    const bool inbound = lane < arms;
    const double cpos = cfj < 0 ? -1.0 : (inbound ? len - cfj : cfj);
    const std::vector<int> order = lane_order(lane);
    for (std::size_t k = 0; k < order.size(); ++k) {
      const std::size_t i = static_cast<std::size_t>(order[k]);
      const Vehicle& v = vehicles_[i];
      if (v.state == VehicleState::kCrashed || held_.count(v.id)) continue;
      double nv = std::min(v.speed + p.accel * dt, vmax);
      auto obstacle = [&](double physical, double margin, double vl) {
        nv = std::min(nv, safe_speed(physical - margin, vl, v.speed, p));
        nv = std::min(nv, std::max(0.0, physical) / dt);
      };
      const double stop_dist = v.speed * v.speed / (2.0 * p.decel);
      if (k > 0) {
        const Vehicle& l = vehicles_[static_cast<std::size_t>(order[k - 1])];
        const bool still = l.state == VehicleState::kCrashed || held_.count(l.id);
        obstacle(l.position - l.length - v.position, p.min_gap_m, still ? 0.0 : l.speed);
      }
      for (const Blockage& b : blockages_)
        if (b.lane == lane && b.begin >= v.position - kEps) obstacle(b.begin - v.position, p.min_gap_m, 0.0);
      if (inbound) {
        const int arm = lane;
        bool stop = !dest_open[static_cast<std::size_t>(v.destination)];
        if (!green(arm)) stop = stop || !amber(arm) || (len - v.position) >= stop_dist;
        if (stop) obstacle(len - v.position, 0.0, 0.0);
      }
      if (cross && cpos >= 0 && v.position <= cpos && (cpos - v.position) >= stop_dist)
        obstacle(cpos - v.position, 0.0, 0.0);
      next_speed[i] = std::max(0.0, nv);
    }
  }

  for (std::size_t i = 0; i < vehicles_.size(); ++i) {
    Vehicle& v = vehicles_[i];
    if (v.state == VehicleState::kCrashed || held_.count(v.id)) {
      v.speed = 0.0;
      continue;
    }
    v.speed = next_speed[i];
    v.position += v.speed * dt;
  }

  // Exit lanes: past the end means departed.
  std::vector<Vehicle> kept;
  kept.reserve(vehicles_.size());
  for (Vehicle& v : vehicles_) {
    if (v.lane >= arms && v.position > len) {
      ++counters_.departed;
      counters_.departed_waiting_s += v.waiting_s;
      v.state = VehicleState::kDeparted;
      continue;
    }
    kept.push_back(v);
  }
  vehicles_ = std::move(kept);

  // Stop-line crossings, processed in arm order.
  for (int a = 0; a < arms; ++a) {
    for (Vehicle& v : vehicles_) {
      if (v.lane != a || v.position <= len) continue;
      const int out = arms + v.destination;
      const double front = v.position - len;
      bool fits = true;
      for (const Blockage& b : blockages_)
        if (b.lane == out && b.begin < front) fits = false;
      for (const Vehicle& o : vehicles_)
        if (o.lane == out && o.position - o.length < front) fits = false;
      if (fits) {
        v.lane = out;
        v.position = front;
      } else {
        v.position = len;
        v.speed = 0.0;
      }
    }
  }
}

void Simulation::sample() {
  const int arms = sc_.network.arms;
  const double len = lane_length();
  const double cfj = sc_.network.crossing_from_junction_m;
  const bool cross = crossing_blocked();
  StepSample s;
  s.t = t_;
  s.queued_by_arm.assign(static_cast<std::size_t>(arms), 0);
  double speed_sum = 0.0;
  for (Vehicle& v : vehicles_) {
    if (v.state == VehicleState::kCrashed) continue;
    ++s.active;
    speed_sum += v.speed;
    if (v.speed < kQueuedSpeed) {
      v.state = VehicleState::kQueued;
      v.waiting_s += sc_.dt_s;
      cum_waiting_ += sc_.dt_s;
      ++s.queued;
      if (v.lane < arms) ++s.queued_by_arm[static_cast<std::size_t>(v.lane)];
    } else {
      v.state = VehicleState::kMoving;
    }
  }
  s.mean_speed = s.active > 0 ? speed_sum / s.active : 0.0;
  s.cum_waiting_s = cum_waiting_;

  // Stopped chains: consecutive queued vehicles anchored at an obstacle.
  for (int lane = 0; lane < lanes(); ++lane) {
    const bool inbound = lane < arms;
    const double cpos = cfj < 0 ? -1.0 : (inbound ? len - cfj : cfj);
    const std::vector<int> order = lane_order(lane);
    double lane_queue = 0.0;
    bool open = false;
    double chain_front = 0.0;
    double chain_rear = 0.0;
    auto close = [&]() {
      if (!open) return;
      const double length = std::clamp(chain_front, 0.0, len) - std::clamp(chain_rear, 0.0, len);
      lane_queue += std::max(0.0, length);
      s.longest_chain_m = std::max(s.longest_chain_m, length);
      open = false;
    };
    for (std::size_t k = 0; k < order.size(); ++k) {
      const Vehicle& v = vehicles_[static_cast<std::size_t>(order[k])];
      if (v.state == VehicleState::kCrashed || held_.count(v.id) || v.speed >= kQueuedSpeed) {
        close();
        continue;
      }
      double ahead = std::numeric_limits<double>::infinity();
      bool behind_chain = false;
      if (k > 0) {
        const Vehicle& l = vehicles_[static_cast<std::size_t>(order[k - 1])];
        ahead = l.position - l.length;
        behind_chain = open;
      }
      for (const Blockage& b : blockages_)
        if (b.lane == lane && b.begin >= v.position - kEps && b.begin < ahead) {
          ahead = b.begin;
          behind_chain = false;
        }
      if (inbound && len < ahead) {
        ahead = len;
        behind_chain = false;
      }
      if (cross && cpos >= v.position - kEps && cpos < ahead) {
        ahead = cpos;
        behind_chain = false;
      }
      const double d = ahead - v.position;
      if (behind_chain && d <= kChainGap) {
        chain_rear = v.position - v.length;
        continue;
      }
      close();
      open = true;
      chain_front = d <= kChainGap ? ahead : v.position;
      chain_rear = v.position - v.length;
    }
    close();
    if (inbound) s.queue_m += lane_queue;
  }
  series_.push_back(std::move(s));
}

void Simulation::check_invariants() const {
  const double len = lane_length();
  long real = 0;
  for (const Vehicle& v : vehicles_) {
    ++real;
    if (!(v.position >= -kEps && v.position <= len + kEps) || !(v.speed >= 0.0) || !std::isfinite(v.speed))
      throw NumericError("vehicle state out of range at t=" + std::to_string(t_) + "\n" + dump());
  }
  for (int lane = 0; lane < lanes(); ++lane) {
    const std::vector<int> order = lane_order(lane);
    for (std::size_t k = 1; k < order.size(); ++k) {
      const Vehicle& l = vehicles_[static_cast<std::size_t>(order[k - 1])];
      const Vehicle& f = vehicles_[static_cast<std::size_t>(order[k])];
      if (f.position > l.position - l.length + 1e-6)
        throw NumericError("vehicle overlap on lane " + std::to_string(lane) + " at t=" + std::to_string(t_) + "\n" +
                           dump());
    }
  }
  if (counters_.spawned != counters_.departed + real)
    throw NumericError("vehicle conservation broken at t=" + std::to_string(t_) + "\n" + dump());
}

std::string Simulation::dump() const {
  std::ostringstream out;
  out << "t=" << t_ << " spawned=" << counters_.spawned << " departed=" << counters_.departed << "\n";
  for (const Vehicle& v : vehicles_)
    out << "  id=" << v.id << " lane=" << v.lane << " pos=" << v.position << " v=" << v.speed << " len=" << v.length
        << " dest=" << v.destination << " held=" << held_.count(v.id) << " state=" << static_cast<int>(v.state)
        << "\n";
  for (const Blockage& b : blockages_)
    out << "  zone lane=" << b.lane << " [" << b.begin << ", " << b.end << ") until=" << b.until
        << " vehicle=" << b.vehicle << "\n";
  return out.str();
}

void Simulation::step() {
  expire_blockages();
  if (with_accident_ && !injected_ && t_ + kEps >= sc_.accident->start_s) inject_accident();
  spawn();
  move();
  ++step_index_;
  t_ = static_cast<double>(step_index_) * sc_.dt_s;
  sample();
  check_invariants();
}

void Simulation::run() {
  const long steps = static_cast<long>(std::llround(sc_.total_s / sc_.dt_s));
  while (step_index_ < steps) step();
  counters_.active = static_cast<long>(vehicles_.size());
  counters_.crashed_active = 0;
  counters_.active_waiting_s = 0.0;
  for (const Vehicle& v : vehicles_) {
    if (v.state == VehicleState::kCrashed) ++counters_.crashed_active;
    counters_.active_waiting_s += v.waiting_s;
  }
}

SimMetrics collect_metrics(const std::vector<StepSample>& series, const std::vector<StepSample>* baseline,
                           const Counters& counters, double v_max, double approach_lane_m, double warmup_s) {
  SimMetrics m;
  m.counters = counters;
  double q = 0.0;
  double frac = 0.0;
  double speed = 0.0;
  long steps = 0;
  long speed_steps = 0;
  for (const StepSample& s : series) {
    if (s.t <= warmup_s) continue;
    ++steps;
    q += s.queued;
    m.mql = std::max(m.mql, s.queued);
    m.ql_m = std::max(m.ql_m, s.longest_chain_m);
    if (approach_lane_m > 0) frac += std::clamp(s.queue_m / approach_lane_m, 0.0, 1.0);
    if (s.active > 0) {
      speed += s.mean_speed;
      ++speed_steps;
    }
  }
  if (steps > 0) {
    m.aql = q / static_cast<double>(steps);
    m.sci = std::clamp(frac / static_cast<double>(steps), 0.0, 1.0);
  }
  m.ans = speed_steps > 0 ? speed / static_cast<double>(speed_steps) : 0.0;
  const long vehicles = counters.departed + counters.active;
  m.awt = vehicles > 0 ? (counters.departed_waiting_s + counters.active_waiting_s) / static_cast<double>(vehicles) : 0.0;
  if (baseline && v_max > 0) {
    const std::size_t n = std::min(series.size(), baseline->size());
    double acc = 0.0;
    long used = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (series[i].t <= warmup_s) continue;
      const double d = (series[i].mean_speed - (*baseline)[i].mean_speed) / v_max;
      acc += d * d;
      ++used;
    }
    m.rmse = used > 0 ? std::sqrt(acc / static_cast<double>(used)) : 0.0;
  }
  return m;
}

SimResult run_scenario(const SimScenario& scenario) {
  scenario.validate();
  Simulation main_run(scenario, true);
  Simulation base_run(scenario, false);
  std::exception_ptr failure;
  std::thread worker([&] {
    try {
      base_run.run();
    } catch (...) {
      failure = std::current_exception();
    }
  });
  try {
    main_run.run();
  } catch (...) {
    worker.join();
    throw;
  }
  worker.join();
  if (failure) std::rethrow_exception(failure);

  SimResult r;
  r.scenario = scenario;
  r.series = main_run.series();
  r.baseline_series = base_run.series();
  const double approach = scenario.network.arms * scenario.network.lane_length_m;
  r.metrics = collect_metrics(r.series, &r.baseline_series, main_run.counters(), scenario.network.speed_limit_mps,
                              approach, scenario.warmup_s);
  return r;
}

Verdict compare_with_bn(const SimMetrics& metrics, double p_high, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw PreconditionError("threshold must lie in (0, 1)");
  Verdict v;
  v.sci = metrics.sci;
  v.p_high = p_high;
  v.observed_high = metrics.sci >= threshold;
  v.predicted_high = p_high >= threshold;
  v.agree = v.observed_high == v.predicted_high;
  return v;
}

void write_series_csv(std::ostream& out, const std::vector<StepSample>& series) {
  std::size_t arms = series.empty() ? 0 : series.front().queued_by_arm.size();
  out << "t,queued_count,mean_speed,cum_waiting,queue_m";
  for (std::size_t a = 0; a < arms; ++a) out << ",queued_arm" << a;
  out << "\n";
  char buf[64];
  for (const StepSample& s : series) {
    std::snprintf(buf, sizeof buf, "%.1f", s.t);
    out << buf << "," << s.queued;
    std::snprintf(buf, sizeof buf, ",%.4f,%.1f,%.2f", s.mean_speed, s.cum_waiting_s, s.queue_m);
    out << buf;
    for (int q : s.queued_by_arm) out << "," << q;
    out << "\n";
  }
}

}  // namespace congestion::sim
