#include "congestion/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <string>

namespace congestion::synth {

ingest::Schema synthetic_schema() {
  ingest::Schema s;
  using ingest::ExtraKind;
  s.extras = {
      {"Temperature_F", ExtraKind::kNumeric},  {"Humidity_pct", ExtraKind::kNumeric},
      {"Visibility_mi", ExtraKind::kNumeric},  {"Wind_Speed_mph", ExtraKind::kNumeric},
      {"Pressure_in", ExtraKind::kNumeric},    {"Distance_mi", ExtraKind::kNumeric},
      {"Weather_Condition", ExtraKind::kCategorical}, {"Day_Night", ExtraKind::kCategorical},
      {"State", ExtraKind::kCategorical},
  };
  return s;
}

namespace {

template <std::size_t N>
std::size_t draw(std::mt19937_64& rng, const std::array<double, N>& weights) {
  std::discrete_distribution<std::size_t> d(weights.begin(), weights.end());
  return d(rng);
}

}  // namespace

SyntheticData generate_accidents(const SyntheticOptions& opt) {
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto schema = synthetic_schema();

  // Hourly weights; both groups peak in the commute windows, the disruptive
  // group more sharply.
  constexpr std::array<double, 24> kRoutineHours = {1, 1, 1, 1, 1, 2, 4, 6, 6, 5, 4, 4,
                                                     4, 4, 5, 5, 6, 6, 4, 3, 2, 2, 1, 1};
  constexpr std::array<double, 24> kDisruptiveHours = {1,  1,  1, 1, 1, 2,  8,  12, 11, 4, 3, 3,
                                                        3,  4, 12, 13, 14, 13, 4, 2,  2, 1, 1, 1};
  constexpr std::array<const char*, 6> kStates = {"CA", "TX", "FL", "NY", "PA", "OH"};
  constexpr std::array<double, 6> kStateWeights = {30, 20, 18, 12, 10, 10};

  SyntheticData out;
  out.records.reserve(opt.rows);
  out.planted_group.reserve(opt.rows);
  for (std::size_t i = 0; i < opt.rows; ++i) {
    const bool disruptive = unit(rng) < opt.disruptive_share;
    ingest::AccidentRecord r;
    char id[32];
    std::snprintf(id, sizeof(id), "A-%06zu", i + 1);
    r.id = id;

    const std::array<double, 4> sev_w = disruptive ? std::array<double, 4>{12, 33, 33, 22}
                                                   : std::array<double, 4>{62, 28, 8, 2};
    r.severity = schema.severity_states[draw(rng, sev_w)];

    const int hour = static_cast<int>(draw(rng, disruptive ? kDisruptiveHours : kRoutineHours));
    const int month = 1 + static_cast<int>(unit(rng) * 12.0) % 12;
    const int day = 1 + static_cast<int>(unit(rng) * 28.0) % 28;
    r.start_time = {2022, month, day, hour, static_cast<int>(unit(rng) * 60.0) % 60};

    const double log_dur = disruptive ? 4.5 + 0.45 * normal(rng) : 3.3 + 0.45 * normal(rng);
    r.duration_min = std::round(std::exp(log_dur) * 10.0) / 10.0;

    r.junction = unit(rng) < (disruptive ? 0.85 : 0.08);
    r.crossing = unit(rng) < (disruptive ? 0.80 : 0.10);
    r.traffic_signal = unit(rng) < (disruptive ? 0.12 : 0.75);
    r.severe_weather = unit(rng) < (disruptive ? 0.45 : 0.04);
    const bool raining = unit(rng) < (disruptive ? 0.80 : 0.10);
    r.precipitation_mm =
        raining ? std::round(std::gamma_distribution<double>(2.0, disruptive ? 3.0 : 0.6)(rng) * 100.0) / 100.0
                : 0.0;

    auto rounded = [](double v, double per) { return std::round(v * per) / per; };
    r.numeric["Temperature_F"] = rounded(disruptive ? 38.0 + 11.0 * normal(rng) : 68.0 + 11.0 * normal(rng), 10.0);
    r.numeric["Humidity_pct"] =
        std::clamp(rounded(disruptive ? 86.0 + 8.0 * normal(rng) : 52.0 + 12.0 * normal(rng), 1.0), 5.0, 100.0);
    r.numeric["Visibility_mi"] =
        std::clamp(rounded(disruptive ? 2.5 + 1.5 * normal(rng) : 9.2 + 0.9 * normal(rng), 10.0), 0.0, 10.0);
    r.numeric["Wind_Speed_mph"] = std::max(0.0, rounded(disruptive ? 16.0 + 5.0 * normal(rng) : 6.0 + 3.0 * normal(rng), 10.0));
    r.numeric["Pressure_in"] = rounded(disruptive ? 29.55 + 0.15 * normal(rng) : 30.05 + 0.15 * normal(rng), 100.0);
    r.numeric["Distance_mi"] =
        std::max(0.0, rounded(std::exp((disruptive ? 0.8 : -1.4) + 0.5 * normal(rng)), 100.0));

    const char* weather;
    if (r.severe_weather) {
      weather = r.start_time.month <= 2 || r.start_time.month == 12 ? "Snow" : "Thunderstorm";
    } else if (r.precipitation_mm > 0.0) {
      weather = "Rain";
    } else if (r.numeric["Visibility_mi"] < 3.0) {
      weather = "Fog";
    } else {
      weather = unit(rng) < 0.6 ? "Clear" : "Cloudy";
    }
    r.categorical["Weather_Condition"] = weather;
    r.categorical["Day_Night"] = (hour >= 7 && hour < 19) ? "Day" : "Night";
    r.categorical["State"] = kStates[draw(rng, kStateWeights)];

    out.records.push_back(std::move(r));
    out.planted_group.push_back(disruptive ? 1 : 0);
  }
  return out;
}

}  // namespace congestion::synth
