#pragma once

#include <cstdint>
#include <vector>

#include "congestion/ingest.hpp"

namespace congestion::synth {

// Accident-like records with a planted two-group structure: a "disruptive"
// group (junctions, crossings, severe outcomes, long clearance, bad weather,
// peak hours) and a "routine" group. Used for fixtures and benchmarks.
struct SyntheticOptions {
  std::size_t rows = 5000;
  double disruptive_share = 0.4;
  std::uint64_t seed = 2022;
};

struct SyntheticData {
  std::vector<ingest::AccidentRecord> records;
  std::vector<int> planted_group;  // 1 = disruptive, 0 = routine
};

ingest::Schema synthetic_schema();
SyntheticData generate_accidents(const SyntheticOptions& options);

}  // namespace congestion::synth
