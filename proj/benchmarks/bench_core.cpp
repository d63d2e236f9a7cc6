#include <benchmark/benchmark.h>

#include <random>

#include "congestion/autoencoder.hpp"
#include "congestion/bayesnet.hpp"
#include "congestion/clustering.hpp"
#include "congestion/simulator.hpp"

using namespace congestion;

namespace {

Matrix blobs(Eigen::Index rows, Eigen::Index cols, std::vector<int>& labels) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  Matrix x(rows, cols);
  labels.resize(static_cast<std::size_t>(rows));
  for (Eigen::Index i = 0; i < rows; ++i) {
    const int k = static_cast<int>(i % 2);
    labels[static_cast<std::size_t>(i)] = k;
    for (Eigen::Index j = 0; j < cols; ++j) x(i, j) = g(rng) + 4.0 * k;
  }
  return x;
}

void BM_Silhouette(benchmark::State& state) {
  std::vector<int> labels;
  const Matrix x = blobs(state.range(0), 20, labels);
  for (auto _ : state) benchmark::DoNotOptimize(clustering::silhouette(x, labels));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Silhouette)->RangeMultiplier(2)->Range(250, 2000)->Complexity(benchmark::oNSquared);

void BM_GoldenQuery(benchmark::State& state) {
  const auto net = bn::load_network(std::string(CONGESTION_DATA_DIR) + "/golden/golden_network.json");
  const bn::Evidence ev = {{"Severity", "Fatal"}, {"Crossing", "Yes"}, {"Peak_Hours", "OFF Peak"}};
  for (auto _ : state) benchmark::DoNotOptimize(bn::query(net, "Congestion", ev));
}
BENCHMARK(BM_GoldenQuery);

void BM_RandomNetQuery(benchmark::State& state) {
  const auto net = bn::random_network(9, static_cast<int>(state.range(0)), 4, 3);
  const std::vector<int> ev(net.size(), -1);
  for (auto _ : state) benchmark::DoNotOptimize(bn::query_codes(net, 0, ev));
}
BENCHMARK(BM_RandomNetQuery)->Arg(8)->Arg(16)->Arg(32);

void BM_TrainStep(benchmark::State& state) {
  const int input = 40;
  auto params = dec::AutoencoderParams::init(input, {190}, 19, 1);
  dec::AdamOptimizer adam;
  std::vector<int> labels;
  const Matrix batch = blobs(state.range(0), input, labels);
  long i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(dec::train_step(params, adam, batch, 2e-4, i++));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TrainStep)->Arg(64)->Arg(256);

void BM_SimulateScenario(benchmark::State& state) {
  const auto sc = sim::load_scenario(std::string(CONGESTION_DATA_DIR) + "/scenarios/sim_scenario_4.json");
  for (auto _ : state) {
    sim::Simulation s(sc, true);
    s.run();
    benchmark::DoNotOptimize(s.series().back().cum_waiting_s);
  }
}
BENCHMARK(BM_SimulateScenario)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
