#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "congestion/ingest.hpp"
#include "congestion/synth.hpp"
#include "pipeline.hpp"

namespace pl = congestion::pipeline;

namespace {

struct Flags {
  std::string config;
  std::string seed;
  std::string out;
  bool resume = false;
  bool force = false;
  std::string network;
  std::string scenarios;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("-c,--config", f.config, "pipeline config (JSON)")->required();
  cmd->add_option("--seed", f.seed, "global seed; overrides the config");
  cmd->add_option("-o,--out", f.out, "output directory; overrides the config");
  cmd->add_flag("--resume", f.resume, "continue an interrupted AutoML study from its journal");
  cmd->add_flag("--force", f.force, "rerun stages even when the manifest says they are up to date");
}

pl::PipelineConfig load(const Flags& f) {
  auto cfg = pl::PipelineConfig::load(f.config);
  if (!f.seed.empty()) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(f.seed, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != f.seed.size() || f.seed[0] == '-') throw congestion::ConfigError("--seed must be a non-negative integer");
    cfg.seed = v;
  }
  if (!f.out.empty()) cfg.output_dir = std::filesystem::absolute(f.out);
  if (!f.network.empty()) cfg.bn.network = std::filesystem::absolute(f.network);
  if (!f.scenarios.empty()) cfg.bn.scenarios = std::filesystem::absolute(f.scenarios);
  for (const auto& p : {cfg.bn.network, cfg.bn.scenarios}) {
    if (p && !std::filesystem::is_regular_file(*p)) throw congestion::ConfigError("missing file " + p->string());
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Accident-to-congestion pipeline"};
  app.require_subcommand(1);
  Flags f;

  std::string stage_to_run;
  for (const auto& s : pl::kStages) {
    auto* cmd = app.add_subcommand(s, "run the " + s + " stage");
    add_common(cmd, f);
    if (s == "bn-query") {
      cmd->add_option("--network", f.network, "network JSON to query instead of the trained one");
      cmd->add_option("--scenarios", f.scenarios, "scenario evidence file");
    }
    cmd->callback([&stage_to_run, s] { stage_to_run = s; });
  }
  auto* run = app.add_subcommand("run", "run every stage in order");
  add_common(run, f);
  run->callback([&stage_to_run] { stage_to_run = "run"; });

  std::size_t rows = 500;
  double disruptive = 0.4;
  std::uint64_t synth_seed = 2022;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "write a synthetic accident CSV with planted groups");
  synth->add_option("--rows", rows, "row count")->check(CLI::PositiveNumber);
  synth->add_option("--disruptive-share", disruptive, "share of the disruptive group")->check(CLI::Range(0.0, 1.0));
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("-o,--out", synth_out, "output CSV")->required();
  synth->add_flag("--with-group", "append the planted group as a Planted_Group column");
  synth->callback([&stage_to_run] { stage_to_run = "synth"; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : pl::kExitConfig;
  }

  try {
    if (stage_to_run == "synth") {
      auto data = congestion::synth::generate_accidents({rows, disruptive, synth_seed});
      if (synth->count("--with-group") > 0) {
        for (std::size_t i = 0; i < data.records.size(); ++i)
          data.records[i].categorical["Planted_Group"] = std::to_string(data.planted_group[i]);
      }
      std::ofstream out(synth_out, std::ios::binary);
      if (!out) throw congestion::DataError("cannot write " + synth_out);
      congestion::ingest::write_records_csv(out, congestion::synth::synthetic_schema(), data.records);
      std::cerr << "synth: wrote " << data.records.size() << " rows to " << synth_out << "\n";
      return pl::kExitOk;
    }
    const auto cfg = load(f);
    pl::StageOptions opt;
    opt.resume = f.resume;
    opt.force = f.force;
    if (stage_to_run == "run") {
      pl::run_all(cfg, opt);
    } else {
      pl::run_stage(stage_to_run, cfg, opt);
    }
    return pl::kExitOk;
  } catch (const congestion::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return pl::exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return pl::kExitInternal;
  }
}
