// dtpower: command line driver for the power-model pipeline.
//
//   dtpower <command> [--config FILE] [--out DIR] [--seed N] [--period N] [--grid FILE]
//
// Exit codes: 0 success, 2 bad configuration or arguments, 3 stale or
// missing upstream artifacts, 1 anything else.

#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "dtpower/pipeline.hpp"

namespace {

using Command = std::function<void(const dtpower::PipelineConfig&, dtpower::ArtifactStore&)>;

const std::map<std::string, std::pair<Command, const char*>>& commands() {
  static const std::map<std::string, std::pair<Command, const char*>> table{
      {"gen", {dtpower::cmd_gen, "simulate the design and write the activity/power dataset"}},
      {"select", {dtpower::cmd_select, "rank signals by activity and run recursive elimination"}},
      {"tune", {dtpower::cmd_tune, "k-fold grid search over tree hyper-parameters"}},
      {"train", {dtpower::cmd_train, "fit the decision tree and the linear baseline"}},
      {"report", {dtpower::cmd_report, "test-split MAE% table and learning curves"}},
      {"quantize", {dtpower::cmd_quantize, "encode the tree into a memory image"}},
      {"monitor", {dtpower::cmd_monitor, "run the cycle-level power monitor on a fresh trace"}},
      {"shed", {dtpower::cmd_shed, "build the phase LUT and shed phases from monitor output"}},
      {"ensemble", {dtpower::cmd_ensemble, "compare an additive ensemble with a monolithic model"}},
  };
  return table;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decision-tree dynamic power modelling pipeline"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> period;
  std::string grid_path;
  app.add_option("--config", config_path, "pipeline configuration (JSON)");
  app.add_option("--out", out_dir, "output directory (overrides the config)");
  app.add_option("--seed", seed, "master seed (overrides the config)");
  app.add_option("--period", period, "estimation period in cycles (overrides the config)");
  app.add_option("--grid", grid_path, "hyper-parameter grid (JSON)");
  app.fallthrough();

  for (const auto& [name, entry] : commands()) app.add_subcommand(name, entry.second);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    dtpower::PipelineConfig cfg;
    if (!config_path.empty()) cfg = dtpower::load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (period) cfg.period_cycles = *period;
    if (!grid_path.empty()) cfg.grid = dtpower::load_grid(grid_path);
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    cfg.validate();

    dtpower::ArtifactStore store(cfg.output_dir);
    const auto* sub = app.get_subcommands().front();
    commands().at(sub->get_name()).first(cfg, store);
    std::cout << sub->get_name() << ": wrote " << store.dir().string() << "\n";
    return 0;
  } catch (const dtpower::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const dtpower::StaleArtifact& e) {
    std::cerr << "stale artifact: " << e.what() << "\n";
    return 3;
  } catch (const dtpower::InvalidArgument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
