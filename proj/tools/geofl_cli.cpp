// geofl: partition | train | compare
//
// Exit codes: 0 success, 1 configuration error, 2 runtime error.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "geofl/experiment.hpp"

namespace {

constexpr int exit_config = 1;
constexpr int exit_runtime = 2;

geofl::ExperimentConfig load(const std::string& path, const std::optional<std::uint64_t>& seed,
                             const std::optional<std::string>& out) {
  auto cfg = geofl::load_experiment_config(path);
  if (seed) cfg.seed = *seed;
  if (out) cfg.output_dir = *out;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated learning with spatially correlated data and clustering-based user selection"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> stop_after;
  std::vector<std::string> csvs;
  std::optional<std::string> summary_path;

  auto* partition = app.add_subcommand("partition", "Generate a world and write partition.json");
  partition->add_option("-c,--config", config_path, "Experiment config (JSON)")->required();
  partition->add_option("--seed", seed, "Override the config seed");
  partition->add_option("--out", out, "Override the output directory");

  auto* train = app.add_subcommand("train", "Run every policy x repeat and write metrics CSVs");
  train->add_option("-c,--config", config_path, "Experiment config (JSON)")->required();
  train->add_option("--seed", seed, "Override the config seed");
  train->add_option("--out", out, "Override the output directory");
  train->add_option("--stop-after", stop_after,
                    "Checkpoint and stop each arm after this many rounds (resume later)");

  auto* compare = app.add_subcommand("compare", "Summarize metrics CSVs per policy");
  compare->add_option("csv", csvs, "Metrics CSV files")->required();
  compare->add_option("--out", summary_path, "Also write the table to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : exit_config;
  }

  try {
    if (*partition) {
      const auto cfg = load(config_path, seed, out);
      const auto res = geofl::cmd_partition(cfg, cfg.output_dir);
      std::ifstream summary(res.summary_txt);
      std::cout << summary.rdbuf();
      std::cout << "wrote " << res.partition_json.string() << '\n';
    } else if (*train) {
      const auto cfg = load(config_path, seed, out);
      const auto arms = geofl::cmd_train(cfg, cfg.output_dir, {stop_after});
      for (const auto& a : arms) {
        std::cout << a.metrics_csv.string() << "  rounds " << a.rounds_done << '\n';
      }
    } else if (*compare) {
      std::vector<std::filesystem::path> paths(csvs.begin(), csvs.end());
      const auto cmp = geofl::cmd_compare(paths, std::cout);
      if (summary_path) {
        std::ofstream os(*summary_path, std::ios::trunc);
        geofl::write_comparison(os, cmp);
      }
    }
  } catch (const geofl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return exit_config;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_runtime;
  }
  return 0;
}
