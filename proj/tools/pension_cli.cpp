#include <filesystem>
#include <iostream>
#include <memory>
#include <string>

#include "CLI11.hpp"
#include "pension/analytics.hpp"
#include "pension/config.hpp"
#include "pension/errors.hpp"
#include "pension/population.hpp"

namespace fs = std::filesystem;
using namespace pension;

namespace {

int cmd_train(const std::string& config_path) {
  RunConfig config = load_run_config(config_path);
  config.mode = "train";
  std::cerr << "training: " << config.trainer.updates << " updates, " << config.trainer.environments
            << " cohorts x " << config.population.count << " agents, output " << config.output_dir << '\n';
  const int every = std::max(1, config.trainer.updates / 20);
  run_train(config, [&](const UpdateMetrics& m) {
    if (m.update % every == 0 || m.update == config.trainer.updates)
      std::cerr << "update " << m.update << " mean_reward " << m.mean_reward << " entropy " << m.entropy
                << " crisis_rate " << m.crisis_rate << '\n';
  });
  return 0;
}

int cmd_simulate(const std::string& config_path, const std::string& checkpoint_path, const std::string& out) {
  RunConfig config = load_run_config(config_path);
  config.mode = "simulate";
  config.validate_paths();
  if (!fs::is_regular_file(checkpoint_path)) throw InputError("checkpoint not found: " + checkpoint_path);
  auto tables = std::make_shared<const CalibrationTables>(load_tables(config.tables));
  config.population.validate(*tables);
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  const fs::path out_dir = out.empty() ? fs::path(config.output_dir) / "logs" : fs::path(out);
  write_resolved_config(config, out_dir);
  const auto files = run_simulate(tables, config, ck, out_dir);
  std::cerr << "wrote " << files.size() << " outcome logs to " << out_dir.string() << '\n';
  return 0;
}

int cmd_analyze(const std::string& logs, const std::string& out, const std::string& occupations,
                const AnalyticsConfig& analytics) {
  std::vector<OccupationCode> occs;
  if (!occupations.empty()) occs = detail::read_occupations(occupations);
  const AggregateTables t = run_analyze(logs, out, analytics, occs);
  std::cerr << "aggregated " << t.rows << " rows (" << t.zero_income_rows << " with zero income) into " << out
            << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Life-cycle pension savings simulation with recurrent actor-critic agents"};
  app.require_subcommand(1);

  std::string config_path, checkpoint_path, logs_dir, out_dir, occupations;
  AnalyticsConfig analytics;

  auto* train = app.add_subcommand("train", "Train a policy");
  train->add_option("--config", config_path, "Run configuration (JSON)")->required();

  auto* simulate = app.add_subcommand("simulate", "Run cohorts with a frozen greedy policy");
  simulate->add_option("--config", config_path, "Run configuration (JSON)")->required();
  simulate->add_option("--checkpoint", checkpoint_path, "Checkpoint written by train")->required();
  simulate->add_option("--out", out_dir, "Directory for outcome logs (default <output_dir>/logs)");

  auto* analyze = app.add_subcommand("analyze", "Aggregate outcome logs into tables and series");
  analyze->add_option("--logs", logs_dir, "Directory of outcome logs")->required();
  analyze->add_option("--out", out_dir, "Output directory")->required();
  analyze->add_option("--occupations", occupations, "occupations.csv for title columns");
  analyze->add_option("--min-cell-count", analytics.min_cell_count, "Minimum rows per quartile cell");
  analyze->add_option("--window", analytics.longitudinal_window, "Longitudinal moving-average window");
  analyze->add_option("--surface-window", analytics.surface_window, "Surface moving-average window");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train) return cmd_train(config_path);
    if (*simulate) return cmd_simulate(config_path, checkpoint_path, out_dir);
    if (*analyze) return cmd_analyze(logs_dir, out_dir, occupations, analytics);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const NumericFault& e) {
    std::cerr << "numeric fault at " << e.location() << ": " << e.what() << '\n';
    return 2;
  } catch (const RuntimeFault& e) {
    std::cerr << "fault: " << e.what() << '\n';
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "fault: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
