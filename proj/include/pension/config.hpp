#pragma once

// Run configuration: one JSON document covering tables, population, graph,
// environment, network, trainer, simulation and analytics settings.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "pension/environment.hpp"
#include "pension/errors.hpp"
#include "pension/parallel.hpp"
#include "pension/policy.hpp"
#include "pension/population.hpp"
#include "pension/socialgraph.hpp"
#include "pension/training.hpp"

namespace pension {

struct SimulationConfig {
  int cohorts = 22;
  int horizon = 1000;  // ticks
};

struct AnalyticsConfig {
  int min_cell_count = 30;
  int longitudinal_window = 30;
  int surface_window = 9;
};

struct RunConfig {
  std::string mode = "train";
  TablePaths tables;
  PopulationSpec population;
  GraphSpec graph;
  EnvConfig environment;
  MarketState market;
  NetworkShape network;
  TrainerConfig trainer;
  SimulationConfig simulation;
  AnalyticsConfig analytics;
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  int workers = 0;  // 0: PENSION_WORKERS or hardware concurrency

  int resolved_workers() const { return workers > 0 ? workers : default_worker_count(); }

  TrainingSetup training_setup() const {
    TrainingSetup s;
    s.env = environment;
    s.market = market;
    s.population = population;
    s.graph = graph;
    s.network = network;
    s.trainer = trainer;
    s.seed = seed;
    s.workers = resolved_workers();
    return s;
  }

  /// Every table path must exist before any work starts.
  void validate_paths() const {
    for (const auto& [name, path] : {std::pair{"occupations", tables.occupations}, {"income", tables.income},
                                     {"unemployment", tables.unemployment}, {"mortality", tables.mortality}})
      if (!std::filesystem::is_regular_file(path))
        throw InputError(std::string("table '") + name + "' not found: " + path);
  }

  void validate() const {
    if (mode != "train" && mode != "simulate" && mode != "analyze")
      throw ConfigError("mode must be train, simulate or analyze");
    graph.validate();
    environment.validate();
    market.validate();
    trainer.validate();
    if (network.lstm < 1) throw ConfigError("network.lstm must be >= 1");
    for (int w : network.encoder)
      if (w < 1) throw ConfigError("network.encoder widths must be >= 1");
    if (simulation.cohorts < 1) throw ConfigError("simulation.cohorts must be >= 1");
    if (simulation.horizon < 0) throw ConfigError("simulation.horizon must be >= 0");
    if (analytics.min_cell_count < 1 || analytics.longitudinal_window < 1 || analytics.surface_window < 1)
      throw ConfigError("analytics counts and windows must be >= 1");
  }
};

namespace detail {

/// Reads members of one JSON object; unknown keys are an error.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(where_ + "." + key + " has the wrong type");
    }
  }

  const nlohmann::json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (!seen_.count(key)) throw ConfigError("unknown key " + where_ + "." + key);
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

inline void read_normal(const nlohmann::json* j, const std::string& where, TruncatedNormal& d) {
  if (!j) return;
  ObjectReader r(*j, where);
  r.get("mean", d.mean);
  r.get("sd", d.sd);
  r.get("lo", d.lo);
  r.get("hi", d.hi);
  r.finish();
}

inline nlohmann::json write_normal(const TruncatedNormal& d) {
  return {{"mean", d.mean}, {"sd", d.sd}, {"lo", d.lo}, {"hi", d.hi}};
}

inline std::string resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal().string();
}

}  // namespace detail

/// Parses a run configuration. Relative paths are resolved against
/// `base_dir` (the config file's directory). `seed` is mandatory.
inline RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  RunConfig c;
  detail::ObjectReader root(j, "config");
  root.get("mode", c.mode);
  if (!j.contains("seed")) throw ConfigError("config.seed is required");
  root.get("seed", c.seed);
  root.get("output_dir", c.output_dir);
  root.get("workers", c.workers);
  c.output_dir = detail::resolve(base_dir, c.output_dir);

  std::string data_dir;
  TablePaths paths;
  if (const auto* t = root.child("tables")) {
    detail::ObjectReader r(*t, "tables");
    r.get("directory", data_dir);
    r.get("occupations", paths.occupations);
    r.get("income", paths.income);
    r.get("unemployment", paths.unemployment);
    r.get("mortality", paths.mortality);
    r.finish();
  }
  const TablePaths defaults = TablePaths::in_directory(detail::resolve(base_dir, data_dir.empty() ? "." : data_dir));
  c.tables.occupations = paths.occupations.empty() ? defaults.occupations : detail::resolve(base_dir, paths.occupations);
  c.tables.income = paths.income.empty() ? defaults.income : detail::resolve(base_dir, paths.income);
  c.tables.unemployment =
      paths.unemployment.empty() ? defaults.unemployment : detail::resolve(base_dir, paths.unemployment);
  c.tables.mortality = paths.mortality.empty() ? defaults.mortality : detail::resolve(base_dir, paths.mortality);

  if (const auto* p = root.child("population")) {
    detail::ObjectReader r(*p, "population");
    r.get("count", c.population.count);
    r.get("min_age_years", c.population.min_age_years);
    r.get("max_age_years", c.population.max_age_years);
    r.get("occupation_weights", c.population.occupation_weights);
    detail::read_normal(r.child("consumption_utility"), "population.consumption_utility",
                        c.population.consumption_utility);
    detail::read_normal(r.child("shock_sensitivity"), "population.shock_sensitivity", c.population.shock_sensitivity);
    detail::read_normal(r.child("individuality"), "population.individuality", c.population.individuality);
    r.get("initial_liquid", c.population.initial_liquid);
    r.get("initial_non_liquid", c.population.initial_non_liquid);
    r.finish();
  }
  if (const auto* g = root.child("graph")) {
    detail::ObjectReader r(*g, "graph");
    r.get("p_intra", c.graph.p_intra);
    r.get("p_inter", c.graph.p_inter);
    r.get("w_intra", c.graph.w_intra);
    r.get("w_inter", c.graph.w_inter);
    r.finish();
  }
  if (const auto* e = root.child("environment")) {
    detail::ObjectReader r(*e, "environment");
    r.get("retirement_age", c.environment.retirement_age);
    r.get("retirement_salary_multiplier", c.environment.retirement_salary_multiplier);
    r.get("consumption_crisis_penalty", c.environment.consumption_crisis_penalty);
    r.get("invalid_action_penalty_modifier", c.environment.invalid_action_penalty_modifier);
    r.get("discount", c.environment.discount);
    r.get("episode_ticks", c.environment.episode_ticks);
    r.get("unemployment", c.environment.unemployment);
    r.get("mortality", c.environment.mortality);
    r.finish();
  }
  if (const auto* m = root.child("market")) {
    detail::ObjectReader r(*m, "market");
    r.get("market_interest_rate", c.market.market_interest_rate);
    r.get("cpi", c.market.cpi);
    r.get("non_liquid_return", c.market.non_liquid_return);
    r.get("liquid_return", c.market.liquid_return);
    r.get("minimum_consumption", c.market.minimum_consumption);
    r.get("minimum_wage", c.market.minimum_wage);
    r.finish();
  }
  if (const auto* n = root.child("network")) {
    detail::ObjectReader r(*n, "network");
    r.get("encoder", c.network.encoder);
    r.get("lstm", c.network.lstm);
    r.finish();
  }
  if (const auto* t = root.child("trainer")) {
    detail::ObjectReader r(*t, "trainer");
    r.get("gamma", c.trainer.gamma);
    r.get("optimizer", c.trainer.optimizer.kind);
    r.get("learning_rate", c.trainer.optimizer.learning_rate);
    r.get("value_weight", c.trainer.value_weight);
    r.get("entropy_weight", c.trainer.entropy_weight);
    r.get("max_grad_norm", c.trainer.max_grad_norm);
    r.get("updates", c.trainer.updates);
    r.get("environments", c.trainer.environments);
    r.get("segment_length", c.trainer.segment_length);
    r.get("batch_size", c.trainer.batch_size);
    r.get("reward_scale", c.trainer.reward_scale);
    r.get("normalize_advantages", c.trainer.normalize_advantages);
    r.get("epsilon_start", c.trainer.epsilon_start);
    r.get("epsilon_end", c.trainer.epsilon_end);
    r.get("epsilon_decay_fraction", c.trainer.epsilon_decay_fraction);
    r.get("checkpoint_interval", c.trainer.checkpoint_interval);
    r.finish();
  }
  if (const auto* s = root.child("simulation")) {
    detail::ObjectReader r(*s, "simulation");
    r.get("cohorts", c.simulation.cohorts);
    r.get("horizon", c.simulation.horizon);
    r.finish();
  }
  if (const auto* a = root.child("analytics")) {
    detail::ObjectReader r(*a, "analytics");
    r.get("min_cell_count", c.analytics.min_cell_count);
    r.get("longitudinal_window", c.analytics.longitudinal_window);
    r.get("surface_window", c.analytics.surface_window);
    r.finish();
  }
  root.finish();
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
  return parse_run_config(j, path.has_parent_path() ? path.parent_path() : std::filesystem::path("."));
}

/// The fully resolved configuration with every default written out.
inline nlohmann::json run_config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["mode"] = c.mode;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["workers"] = c.workers;
  j["tables"] = {{"occupations", c.tables.occupations},
                 {"income", c.tables.income},
                 {"unemployment", c.tables.unemployment},
                 {"mortality", c.tables.mortality}};
  j["population"] = {{"count", c.population.count},
                     {"min_age_years", c.population.min_age_years},
                     {"max_age_years", c.population.max_age_years},
                     {"occupation_weights", c.population.occupation_weights},
                     {"consumption_utility", detail::write_normal(c.population.consumption_utility)},
                     {"shock_sensitivity", detail::write_normal(c.population.shock_sensitivity)},
                     {"individuality", detail::write_normal(c.population.individuality)},
                     {"initial_liquid", c.population.initial_liquid},
                     {"initial_non_liquid", c.population.initial_non_liquid}};
  j["graph"] = {{"p_intra", c.graph.p_intra},
                {"p_inter", c.graph.p_inter},
                {"w_intra", c.graph.w_intra},
                {"w_inter", c.graph.w_inter}};
  j["environment"] = {{"retirement_age", c.environment.retirement_age},
                      {"retirement_salary_multiplier", c.environment.retirement_salary_multiplier},
                      {"consumption_crisis_penalty", c.environment.consumption_crisis_penalty},
                      {"invalid_action_penalty_modifier", c.environment.invalid_action_penalty_modifier},
                      {"discount", c.environment.discount},
                      {"episode_ticks", c.environment.episode_ticks},
                      {"unemployment", c.environment.unemployment},
                      {"mortality", c.environment.mortality}};
  j["market"] = {{"market_interest_rate", c.market.market_interest_rate},
                 {"cpi", c.market.cpi},
                 {"non_liquid_return", c.market.non_liquid_return},
                 {"liquid_return", c.market.liquid_return},
                 {"minimum_consumption", c.market.minimum_consumption},
                 {"minimum_wage", c.market.minimum_wage}};
  j["network"] = {{"encoder", c.network.encoder}, {"lstm", c.network.lstm}};
  j["trainer"] = {{"gamma", c.trainer.gamma},
                  {"optimizer", c.trainer.optimizer.kind},
                  {"learning_rate", c.trainer.optimizer.learning_rate},
                  {"value_weight", c.trainer.value_weight},
                  {"entropy_weight", c.trainer.entropy_weight},
                  {"max_grad_norm", c.trainer.max_grad_norm},
                  {"updates", c.trainer.updates},
                  {"environments", c.trainer.environments},
                  {"segment_length", c.trainer.segment_length},
                  {"batch_size", c.trainer.batch_size},
                  {"reward_scale", c.trainer.reward_scale},
                  {"normalize_advantages", c.trainer.normalize_advantages},
                  {"epsilon_start", c.trainer.epsilon_start},
                  {"epsilon_end", c.trainer.epsilon_end},
                  {"epsilon_decay_fraction", c.trainer.epsilon_decay_fraction},
                  {"checkpoint_interval", c.trainer.checkpoint_interval}};
  j["simulation"] = {{"cohorts", c.simulation.cohorts}, {"horizon", c.simulation.horizon}};
  j["analytics"] = {{"min_cell_count", c.analytics.min_cell_count},
                    {"longitudinal_window", c.analytics.longitudinal_window},
                    {"surface_window", c.analytics.surface_window}};
  return j;
}

}  // namespace pension
