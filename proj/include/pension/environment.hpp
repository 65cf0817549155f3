#pragma once

// Per-tick environment dynamics and the reward engine.

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pension/errors.hpp"
#include "pension/population.hpp"
#include "pension/random.hpp"
#include "pension/socialgraph.hpp"

namespace pension {

inline constexpr std::array<double, 5> kActionBins{0.0, 0.25, 0.5, 0.75, 1.0};
inline constexpr int kBinCount = static_cast<int>(kActionBins.size());
inline constexpr int kActionCount = kBinCount * kBinCount;

/// Joint discrete action: share of earnings consumed, and share of the
/// remainder placed in the liquid asset.
struct ActionChoice {
  int consumption_bin = 0;
  int liquidity_bin = 0;

  static ActionChoice from_id(int id) {
    if (id < 0 || id >= kActionCount) throw OutOfRangeError("action id " + std::to_string(id) + " out of range");
    return {id / kBinCount, id % kBinCount};
  }

  int id() const { return consumption_bin * kBinCount + liquidity_bin; }
  double consumption_fraction() const { return kActionBins.at(consumption_bin); }
  double liquidity_fraction() const { return kActionBins.at(liquidity_bin); }

  /// e.g. "('C25', 'L75')".
  std::string label() const {
    auto pct = [](double f) { return std::to_string(static_cast<int>(std::lround(f * 100))); };
    return "('C" + pct(consumption_fraction()) + "', 'L" + pct(liquidity_fraction()) + "')";
  }

  friend bool operator==(const ActionChoice&, const ActionChoice&) = default;
};

/// Constant monthly market parameters.
struct MarketState {
  double market_interest_rate = 0.0;
  double cpi = 0.0;
  double non_liquid_return = 0.0125;
  double liquid_return = 0.0025;
  double minimum_consumption = 1073.0;
  double minimum_wage = 1160.0;

  void validate() const {
    if (!(non_liquid_return > -1.0) || !(liquid_return > -1.0) || !(market_interest_rate > -1.0))
      throw ConfigError("asset returns must be > -1");
    if (minimum_consumption < 0.0) throw ConfigError("minimum consumption must be >= 0");
  }

  std::array<double, 6> as_vector() const {
    return {market_interest_rate, cpi, non_liquid_return, liquid_return, minimum_consumption, minimum_wage};
  }
};

struct EnvConfig {
  int retirement_age = 65;  // years
  double retirement_salary_multiplier = 0.8;
  double consumption_crisis_penalty = 100000.0;
  double invalid_action_penalty_modifier = 1000.0;
  double discount = 0.99;
  int episode_ticks = 600;
  bool unemployment = true;
  bool mortality = true;

  void validate() const {
    if (!(retirement_salary_multiplier > 0.0 && retirement_salary_multiplier <= 1.0))
      throw ConfigError("retirement_salary_multiplier must lie in (0,1]");
    if (consumption_crisis_penalty < 0.0 || invalid_action_penalty_modifier < 0.0)
      throw ConfigError("penalty modifiers must be >= 0");
    if (!(discount > 0.0 && discount <= 1.0)) throw ConfigError("discount must lie in (0,1]");
    if (episode_ticks < 0) throw ConfigError("episode_ticks must be >= 0");
  }
};

// ---------------------------------------------------------------------------
// Reward engine

/// Consumption below this is evaluated at the floor so utilities stay finite.
inline constexpr double kCrraFloor = 1e-9;

inline double crra(double l, double eta) {
  l = std::max(l, kCrraFloor);
  if (eta == 1.0) return std::log(l);
  return (std::pow(l, 1.0 - eta) - 1.0) / (1.0 - eta);
}

/// The consumption utility factor q is the CRRA curvature.
inline double consumption_utility(double consumption, double q) { return crra(consumption, q); }

inline double savings_utility(double total_savings) { return total_savings; }
inline double savings_utility(double liquid, double non_liquid) { return liquid + non_liquid; }

/// Amplifies negative utility changes by e^kappa.
inline double shock_modifier(double delta, double kappa) { return delta >= 0.0 ? 1.0 : std::exp(kappa); }

inline double crisis_penalty(double consumption, double liquid, double psi) {
  return consumption > liquid ? psi : 0.0;
}

inline double invalid_action_penalty(double consumption, double earnings, double minimum, double zeta) {
  return (minimum > consumption && earnings > consumption) ? (minimum - consumption) * zeta : 0.0;
}

// ---------------------------------------------------------------------------

struct Observation {
  std::vector<double> agent;
  std::vector<double> market;
  double network = 0.0;

  std::vector<double> flatten() const {
    std::vector<double> v(agent);
    v.insert(v.end(), market.begin(), market.end());
    v.push_back(network);
    return v;
  }
};

inline constexpr int kAgentScalarFeatures = 7;
inline constexpr int kMarketFeatures = 6;

inline int observation_size(int occupation_count) {
  return occupation_count + kAgentScalarFeatures + kMarketFeatures + 1;
}

/// Agent part: one-hot occupation, then age (years), earnings, q, kappa,
/// individuality, non-liquid and liquid assets. The network signal is
/// discounted by (1 - individuality).
inline Observation assemble_observation(const AgentState& a, const MarketState& market, double graph_signal,
                                        int occupation_count) {
  Observation o;
  o.agent.assign(occupation_count, 0.0);
  o.agent[a.occupation] = 1.0;
  o.agent.insert(o.agent.end(), {a.age_months / static_cast<double>(kMonthsPerYear), a.monthly_income,
                                 a.behaviour.consumption_utility, a.behaviour.shock_sensitivity,
                                 a.behaviour.individuality, a.non_liquid, a.liquid});
  const auto m = market.as_vector();
  o.market.assign(m.begin(), m.end());
  o.network = (1.0 - a.behaviour.individuality) * graph_signal;
  return o;
}

/// Everything that happened to one agent during one tick.
struct StepOutcome {
  int agent_id = 0;
  int tick = 0;
  int occupation = 0;
  int age_months = 0;

  bool acted = false;
  ActionChoice action;

  double liquid_start = 0.0;
  double non_liquid_start = 0.0;
  double asset_returns = 0.0;
  double earnings = 0.0;
  double pension_paid = 0.0;

  double consumption = 0.0;
  double consumption_from_income = 0.0;
  double consumption_from_assets = 0.0;
  double saved_liquid = 0.0;
  double saved_non_liquid = 0.0;

  double crisis_penalty = 0.0;
  double invalid_penalty = 0.0;
  double utility = 0.0;
  double utility_delta = 0.0;
  double reward = 0.0;

  bool crisis = false;
  bool invalid = false;
  bool died = false;
  bool retired_now = false;
  bool laid_off = false;
  bool rehired = false;
  int rehire_bucket = -1;

  bool employed = false;
  bool retired = false;
  double income = 0.0;  // earnings, or the pension entitlement once retired
  double liquid = 0.0;
  double non_liquid = 0.0;
  bool first_reward = false;
};

/// One cohort: agents, their social graph and the market. Each tick is split
/// into `begin_tick` (market, aging, death, retirement, layoffs, hiring,
/// salary) and `finish_tick` (apply actions, compute rewards) so that agents
/// observe the post-process state before acting.
class Environment {
 public:
  Environment(std::shared_ptr<const CalibrationTables> tables, EnvConfig config, MarketState market,
              std::vector<AgentState> agents, SocialGraph graph, Rng rng)
      : tables_(std::move(tables)),
        config_(config),
        market_(market),
        agents_(std::move(agents)),
        graph_(std::move(graph)),
        rng_(rng) {
    config_.validate();
    market_.validate();
    if (graph_.size() != agents_.size())
      throw DimensionError("graph has " + std::to_string(graph_.size()) + " nodes for " +
                           std::to_string(agents_.size()) + " agents");
    if (config_.retirement_age > tables_->max_age_years() + 1)
      throw ConfigError("retirement age beyond the calibrated income bands");
    signal_.assign(agents_.size(), 0.0);
    pending_.resize(agents_.size());
    refresh_signal();
  }

  /// Bootstraps a population and its graph. Communities follow income terciles.
  static Environment create(std::shared_ptr<const CalibrationTables> tables, const EnvConfig& config,
                            const MarketState& market, PopulationSpec population, const GraphSpec& graph_spec,
                            Rng population_rng, Rng dynamics_rng) {
    population.unemployment = population.unemployment && config.unemployment;
    auto agents = bootstrap_population(*tables, population, population_rng);
    std::vector<double> incomes;
    for (const auto& a : agents) incomes.push_back(a.last_salary);
    Rng graph_rng = population_rng.split(0x67726170ULL);
    SocialGraph graph = build_community_graph(income_terciles(incomes), graph_spec, graph_rng);
    return Environment(std::move(tables), config, market, std::move(agents), std::move(graph), dynamics_rng);
  }

  const std::vector<AgentState>& agents() const { return agents_; }
  const AgentState& agent(int i) const { return agents_[i]; }
  std::size_t size() const { return agents_.size(); }
  const SocialGraph& graph() const { return graph_; }
  const MarketState& market() const { return market_; }
  const EnvConfig& config() const { return config_; }
  const CalibrationTables& tables() const { return *tables_; }
  int tick() const { return tick_; }
  bool awaiting_actions() const { return awaiting_actions_; }

  /// Alive and not retired: the agent must supply an action this tick.
  bool needs_action(int i) const { return agents_[i].alive && !agents_[i].retired; }

  int living_count() const {
    int n = 0;
    for (const auto& a : agents_) n += a.alive ? 1 : 0;
    return n;
  }

  const std::vector<double>& network_signal() const { return signal_; }

  Observation observe(int i) const {
    return assemble_observation(agents_[i], market_, signal_[i], tables_->occupation_count());
  }

  int observation_dim() const { return observation_size(tables_->occupation_count()); }

  /// Runs the environment processes for the next tick.
  void begin_tick() {
    if (awaiting_actions_) throw ProtocolError("begin_tick called twice without finish_tick");
    ++tick_;
    const int retirement_months = config_.retirement_age * kMonthsPerYear;
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      AgentState& a = agents_[i];
      auto& out = pending_[i];
      out.reset();
      if (!a.alive) continue;
      out.emplace();
      out->agent_id = a.id;
      out->tick = tick_;
      out->occupation = a.occupation;
      out->liquid_start = a.liquid;
      out->non_liquid_start = a.non_liquid;

      // market
      const double liquid_gain = a.liquid * market_.liquid_return;
      const double non_liquid_gain = a.non_liquid * market_.non_liquid_return;
      a.liquid += liquid_gain;
      a.non_liquid += non_liquid_gain;
      out->asset_returns = liquid_gain + non_liquid_gain;

      // aging and death
      a.age_months += 1;
      out->age_months = a.age_months;
      if (config_.mortality && sample_death(tables_->mortality, a.age_months, rng_)) {
        a.alive = false;
        out->died = true;
        continue;
      }

      // retirement
      if (!a.retired && a.age_months >= retirement_months) {
        a.retired = true;
        a.employed = false;
        a.monthly_income = 0.0;
        a.remaining_unemployment = 0;
        a.pension = config_.retirement_salary_multiplier * a.last_salary;
        out->retired_now = true;
      }
      if (a.retired) {
        const double from_non_liquid = std::min(a.pension, a.non_liquid);
        a.non_liquid -= from_non_liquid;
        const double from_liquid = std::min(a.pension - from_non_liquid, a.liquid);
        a.liquid -= from_liquid;
        out->pension_paid = from_non_liquid + from_liquid;
        continue;
      }

      // layoffs and unemployment countdown
      if (a.employed) {
        if (config_.unemployment) {
          const UnemploymentCell& cell = tables_->unemployment_for(a.occupation, a.age_months);
          if (rng_.bernoulli(cell.layoff_probability)) {
            a.employed = false;
            a.monthly_income = 0.0;
            a.remaining_unemployment = static_cast<int>(cell.duration.sample(rng_));
            out->laid_off = true;
          }
        }
      } else {
        a.remaining_unemployment -= 1;
        // hiring
        if (a.remaining_unemployment <= 0) {
          const QuantileDistribution& dist = tables_->income_for(a.occupation, a.age_months);
          const std::size_t bucket = dist.sample_index(rng_);
          a.employed = true;
          a.remaining_unemployment = 0;
          a.monthly_income = dist.buckets()[bucket].value;
          out->rehired = true;
          out->rehire_bucket = static_cast<int>(bucket);
        }
      }

      // salary
      if (a.employed) {
        out->earnings = a.monthly_income;
        a.last_salary = a.monthly_income;
      }
    }
    refresh_signal();
    awaiting_actions_ = true;
  }

  /// Applies one optional action per agent (index = agent position) and
  /// evaluates rewards. Agents that need an action must receive one; dead or
  /// retired agents must not.
  std::vector<StepOutcome> finish_tick(std::span<const std::optional<ActionChoice>> actions) {
    if (!awaiting_actions_) throw ProtocolError("finish_tick called before begin_tick");
    if (actions.size() != agents_.size())
      throw DimensionError("expected " + std::to_string(agents_.size()) + " action slots, got " +
                           std::to_string(actions.size()));
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      const bool acting = pending_[i] && !pending_[i]->died && needs_action(static_cast<int>(i));
      if (actions[i] && !acting)
        throw ProtocolError("action supplied for agent " + std::to_string(agents_[i].id) + " which is " +
                            (agents_[i].alive ? "retired" : "dead"));
      if (!actions[i] && acting) throw ProtocolError("missing action for agent " + std::to_string(agents_[i].id));
    }

    std::vector<StepOutcome> outcomes;
    outcomes.reserve(agents_.size());
    const double m = market_.minimum_consumption;
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      if (!pending_[i]) continue;
      StepOutcome out = *pending_[i];
      AgentState& a = agents_[i];
      if (out.died) {
        finalize(out, a);
        outcomes.push_back(out);
        continue;
      }

      double decided = 0.0;
      if (a.retired) {
        out.consumption = out.pension_paid;
        out.consumption_from_assets = out.pension_paid;
      } else {
        const ActionChoice act = *actions[i];
        out.acted = true;
        out.action = act;
        const double earnings = out.earnings;
        decided = act.consumption_fraction() * earnings;
        const double saved = earnings - decided;
        out.saved_liquid = saved * act.liquidity_fraction();
        out.saved_non_liquid = saved - out.saved_liquid;
        a.liquid += out.saved_liquid;
        a.non_liquid += out.saved_non_liquid;
        out.consumption_from_income = decided;
        if (a.employed) {
          out.consumption = decided;
        } else {
          // Without earnings the minimum consumption is financed from the
          // liquid pot, truncated to what is there.
          out.crisis_penalty = crisis_penalty(m, a.liquid, config_.consumption_crisis_penalty);
          out.crisis = m > a.liquid;
          const double draw = std::min(m, a.liquid);
          a.liquid -= draw;
          out.consumption = decided + draw;
          out.consumption_from_assets = draw;
        }
        out.invalid_penalty = invalid_action_penalty(decided, earnings, m, config_.invalid_action_penalty_modifier);
        out.invalid = out.invalid_penalty > 0.0;
      }

      // utilities and reward
      a.consumption_utility_sum += consumption_utility(out.consumption, a.behaviour.consumption_utility);
      out.utility = a.consumption_utility_sum + savings_utility(a.liquid, a.non_liquid);
      if (a.rewarded_ticks == 0) {
        out.utility_delta = out.utility;
        out.reward = savings_utility(a.liquid, a.non_liquid);
        out.first_reward = true;
      } else {
        out.utility_delta = out.utility - a.previous_utility;
        out.reward = out.utility_delta * shock_modifier(out.utility_delta, a.behaviour.shock_sensitivity) -
                     out.crisis_penalty - out.invalid_penalty;
      }
      a.previous_utility = out.utility;
      a.rewarded_ticks += 1;
      a.accumulated_consumption += out.consumption;
      a.accumulated_penalty += out.crisis_penalty + out.invalid_penalty;

      if (a.liquid < 0.0 || a.non_liquid < 0.0)
        throw InvariantViolation("negative assets for agent " + std::to_string(a.id));
      finalize(out, a);
      outcomes.push_back(out);
    }
    awaiting_actions_ = false;
    return outcomes;
  }

  /// begin_tick then finish_tick with a caller-supplied action for every agent
  /// that needs one. `decide` is called after the environment processes.
  template <typename Decide>
    requires std::invocable<Decide&, int>
  std::vector<StepOutcome> step(Decide&& decide) {
    begin_tick();
    std::vector<std::optional<ActionChoice>> actions(agents_.size());
    for (std::size_t i = 0; i < agents_.size(); ++i)
      if (pending_[i] && !pending_[i]->died && needs_action(static_cast<int>(i)))
        actions[i] = decide(static_cast<int>(i));
    return finish_tick(actions);
  }

  /// Same as `step` with fixed actions per agent; entries for agents that do
  /// not act are ignored.
  std::vector<StepOutcome> step(std::span<const ActionChoice> actions) {
    if (actions.size() != agents_.size()) throw DimensionError("one action per agent expected");
    return step([&](int i) { return actions[i]; });
  }

 private:
  static void finalize(StepOutcome& out, const AgentState& a) {
    out.employed = a.employed;
    out.retired = a.retired;
    out.income = a.retired ? a.pension : a.monthly_income;
    out.liquid = a.liquid;
    out.non_liquid = a.non_liquid;
  }

  void refresh_signal() {
    std::vector<std::uint8_t> employed(agents_.size(), 1);
    for (std::size_t i = 0; i < agents_.size(); ++i)
      if (agents_[i].alive && !agents_[i].retired && !agents_[i].employed) employed[i] = 0;
    signal_ = network_observation(graph_, employed);
  }

  std::shared_ptr<const CalibrationTables> tables_;
  EnvConfig config_;
  MarketState market_;
  std::vector<AgentState> agents_;
  SocialGraph graph_;
  Rng rng_;
  int tick_ = 0;
  bool awaiting_actions_ = false;
  std::vector<double> signal_;
  std::vector<std::optional<StepOutcome>> pending_;
};

}  // namespace pension
