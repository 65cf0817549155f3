#pragma once

// Outcome logs, frozen-policy simulation, and aggregation into rate tables
// and smoothed series.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "pension/config.hpp"
#include "pension/csv.hpp"
#include "pension/environment.hpp"
#include "pension/errors.hpp"
#include "pension/parallel.hpp"
#include "pension/policy.hpp"
#include "pension/population.hpp"
#include "pension/training.hpp"

namespace pension {

// ---------------------------------------------------------------------------
// Outcome log

inline constexpr const char* kOutcomeHeader =
    "env_id,tick,agent_id,occ_id,age_months,employed,retired,income,consumption,liquid,non_liquid,"
    "action_c_bin,action_l_bin,reward,crisis,invalid";

/// One agent-tick. Action bins are -1 for agents that did not act.
struct OutcomeRow {
  int env_id = 0;
  int tick = 0;
  int agent_id = 0;
  int occ_id = 0;
  int age_months = 0;
  bool employed = false;
  bool retired = false;
  double income = 0.0;
  double consumption = 0.0;
  double liquid = 0.0;
  double non_liquid = 0.0;
  int action_c_bin = -1;
  int action_l_bin = -1;
  double reward = 0.0;
  bool crisis = false;
  bool invalid = false;

  bool acted() const { return action_c_bin >= 0; }

  /// Earnings not consumed, split by the liquidity bin.
  double saved() const { return acted() && employed ? income - consumption : 0.0; }
  double saved_non_liquid() const { return acted() ? saved() * (1.0 - kActionBins.at(action_l_bin)) : 0.0; }
};

inline OutcomeRow outcome_row(int env_id, const StepOutcome& o) {
  OutcomeRow r;
  r.env_id = env_id;
  r.tick = o.tick;
  r.agent_id = o.agent_id;
  r.occ_id = o.occupation;
  r.age_months = o.age_months;
  r.employed = o.employed;
  r.retired = o.retired;
  r.income = o.retired ? o.income : o.earnings;
  r.consumption = o.consumption;
  r.liquid = o.liquid;
  r.non_liquid = o.non_liquid;
  if (o.acted) {
    r.action_c_bin = o.action.consumption_bin;
    r.action_l_bin = o.action.liquidity_bin;
  }
  r.reward = o.reward;
  r.crisis = o.crisis;
  r.invalid = o.invalid;
  return r;
}

inline std::string format_row(const OutcomeRow& r) {
  auto f = [](double v) { return csv::format_double(v); };
  std::string s;
  s.reserve(160);
  s += std::to_string(r.env_id) + ',' + std::to_string(r.tick) + ',' + std::to_string(r.agent_id) + ',' +
       std::to_string(r.occ_id) + ',' + std::to_string(r.age_months) + ',' + (r.employed ? '1' : '0') + ',' +
       (r.retired ? '1' : '0') + ',' + f(r.income) + ',' + f(r.consumption) + ',' + f(r.liquid) + ',' +
       f(r.non_liquid) + ',' + std::to_string(r.action_c_bin) + ',' + std::to_string(r.action_l_bin) + ',' +
       f(r.reward) + ',' + (r.crisis ? '1' : '0') + ',' + (r.invalid ? '1' : '0');
  return s;
}

inline std::vector<OutcomeRow> read_outcome_log(const std::string& path) {
  const csv::Table t = csv::read_file(path);
  const std::vector<std::string> cols = {"env_id",      "tick",         "agent_id",     "occ_id",  "age_months",
                                         "employed",    "retired",      "income",       "consumption",
                                         "liquid",      "non_liquid",   "action_c_bin", "action_l_bin",
                                         "reward",      "crisis",       "invalid"};
  std::vector<int> idx;
  for (const auto& c : cols) idx.push_back(t.require_column(c));
  std::vector<OutcomeRow> rows;
  rows.reserve(t.rows.size());
  for (std::size_t k = 0; k < t.rows.size(); ++k) {
    const auto& row = t.rows[k];
    const std::string ctx = path + ": row " + std::to_string(k + 1);
    auto i = [&](int c) { return static_cast<int>(csv::to_int(row[idx[c]], ctx)); };
    auto d = [&](int c) {
      const double v = csv::to_double(row[idx[c]], ctx);
      if (!std::isfinite(v)) throw SchemaError(ctx + ": non-finite value in " + cols[c]);
      return v;
    };
    auto b = [&](int c) {
      const long v = csv::to_int(row[idx[c]], ctx);
      if (v != 0 && v != 1) throw SchemaError(ctx + ": " + cols[c] + " must be 0 or 1");
      return v == 1;
    };
    OutcomeRow r;
    r.env_id = i(0);
    r.tick = i(1);
    r.agent_id = i(2);
    r.occ_id = i(3);
    r.age_months = i(4);
    r.employed = b(5);
    r.retired = b(6);
    r.income = d(7);
    r.consumption = d(8);
    r.liquid = d(9);
    r.non_liquid = d(10);
    r.action_c_bin = i(11);
    r.action_l_bin = i(12);
    r.reward = d(13);
    r.crisis = b(14);
    r.invalid = b(15);
    const bool bins_ok = (r.action_c_bin == -1 && r.action_l_bin == -1) ||
                         (r.action_c_bin >= 0 && r.action_c_bin < kBinCount && r.action_l_bin >= 0 &&
                          r.action_l_bin < kBinCount);
    if (!bins_ok) throw SchemaError(ctx + ": action bins out of range");
    if (r.occ_id < 0 || r.age_months < 0 || r.income < 0.0 || r.consumption < 0.0 || r.liquid < 0.0 ||
        r.non_liquid < 0.0)
      throw SchemaError(ctx + ": negative value");
    rows.push_back(r);
  }
  return rows;
}

/// All *.csv files of a directory in name order.
inline std::vector<std::filesystem::path> list_logs(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw InputError("log directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  return files;
}

// ---------------------------------------------------------------------------
// Simulation with a frozen policy

inline std::string outcome_file_name(int env_id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "outcomes_%03d.csv", env_id);
  return buf;
}

/// Runs `cohorts` initially identical cohorts with the greedy policy for
/// `horizon` ticks, writing one outcome log per cohort into `out_dir`.
/// Cohorts share the population draw and differ in their dynamics stream.
inline std::vector<std::filesystem::path> run_simulate(std::shared_ptr<const CalibrationTables> tables,
                                                       const RunConfig& config, const Checkpoint& ck,
                                                       const std::filesystem::path& out_dir) {
  const int input = observation_size(tables->occupation_count());
  if (ck.parameters.shape().input != input)
    throw DimensionError("checkpoint expects " + std::to_string(ck.parameters.shape().input) +
                         " observation features; the tables give " + std::to_string(input));
  if (ck.scaler.dim() != static_cast<std::size_t>(input))
    throw DimensionError("checkpoint scaler width does not match the tables");
  std::filesystem::create_directories(out_dir);
  const Rng master(config.seed);
  const Rng population_rng = master.split(0x706f70);
  const int cohorts = config.simulation.cohorts;
  std::vector<std::filesystem::path> files(cohorts);
  for (int e = 0; e < cohorts; ++e) files[e] = out_dir / outcome_file_name(e);

  parallel_for(cohorts, config.resolved_workers(), [&](int e) {
    std::ofstream out(files[e], std::ios::binary);
    if (!out) throw RuntimeFault("cannot write " + files[e].string());
    out << kOutcomeHeader << '\n';
    Environment env = Environment::create(tables, config.environment, config.market, config.population,
                                          config.graph, population_rng, master.split(0x64796e0000ULL + e));
    RecurrentState state = RecurrentState::zeros(ck.parameters.shape().lstm, static_cast<Eigen::Index>(env.size()));
    std::vector<double> y(input);
    for (int t = 0; t < config.simulation.horizon; ++t) {
      env.begin_tick();
      std::vector<int> active;
      for (int i = 0; i < static_cast<int>(env.size()); ++i)
        if (env.needs_action(i)) active.push_back(i);
      std::vector<std::optional<ActionChoice>> actions(env.size());
      if (!active.empty()) {
        Matrix x(input, static_cast<Eigen::Index>(active.size()));
        Matrix h(state.h.rows(), x.cols()), c(state.c.rows(), x.cols());
        for (std::size_t k = 0; k < active.size(); ++k) {
          const auto obs = env.observe(active[k]).flatten();
          ck.scaler.transform(obs, y);
          x.col(static_cast<Eigen::Index>(k)) = Eigen::Map<const Eigen::VectorXd>(y.data(), input);
          h.col(static_cast<Eigen::Index>(k)) = state.h.col(active[k]);
          c.col(static_cast<Eigen::Index>(k)) = state.c.col(active[k]);
        }
        StepCache cache;
        forward_step(ck.parameters, x, h, c, cache);
        for (std::size_t k = 0; k < active.size(); ++k) {
          const auto col = cache.probs.col(static_cast<Eigen::Index>(k));
          actions[active[k]] = greedy_action(std::span<const double>(col.data(), col.size()));
          state.h.col(active[k]) = cache.hidden.col(static_cast<Eigen::Index>(k));
          state.c.col(active[k]) = cache.cell.col(static_cast<Eigen::Index>(k));
        }
      }
      for (const StepOutcome& o : env.finish_tick(actions))
        if (!o.died) out << format_row(outcome_row(e, o)) << '\n';
    }
    if (!out) throw RuntimeFault("write failed for " + files[e].string());
  });
  return files;
}

// ---------------------------------------------------------------------------
// Aggregation

/// Trailing mean over the last `window` values (fewer at the start).
inline std::vector<double> moving_average(const std::vector<double>& x, int window) {
  if (window < 1) throw ConfigError("moving average window must be >= 1");
  std::vector<double> out(x.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sum += x[k];
    if (k >= static_cast<std::size_t>(window)) sum -= x[k - window];
    const std::size_t n = std::min<std::size_t>(k + 1, window);
    out[k] = sum / static_cast<double>(n);
  }
  return out;
}

/// Running mean of a ratio and the number of rows excluded from it.
struct RateAccumulator {
  double sum = 0.0;
  std::uint64_t count = 0;
  std::uint64_t excluded = 0;

  void add(double numerator, double denominator) {
    if (denominator > 0.0) {
      sum += numerator / denominator;
      ++count;
    } else {
      ++excluded;
    }
  }
  std::optional<double> mean() const {
    if (count == 0) return std::nullopt;
    return sum / static_cast<double>(count);
  }
};

/// Rates of one group of rows.
struct GroupRates {
  RateAccumulator saving;          // saved / income over working acting rows
  RateAccumulator investment;      // non-liquid part of saved / saved
  RateAccumulator share;           // non_liquid / (liquid + non_liquid)
  RateAccumulator consumption;     // consumption / income
  std::uint64_t rows = 0;

  void add(const OutcomeRow& r) {
    ++rows;
    if (r.acted()) {
      saving.add(r.saved(), r.income);
      investment.add(r.saved_non_liquid(), r.saved());
    }
    share.add(r.non_liquid, r.liquid + r.non_liquid);
    consumption.add(r.consumption, r.income);
  }
};

struct QuartileCell {
  int occ_id = 0;
  int age_decade = 0;  // 20 for ages 20-29
  int quartile = 0;    // 1..4
  std::uint64_t count = 0;
  std::optional<double> share;
};

struct LongitudinalPoint {
  int tick = 0;
  int occ_id = 0;
  double income = 0.0;
  double unemployment = 0.0;
  double liquid = 0.0;
  double non_liquid = 0.0;
  double saving_rate = 0.0;
  double investment_rate = 0.0;
};

struct AggregateTables {
  std::map<int, GroupRates> by_occupation;
  std::map<int, GroupRates> by_age;  // age in years
  std::vector<QuartileCell> quartiles;
  std::vector<LongitudinalPoint> longitudinal;  // smoothed, ordered by occupation then tick
  std::uint64_t rows = 0;
  std::uint64_t zero_income_rows = 0;
};

namespace detail {

inline double row_total(const OutcomeRow& r) { return r.liquid + r.non_liquid; }

/// Quartile of each value within its cell, by rank (ties broken by order).
inline std::vector<QuartileCell> quartile_table(const std::vector<OutcomeRow>& rows, int min_cell_count) {
  std::map<std::pair<int, int>, std::vector<const OutcomeRow*>> cells;
  for (const auto& r : rows) {
    if (!(row_total(r) > 0.0)) continue;
    cells[{r.occ_id, (r.age_months / kMonthsPerYear) / 10 * 10}].push_back(&r);
  }
  std::vector<QuartileCell> out;
  for (auto& [key, members] : cells) {
    std::stable_sort(members.begin(), members.end(),
                     [](const OutcomeRow* a, const OutcomeRow* b) { return row_total(*a) < row_total(*b); });
    const std::size_t n = members.size();
    for (int q = 0; q < 4; ++q) {
      const std::size_t lo = n * q / 4, hi = n * (q + 1) / 4;
      QuartileCell cell{key.first, key.second, q + 1, hi - lo, std::nullopt};
      if (n >= static_cast<std::size_t>(min_cell_count) && hi > lo) {
        double s = 0.0;
        for (std::size_t k = lo; k < hi; ++k) s += members[k]->non_liquid / row_total(*members[k]);
        cell.share = s / static_cast<double>(hi - lo);
      }
      out.push_back(cell);
    }
  }
  return out;
}

inline std::vector<LongitudinalPoint> longitudinal_series(const std::vector<OutcomeRow>& rows, int window) {
  struct Sums {
    double income = 0, liquid = 0, non_liquid = 0;
    std::uint64_t n = 0, working = 0, unemployed = 0;
    RateAccumulator saving, investment;
  };
  std::map<int, std::map<int, Sums>> by_occ;
  for (const auto& r : rows) {
    Sums& s = by_occ[r.occ_id][r.tick];
    s.n += 1;
    s.liquid += r.liquid;
    s.non_liquid += r.non_liquid;
    if (!r.retired) {
      s.working += 1;
      s.income += r.income;
      s.unemployed += r.employed ? 0 : 1;
    }
    if (r.acted()) {
      s.saving.add(r.saved(), r.income);
      s.investment.add(r.saved_non_liquid(), r.saved());
    }
  }
  std::vector<LongitudinalPoint> out;
  for (const auto& [occ, ticks] : by_occ) {
    std::vector<int> t;
    std::vector<double> income, unemp, liquid, non_liquid, saving, invest;
    for (const auto& [tick, s] : ticks) {
      t.push_back(tick);
      const double n = static_cast<double>(s.n);
      income.push_back(s.working ? s.income / s.working : 0.0);
      unemp.push_back(s.working ? static_cast<double>(s.unemployed) / s.working : 0.0);
      liquid.push_back(s.liquid / n);
      non_liquid.push_back(s.non_liquid / n);
      saving.push_back(s.saving.mean().value_or(0.0));
      invest.push_back(s.investment.mean().value_or(0.0));
    }
    income = moving_average(income, window);
    unemp = moving_average(unemp, window);
    liquid = moving_average(liquid, window);
    non_liquid = moving_average(non_liquid, window);
    saving = moving_average(saving, window);
    invest = moving_average(invest, window);
    for (std::size_t k = 0; k < t.size(); ++k)
      out.push_back({t[k], occ, income[k], unemp[k], liquid[k], non_liquid[k], saving[k], invest[k]});
  }
  return out;
}

}  // namespace detail

inline AggregateTables aggregate(const std::vector<OutcomeRow>& rows, const AnalyticsConfig& config = {}) {
  AggregateTables t;
  for (const auto& r : rows) {
    ++t.rows;
    if (!(r.income > 0.0)) ++t.zero_income_rows;
    t.by_occupation[r.occ_id].add(r);
    t.by_age[r.age_months / kMonthsPerYear].add(r);
  }
  t.quartiles = detail::quartile_table(rows, config.min_cell_count);
  t.longitudinal = detail::longitudinal_series(rows, config.longitudinal_window);
  return t;
}

/// Mean saving rate on a grid of occupation x total-asset bins, smoothed
/// along the asset axis. Bins are log10-spaced quarter decades from 1.
struct SurfaceGrid {
  std::vector<double> bin_lower;
  std::map<int, std::vector<std::optional<double>>> saving_rate;  // by occupation
};

inline SurfaceGrid saving_surface(const std::vector<OutcomeRow>& rows, int window, int bins = 32) {
  SurfaceGrid g;
  for (int b = 0; b < bins; ++b) g.bin_lower.push_back(b == 0 ? 0.0 : std::pow(10.0, b / 4.0));
  std::map<int, std::vector<RateAccumulator>> acc;
  for (const auto& r : rows) {
    if (!r.acted()) continue;
    const double total = r.liquid + r.non_liquid;
    int b = total < 1.0 ? 0 : std::min(bins - 1, 1 + static_cast<int>(std::floor(4.0 * std::log10(total))));
    b = std::max(b, 0);
    auto& v = acc[r.occ_id];
    if (v.empty()) v.resize(bins);
    v[b].add(r.saved(), r.income);
  }
  for (const auto& [occ, v] : acc) {
    std::vector<double> raw;
    std::vector<std::size_t> idx;
    for (std::size_t b = 0; b < v.size(); ++b)
      if (auto m = v[b].mean()) {
        raw.push_back(*m);
        idx.push_back(b);
      }
    const auto smooth = moving_average(raw, window);
    std::vector<std::optional<double>> row(bins);
    for (std::size_t k = 0; k < idx.size(); ++k) row[idx[k]] = smooth[k];
    g.saving_rate[occ] = std::move(row);
  }
  return g;
}

namespace detail {

inline std::string opt(const std::optional<double>& v) { return v ? csv::format_double(*v) : std::string(); }

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw RuntimeFault("cannot write " + p.string());
  return out;
}

}  // namespace detail

/// Writes the aggregate tables as CSV files plus summary.json into out_dir.
/// Occupation titles, when given, are added as a column.
inline void write_aggregates(const AggregateTables& t, const SurfaceGrid& surface, const std::filesystem::path& out_dir,
                             const std::vector<OccupationCode>& occupations = {}) {
  std::filesystem::create_directories(out_dir);
  auto title = [&](int occ) {
    return occ >= 0 && occ < static_cast<int>(occupations.size()) ? csv::quote(occupations[occ].title)
                                                                  : std::string();
  };
  {
    auto out = detail::open_out(out_dir / "occupation_rates.csv");
    out << "occ_id,occ_title,saving_rate,non_liquid_investment_rate,non_liquid_share,rows,zero_income_rows\n";
    for (const auto& [occ, g] : t.by_occupation)
      out << occ << ',' << title(occ) << ',' << detail::opt(g.saving.mean()) << ','
          << detail::opt(g.investment.mean()) << ',' << detail::opt(g.share.mean()) << ',' << g.rows << ','
          << g.consumption.excluded << '\n';
  }
  {
    auto out = detail::open_out(out_dir / "age_rates.csv");
    out << "age_years,non_liquid_investment_rate,non_liquid_share,consumption_rate,rows,zero_income_rows\n";
    for (const auto& [age, g] : t.by_age)
      out << age << ',' << detail::opt(g.investment.mean()) << ',' << detail::opt(g.share.mean()) << ','
          << detail::opt(g.consumption.mean()) << ',' << g.rows << ',' << g.consumption.excluded << '\n';
  }
  {
    auto out = detail::open_out(out_dir / "quartile_share.csv");
    out << "occ_id,occ_title,age_lo,age_hi,quartile,count,non_liquid_share\n";
    for (const auto& c : t.quartiles)
      out << c.occ_id << ',' << title(c.occ_id) << ',' << c.age_decade << ',' << c.age_decade + 9 << ','
          << c.quartile << ',' << c.count << ',' << detail::opt(c.share) << '\n';
  }
  {
    auto out = detail::open_out(out_dir / "longitudinal.csv");
    out << "timestep,occ_id,income,unemployment_rate,liquid,non_liquid,saving_rate,non_liquid_investment_rate\n";
    for (const auto& p : t.longitudinal)
      out << p.tick << ',' << p.occ_id << ',' << csv::format_double(p.income) << ','
          << csv::format_double(p.unemployment) << ',' << csv::format_double(p.liquid) << ','
          << csv::format_double(p.non_liquid) << ',' << csv::format_double(p.saving_rate) << ','
          << csv::format_double(p.investment_rate) << '\n';
  }
  {
    auto out = detail::open_out(out_dir / "saving_surface.csv");
    out << "occ_id,asset_lower,saving_rate\n";
    for (const auto& [occ, row] : surface.saving_rate)
      for (std::size_t b = 0; b < row.size(); ++b)
        out << occ << ',' << csv::format_double(surface.bin_lower[b]) << ',' << detail::opt(row[b]) << '\n';
  }
  {
    nlohmann::json s = {{"rows", t.rows}, {"zero_income_rows", t.zero_income_rows}};
    auto out = detail::open_out(out_dir / "summary.json");
    out << s.dump(2) << '\n';
  }
}

/// Reads every log in `logs_dir` and writes the aggregate tables.
inline AggregateTables run_analyze(const std::filesystem::path& logs_dir, const std::filesystem::path& out_dir,
                                   const AnalyticsConfig& config = {},
                                   const std::vector<OccupationCode>& occupations = {}) {
  std::vector<OutcomeRow> rows;
  for (const auto& f : list_logs(logs_dir)) {
    auto part = read_outcome_log(f.string());
    rows.insert(rows.end(), part.begin(), part.end());
  }
  AggregateTables t = aggregate(rows, config);
  write_aggregates(t, saving_surface(rows, config.surface_window), out_dir, occupations);
  return t;
}

// ---------------------------------------------------------------------------

inline void write_resolved_config(const RunConfig& config, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  auto out = detail::open_out(out_dir / "config.resolved.json");
  out << run_config_to_json(config).dump(2) << '\n';
}

/// Trains per the configuration, writing the resolved config, metrics.csv
/// and checkpoint.json into the output directory.
inline TrainingResult run_train(const RunConfig& config,
                                const std::function<void(const UpdateMetrics&)>& on_update = {}) {
  config.validate_paths();
  auto tables = std::make_shared<const CalibrationTables>(load_tables(config.tables));
  config.population.validate(*tables);
  write_resolved_config(config, config.output_dir);
  return train(tables, config.training_setup(), std::filesystem::path(config.output_dir), on_update);
}

}  // namespace pension
