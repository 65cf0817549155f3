#pragma once

// Calibration tables and the synthetic agent population.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "pension/csv.hpp"
#include "pension/errors.hpp"
#include "pension/random.hpp"

namespace pension {

inline constexpr int kMonthsPerYear = 12;
inline constexpr double kWeeksPerMonth = 52.0 / 12.0;

struct OccupationCode {
  int id = 0;
  std::string title;
};

/// Inclusive range of ages in whole years.
struct AgeBand {
  int lo = 0;
  int hi = 0;

  bool contains(int years) const { return years >= lo && years <= hi; }
  friend bool operator==(const AgeBand&, const AgeBand&) = default;
};

struct QuantileBucket {
  double upper = 1.0;  // cumulative probability at the bucket's upper edge
  double value = 0.0;
};

/// Discrete distribution given as cumulative quantile buckets.
class QuantileDistribution {
 public:
  QuantileDistribution() = default;
  explicit QuantileDistribution(std::vector<QuantileBucket> buckets) : buckets_(std::move(buckets)) {}

  const std::vector<QuantileBucket>& buckets() const { return buckets_; }
  std::size_t size() const { return buckets_.size(); }

  double width(std::size_t k) const { return buckets_[k].upper - (k == 0 ? 0.0 : buckets_[k - 1].upper); }

  std::size_t index_for(double u) const {
    for (std::size_t k = 0; k + 1 < buckets_.size(); ++k)
      if (u < buckets_[k].upper) return k;
    return buckets_.size() - 1;
  }

  std::size_t sample_index(Rng& rng) const { return index_for(rng.uniform()); }
  double sample(Rng& rng) const { return buckets_[sample_index(rng)].value; }

  double mean() const {
    double m = 0.0;
    for (std::size_t k = 0; k < buckets_.size(); ++k) m += width(k) * buckets_[k].value;
    return m;
  }

  /// Throws ValidationError unless bounds strictly increase to 1 and values
  /// are non-decreasing.
  void validate(const std::string& what) const {
    if (buckets_.empty()) throw ValidationError(what + ": no quantile rows");
    double prev_q = 0.0;
    double prev_v = -INFINITY;
    for (const auto& b : buckets_) {
      if (!(b.upper > prev_q) || b.upper > 1.0 + 1e-12)
        throw ValidationError(what + ": quantile bounds must strictly increase within (0,1], got " +
                              csv::format_double(b.upper) + " after " + csv::format_double(prev_q));
      if (b.value < prev_v)
        throw ValidationError(what + ": values must be non-decreasing across quantiles");
      prev_q = b.upper;
      prev_v = b.value;
    }
    if (std::abs(prev_q - 1.0) > 1e-9) throw ValidationError(what + ": last quantile bound must be 1.0");
  }

 private:
  std::vector<QuantileBucket> buckets_;
};

struct UnemploymentCell {
  double layoff_probability = 0.0;  // per month
  QuantileDistribution duration;    // months
};

/// Immutable calibration data. Safe to share between workers.
struct CalibrationTables {
  std::vector<OccupationCode> occupations;
  std::vector<AgeBand> bands;                    // sorted, contiguous
  std::vector<QuantileDistribution> income;      // [occ * bands + band], monthly
  std::vector<UnemploymentCell> unemployment;    // [occ * bands + band]
  std::vector<double> mortality;                 // annual death probability by age in years

  int occupation_count() const { return static_cast<int>(occupations.size()); }
  int band_count() const { return static_cast<int>(bands.size()); }
  int min_age_years() const { return bands.front().lo; }
  int max_age_years() const { return bands.back().hi; }

  /// Band index for an age in months; OutOfRangeError when uncovered.
  int band_index(int age_months) const {
    const int years = age_months / kMonthsPerYear;
    for (std::size_t b = 0; b < bands.size(); ++b)
      if (bands[b].contains(years)) return static_cast<int>(b);
    throw OutOfRangeError("age " + std::to_string(years) + " years is outside the calibrated age bands " +
                          std::to_string(min_age_years()) + "-" + std::to_string(max_age_years()));
  }

  std::size_t cell(int occ, int band) const { return static_cast<std::size_t>(occ) * bands.size() + band; }

  const QuantileDistribution& income_for(int occ, int age_months) const {
    check_occupation(occ);
    return income[cell(occ, band_index(age_months))];
  }

  const UnemploymentCell& unemployment_for(int occ, int age_months) const {
    check_occupation(occ);
    return unemployment[cell(occ, band_index(age_months))];
  }

  void check_occupation(int occ) const {
    if (occ < 0 || occ >= occupation_count())
      throw OutOfRangeError("occupation id " + std::to_string(occ) + " not in table");
  }
};

/// File locations of the four calibration CSVs.
struct TablePaths {
  std::string occupations;
  std::string income;
  std::string unemployment;
  std::string mortality;

  static TablePaths in_directory(const std::filesystem::path& dir) {
    return {(dir / "occupations.csv").string(), (dir / "income.csv").string(),
            (dir / "unemployment.csv").string(), (dir / "mortality.csv").string()};
  }
};

namespace detail {

inline std::string key_name(const CalibrationTables& t, int occ, const AgeBand& band) {
  return "occupation " + std::to_string(occ) + " (" + t.occupations[occ].title + "), ages " +
         std::to_string(band.lo) + "-" + std::to_string(band.hi);
}

inline std::vector<OccupationCode> read_occupations(const std::string& path) {
  const csv::Table t = csv::read_file(path);
  const int c_id = t.require_column("occ_id");
  const int c_title = t.require_column("occ_title");
  if (t.rows.empty()) throw SchemaError(path + ": zero rows");
  std::vector<OccupationCode> occs(t.rows.size());
  std::vector<bool> seen(t.rows.size(), false);
  std::set<std::string> titles;
  for (const auto& row : t.rows) {
    const long id = csv::to_int(row[c_id], path);
    if (id < 0 || id >= static_cast<long>(occs.size()) || seen[id])
      throw ValidationError(path + ": occupation ids must be dense 0..K-1 without repeats (bad id " +
                            std::to_string(id) + ")");
    if (!titles.insert(row[c_title]).second)
      throw ValidationError(path + ": duplicate occupation title '" + row[c_title] + "'");
    seen[id] = true;
    occs[id] = {static_cast<int>(id), row[c_title]};
  }
  return occs;
}

inline std::vector<AgeBand> collect_bands(const csv::Table& t, const std::string& path) {
  const int c_lo = t.require_column("age_lo");
  const int c_hi = t.require_column("age_hi");
  std::set<std::pair<int, int>> seen;
  for (const auto& row : t.rows)
    seen.emplace(static_cast<int>(csv::to_int(row[c_lo], path)), static_cast<int>(csv::to_int(row[c_hi], path)));
  std::vector<AgeBand> bands;
  for (auto [lo, hi] : seen) bands.push_back({lo, hi});
  for (std::size_t b = 0; b < bands.size(); ++b) {
    if (bands[b].hi < bands[b].lo) throw ValidationError(path + ": age band with age_hi < age_lo");
    if (b > 0 && bands[b].lo != bands[b - 1].hi + 1)
      throw ValidationError(path + ": age bands must be contiguous and non-overlapping");
  }
  return bands;
}

}  // namespace detail

/// Reads and validates the four calibration CSVs. Income may be given as
/// `monthly_income`, or as `weekly_income` which is converted by 52/12.
inline CalibrationTables load_tables(const TablePaths& paths) {
  CalibrationTables tables;
  tables.occupations = detail::read_occupations(paths.occupations);
  const int occ_count = tables.occupation_count();

  // income.csv
  {
    const csv::Table t = csv::read_file(paths.income);
    if (t.rows.empty()) throw SchemaError(paths.income + ": zero rows");
    const int c_occ = t.require_column("occ_id");
    const int c_lo = t.require_column("age_lo");
    const int c_q = t.require_column("quantile");
    int c_income = t.column("monthly_income");
    double factor = 1.0;
    if (c_income < 0) {
      c_income = t.column("weekly_income");
      factor = kWeeksPerMonth;
    }
    if (c_income < 0) throw SchemaError(paths.income + ": missing column 'monthly_income'");
    tables.bands = detail::collect_bands(t, paths.income);
    if (tables.bands.front().lo > 16 || tables.bands.back().hi < 65)
      throw ValidationError(paths.income + ": age bands must cover ages 16-65");

    std::map<std::pair<int, int>, std::vector<QuantileBucket>> cells;
    for (const auto& row : t.rows) {
      const long occ = csv::to_int(row[c_occ], paths.income);
      if (occ < 0 || occ >= occ_count)
        throw SchemaError(paths.income + ": unknown occupation id " + std::to_string(occ));
      const int lo = static_cast<int>(csv::to_int(row[c_lo], paths.income));
      const auto band = std::find_if(tables.bands.begin(), tables.bands.end(),
                                     [lo](const AgeBand& b) { return b.lo == lo; }) -
                        tables.bands.begin();
      const double income = csv::to_double(row[c_income], paths.income) * factor;
      if (!(income > 0.0) || !std::isfinite(income))
        throw ValidationError(paths.income + ": incomes must be positive and finite");
      cells[{static_cast<int>(occ), static_cast<int>(band)}].push_back(
          {csv::to_double(row[c_q], paths.income), income});
    }
    tables.income.resize(static_cast<std::size_t>(occ_count) * tables.bands.size());
    for (int occ = 0; occ < occ_count; ++occ)
      for (int b = 0; b < tables.band_count(); ++b) {
        auto it = cells.find({occ, b});
        const std::string name = detail::key_name(tables, occ, tables.bands[b]);
        if (it == cells.end()) throw SchemaError(paths.income + ": missing key " + name);
        QuantileDistribution dist(std::move(it->second));
        dist.validate(paths.income + ": " + name);
        tables.income[tables.cell(occ, b)] = std::move(dist);
      }
  }

  // unemployment.csv
  {
    const csv::Table t = csv::read_file(paths.unemployment);
    if (t.rows.empty()) throw SchemaError(paths.unemployment + ": zero rows");
    const int c_occ = t.require_column("occ_id");
    const int c_lo = t.require_column("age_lo");
    const int c_hi = t.require_column("age_hi");
    const int c_p = t.require_column("monthly_layoff_prob");
    const int c_q = t.require_column("duration_quantile");
    const int c_m = t.require_column("duration_months");
    std::map<std::pair<int, int>, std::pair<double, std::vector<QuantileBucket>>> cells;
    for (const auto& row : t.rows) {
      const long occ = csv::to_int(row[c_occ], paths.unemployment);
      if (occ < 0 || occ >= occ_count)
        throw SchemaError(paths.unemployment + ": unknown occupation id " + std::to_string(occ));
      const AgeBand band{static_cast<int>(csv::to_int(row[c_lo], paths.unemployment)),
                         static_cast<int>(csv::to_int(row[c_hi], paths.unemployment))};
      const auto it = std::find(tables.bands.begin(), tables.bands.end(), band);
      if (it == tables.bands.end())
        throw SchemaError(paths.unemployment + ": age band " + std::to_string(band.lo) + "-" +
                          std::to_string(band.hi) + " does not match income.csv bands");
      const int b = static_cast<int>(it - tables.bands.begin());
      const double p = csv::to_double(row[c_p], paths.unemployment);
      if (!(p >= 0.0 && p <= 1.0)) throw ValidationError(paths.unemployment + ": layoff probability outside [0,1]");
      const double months = csv::to_double(row[c_m], paths.unemployment);
      if (!(months >= 1.0) || months != std::floor(months))
        throw ValidationError(paths.unemployment + ": durations must be whole months >= 1");
      auto& cell = cells[{static_cast<int>(occ), b}];
      if (!cell.second.empty() && cell.first != p)
        throw ValidationError(paths.unemployment + ": inconsistent layoff probability within " +
                              detail::key_name(tables, static_cast<int>(occ), band));
      cell.first = p;
      cell.second.push_back({csv::to_double(row[c_q], paths.unemployment), months});
    }
    tables.unemployment.resize(tables.income.size());
    for (int occ = 0; occ < occ_count; ++occ)
      for (int b = 0; b < tables.band_count(); ++b) {
        auto it = cells.find({occ, b});
        const std::string name = detail::key_name(tables, occ, tables.bands[b]);
        if (it == cells.end()) throw SchemaError(paths.unemployment + ": missing key " + name);
        QuantileDistribution dist(std::move(it->second.second));
        dist.validate(paths.unemployment + ": " + name);
        tables.unemployment[tables.cell(occ, b)] = {it->second.first, std::move(dist)};
      }
  }

  // mortality.csv
  {
    const csv::Table t = csv::read_file(paths.mortality);
    if (t.rows.empty()) throw SchemaError(paths.mortality + ": zero rows");
    const int c_age = t.require_column("age");
    const int c_p = t.require_column("annual_death_prob");
    std::map<int, double> rates;
    for (const auto& row : t.rows) {
      const long age = csv::to_int(row[c_age], paths.mortality);
      const double p = csv::to_double(row[c_p], paths.mortality);
      if (age < 0) throw ValidationError(paths.mortality + ": negative age");
      if (!(p >= 0.0 && p <= 1.0)) throw ValidationError(paths.mortality + ": probability outside [0,1]");
      if (!rates.emplace(static_cast<int>(age), p).second)
        throw ValidationError(paths.mortality + ": duplicate age " + std::to_string(age));
    }
    const int max_age = rates.rbegin()->first;
    for (int a = 0; a <= max_age; ++a) {
      auto it = rates.find(a);
      if (it == rates.end()) throw SchemaError(paths.mortality + ": missing key age " + std::to_string(a));
      tables.mortality.push_back(it->second);
    }
    if (tables.mortality.back() != 1.0)
      throw ValidationError(paths.mortality + ": death probability at the terminal age must be 1");
  }
  return tables;
}

inline CalibrationTables load_tables(const std::filesystem::path& directory) {
  return load_tables(TablePaths::in_directory(directory));
}

/// Draws a monthly income for a new job.
inline double sample_income(const CalibrationTables& tables, int occupation, int age_months, Rng& rng) {
  return tables.income_for(occupation, age_months).sample(rng);
}

/// Monthly hazard from an annual probability, 1-(1-p)^(1/12).
inline double monthly_death_probability(double annual) {
  if (annual >= 1.0) return 1.0;
  return 1.0 - std::pow(1.0 - annual, 1.0 / kMonthsPerYear);
}

/// One month of mortality. Ages past the end of the table die with certainty.
inline bool sample_death(const std::vector<double>& annual_by_age, int age_months, Rng& rng) {
  const std::size_t years = static_cast<std::size_t>(std::max(age_months, 0) / kMonthsPerYear);
  const double annual = years < annual_by_age.size() ? annual_by_age[years] : 1.0;
  return rng.uniform() < monthly_death_probability(annual);
}

struct BehaviouralTriple {
  double consumption_utility = 1.0;  // q > 0
  double shock_sensitivity = 0.0;    // kappa
  double individuality = 0.5;        // in [0,1]
};

/// Agent state. Ages are in months. `monthly_income` is current earnings and
/// is zero while unemployed or retired.
struct AgentState {
  int id = 0;
  int occupation = 0;
  int age_months = 0;
  bool employed = true;
  int remaining_unemployment = 0;
  double monthly_income = 0.0;
  double liquid = 0.0;
  double non_liquid = 0.0;
  bool retired = false;
  bool alive = true;
  double last_salary = 0.0;
  double pension = 0.0;
  BehaviouralTriple behaviour;
  double accumulated_consumption = 0.0;
  double accumulated_penalty = 0.0;

  // Reward bookkeeping: running sum of consumption utility, previous total
  // utility and the number of rewarded ticks so far.
  double consumption_utility_sum = 0.0;
  double previous_utility = 0.0;
  int rewarded_ticks = 0;

  double total_assets() const { return liquid + non_liquid; }
};

struct TruncatedNormal {
  double mean = 0.0;
  double sd = 1.0;
  double lo = -1.0;
  double hi = 1.0;

  double sample(Rng& rng) const {
    if (lo == hi || sd == 0.0) return std::clamp(mean, lo, hi);
    for (int attempt = 0; attempt < 10000; ++attempt) {
      const double x = mean + sd * rng.normal();
      if (x >= lo && x <= hi) return x;
    }
    return rng.uniform(lo, hi);
  }
};

struct PopulationSpec {
  int count = 1000;
  int min_age_years = 16;
  int max_age_years = 64;
  std::vector<double> occupation_weights;  // empty = uniform
  TruncatedNormal consumption_utility{1.0, 0.25, 0.5, 1.5};
  TruncatedNormal shock_sensitivity{0.0, 0.5, -1.0, 1.0};
  TruncatedNormal individuality{0.5, 0.25, 0.0, 1.0};
  double initial_liquid = 0.0;
  double initial_non_liquid = 0.0;
  bool unemployment = true;  // false: everyone starts employed

  void validate(const CalibrationTables& tables) const {
    if (count < 1) throw ConfigError("population count must be >= 1");
    if (min_age_years > max_age_years) throw ConfigError("population min_age > max_age");
    if (min_age_years < tables.min_age_years() || max_age_years > tables.max_age_years())
      throw ConfigError("population ages must lie within the calibrated bands");
    if (!occupation_weights.empty()) {
      if (occupation_weights.size() != tables.occupations.size())
        throw ConfigError("occupation_weights must have one entry per occupation");
      double sum = 0.0;
      for (double w : occupation_weights) {
        if (!(w >= 0.0)) throw ConfigError("occupation weights must be non-negative");
        sum += w;
      }
      if (!(sum > 0.0)) throw ConfigError("occupation weights sum to zero");
    }
    for (const auto* d : {&consumption_utility, &shock_sensitivity, &individuality})
      if (d->lo > d->hi || d->sd < 0.0) throw ConfigError("truncated normal needs lo <= hi and sd >= 0");
    if (!(consumption_utility.lo > 0.0))
      throw ConfigError("consumption utility factor bounds must keep q > 0 (lo = " +
                        csv::format_double(consumption_utility.lo) + ")");
    if (individuality.lo < 0.0 || individuality.hi > 1.0)
      throw ConfigError("individuality bounds must lie in [0,1]");
    if (initial_liquid < 0.0 || initial_non_liquid < 0.0) throw ConfigError("initial assets must be >= 0");
  }
};

/// Long-run unemployed fraction p*d/(1+p*d) for layoff hazard p and mean
/// spell length d.
inline double stationary_unemployment(const UnemploymentCell& cell) {
  const double pd = cell.layoff_probability * cell.duration.mean();
  return pd / (1.0 + pd);
}

inline std::vector<AgentState> bootstrap_population(const CalibrationTables& tables, const PopulationSpec& spec,
                                                    Rng& rng) {
  spec.validate(tables);
  const int occ_count = tables.occupation_count();
  std::vector<double> cumulative(occ_count);
  double total = 0.0;
  for (int k = 0; k < occ_count; ++k) {
    total += spec.occupation_weights.empty() ? 1.0 : spec.occupation_weights[k];
    cumulative[k] = total;
  }

  std::vector<AgentState> agents(spec.count);
  for (int i = 0; i < spec.count; ++i) {
    AgentState& a = agents[i];
    a.id = i;
    const double u = rng.uniform() * total;
    a.occupation = static_cast<int>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
    a.occupation = std::min(a.occupation, occ_count - 1);
    const int years = spec.min_age_years + static_cast<int>(rng.below(spec.max_age_years - spec.min_age_years + 1));
    a.age_months = years * kMonthsPerYear + static_cast<int>(rng.below(kMonthsPerYear));
    a.last_salary = sample_income(tables, a.occupation, a.age_months, rng);
    const UnemploymentCell& cell = tables.unemployment_for(a.occupation, a.age_months);
    const bool unemployed = spec.unemployment && rng.bernoulli(stationary_unemployment(cell));
    if (unemployed) {
      a.employed = false;
      a.remaining_unemployment = static_cast<int>(cell.duration.sample(rng));
      a.monthly_income = 0.0;
    } else {
      a.employed = true;
      a.monthly_income = a.last_salary;
    }
    a.behaviour.consumption_utility = spec.consumption_utility.sample(rng);
    a.behaviour.shock_sensitivity = spec.shock_sensitivity.sample(rng);
    a.behaviour.individuality = spec.individuality.sample(rng);
    a.liquid = spec.initial_liquid;
    a.non_liquid = spec.initial_non_liquid;
  }
  return agents;
}

}  // namespace pension
