#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>
#include <string>

#include "pension/population.hpp"
#include "support.hpp"

using namespace pension;
using namespace testing_support;

TEST(Tables, SampleTablesLoad) {
  const auto t = sample_tables();
  EXPECT_EQ(t->occupation_count(), 22);
  EXPECT_EQ(t->band_count(), 5);
  EXPECT_EQ(t->min_age_years(), 16);
  EXPECT_EQ(t->max_age_years(), 65);
  EXPECT_EQ(t->mortality.size(), 120u);
  EXPECT_EQ(t->mortality.back(), 1.0);
}

TEST(Tables, WeeklyIncomeConvertedToMonthly) {
  const auto t = sample_tables();
  // first row of the sample income table: occupation 0, ages 16-25, quantile 0.1
  const csv::Table raw = csv::read_file(std::string(PENSION_SAMPLE_DATA) + "/income.csv");
  const double weekly = csv::to_double(raw.rows[0][raw.require_column("weekly_income")], "income");
  EXPECT_DOUBLE_EQ(t->income_for(0, 16 * 12).buckets()[0].value, weekly * 52.0 / 12.0);
}

TEST(Tables, MissingKeyNamesTheKey) {
  TempDir dir;
  copy_sample_tables(dir.path());
  const std::string text = read_text(dir / "income.csv");
  std::string kept;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (line.rfind("3,36,45,", 0) != 0) kept += line + "\n";
  write_file(dir / "income.csv", kept);
  try {
    load_tables(dir.path());
    FAIL() << "expected a schema error";
  } catch (const SchemaError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("occupation 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("36-45"), std::string::npos) << msg;
  }
}

TEST(Tables, NonMonotoneQuantilesRejected) {
  TempDir dir;
  copy_sample_tables(dir.path());
  write_file(dir / "occupations.csv", "occ_id,occ_title\n0,Only\n");
  std::string income = "occ_id,age_lo,age_hi,quantile,monthly_income\n";
  std::string unemp = "occ_id,age_lo,age_hi,monthly_layoff_prob,duration_quantile,duration_months\n";
  for (int lo = 16; lo <= 56; lo += 10) {
    const std::string band = "0," + std::to_string(lo) + "," + std::to_string(lo + 9) + ",";
    if (lo == 36) {
      income += band + "0.5,1000\n" + band + "0.25,1500\n" + band + "1.0,2000\n";
    } else {
      income += band + "1.0,2000\n";
    }
    unemp += band + "0.01,1.0,3\n";
  }
  write_file(dir / "income.csv", income);
  write_file(dir / "unemployment.csv", unemp);
  EXPECT_THROW(load_tables(dir.path()), ValidationError);
}

TEST(Tables, EmptyFileIsSchemaError) {
  TempDir dir;
  copy_sample_tables(dir.path());
  write_file(dir / "mortality.csv", "");
  EXPECT_THROW(load_tables(dir.path()), SchemaError);
}

TEST(Tables, FractionalDurationRejected) {
  TempDir dir;
  copy_sample_tables(dir.path());
  std::string text = read_text(dir / "unemployment.csv");
  const auto pos = text.find(",0.3,1\n");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 7, ",0.3,1.5\n");
  write_file(dir / "unemployment.csv", text);
  EXPECT_THROW(load_tables(dir.path()), ValidationError);
}

TEST(Tables, UncoveredAgeIsOutOfRange) {
  const auto t = sample_tables();
  Rng rng(1);
  EXPECT_THROW(sample_income(*t, 0, 15 * 12, rng), OutOfRangeError);
  EXPECT_THROW(sample_income(*t, 0, 66 * 12, rng), OutOfRangeError);
  EXPECT_NO_THROW(sample_income(*t, 0, 65 * 12 + 11, rng));
}

TEST(Income, SingleQuantileIsDegenerate) {
  TableRecipe r;
  r.income_quantiles = {{1.0, 1.0}};
  const auto t = make_tables(r);
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(sample_income(t, 0, 30 * 12, rng), 2000.0);
}

TEST(Income, BucketFrequenciesMatchWidths) {
  const QuantileDistribution d({{0.25, 1000}, {0.5, 1500}, {0.75, 2200}, {1.0, 4000}});
  Rng rng(5);
  std::map<double, int> counts;
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[d.sample(rng)];
  ASSERT_EQ(counts.size(), 4u);
  for (auto [v, c] : counts) EXPECT_NEAR(static_cast<double>(c) / n, 0.25, 0.01) << v;
}

TEST(Income, SampleIsAlwaysATableValue) {
  const auto t = sample_tables();
  Rng rng(6);
  for (int i = 0; i < 20000; ++i) {
    const int occ = static_cast<int>(rng.below(22));
    const int age = 16 * 12 + static_cast<int>(rng.below(50 * 12));
    const double v = sample_income(*t, occ, age, rng);
    bool found = false;
    for (const auto& b : t->income_for(occ, age).buckets()) found = found || b.value == v;
    ASSERT_TRUE(found);
  }
}

TEST(Income, SameSeedSameSequence) {
  const auto t = sample_tables();
  Rng a(8), b(8);
  for (int i = 0; i < 500; ++i) ASSERT_EQ(sample_income(*t, i % 22, 30 * 12, a), sample_income(*t, i % 22, 30 * 12, b));
}

TEST(Mortality, CertainAndImpossible) {
  Rng rng(1);
  const std::vector<double> never(120, 0.0), always(120, 1.0);
  for (int i = 0; i < 1000; ++i) {
    ASSERT_FALSE(sample_death(never, 40 * 12, rng));
    ASSERT_TRUE(sample_death(always, 40 * 12, rng));
  }
}

TEST(Mortality, BeyondTableIsCertain) {
  Rng rng(2);
  const std::vector<double> table(10, 0.0);
  EXPECT_TRUE(sample_death(table, 10 * 12, rng));
}

TEST(Mortality, MonthlyFrequencyMatchesCompoundConversion) {
  const std::vector<double> table(120, 0.12);
  const double p = 1.0 - std::pow(0.88, 1.0 / 12.0);
  EXPECT_DOUBLE_EQ(monthly_death_probability(0.12), p);
  Rng rng(3);
  const int n = 1000000;
  int deaths = 0;
  for (int i = 0; i < n; ++i) deaths += sample_death(table, 50 * 12, rng) ? 1 : 0;
  EXPECT_NEAR(static_cast<double>(deaths) / n, p, 3 * binomial_sd(p, n));
}

namespace {

void expect_valid_agent(const AgentState& a, const CalibrationTables& t, const PopulationSpec& s) {
  ASSERT_TRUE(a.alive);
  ASSERT_FALSE(a.retired);
  ASSERT_GE(a.occupation, 0);
  ASSERT_LT(a.occupation, t.occupation_count());
  ASSERT_GE(a.age_months, s.min_age_years * 12);
  ASSERT_LT(a.age_months, (s.max_age_years + 1) * 12);
  ASSERT_GT(a.last_salary, 0.0);
  if (a.employed) {
    ASSERT_EQ(a.monthly_income, a.last_salary);
    ASSERT_EQ(a.remaining_unemployment, 0);
  } else {
    ASSERT_EQ(a.monthly_income, 0.0);
    ASSERT_GE(a.remaining_unemployment, 1);
  }
  ASSERT_GT(a.behaviour.consumption_utility, 0.0);
  ASSERT_GE(a.behaviour.consumption_utility, s.consumption_utility.lo);
  ASSERT_LE(a.behaviour.consumption_utility, s.consumption_utility.hi);
  ASSERT_GE(a.behaviour.shock_sensitivity, s.shock_sensitivity.lo);
  ASSERT_LE(a.behaviour.shock_sensitivity, s.shock_sensitivity.hi);
  ASSERT_GE(a.behaviour.individuality, s.individuality.lo);
  ASSERT_LE(a.behaviour.individuality, s.individuality.hi);
  ASSERT_EQ(a.liquid, s.initial_liquid);
  ASSERT_EQ(a.non_liquid, s.initial_non_liquid);
}

}  // namespace

TEST(Bootstrap, OccupationFrequenciesMatchWeights) {
  const auto t = sample_tables();
  PopulationSpec spec;
  spec.count = 1000;
  spec.occupation_weights.assign(22, 1.0);
  for (int k = 0; k < 22; ++k) spec.occupation_weights[k] = 1.0 + (k % 4);
  double total = 0;
  for (double w : spec.occupation_weights) total += w;
  Rng rng(12);
  const auto agents = bootstrap_population(*t, spec, rng);
  std::vector<int> counts(22, 0);
  for (const auto& a : agents) ++counts[a.occupation];
  for (int k = 0; k < 22; ++k) {
    const double p = spec.occupation_weights[k] / total;
    EXPECT_NEAR(counts[k] / 1000.0, p, 3 * binomial_sd(p, 1000)) << k;
  }
}

TEST(Bootstrap, SingleAgent) {
  const auto t = sample_tables();
  PopulationSpec spec;
  spec.count = 1;
  Rng rng(1);
  const auto agents = bootstrap_population(*t, spec, rng);
  ASSERT_EQ(agents.size(), 1u);
  expect_valid_agent(agents[0], *t, spec);
}

TEST(Bootstrap, DegenerateIndividuality) {
  const auto t = sample_tables();
  PopulationSpec spec;
  spec.count = 200;
  spec.individuality = {0.5, 0.25, 0.3, 0.3};
  Rng rng(2);
  for (const auto& a : bootstrap_population(*t, spec, rng)) ASSERT_EQ(a.behaviour.individuality, 0.3);
}

TEST(Bootstrap, NonPositiveUtilityFactorIsConfigError) {
  const auto t = sample_tables();
  PopulationSpec spec;
  spec.consumption_utility = {1.0, 0.5, 0.0, 1.5};
  Rng rng(3);
  EXPECT_THROW(bootstrap_population(*t, spec, rng), ConfigError);
  spec.consumption_utility = {1.0, 0.5, -0.5, 1.5};
  EXPECT_THROW(bootstrap_population(*t, spec, rng), ConfigError);
}

TEST(Bootstrap, RandomSpecsProduceValidAgents) {
  const auto t = sample_tables();
  Rng gen(77);
  for (int trial = 0; trial < 50; ++trial) {
    PopulationSpec spec;
    spec.count = 1 + static_cast<int>(gen.below(300));
    spec.min_age_years = 16 + static_cast<int>(gen.below(40));
    spec.max_age_years = spec.min_age_years + static_cast<int>(gen.below(65 - spec.min_age_years));
    const double qlo = gen.uniform(0.05, 1.0);
    spec.consumption_utility = {gen.uniform(0.0, 2.0), gen.uniform(0.0, 1.0), qlo, qlo + gen.uniform(0.0, 1.0)};
    const double klo = gen.uniform(-2.0, 0.0);
    spec.shock_sensitivity = {gen.uniform(-1.0, 1.0), gen.uniform(0.0, 1.0), klo, klo + gen.uniform(0.0, 3.0)};
    const double ilo = gen.uniform(0.0, 1.0);
    spec.individuality = {gen.uniform(0.0, 1.0), gen.uniform(0.0, 0.5), ilo, gen.uniform(ilo, 1.0)};
    spec.initial_liquid = gen.bernoulli(0.5) ? 0.0 : gen.uniform(0.0, 1e5);
    spec.initial_non_liquid = gen.bernoulli(0.5) ? 0.0 : gen.uniform(0.0, 1e5);
    spec.unemployment = gen.bernoulli(0.8);
    if (gen.bernoulli(0.5)) {
      spec.occupation_weights.resize(22);
      for (double& w : spec.occupation_weights) w = gen.uniform(0.0, 1.0);
    }
    Rng rng = gen.split(trial);
    const auto agents = bootstrap_population(*t, spec, rng);
    ASSERT_EQ(static_cast<int>(agents.size()), spec.count);
    for (const auto& a : agents) expect_valid_agent(a, *t, spec);
  }
}

TEST(Bootstrap, SameSeedSamePopulation) {
  const auto t = sample_tables();
  PopulationSpec spec;
  spec.count = 300;
  Rng a(5), b(5);
  const auto x = bootstrap_population(*t, spec, a);
  const auto y = bootstrap_population(*t, spec, b);
  for (std::size_t i = 0; i < x.size(); ++i) {
    ASSERT_EQ(x[i].occupation, y[i].occupation);
    ASSERT_EQ(x[i].age_months, y[i].age_months);
    ASSERT_EQ(x[i].last_salary, y[i].last_salary);
    ASSERT_EQ(x[i].employed, y[i].employed);
    ASSERT_EQ(x[i].behaviour.shock_sensitivity, y[i].behaviour.shock_sensitivity);
  }
}

TEST(Bootstrap, InitialUnemploymentNearStationaryRate) {
  TableRecipe r;
  r.occupations = 1;
  r.layoff = 0.05;
  const auto t = make_tables(r);
  PopulationSpec spec;
  spec.count = 20000;
  Rng rng(9);
  const auto agents = bootstrap_population(t, spec, rng);
  int unemployed = 0;
  for (const auto& a : agents) unemployed += a.employed ? 0 : 1;
  const double p = stationary_unemployment(t.unemployment[0]);
  EXPECT_NEAR(p, 0.05 * 2.6 / 1.13, 1e-12);
  EXPECT_NEAR(static_cast<double>(unemployed) / spec.count, p, 3 * binomial_sd(p, spec.count));
}

TEST(TruncatedNormal, StaysInBoundsWithRoughlyRightMean) {
  const TruncatedNormal d{0.0, 0.5, -1.0, 1.0};
  Rng rng(4);
  double s = 0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    const double x = d.sample(rng);
    ASSERT_GE(x, -1.0);
    ASSERT_LE(x, 1.0);
    s += x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
}
