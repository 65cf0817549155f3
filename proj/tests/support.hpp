#pragma once

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "pension/population.hpp"
#include "pension/random.hpp"

namespace testing_support {

namespace fs = std::filesystem;

inline std::shared_ptr<const pension::CalibrationTables> sample_tables() {
  static const auto tables =
      std::make_shared<const pension::CalibrationTables>(pension::load_tables(fs::path(PENSION_SAMPLE_DATA)));
  return tables;
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("pension_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Copies the sample tables into `dir` so individual files can be altered.
inline void copy_sample_tables(const fs::path& dir) {
  fs::create_directories(dir);
  for (const char* name : {"occupations.csv", "income.csv", "unemployment.csv", "mortality.csv"})
    fs::copy_file(fs::path(PENSION_SAMPLE_DATA) / name, dir / name, fs::copy_options::overwrite_existing);
}

/// Small programmatic tables: `occupations` occupations, decade bands
/// 16-25..56-65, fixed income quantiles scaled by occupation, a constant
/// layoff probability and duration table, and a flat mortality curve.
struct TableRecipe {
  int occupations = 2;
  double base_income = 2000.0;
  double layoff = 0.02;
  double mortality = 0.01;
  std::vector<std::pair<double, double>> income_quantiles{{0.25, 0.5}, {0.5, 1.0}, {0.75, 1.5}, {1.0, 2.0}};
  std::vector<std::pair<double, int>> durations{{0.5, 1}, {0.8, 3}, {1.0, 6}};
};

inline pension::CalibrationTables make_tables(const TableRecipe& r) {
  pension::CalibrationTables t;
  for (int k = 0; k < r.occupations; ++k) t.occupations.push_back({k, "occ" + std::to_string(k)});
  for (int lo = 16; lo <= 56; lo += 10) t.bands.push_back({lo, lo + 9});
  for (int k = 0; k < r.occupations; ++k)
    for (std::size_t b = 0; b < t.bands.size(); ++b) {
      std::vector<pension::QuantileBucket> inc, dur;
      for (auto [q, m] : r.income_quantiles) inc.push_back({q, r.base_income * (1.0 + k) * m});
      for (auto [q, d] : r.durations) dur.push_back({q, static_cast<double>(d)});
      t.income.emplace_back(inc);
      t.unemployment.push_back({r.layoff, pension::QuantileDistribution(dur)});
    }
  t.mortality.assign(120, r.mortality);
  t.mortality.back() = 1.0;
  return t;
}

/// Binomial tolerance: k sd of a frequency estimate with n trials.
inline double binomial_sd(double p, double n) { return std::sqrt(p * (1.0 - p) / n); }

}  // namespace testing_support
