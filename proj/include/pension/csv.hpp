#pragma once

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pension/errors.hpp"

namespace pension::csv {

using Row = std::vector<std::string>;

/// Splits one CSV record. Handles double-quoted fields with embedded commas
/// and doubled quotes; does not support newlines inside quotes.
inline Row split_record(std::string_view line) {
  Row fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field.push_back(ch);
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

/// Header plus data rows of a CSV file.
struct Table {
  std::string source;
  Row header;
  std::vector<Row> rows;

  /// Column index by name, or -1.
  int column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }

  int require_column(std::string_view name) const {
    const int c = column(name);
    if (c < 0) throw SchemaError(source + ": missing column '" + std::string(name) + "'");
    return c;
  }
};

inline std::string strip(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  while (!s.empty() && !not_space(static_cast<unsigned char>(s.back()))) s.pop_back();
  std::size_t b = 0;
  while (b < s.size() && !not_space(static_cast<unsigned char>(s[b]))) ++b;
  return s.substr(b);
}

inline Table parse(std::istream& in, const std::string& source) {
  Table table;
  table.source = source;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!have_header) {
      if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
      if (strip(line).empty()) continue;
      table.header = split_record(line);
      for (auto& h : table.header) h = strip(h);
      have_header = true;
      continue;
    }
    if (strip(line).empty()) continue;
    Row row = split_record(line);
    if (row.size() != table.header.size())
      throw SchemaError(source + ": row " + std::to_string(table.rows.size() + 1) + " has " +
                        std::to_string(row.size()) + " fields, header has " +
                        std::to_string(table.header.size()));
    for (auto& f : row) f = strip(f);
    table.rows.push_back(std::move(row));
  }
  if (!have_header) throw SchemaError(source + ": empty file, zero rows");
  return table;
}

inline Table read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  return parse(in, path);
}

inline double to_double(const std::string& field, const std::string& context) {
  double value = 0.0;
  const char* first = field.data();
  const char* last = first + field.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || field.empty())
    throw SchemaError(context + ": '" + field + "' is not a number");
  return value;
}

inline long to_int(const std::string& field, const std::string& context) {
  long value = 0;
  const char* first = field.data();
  const char* last = first + field.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || field.empty())
    throw SchemaError(context + ": '" + field + "' is not an integer");
  return value;
}

/// Quotes a field when it contains a comma or quote.
inline std::string quote(std::string_view s) {
  if (s.find_first_of(",\"") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace pension::csv
