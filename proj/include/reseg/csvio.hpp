#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

#include "reseg/grid.hpp"

namespace reseg {

// Stable float formatting shared by every CSV and log we emit. %.10g keeps
// run outputs byte-comparable without printing noise digits.
inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

using CsvCell = std::variant<std::string, double, long long>;

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& columns)
      : out_(path), ncols_(columns.size()) {
    if (!out_) throw Error("cannot open CSV for writing: " + path);
    write_raw(columns);
  }

  void write_row(const std::vector<CsvCell>& cells) {
    if (cells.size() != ncols_) throw Error("CSV row width does not match header");
    std::vector<std::string> raw;
    raw.reserve(cells.size());
    for (const auto& c : cells) {
      if (std::holds_alternative<std::string>(c))
        raw.push_back(std::get<std::string>(c));
      else if (std::holds_alternative<double>(c))
        raw.push_back(format_double(std::get<double>(c)));
      else
        raw.push_back(std::to_string(std::get<long long>(c)));
    }
    write_raw(raw);
  }

  void flush() { out_.flush(); }

 private:
  void write_raw(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << fields[i];
    }
    out_ << '\n';
  }

  std::ofstream out_;
  std::size_t ncols_;
};

// Minimal reader for our own outputs: no quoting or embedded commas.
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  int column_index(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return static_cast<int>(i);
    return -1;
  }
};

CsvTable read_csv(const std::string& path);

}  // namespace reseg
