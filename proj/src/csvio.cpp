#include "reseg/csvio.hpp"

#include <fstream>
#include <sstream>

namespace reseg {

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open CSV: " + path);
  CsvTable t;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> fields;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) fields.push_back(cell);
    if (!line.empty() && line.back() == ',') fields.push_back("");
    if (header) {
      t.columns = fields;
      header = false;
    } else {
      if (fields.size() != t.columns.size())
        throw Error("ragged CSV row in " + path);
      t.rows.push_back(std::move(fields));
    }
  }
  if (header) throw Error("empty CSV: " + path);
  return t;
}

}  // namespace reseg
