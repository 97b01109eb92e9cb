#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"

namespace exfm {

// 17 significant digits: shortest representation that round-trips any double.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string csv_quote(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const Matrix& m, const std::vector<std::string>& comments = {}) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& c : comments) f << "# " << c << "\n";
  for (std::size_t j = 0; j < header.size(); ++j)
    f << (j ? "," : "") << csv_quote(header[j]);
  f << "\n";
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j)
      f << (j ? "," : "") << format_double(m[i][j]);
    f << "\n";
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

// RFC 4180 field splitting (quoted fields, doubled quotes). Line endings \n or \r\n.
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

struct CsvTable {
  std::vector<std::string> header;
  Matrix values;
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  CsvTable table;
  std::string line;
  std::size_t lineno = 0;
  std::vector<double> flat;
  std::size_t rows = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto fields = split_csv_line(line);
    if (table.header.empty()) {
      table.header = fields;
      continue;
    }
    if (fields.size() != table.header.size())
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected " +
                               std::to_string(table.header.size()) + " fields, got " +
                               std::to_string(fields.size()));
    for (const auto& s : fields) {
      const char* b = s.data();
      const char* e = b + s.size();
      while (b < e && (*b == ' ' || *b == '\t')) ++b;
      double v = 0.0;
      auto [p, ec] = std::from_chars(b, e, v);
      while (p < e && (*p == ' ' || *p == '\t')) ++p;
      if (ec != std::errc() || p != e)
        throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                 ": not a number: '" + s + "'");
      if (!std::isfinite(v))
        throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                 ": non-finite value: '" + s + "'");
      flat.push_back(v);
    }
    ++rows;
  }
  if (table.header.empty()) throw std::runtime_error(path + ": empty CSV");
  table.values.rows = rows;
  table.values.cols = table.header.size();
  table.values.data = std::move(flat);
  return table;
}

}  // namespace exfm
