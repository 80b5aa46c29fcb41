#include "subsced/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace subsced {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  const auto e = s.find_last_not_of(" \t");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

[[noreturn]] void parse_fail(const std::string& source, std::size_t line, const std::string& what) {
  std::ostringstream os;
  os << source << ":" << line << ": " << what;
  throw Error(ErrorKind::ParseError, os.str());
}

}  // namespace

Index DataFrame::column(const std::string& name) const {
  for (std::size_t j = 0; j < names.size(); ++j) {
    if (names[j] == name) return static_cast<Index>(j);
  }
  throw Error(ErrorKind::ParseError, "no column named '" + name + "'");
}

DataFrame parse_csv(std::istream& in, const std::string& source) {
  DataFrame df;
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    if (trim(line).empty()) continue;
    auto cells = split_line(line);
    if (df.names.empty()) {
      for (auto& c : cells) df.names.push_back(trim(c));
      continue;
    }
    if (cells.size() != df.names.size()) parse_fail(source, lineno, "row width differs from header");
    std::vector<double> row(cells.size());
    for (std::size_t j = 0; j < cells.size(); ++j) {
      const std::string c = trim(cells[j]);
      if (c.empty()) parse_fail(source, lineno, "missing cell in column '" + df.names[j] + "'");
      const char* first = c.data();
      const char* last = first + c.size();
      if (*first == '+') ++first;
      auto [ptr, ec] = std::from_chars(first, last, row[j]);
      if (ec != std::errc() || ptr != last || !std::isfinite(row[j]))
        parse_fail(source, lineno, "cell '" + c + "' is not a finite number");
    }
    rows.push_back(std::move(row));
  }
  if (df.names.empty()) parse_fail(source, lineno, "missing header");
  df.data.resize(static_cast<Index>(rows.size()), static_cast<Index>(df.names.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < df.names.size(); ++j) df.data(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  }
  return df;
}

DataFrame read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::ParseError, "cannot open " + path);
  return parse_csv(in, path);
}

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

void write_csv(std::ostream& out, const DataFrame& frame) {
  for (std::size_t j = 0; j < frame.names.size(); ++j) out << (j ? "," : "") << frame.names[j];
  out << '\n';
  for (Index i = 0; i < frame.data.rows(); ++i) {
    for (Index j = 0; j < frame.data.cols(); ++j) out << (j ? "," : "") << format_double(frame.data(i, j));
    out << '\n';
  }
}

void write_csv(const std::string& path, const DataFrame& frame) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::ParseError, "cannot write " + path);
  write_csv(out, frame);
}

Vector read_weights(const std::string& path) {
  const DataFrame df = read_csv(path);
  if (df.names.size() != 1) throw Error(ErrorKind::ParseError, path + ": weights file must have one column");
  if (df.data.rows() == 0) throw Error(ErrorKind::ParseError, path + ": weights file has no rows");
  return df.data.col(0);
}

void write_weights(const std::string& path, const Vector& w, const std::string& header) {
  DataFrame df;
  df.names = {header};
  df.data = w;
  write_csv(path, df);
}

}  // namespace subsced
