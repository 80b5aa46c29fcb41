#pragma once

#include "subsced/types.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace subsced {

// Rectangular numeric table with a header row.
struct DataFrame {
  std::vector<std::string> names;
  Matrix data;

  Index column(const std::string& name) const;  // throws ParseError if absent
  Vector col(const std::string& name) const { return data.col(column(name)); }
};

// Comma-separated, header required, LF or CRLF line endings. Every cell must
// parse as a finite double.
DataFrame read_csv(const std::string& path);
DataFrame parse_csv(std::istream& in, const std::string& source = "<stream>");

void write_csv(const std::string& path, const DataFrame& frame);
void write_csv(std::ostream& out, const DataFrame& frame);

// Round-trip exact rendering with 17 significant digits (%.17g).
std::string format_double(double x);

// One-column weights file: header plus one positive value per line.
Vector read_weights(const std::string& path);
void write_weights(const std::string& path, const Vector& w, const std::string& header = "weight");

}  // namespace subsced
