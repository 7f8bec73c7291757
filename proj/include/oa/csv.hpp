#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace oa::csv {

// RFC 4180 quoting: fields containing a comma, quote, or newline are quoted.
std::string escape(std::string_view field);
void write_row(std::ostream& out, const std::vector<std::string>& fields);

// Parses one line (no embedded newlines).
std::vector<std::string> parse_line(std::string_view line);

// Reads every non-empty line; the first row is returned as the header.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::size_t column(std::string_view name) const;  // throws ValidationError
};
Table read(std::istream& in);

std::string fixed(double value, int decimals);

}  // namespace oa::csv
