#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace congestion::csv {

using Row = std::vector<std::string>;

struct Table {
  Row header;
  std::vector<Row> rows;
  // 1-based source line of each row, for diagnostics.
  std::vector<std::size_t> lines;
};

// RFC 4180 style: comma separated, double-quote escaping, CRLF tolerated.
Row parse_line(std::string_view line);

Table read(const std::filesystem::path& path);
Table read(std::istream& in);

std::string escape(std::string_view field);
void write_row(std::ostream& out, const Row& row);

// Shortest round-trip decimal representation of a double.
std::string format_double(double value);

}  // namespace congestion::csv
