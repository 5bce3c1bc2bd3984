#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace netstrat::csv {

struct Table {
  std::string file;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;  // 1-based source line of each row

  // Column position of `name`; throws ParseError when absent.
  std::size_t column(std::string_view name) const;
};

// Reads a comma-separated file with a header row. Blank lines are skipped and
// surrounding double quotes are stripped from fields.
Table read(const std::filesystem::path& path);

std::vector<std::string> split_line(std::string_view line);

double parse_double(std::string_view field, const std::string& file, std::size_t line);
long long parse_int(std::string_view field, const std::string& file, std::size_t line);

// Shortest decimal representation that round-trips exactly.
std::string format_double(double value);

}  // namespace netstrat::csv
