#pragma once

#include <optional>
#include <string>
#include <vector>

namespace exposome::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;  // empty cell = missing value

  // Column index by name, -1 if absent.
  int column(const std::string& name) const;
};

// RFC-4180-ish reader: quoted fields, embedded commas/quotes, LF or CRLF.
// Throws IoError on missing file or structurally broken rows (unterminated
// quote, column-count mismatch), naming the 1-based line.
Table read_file(const std::string& path);
Table parse(const std::string& text, const std::string& origin = "<string>");

// Writes with '.' decimal separator, UTF-8, LF line endings; fields are
// quoted only when needed.
std::string format(const Table& table);
void write_file(const std::string& path, const Table& table);

// Atomic write: temp file in the same directory, then rename.
void write_file_atomic(const std::string& path, const std::string& content);

std::string format_double(double v);  // full precision, locale-independent

std::optional<double> parse_double(const std::string& cell);
std::optional<int> parse_int(const std::string& cell);

}  // namespace exposome::csv
