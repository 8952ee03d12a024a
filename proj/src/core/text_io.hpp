#pragma once

// Small CSV and number-formatting helpers shared by the file readers and
// report writers.

#include <charconv>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace adaptable::detail {

// Splits one CSV record. Double-quoted fields may contain commas; "" is an
// escaped quote. Surrounding whitespace and a trailing '\r' are trimmed.
std::vector<std::string> split_csv_line(std::string_view line);

std::optional<double> parse_double(std::string_view text);
std::optional<long long> parse_int(std::string_view text);

// Shortest representation that round-trips exactly.
std::string format_double(double value);

std::string_view trim(std::string_view text);

}  // namespace adaptable::detail
