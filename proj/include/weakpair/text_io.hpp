#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace weakpair {

// %.17g-equivalent rendering; parses back to the identical double.
std::string format_double(double v);
// Shortest representation that round-trips.
std::string format_shortest(double v);

// Throws std::invalid_argument naming `what` when `text` is not entirely a number.
double parse_double(std::string_view text, std::string_view what);
long long parse_int(std::string_view text, std::string_view what);

std::vector<std::string_view> split(std::string_view text, char sep);
std::string_view trim(std::string_view text);

}  // namespace weakpair
