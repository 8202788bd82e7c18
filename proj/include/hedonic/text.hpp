#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace hedonic::text {

std::string_view trim(std::string_view s);
std::string to_lower(std::string_view s);
std::string to_upper(std::string_view s);
bool iequals(std::string_view a, std::string_view b);
std::vector<std::string_view> split(std::string_view s, char sep);

/// Shortest decimal representation that round-trips the double.
std::string format_double(double v);

}  // namespace hedonic::text
