#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace archrefine::text {

/// Shortest decimal form that parses back to the same double.
std::string format_real(double value);

std::optional<double> parse_real(std::string_view token);
std::optional<std::uint32_t> parse_u32(std::string_view token);

/// Splits on runs of ASCII whitespace; never yields empty tokens.
std::vector<std::string_view> split_ws(std::string_view line);

std::vector<std::string_view> split(std::string_view s, char sep);

std::string_view trim(std::string_view s);

/// Splits "key=value". Returns nullopt when there is no '='.
std::optional<std::pair<std::string_view, std::string_view>> key_value(std::string_view token);

bool is_identifier(std::string_view s);

}  // namespace archrefine::text
