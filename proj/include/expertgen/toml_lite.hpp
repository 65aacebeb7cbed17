#pragma once

#include <string>
#include <string_view>

#include <json.hpp>

namespace expertgen {

/// Parses the TOML subset used by experiment files into a JSON tree:
/// [table] and [[array.of.tables]] headers (dotted names allowed), bare or quoted keys,
/// strings, integers, floats (including inf/nan), booleans, and arrays that may nest and span lines.
/// Inline tables and dates are not supported. Throws ConfigError with a line number.
nlohmann::json parse_toml(std::string_view text);

nlohmann::json load_toml_file(const std::string& path);

}  // namespace expertgen
