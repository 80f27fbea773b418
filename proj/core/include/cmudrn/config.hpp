#pragma once

// Line-oriented `key = value` configuration text. Blank lines and lines
// starting with '#' are ignored; keys are validated by the consumer.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace cmudrn {

struct ConfigEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

/// Throws ParseError (byte offset of the bad line) for lines without '='
/// or with an empty key.
std::vector<ConfigEntry> parse_config(std::string_view text);
std::vector<ConfigEntry> read_config(const std::filesystem::path& path);

// Value parsers; throw ConfigError naming the key on malformed input.
double parse_real(std::string_view key, std::string_view value);
std::int64_t parse_integer(std::string_view key, std::string_view value);
bool parse_bool(std::string_view key, std::string_view value);
std::vector<std::int64_t> parse_integer_list(std::string_view key, std::string_view value);

/// Shortest representation that parses back to the same double.
std::string format_real(double v);

}  // namespace cmudrn
