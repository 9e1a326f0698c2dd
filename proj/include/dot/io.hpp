#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace dot {

/// Locale-independent decimal with 17 significant digits; round-trips doubles
/// bit-exactly.
std::string fmt17(double v);

std::uint64_t fnv1a64(const void* data, std::size_t n,
                      std::uint64_t h = 14695981039346656037ull);
std::uint64_t fnv1a64(std::string_view s);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

/// Splits a whitespace/comma-separated CSV line.
std::vector<std::string> split_csv_line(const std::string& line);

std::string hex64(std::uint64_t v);

}  // namespace dot
