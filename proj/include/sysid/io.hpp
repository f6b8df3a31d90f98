#pragma once

// Small file and text helpers shared by datasets, checkpoints and reports.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sysid::io {

inline std::uint64_t to_little_endian(std::uint64_t w) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap64(w);
  return w;
}
inline std::uint64_t from_little_endian(std::uint64_t w) { return to_little_endian(w); }

// Shortest decimal text that parses back to the identical double.
std::string format_double(double v);
double parse_double(std::string_view text);

// Writes to "<file>.tmp" and renames over `file`, so readers never see partial output.
void write_atomic(const std::filesystem::path& file, std::string_view contents);
std::string read_file(const std::filesystem::path& file);

// RFC-4180 style: fields containing comma, quote, CR or LF are quoted, quotes doubled.
std::string csv_escape(std::string_view field);
std::string csv_table(const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows);
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

std::uint32_t crc32(std::span<const unsigned char> bytes);
std::uint32_t crc32(std::string_view bytes);
std::string hex32(std::uint32_t v);

}  // namespace sysid::io
