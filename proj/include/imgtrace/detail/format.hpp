#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace imgtrace::detail {

std::string to_hex64(uint64_t value);              // 16-char lowercase
uint64_t from_hex64(std::string_view hex);          // throws ParseError

// 12345 -> "12,345"
std::string with_thousands(uint64_t value);

// count/total as a percentage rounded half-up to one decimal, exact in
// integer arithmetic. Returns tenths of a percent (e.g. 35 for 3.5%).
int64_t percent_tenths(uint64_t count, uint64_t total);
double percent_1dp(uint64_t count, uint64_t total);
std::string format_percent(uint64_t count, uint64_t total);  // "3.5"

std::string base64_encode(std::span<const uint8_t> bytes);

// FNV-1a 64-bit, used for artifact change detection (not security).
uint64_t fnv1a64(std::span<const uint8_t> bytes);
uint64_t fnv1a64(std::string_view text);
uint64_t fnv1a64_file(const std::filesystem::path& path);  // throws IoError

// Minimal CSV field quoting (RFC 4180 style).
std::string csv_quote(std::string_view field);
std::string xml_escape(std::string_view text);

}  // namespace imgtrace::detail
