#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gc {

/// Writes to a sibling temporary file and renames it over `path`.
void atomicWrite(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void atomicWrite(const std::filesystem::path& path, std::string_view text);

std::vector<std::uint8_t> readBytes(const std::filesystem::path& path);
std::string readText(const std::filesystem::path& path);

/// Splits one CSV line on commas; no quoting support (fields never contain commas).
std::vector<std::string> splitCsvLine(std::string_view line);

std::string formatReal(double value);

}  // namespace gc
