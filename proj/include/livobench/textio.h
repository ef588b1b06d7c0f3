#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace livobench {

/// Shortest decimal representation that parses back to the same double.
std::string FormatDouble(double v);

/// Fixed-point representation with `digits` decimals.
std::string FormatFixed(double v, int digits);

std::optional<double> ParseDouble(std::string_view s);

std::vector<std::string_view> SplitFields(std::string_view line, char sep);

/// Writes `contents` to `<path>.tmp` and renames it over `path`, so a
/// reader never observes a partially written file.
void AtomicWriteFile(const std::filesystem::path& path, std::string_view contents);

std::string ReadFile(const std::filesystem::path& path);

}  // namespace livobench
