#pragma once

#include <filesystem>
#include <string>

namespace hode {

/// Writes to `path.tmp` and renames over `path`. Throws std::ios_base::failure.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

/// Shortest text that parses back to the same double ("%.17g").
std::string format_g17(double v);

}  // namespace hode
