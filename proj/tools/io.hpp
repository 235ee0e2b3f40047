#pragma once

#include <string>

namespace mtopt::cli {

/// Writes to a sibling temporary file and renames it over `path`.
void write_atomic(const std::string& path, const std::string& contents);
std::string read_text(const std::string& path);
/// Creates the directory and its parents.
void ensure_dir(const std::string& path);

}  // namespace mtopt::cli
