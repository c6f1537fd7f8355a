#pragma once

#include <filesystem>
#include <string>

namespace semad::cli {

/// Lowercase hex SHA-256 of a file's bytes. Throws IoError when unreadable.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace semad::cli
