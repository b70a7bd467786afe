#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace sketchmass {

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

/// FNV-1a 64 of the file contents as 16 hex digits.
std::string file_checksum(const std::filesystem::path& path);
std::string hex64(std::uint64_t v);

}  // namespace sketchmass
