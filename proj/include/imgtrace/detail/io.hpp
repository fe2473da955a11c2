#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

namespace imgtrace::detail {

std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path);  // throws IoError
std::string read_file_text(const std::filesystem::path& path);

// Writes through a temp file in the same directory and renames into place,
// so a crash mid-write never leaves a partial artifact at the final path.
void atomic_write(const std::filesystem::path& path,
                  const std::function<void(std::ostream&)>& writer);
void atomic_write_text(const std::filesystem::path& path, const std::string& content);

}  // namespace imgtrace::detail
