#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace appood {

/// Write to "<path>.tmp" and rename over path, so readers never see a
/// truncated file. Parent directories are created as needed.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::string read_file(const std::filesystem::path& path);

}  // namespace appood
