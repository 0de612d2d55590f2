#pragma once

#include <string>
#include <string_view>

namespace mae {

// Writes to `path + ".tmp"` and renames over `path`. Throws IoError with the
// path on failure.
void write_file_atomic(const std::string& path, std::string_view contents);
std::string read_file(const std::string& path);

}  // namespace mae
