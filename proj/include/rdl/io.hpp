#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace rdl::io {

/// Writes to a sibling temporary file and renames it over `path`, so readers
/// never observe a partial file. Creates missing parent directories.
void write_atomic(const std::filesystem::path &path, std::string_view bytes);

/// Whole file as bytes. Throws DataError when the file cannot be opened.
std::string read_file(const std::filesystem::path &path);

/// Appends one line (newline added) and flushes; a single write() call, so
/// concurrent appenders never interleave within a line.
void append_line(const std::filesystem::path &path, std::string_view line);

}  // namespace rdl::io
