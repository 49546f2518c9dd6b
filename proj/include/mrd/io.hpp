#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace mrd::io {

// Decimal with 17 significant digits; parses back to the identical double.
std::string format_real(double x);

// "[a,b,c]" using format_real.
std::string format_real_array(std::span<const double> xs);

// JSON string literal with escaping.
std::string quote(const std::string& s);

std::vector<std::string> read_lines(const std::filesystem::path& path);
std::string read_file(const std::filesystem::path& path);

// Writes via a sibling temporary file and rename, so readers never see a
// partial file.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace mrd::io
