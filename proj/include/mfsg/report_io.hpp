#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mfsg {

// 17 significant digits: round-trip exact for 64-bit floats.
std::string format_double(double value);

std::uint64_t fnv1a64(const std::string& bytes);

void write_text_file(const std::filesystem::path& path, const std::string& content);
std::string read_text_file(const std::filesystem::path& path);

// Comma-separated table with a header row; all numerics via format_double.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add_row(const std::vector<double>& values);
  std::string serialize() const;
};

}  // namespace mfsg
