#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace tba {

// Shortest round-trippable text is not needed for reports; 9 significant
// digits is enough to recover a float32 exactly.
std::string format_number(double v);

// Minimal CSV writer: comma-separated, "\n" line endings, no quoting (fields
// produced by this library never contain commas).
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);

  CsvWriter& field(const std::string& s);
  CsvWriter& field(double v);
  CsvWriter& field(long long v);
  CsvWriter& field(unsigned long long v);
  CsvWriter& field(std::size_t v) { return field(static_cast<unsigned long long>(v)); }
  CsvWriter& field(int v) { return field(static_cast<long long>(v)); }
  void end_row();

 private:
  std::ofstream out_;
  std::filesystem::path path_;
  bool first_ = true;
};

}  // namespace tba
