#include "tba/csv.hpp"

#include <cstdio>

#include "tba/error.hpp"

namespace tba {

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
    : path_(path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::trunc);
  if (!out_) throw IoError("cannot open '" + path.string() + "' for writing");
  if (!header.empty()) {
    for (const auto& h : header) field(h);
    end_row();
  }
}

CsvWriter& CsvWriter::field(const std::string& s) {
  if (!first_) out_ << ',';
  out_ << s;
  first_ = false;
  return *this;
}

CsvWriter& CsvWriter::field(double v) { return field(format_number(v)); }
CsvWriter& CsvWriter::field(long long v) { return field(std::to_string(v)); }
CsvWriter& CsvWriter::field(unsigned long long v) { return field(std::to_string(v)); }

void CsvWriter::end_row() {
  out_ << '\n';
  first_ = true;
  if (!out_) throw IoError("error while writing '" + path_.string() + "'");
}

}  // namespace tba
