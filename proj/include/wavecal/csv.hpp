#pragma once

// Minimal CSV and file helpers. Numbers are written in the shortest form
// that round-trips exactly, so persisted artifacts reload bit-identically.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace wavecal {

std::string format_double(double v);

/// Strict full-string parse; throws ParseError.
double parse_double(std::string_view text);
long long parse_int(std::string_view text);

std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by name; throws ParseError when absent.
  std::size_t column(std::string_view name) const;
};

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header);

  CsvWriter& cell(std::string_view text);
  CsvWriter& cell(double v);
  CsvWriter& cell(long long v);
  CsvWriter& cell(std::size_t v) { return cell(static_cast<long long>(v)); }
  CsvWriter& cell(int v) { return cell(static_cast<long long>(v)); }
  void end_row();

  const std::string& text() const { return text_; }

 private:
  std::size_t columns_;
  std::size_t in_row_ = 0;
  std::string text_;
};

CsvTable read_csv(const std::filesystem::path& path);
CsvTable parse_csv(std::string_view text);

/// Writes via a temporary sibling then renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);

}  // namespace wavecal
