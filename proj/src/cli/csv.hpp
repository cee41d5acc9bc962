#pragma once

#include <cstdint>
#include <fstream>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "itdt/numerics.hpp"

namespace itdt::cli {

/// Seconds for an integer step or an ISO-8601 date-time
/// (YYYY-MM-DD[T ]hh:mm:ss[.fff][Z|±hh:mm]). nullopt if neither.
std::optional<double> parse_timestamp(std::string_view text);

struct ColumnRoles {
  std::string timestamp = "timestamp";
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string label = "label";
};

/// Header positions of each role; label is optional.
struct ColumnMap {
  std::size_t timestamp = 0;
  std::vector<std::size_t> inputs;
  std::vector<std::size_t> outputs;
  std::optional<std::size_t> label;
  std::size_t width = 0;
};

/// Throws Error(kParseError) for a missing or duplicated column and
/// Error(kDimensionMismatch) for a header column without a role.
ColumnMap map_columns(const std::vector<std::string>& header, const ColumnRoles& roles);

struct Record {
  long row = 0;  // 1-based data row (header excluded)
  std::string timestamp_text;
  double timestamp = 0.0;
  Vector u;
  Vector y;
  std::optional<std::uint8_t> label;
};

/// Line-by-line reader over a file or standard input ("-"). Memory use does
/// not depend on the stream length.
class CsvReader {
 public:
  explicit CsvReader(const std::string& path);

  const std::vector<std::string>& header() const { return header_; }
  const std::string& path() const { return path_; }

  /// Binds column roles; call once before next().
  void bind(const ColumnRoles& roles);
  const ColumnMap& columns() const { return map_; }

  /// False at end of input. Throws Error(kParseError) naming the row and
  /// column on a missing or malformed cell, and Error(kDimensionMismatch) on
  /// a row with the wrong number of cells.
  bool next(Record& out);

 private:
  std::string path_;
  std::unique_ptr<std::ifstream> file_;
  std::istream* in_ = nullptr;
  std::vector<std::string> header_;
  ColumnMap map_;
  bool bound_ = false;
  long row_ = 0;
  std::string line_;
};

struct Dataset {
  std::vector<std::string> timestamp_text;
  std::vector<double> timestamps;
  Matrix U;
  Matrix Y;
  std::vector<std::uint8_t> labels;  // empty without a label column
  bool has_labels = false;
};

Dataset read_dataset(const std::string& path, const ColumnRoles& roles);

void write_dataset(std::ostream& out, const Dataset& data, const ColumnRoles& roles);

/// 64-bit FNV-1a of the file bytes, as 16 hex digits.
std::string file_hash(const std::string& path);

}  // namespace itdt::cli
