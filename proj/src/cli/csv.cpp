#include "cli/csv.hpp"

#include <chrono>
#include <cstdio>
#include <iostream>
#include <unordered_set>

#include "itdt/error.hpp"
#include "text_util.hpp"

namespace itdt::cli {

namespace {

std::optional<int> digits(std::string_view s, std::size_t pos, std::size_t count) {
  if (pos + count > s.size()) return std::nullopt;
  int v = 0;
  for (std::size_t k = pos; k < pos + count; ++k) {
    if (s[k] < '0' || s[k] > '9') return std::nullopt;
    v = v * 10 + (s[k] - '0');
  }
  return v;
}

std::optional<double> parse_iso8601(std::string_view s) {
  auto year = digits(s, 0, 4), month = digits(s, 5, 2), day = digits(s, 8, 2);
  auto hour = digits(s, 11, 2), minute = digits(s, 14, 2), second = digits(s, 17, 2);
  if (!year || !month || !day || !hour || !minute || !second) return std::nullopt;
  if (s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' ') || s[13] != ':' ||
      s[16] != ':') {
    return std::nullopt;
  }
  const std::chrono::year_month_day ymd{std::chrono::year(*year),
                                        std::chrono::month(static_cast<unsigned>(*month)),
                                        std::chrono::day(static_cast<unsigned>(*day))};
  if (!ymd.ok() || *hour > 23 || *minute > 59 || *second > 60) return std::nullopt;

  std::size_t pos = 19;
  double frac = 0.0;
  if (pos < s.size() && s[pos] == '.') {
    std::size_t end = pos + 1;
    while (end < s.size() && s[end] >= '0' && s[end] <= '9') ++end;
    if (end == pos + 1) return std::nullopt;
    frac = *text::parse_double(std::string("0") + std::string(s.substr(pos, end - pos)));
    pos = end;
  }
  long offset = 0;
  if (pos < s.size()) {
    if (s[pos] == 'Z' && pos + 1 == s.size()) {
      pos += 1;
    } else if ((s[pos] == '+' || s[pos] == '-') && pos + 6 == s.size() && s[pos + 3] == ':') {
      auto oh = digits(s, pos + 1, 2), om = digits(s, pos + 4, 2);
      if (!oh || !om) return std::nullopt;
      offset = (s[pos] == '-' ? -1 : 1) * (*oh * 3600L + *om * 60L);
      pos += 6;
    } else {
      return std::nullopt;
    }
  }
  const auto days = std::chrono::sys_days(ymd).time_since_epoch().count();
  return static_cast<double>(days) * 86400.0 + *hour * 3600.0 + *minute * 60.0 + *second -
         static_cast<double>(offset) + frac;
}

std::string where(const std::string& path, long row) {
  return path + ": row " + std::to_string(row);
}

}  // namespace

std::optional<double> parse_timestamp(std::string_view text) {
  text = text::trim(text);
  if (text.empty()) return std::nullopt;
  if (auto v = text::parse_long(text)) return static_cast<double>(*v);
  return parse_iso8601(text);
}

ColumnMap map_columns(const std::vector<std::string>& header, const ColumnRoles& roles) {
  ColumnMap map;
  map.width = header.size();
  std::unordered_set<std::string> seen;
  for (const auto& h : header) {
    if (!seen.insert(h).second) throw Error(ErrorCode::kParseError, "duplicate column '" + h + "'");
  }
  auto find = [&](const std::string& name) -> std::optional<std::size_t> {
    for (std::size_t k = 0; k < header.size(); ++k) {
      if (header[k] == name) return k;
    }
    return std::nullopt;
  };
  auto require = [&](const std::string& name, const char* role) {
    auto pos = find(name);
    if (!pos) {
      throw Error(ErrorCode::kParseError,
                  std::string("missing ") + role + " column '" + name + "'");
    }
    return *pos;
  };
  if (roles.outputs.empty()) throw Error(ErrorCode::kParseError, "no output columns declared");

  std::vector<int> claimed(header.size(), 0);
  map.timestamp = require(roles.timestamp, "timestamp");
  claimed[map.timestamp]++;
  for (const auto& name : roles.inputs) {
    map.inputs.push_back(require(name, "input"));
    claimed[map.inputs.back()]++;
  }
  for (const auto& name : roles.outputs) {
    map.outputs.push_back(require(name, "output"));
    claimed[map.outputs.back()]++;
  }
  if (!roles.label.empty()) {
    map.label = find(roles.label);
    if (map.label) claimed[*map.label]++;
  }
  for (std::size_t k = 0; k < header.size(); ++k) {
    if (claimed[k] > 1) {
      throw Error(ErrorCode::kParseError, "column '" + header[k] + "' has more than one role");
    }
    if (claimed[k] == 0) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "column '" + header[k] + "' has no declared role");
    }
  }
  return map;
}

CsvReader::CsvReader(const std::string& path) : path_(path) {
  if (path == "-") {
    in_ = &std::cin;
    path_ = "<stdin>";
  } else {
    file_ = std::make_unique<std::ifstream>(path);
    if (!*file_) throw Error(ErrorCode::kParseError, "cannot open '" + path + "'");
    in_ = file_.get();
  }
  if (!std::getline(*in_, line_)) throw Error(ErrorCode::kParseError, path_ + ": empty file");
  if (line_.size() >= 3 && line_.compare(0, 3, "\xEF\xBB\xBF") == 0) line_.erase(0, 3);
  for (auto cell : text::split(text::trim(line_), ',')) {
    header_.emplace_back(text::trim(cell));
  }
}

void CsvReader::bind(const ColumnRoles& roles) {
  try {
    map_ = map_columns(header_, roles);
  } catch (const Error& e) {
    throw Error(e.code(), path_ + ": " + e.detail());
  }
  bound_ = true;
}

bool CsvReader::next(Record& out) {
  if (!bound_) throw Error(ErrorCode::kInvalidArgument, "CsvReader::next before bind");
  while (std::getline(*in_, line_)) {
    ++row_;
    const auto body = text::trim(line_);
    if (body.empty()) continue;
    const auto cells = text::split(body, ',');
    if (cells.size() != map_.width) {
      throw Error(ErrorCode::kDimensionMismatch,
                  where(path_, row_) + ": expected " + std::to_string(map_.width) +
                      " cells, found " + std::to_string(cells.size()));
    }
    auto cell = [&](std::size_t k) -> std::string_view {
      const auto c = text::trim(cells[k]);
      if (c.empty()) {
        throw Error(ErrorCode::kParseError,
                    where(path_, row_) + ": missing value in column '" + header_[k] + "'");
      }
      return c;
    };
    auto number = [&](std::size_t k) {
      const auto v = text::parse_double(cell(k));
      if (!v) {
        throw Error(ErrorCode::kParseError, where(path_, row_) + ": column '" + header_[k] +
                                                "' is not a number");
      }
      return *v;
    };
    out.row = row_;
    out.timestamp_text = std::string(cell(map_.timestamp));
    const auto ts = parse_timestamp(out.timestamp_text);
    if (!ts) {
      throw Error(ErrorCode::kParseError,
                  where(path_, row_) + ": timestamp '" + out.timestamp_text +
                      "' is neither an integer nor ISO-8601");
    }
    out.timestamp = *ts;
    out.u.resize(static_cast<Eigen::Index>(map_.inputs.size()));
    for (std::size_t k = 0; k < map_.inputs.size(); ++k) {
      out.u(static_cast<Eigen::Index>(k)) = number(map_.inputs[k]);
    }
    out.y.resize(static_cast<Eigen::Index>(map_.outputs.size()));
    for (std::size_t k = 0; k < map_.outputs.size(); ++k) {
      out.y(static_cast<Eigen::Index>(k)) = number(map_.outputs[k]);
    }
    out.label.reset();
    if (map_.label) {
      const auto c = cell(*map_.label);
      if (c != "0" && c != "1") {
        throw Error(ErrorCode::kParseError,
                    where(path_, row_) + ": label must be 0 or 1, got '" + std::string(c) + "'");
      }
      out.label = static_cast<std::uint8_t>(c == "1");
    }
    return true;
  }
  return false;
}

Dataset read_dataset(const std::string& path, const ColumnRoles& roles) {
  CsvReader reader(path);
  reader.bind(roles);
  Dataset data;
  data.has_labels = reader.columns().label.has_value();
  std::vector<Vector> us, ys;
  Record rec;
  while (reader.next(rec)) {
    data.timestamp_text.push_back(rec.timestamp_text);
    data.timestamps.push_back(rec.timestamp);
    us.push_back(rec.u);
    ys.push_back(rec.y);
    if (rec.label) data.labels.push_back(*rec.label);
  }
  const auto t_len = static_cast<Eigen::Index>(ys.size());
  data.U.resize(t_len, static_cast<Eigen::Index>(roles.inputs.size()));
  data.Y.resize(t_len, static_cast<Eigen::Index>(roles.outputs.size()));
  for (Eigen::Index t = 0; t < t_len; ++t) {
    data.U.row(t) = us[static_cast<std::size_t>(t)].transpose();
    data.Y.row(t) = ys[static_cast<std::size_t>(t)].transpose();
  }
  return data;
}

void write_dataset(std::ostream& out, const Dataset& data, const ColumnRoles& roles) {
  out << roles.timestamp;
  for (const auto& c : roles.inputs) out << ',' << c;
  for (const auto& c : roles.outputs) out << ',' << c;
  if (data.has_labels) out << ',' << roles.label;
  out << '\n';
  for (Eigen::Index t = 0; t < data.Y.rows(); ++t) {
    const auto k = static_cast<std::size_t>(t);
    out << data.timestamp_text[k];
    for (Eigen::Index c = 0; c < data.U.cols(); ++c) out << ',' << text::format_double(data.U(t, c));
    for (Eigen::Index c = 0; c < data.Y.cols(); ++c) out << ',' << text::format_double(data.Y(t, c));
    if (data.has_labels) out << ',' << static_cast<int>(data.labels[k]);
    out << '\n';
  }
}

std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kParseError, "cannot open '" + path + "'");
  std::uint64_t h = 1469598103934665603ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize k = 0; k < in.gcount(); ++k) {
      h ^= static_cast<unsigned char>(buf[k]);
      h *= 1099511628211ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

}  // namespace itdt::cli
