#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <unordered_map>
#include <vector>

#include "concentra/error.hpp"

namespace concentra::io {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorKind::data, "io", "cannot open '" + path + "'", {},
                "verify the path in the run configuration");
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_file(const std::string& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(ErrorKind::config, "io", "cannot write '" + path + "'", {},
                "check that the output directory is writable");
  }
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
}

/// Shortest decimal text that round-trips to the same double. Non-finite
/// values print as an empty cell.
inline std::string format_double(double v) {
  if (!std::isfinite(v)) return {};
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string format_optional(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string{};
}

/// Rounds to `digits` significant digits (used for published artifacts).
inline double round_significant(double v, int digits = 9) {
  if (!std::isfinite(v) || v == 0.0) return v;
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::scientific, digits - 1);
  double out = 0.0;
  std::from_chars(buf, res.ptr, out);
  return out;
}

inline std::string_view trim(std::string_view s) {
  const auto* ws = " \t\r\n";
  auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

inline std::optional<double> parse_double(std::string_view text) {
  text = trim(text);
  if (text.empty()) return std::nullopt;
  if (text.front() == '+') text.remove_prefix(1);
  double v = 0.0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) return std::nullopt;
  return v;
}

/// Splits one CSV record. Handles double-quoted fields with embedded commas
/// and doubled quotes; does not support embedded newlines.
inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += '"';
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  /// 1-based source line of each row, for error messages.
  std::vector<std::size_t> lines;

  std::optional<std::size_t> column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    return std::nullopt;
  }

  std::size_t require_column(std::string_view name, const std::string& module) const {
    auto c = column(name);
    if (!c) throw ParseError(module, "missing CSV column '" + std::string(name) + "'");
    return *c;
  }
};

inline CsvTable parse_csv(std::string_view text, const std::string& module) {
  CsvTable table;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  bool have_header = false;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(line);
    if (!have_header) {
      for (auto& f : fields) f = std::string(trim(f));
      if (!fields.empty() && fields[0].rfind("\xEF\xBB\xBF", 0) == 0) fields[0].erase(0, 3);
      table.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != table.header.size()) {
      throw ParseError(module, "line " + std::to_string(line_no) + ": expected " +
                                   std::to_string(table.header.size()) + " fields, got " +
                                   std::to_string(fields.size()));
    }
    table.rows.push_back(std::move(fields));
    table.lines.push_back(line_no);
  }
  if (!have_header) throw ParseError(module, "empty CSV input");
  return table;
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::vector<std::string>& header) { row(header); }

  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << csv_escape(fields[i]);
    }
    out_ << '\n';
  }

  std::string str() const { return out_.str(); }

 private:
  std::ostringstream out_;
};

}  // namespace concentra::io
