#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

namespace mtdlnm::csv {

// Shortest round-trip decimal representation; deterministic and
// locale-independent, so identical values always print identical bytes.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// Strict numeric parse. Empty / NA / nan tokens map to NaN (missing value);
// anything else must consume the whole token.
inline double parse_double(const std::string& raw) {
  std::size_t b = raw.find_first_not_of(" \t");
  if (b == std::string::npos) return std::nan("");
  std::size_t e = raw.find_last_not_of(" \t") + 1;
  std::string s = raw.substr(b, e - b);
  if (s == "NA" || s == "na" || s == "NaN" || s == "nan") return std::nan("");
  const char* first = s.c_str();
  if (*first == '+') ++first;
  double v = 0.0;
  auto res = std::from_chars(first, s.c_str() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.c_str() + s.size())
    throw std::invalid_argument("not a number: '" + raw + "'");
  return v;
}

inline long long parse_int(const std::string& raw) {
  std::size_t b = raw.find_first_not_of(" \t");
  if (b == std::string::npos)
    throw std::invalid_argument("empty integer field");
  std::size_t e = raw.find_last_not_of(" \t") + 1;
  std::string s = raw.substr(b, e - b);
  const char* first = s.c_str();
  if (*first == '+') ++first;
  long long v = 0;
  auto res = std::from_chars(first, s.c_str() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.c_str() + s.size())
    throw std::invalid_argument("not an integer: '" + raw + "'");
  return v;
}

inline std::vector<std::string> split_line(const std::string& line,
                                           char delim = ',') {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == delim) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

// Comma-delimited table. The schema string is the first comment line of every
// file this library writes; further comment lines carry free-form metadata.
struct Table {
  std::string schema;
  std::vector<std::string> extra_comments;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  const std::string& cell(std::size_t row, std::size_t col) const {
    return rows.at(row).at(col);
  }

  std::size_t column(const std::string& name) const {
    for (std::size_t j = 0; j < header.size(); ++j)
      if (header[j] == name) return j;
    throw std::invalid_argument("missing column '" + name + "'");
  }

  bool has_column(const std::string& name) const {
    for (const std::string& h : header)
      if (h == name) return true;
    return false;
  }
};

inline Table read_table(std::istream& in) {
  Table t;
  std::string line;
  bool saw_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() && !saw_header) continue;
    if (!line.empty() && line[0] == '#') {
      std::size_t b = line.find_first_not_of("# ");
      std::string body = b == std::string::npos ? "" : line.substr(b);
      if (!saw_header && t.schema.empty() && t.extra_comments.empty())
        t.schema = body;
      else
        t.extra_comments.push_back(body);
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> cells = split_line(line);
    if (!saw_header) {
      t.header = std::move(cells);
      saw_header = true;
    } else {
      if (cells.size() != t.header.size())
        throw std::invalid_argument(
            "row has " + std::to_string(cells.size()) + " fields, expected " +
            std::to_string(t.header.size()));
      t.rows.push_back(std::move(cells));
    }
  }
  if (!saw_header) throw std::invalid_argument("no header row");
  return t;
}

inline Table read_table_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open '" + path + "'");
  try {
    return read_table(in);
  } catch (const std::exception& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

inline void write_table(std::ostream& out, const Table& t) {
  if (!t.schema.empty()) out << "# " << t.schema << "\n";
  for (const std::string& c : t.extra_comments) out << "# " << c << "\n";
  for (std::size_t j = 0; j < t.header.size(); ++j)
    out << (j ? "," : "") << t.header[j];
  out << "\n";
  for (const auto& row : t.rows) {
    for (std::size_t j = 0; j < row.size(); ++j)
      out << (j ? "," : "") << row[j];
    out << "\n";
  }
}

inline void write_table_file(const std::string& path, const Table& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  write_table(out, t);
  out.flush();
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

// 64-bit FNV-1a content digest, reported as 16 hex digits.
inline std::uint64_t fnv1a64(const void* data, std::size_t size) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 14695981039346656037ULL;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = fnv1a64(bytes.data(), bytes.size());
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[h & 0xF];
    h >>= 4;
  }
  return out;
}

inline std::string file_digest_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return fnv1a_hex(buf.str());
}

}  // namespace mtdlnm::csv
