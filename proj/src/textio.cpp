#include "facecond/textio.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "facecond/errors.hpp"

namespace facecond {

namespace {

std::string where(std::size_t line_no) { return "line " + std::to_string(line_no) + ": "; }

}  // namespace

KvRecord parse_kv_line(std::string_view line, std::size_t line_no) {
  KvRecord out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    if (i >= line.size()) break;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    const std::string_view tok = line.substr(i, j - i);
    const std::size_t eq = tok.find('=');
    if (eq == std::string_view::npos || eq == 0) {
      throw DataError(where(line_no) + "expected key=value, got '" + std::string(tok) + "'");
    }
    auto [it, fresh] = out.emplace(std::string(tok.substr(0, eq)), std::string(tok.substr(eq + 1)));
    if (!fresh) throw DataError(where(line_no) + "duplicate key '" + it->first + "'");
    i = j;
  }
  return out;
}

const std::string& kv_get(const KvRecord& r, std::string_view key, std::size_t line_no) {
  auto it = r.find(key);
  if (it == r.end()) throw DataError(where(line_no) + "missing key '" + std::string(key) + "'");
  return it->second;
}

double kv_double(const KvRecord& r, std::string_view key, std::size_t line_no) {
  return parse_double(kv_get(r, key, line_no), line_no);
}

long long kv_int(const KvRecord& r, std::string_view key, std::size_t line_no) {
  return parse_int(kv_get(r, key, line_no), line_no);
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

double parse_double(std::string_view s, std::size_t line_no) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw DataError(where(line_no) + "bad number '" + std::string(s) + "'");
  }
  return v;
}

long long parse_int(std::string_view s, std::size_t line_no) {
  long long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw DataError(where(line_no) + "bad integer '" + std::string(s) + "'");
  }
  return v;
}

std::string fmt_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string fmt_doubles(const std::vector<double>& v, char sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += fmt_double(v[i]);
  }
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_binary_file(const std::string& path, const std::vector<char>& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("cannot rename '" + tmp + "' to '" + path + "'");
}

void write_text_file(const std::string& path, const std::string& text) {
  write_binary_file(path, std::vector<char>(text.begin(), text.end()));
}

}  // namespace facecond
