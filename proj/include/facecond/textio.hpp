#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace facecond {

// Line-delimited "key=value key=value" records. Values never contain
// whitespace. Parse failures raise DataError carrying the line number.
using KvRecord = std::map<std::string, std::string, std::less<>>;

KvRecord parse_kv_line(std::string_view line, std::size_t line_no);

// Record lookups with line-numbered errors.
const std::string& kv_get(const KvRecord& r, std::string_view key, std::size_t line_no);
double kv_double(const KvRecord& r, std::string_view key, std::size_t line_no);
long long kv_int(const KvRecord& r, std::string_view key, std::size_t line_no);

std::vector<std::string> split(std::string_view s, char sep);
double parse_double(std::string_view s, std::size_t line_no);
long long parse_int(std::string_view s, std::size_t line_no);

// Shortest text that reads back to the same double.
std::string fmt_double(double v);
std::string fmt_doubles(const std::vector<double>& v, char sep = ',');

std::string read_text_file(const std::string& path);
// Writes via a temporary file and rename.
void write_text_file(const std::string& path, const std::string& text);
void write_binary_file(const std::string& path, const std::vector<char>& bytes);

}  // namespace facecond
