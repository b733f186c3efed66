#include "softerr/csv.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>

#include "softerr/errors.hpp"

namespace softerr {

std::string csv_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::string csv_num(uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%" PRIu64, v);
  return buf;
}

std::string csv_num(int64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%" PRId64, v);
  return buf;
}

std::string csv_num(int v) { return csv_num(static_cast<int64_t>(v)); }

namespace {

template <typename T>
std::string join(const std::vector<T>& vs) {
  std::string out;
  for (size_t i = 0; i < vs.size(); ++i) {
    if (i > 0) out += ';';
    out += csv_num(vs[i]);
  }
  return out;
}

}  // namespace

std::string csv_list(const std::vector<double>& vs) { return join(vs); }
std::string csv_list(const std::vector<int>& vs) { return join(vs); }

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.flush();
  if (!out) throw IoError("write failed: " + path);
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::string text;
  for (size_t i = 0; i < header.size(); ++i) {
    if (i > 0) text += ',';
    text += header[i];
  }
  text += '\n';
  for (const auto& row : rows) {
    if (row.size() != header.size())
      throw InvalidArgument("csv row width does not match header");
    for (size_t i = 0; i < row.size(); ++i) {
      if (i > 0) text += ',';
      text += row[i];
    }
    text += '\n';
  }
  write_text_file(path, text);
}

}  // namespace softerr
