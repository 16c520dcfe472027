#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "ncde/errors.hpp"

namespace ncde::io {

/// Shortest decimal representation that round-trips to the same double.
[[nodiscard]] inline std::string format_double(double x) {
  if (std::isnan(x)) {
    return "nan";
  }
  if (std::isinf(x)) {
    return x > 0 ? "inf" : "-inf";
  }
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

[[nodiscard]] inline double parse_double(std::string_view s) {
  if (s == "nan") {
    return std::nan("");
  }
  if (s == "inf") {
    return HUGE_VAL;
  }
  if (s == "-inf") {
    return -HUGE_VAL;
  }
  double value = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), value);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ValidationError("not a number: '" + std::string(s) + "'");
  }
  return value;
}

[[nodiscard]] inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  if (!out.empty() && !out.back().empty() && out.back().back() == '\r') {
    out.back().remove_suffix(1);
  }
  return out;
}

inline void write_text(const std::filesystem::path& file, const std::string& text) {
  if (file.has_parent_path()) {
    std::filesystem::create_directories(file.parent_path());
  }
  std::ofstream out(file, std::ios::binary);
  if (!out) {
    throw ValidationError("cannot open for writing: " + file.string());
  }
  out << text;
}

[[nodiscard]] inline std::string read_text(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) {
    throw ValidationError("cannot open for reading: " + file.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace ncde::io
