#pragma once

// Depth-map file formats.
//
// Text:   "<H> <W>\n" followed by H lines of W whitespace-separated reals.
// Binary: "DMAP", H (u32 LE), W (u32 LE), H*W IEEE-754 float32 LE, row-major.

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "depthcal/error.hpp"
#include "depthcal/geometry.hpp"

namespace depthcal::io {

inline constexpr std::array<char, 4> kDepthMagic = {'D', 'M', 'A', 'P'};

namespace detail {

inline std::uint32_t read_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void write_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

}  // namespace detail

inline DepthMap parse_depth_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& why) {
    throw Error(Errc::schema, "depth map line " + std::to_string(line_no) + ": " + why);
  };

  ++line_no;
  if (!std::getline(in, line)) fail("missing header");
  std::istringstream header(line);
  long long h = 0, w = 0;
  std::string extra;
  if (!(header >> h >> w) || (header >> extra) || h < 1 || w < 1) fail("header must be '<H> <W>' with H, W >= 1");

  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(h * w));
  for (long long row = 0; row < h; ++row) {
    ++line_no;
    if (!std::getline(in, line)) fail("expected " + std::to_string(h) + " rows");
    std::istringstream cells(line);
    std::string cell;
    long long count = 0;
    while (cells >> cell) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str() || *end != '\0') fail("not a number: '" + cell + "'");
      if (!std::isfinite(v) || v < 0.0) fail("depth must be finite and >= 0");
      values.push_back(v);
      ++count;
    }
    if (count != w) fail("expected " + std::to_string(w) + " values, got " + std::to_string(count));
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") != std::string::npos) fail("trailing content");
  }
  return DepthMap(static_cast<std::size_t>(h), static_cast<std::size_t>(w), std::move(values));
}

inline DepthMap parse_depth_binary(const std::string& bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 12 || std::memcmp(p, kDepthMagic.data(), 4) != 0) {
    throw Error(Errc::schema, "binary depth map: bad magic or truncated header");
  }
  const std::uint32_t h = detail::read_u32_le(p + 4);
  const std::uint32_t w = detail::read_u32_le(p + 8);
  const std::uint64_t n = static_cast<std::uint64_t>(h) * w;
  if (h == 0 || w == 0 || n != (bytes.size() - 12) / 4 || (bytes.size() - 12) % 4 != 0) {
    throw Error(Errc::schema, "binary depth map: size does not match header");
  }
  std::vector<double> values(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::uint32_t raw = detail::read_u32_le(p + 12 + 4 * i);
    values[i] = static_cast<double>(std::bit_cast<float>(raw));
  }
  return DepthMap(h, w, std::move(values));
}

inline std::string format_depth_text(const DepthMap& map) {
  std::string out = std::to_string(map.height()) + " " + std::to_string(map.width()) + "\n";
  char buf[40];
  for (std::size_t y = 0; y < map.height(); ++y) {
    for (std::size_t x = 0; x < map.width(); ++x) {
      std::snprintf(buf, sizeof buf, "%.17g", map.at(x, y));
      if (x) out.push_back(' ');
      out += buf;
    }
    out.push_back('\n');
  }
  return out;
}

/// Values are narrowed to float32.
inline std::string format_depth_binary(const DepthMap& map) {
  std::string out(kDepthMagic.begin(), kDepthMagic.end());
  detail::write_u32_le(out, static_cast<std::uint32_t>(map.height()));
  detail::write_u32_le(out, static_cast<std::uint32_t>(map.width()));
  for (double v : map.values()) detail::write_u32_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::io, "short write to " + path);
}

/// Sniffs the magic bytes to pick the format. Returns the raw (unnormalized) map.
inline DepthMap load_depth_map(const std::string& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kDepthMagic.data(), 4) == 0) {
    return parse_depth_binary(bytes);
  }
  return parse_depth_text(bytes);
}

inline bool is_binary_depth_path(const std::string& path) {
  return path.size() >= 5 && path.compare(path.size() - 5, 5, ".dmap") == 0;
}

inline void save_depth_map(const std::string& path, const DepthMap& map) {
  write_file(path, is_binary_depth_path(path) ? format_depth_binary(map) : format_depth_text(map));
}

}  // namespace depthcal::io
