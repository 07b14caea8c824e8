#pragma once

// Shared fixtures for the unit suites: seeded random maps, boxes and tokens.

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "depthcal/depthcal.hpp"

namespace testing_support {

using namespace depthcal;

inline DepthMap random_map(SplitMix64& rng, std::size_t h, std::size_t w, double scale = 1.0) {
  std::vector<double> v(h * w);
  for (double& x : v) x = rng.uniform() * scale;
  return DepthMap(h, w, std::move(v));
}

/// A well-formed box inside [0,w]x[0,h] with real-valued corners.
inline BoundingBox random_box(SplitMix64& rng, double h, double w) {
  double x1 = rng.uniform(0.0, w), x2 = rng.uniform(0.0, w);
  double y1 = rng.uniform(0.0, h), y2 = rng.uniform(0.0, h);
  if (x1 > x2) std::swap(x1, x2);
  if (y1 > y2) std::swap(y1, y2);
  return {x1, y1, x2, y2};
}

/// Box with integer corners and positive area.
inline BoundingBox random_int_box(SplitMix64& rng, std::size_t h, std::size_t w) {
  const double x1 = static_cast<double>(rng.below(w - 1));
  const double y1 = static_cast<double>(rng.below(h - 1));
  const double x2 = x1 + 1 + static_cast<double>(rng.below(w - static_cast<std::uint64_t>(x1) - 1));
  const double y2 = y1 + 1 + static_cast<double>(rng.below(h - static_cast<std::uint64_t>(y1) - 1));
  return {x1, y1, x2, y2};
}

inline Vector random_vector(SplitMix64& rng, std::size_t n, double scale = 1.0) {
  Vector v(n);
  for (double& x : v) x = rng.uniform(-scale, scale);
  return v;
}

inline Token plain_token(TokenKind kind, BoundingBox box, double depth, std::string text = {}) {
  return {kind, box, depth, {}, std::move(text)};
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("depthcal_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing_support
