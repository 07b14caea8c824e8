#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "depthcal/error.hpp"
#include "depthcal/numerics.hpp"

namespace depthcal {

/// Per-pixel relative depth, row-major: value(x, y) lives at y * width + x.
/// Pixel (x, y) has its center at integer coordinates, x in [0, W), y in [0, H).
class DepthMap {
 public:
  DepthMap() = default;
  DepthMap(std::size_t height, std::size_t width, std::vector<double> values)
      : height_(height), width_(width), values_(std::move(values)) {
    if (height_ == 0 || width_ == 0) throw Error(Errc::dim_mismatch, "depth map must be at least 1x1");
    require_dim(values_.size(), height_ * width_, "depth map values");
    for (double v : values_) {
      if (!std::isfinite(v) || v < 0.0) throw Error(Errc::non_finite, "depth values must be finite and >= 0");
    }
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  double at(std::size_t x, std::size_t y) const { return values_[y * width_ + x]; }
  const std::vector<double>& values() const noexcept { return values_; }

  double min_value() const { return *std::min_element(values_.begin(), values_.end()); }
  double max_value() const { return *std::max_element(values_.begin(), values_.end()); }

  /// Min-max rescale to [0, 1]. A flat map becomes all zeros. Idempotent on
  /// an already-normalized map.
  DepthMap normalized() const {
    const double lo = min_value();
    const double span = max_value() - lo;
    std::vector<double> out(values_.size(), 0.0);
    if (span > 0.0) {
      for (std::size_t i = 0; i < values_.size(); ++i) out[i] = (values_[i] - lo) / span;
    }
    return DepthMap(height_, width_, std::move(out));
  }

  bool operator==(const DepthMap&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> values_;
};

struct BoundingBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const noexcept { return x2 - x1; }
  double height() const noexcept { return y2 - y1; }
  double area() const noexcept { return width() * height(); }
  bool well_formed() const noexcept {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
           x1 <= x2 && y1 <= y2;
  }
  bool contains(const BoundingBox& o) const noexcept {
    return x1 <= o.x1 && y1 <= o.y1 && o.x2 <= x2 && o.y2 <= y2;
  }

  bool operator==(const BoundingBox&) const = default;
};

inline void validate_box(const BoundingBox& b) {
  if (!b.well_formed()) throw Error(Errc::invalid_box, "corners out of order or non-finite");
}

inline void validate_box(const BoundingBox& b, const DepthMap& map) {
  validate_box(b);
  if (b.x1 < 0.0 || b.y1 < 0.0 || b.x2 > static_cast<double>(map.width()) ||
      b.y2 > static_cast<double>(map.height())) {
    throw Error(Errc::invalid_box, "box outside image");
  }
}

inline double intersection_area(const BoundingBox& a, const BoundingBox& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

/// Inclusive range of integer pixel indices inside [lo, hi], clipped to
/// [0, limit). `first > last` means empty.
struct PixelSpan {
  long first;
  long last;
  bool empty() const noexcept { return first > last; }
};

inline PixelSpan pixel_span(double lo, double hi, std::size_t limit) {
  const long first = std::max(0L, static_cast<long>(std::ceil(lo)));
  const long last = std::min(static_cast<long>(limit) - 1, static_cast<long>(std::floor(hi)));
  return {first, last};
}

namespace detail {

inline double region_mean(const DepthMap& map, PixelSpan xs, PixelSpan ys) {
  double total = 0.0;
  long count = 0;
  for (long y = ys.first; y <= ys.last; ++y) {
    for (long x = xs.first; x <= xs.last; ++x) {
      total += map.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

}  // namespace detail

/// Mean depth over every pixel center inside the box (inclusive edges).
inline double ocr_depth(const DepthMap& map, const BoundingBox& box) {
  validate_box(box, map);
  const auto xs = pixel_span(box.x1, box.x2, map.width());
  const auto ys = pixel_span(box.y1, box.y2, map.height());
  if (xs.empty() || ys.empty()) throw Error(Errc::empty_box, "box covers no pixel center");
  return detail::region_mean(map, xs, ys);
}

struct CentroidWindow {
  double cx, cy, eps_x, eps_y;
};

inline CentroidWindow centroid_window(const BoundingBox& box) {
  return {(box.x1 + box.x2) / 2.0, (box.y1 + box.y2) / 2.0, (box.x2 - box.x1) / 20.0,
          (box.y2 - box.y1) / 20.0};
}

inline std::size_t nearest_pixel(double c, std::size_t limit) {
  const double r = std::floor(c + 0.5);
  return static_cast<std::size_t>(std::clamp(r, 0.0, static_cast<double>(limit - 1)));
}

/// Mean depth in a window of one tenth the box size around its centroid.
/// Falls back to the single pixel nearest the centroid when the window holds
/// no pixel center.
inline double object_depth(const DepthMap& map, const BoundingBox& box) {
  validate_box(box, map);
  const auto w = centroid_window(box);
  const auto xs = pixel_span(w.cx - w.eps_x, w.cx + w.eps_x, map.width());
  const auto ys = pixel_span(w.cy - w.eps_y, w.cy + w.eps_y, map.height());
  if (xs.empty() || ys.empty()) {
    return map.at(nearest_pixel(w.cx, map.width()), nearest_pixel(w.cy, map.height()));
  }
  return detail::region_mean(map, xs, ys);
}

/// Fraction of `inner`'s area covered by `outer`.
inline double cover_rate(const BoundingBox& outer, const BoundingBox& inner) {
  validate_box(outer);
  validate_box(inner);
  if (!(inner.area() > 0.0)) throw Error(Errc::degenerate_box, "cover_rate needs a positive-area box");
  return std::min(1.0, intersection_area(outer, inner) / inner.area());
}

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  validate_box(a);
  validate_box(b);
  if (!(a.area() > 0.0) || !(b.area() > 0.0)) throw Error(Errc::degenerate_box, "iou needs positive-area boxes");
  const double inter = intersection_area(a, b);
  return inter / (a.area() + b.area() - inter);
}

enum class TokenKind { object, ocr };

/// An object or OCR entity. Depth is filled in from a normalized depth map
/// by make_object_token / make_ocr_token.
struct Token {
  TokenKind kind = TokenKind::object;
  BoundingBox box;
  double depth = 0.0;
  Vector feature;
  std::string text;
};

inline Token make_object_token(const DepthMap& map, const BoundingBox& box, Vector feature) {
  return {TokenKind::object, box, object_depth(map, box), std::move(feature), {}};
}

inline Token make_ocr_token(const DepthMap& map, const BoundingBox& box, Vector feature,
                            std::string text) {
  return {TokenKind::ocr, box, ocr_depth(map, box), std::move(feature), std::move(text)};
}

/// Ground-truth interrelation of object j relative to object i:
/// cover rate of j by i times the depth gap, clamped to [0, 1].
inline double gt_relation(const Token& obj_i, const Token& obj_j) {
  const double raw = cover_rate(obj_i.box, obj_j.box) * (obj_j.depth - obj_i.depth);
  return std::clamp(raw, 0.0, 1.0);
}

}  // namespace depthcal
