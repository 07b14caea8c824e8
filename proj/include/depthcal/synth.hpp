#pragma once

// Deterministic synthetic scenes: objects on a handful of depth planes, OCR
// tokens attached to object surfaces, and a question whose embedding points
// at the planted answer. Also hosts the brute-force pixel-loop oracles.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "depthcal/dac.hpp"
#include "depthcal/error.hpp"
#include "depthcal/geometry.hpp"
#include "depthcal/numerics.hpp"
#include "depthcal/rng.hpp"

namespace depthcal::synth {

struct SceneConfig {
  std::uint64_t seed = 0;
  std::size_t n_objects = 8;
  std::size_t n_ocr = 6;
  std::size_t dim = 16;
  std::size_t distractor_count = 2;
  std::size_t depth_layers = 4;
  bool flip_scenario = false;
  std::size_t height = 120;
  std::size_t width = 160;
  std::size_t question_length = 8;

  void validate() const {
    if (n_objects > dac::kMaxObjects) throw Error(Errc::limit, "at most 100 objects");
    if (n_ocr > dac::kMaxOcrTokens) throw Error(Errc::limit, "at most 50 OCR tokens");
    if (question_length > dac::kMaxQuestionLength) throw Error(Errc::limit, "at most 20 question tokens");
    if (n_objects == 0 || n_ocr == 0 || question_length == 0 || depth_layers == 0 || height == 0 || width == 0) {
      throw Error(Errc::schema, "scene counts must be positive");
    }
    if (dim < 4) throw Error(Errc::schema, "feature dim must be at least 4");
    if (distractor_count + 1 > n_ocr) throw Error(Errc::schema, "distractors plus the planted OCR exceed n_ocr");
  }
};

struct PlantedAnswer {
  std::size_t ocr;
  std::size_t object;
};

struct Scene {
  std::uint64_t seed = 0;
  bool flip_scenario = false;
  DepthMap depth;  // as stored on disk, before normalization
  std::vector<Token> objects;
  std::vector<Token> ocrs;
  dac::QuestionSequence question;
  std::string gt_answer;
  std::optional<PlantedAnswer> planted;

  std::size_t height() const noexcept { return depth.height(); }
  std::size_t width() const noexcept { return depth.width(); }
};

// Feature amplitudes along the planted answer direction.
inline constexpr double kQuestionAmp = 2.0;
inline constexpr double kQuestionNoise = 0.5;
inline constexpr double kKeyObjectAmp = 7.0;
inline constexpr double kFeatureNoise = 0.5;
inline constexpr double kOcrAmp = 2.0;
inline constexpr double kDistractorAmp = 1.0;
inline constexpr double kFlipBoost = 0.4;
inline constexpr double kAnchorNoise = 0.05;
inline constexpr double kBackgroundDepth = 1.0;
inline constexpr double kDepthJitter = 0.01;

inline const std::array<const char*, 40>& word_list() {
  static const std::array<const char*, 40> words = {
      "west",  "exit",   "cafe",  "pizza", "hotel", "bank",   "stop",   "sale",  "open",  "bar",
      "metro", "coffee", "books", "taxi",  "park",  "market", "garage", "pharm", "bakery", "diner",
      "north", "east",   "south", "main",  "delta", "alpha",  "omega",  "river", "lake",  "tower",
      "eagle", "lion",   "tiger", "ocean", "solar", "lunar",  "coral",  "amber", "ivory", "jade"};
  return words;
}

namespace detail {

struct Rect {
  long x1, y1, x2, y2;
  BoundingBox box() const {
    return {static_cast<double>(x1), static_cast<double>(y1), static_cast<double>(x2), static_cast<double>(y2)};
  }
};

struct Side {
  long first, last;  // inclusive pixel columns
  long width() const { return last - first; }
};

inline Vector random_unit(SplitMix64& rng, std::size_t dim) {
  Vector u(dim);
  double n = 0.0;
  do {
    for (double& x : u) x = rng.uniform(-1.0, 1.0);
    n = norm2(u);
  } while (n < 1e-3);
  for (double& x : u) x /= n;
  return u;
}

inline Vector planted_vector(SplitMix64& rng, std::span<const double> dir, double amp, double noise) {
  Vector v(dir.size());
  for (std::size_t k = 0; k < dir.size(); ++k) v[k] = amp * dir[k] + rng.uniform(-noise, noise);
  return v;
}

inline double plane_depth(std::size_t plane, std::size_t layers) {
  if (layers == 1) return 0.5;
  return 0.1 + 0.8 * static_cast<double>(plane) / static_cast<double>(layers - 1);
}

inline void paint(std::vector<double>& raw, std::size_t width, const Rect& r, double v) {
  for (long y = r.y1; y <= r.y2; ++y) {
    for (long x = r.x1; x <= r.x2; ++x) raw[static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)] = v;
  }
}

[[noreturn]] inline void packing_failure(const std::string& why) { throw Error(Errc::packing_failure, why); }

}  // namespace detail

/// Builds a scene that is a pure function of `cfg`.
///
/// Objects come in pairs: an even-indexed "surface" object filling most of a
/// grid cell and an odd-indexed object nested on one side of it, clear of
/// the surface's centroid window. OCR tokens sit on the opposite side of a
/// surface, so each OCR box lies inside exactly one object box.
inline Scene generate_scene(const SceneConfig& cfg) {
  cfg.validate();
  using detail::Rect;
  SplitMix64 root(cfg.seed);
  SplitMix64 layout_rng = root.fork();
  SplitMix64 depth_rng = root.fork();
  SplitMix64 feature_rng = root.fork();
  SplitMix64 text_rng = root.fork();

  const std::size_t n = cfg.n_objects, m = cfg.n_ocr;
  const std::size_t surfaces = (n + 1) / 2;
  if (cfg.flip_scenario && cfg.distractor_count == 0) {
    throw Error(Errc::schema, "flip scenario needs at least one distractor");
  }
  if (cfg.distractor_count > 0 && surfaces < 2) detail::packing_failure("distractors need a second surface object");

  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(surfaces))));
  const std::size_t rows = (surfaces + cols - 1) / cols;
  const long cell_w = static_cast<long>(cfg.width / cols);
  const long cell_h = static_cast<long>(cfg.height / rows);
  if (cell_w < 24 || cell_h < 16) detail::packing_failure("image too small for " + std::to_string(n) + " objects");

  // Surfaces and the two side strips around each centroid window.
  std::vector<Rect> surface(surfaces);
  std::vector<std::array<detail::Side, 2>> sides(surfaces);
  for (std::size_t k = 0; k < surfaces; ++k) {
    const long ox = static_cast<long>(k % cols) * cell_w, oy = static_cast<long>(k / cols) * cell_h;
    const long mx = std::max(1L, cell_w / 10), my = std::max(1L, cell_h / 10);
    Rect r{ox + 1 + static_cast<long>(layout_rng.below(static_cast<std::uint64_t>(mx))),
           oy + 1 + static_cast<long>(layout_rng.below(static_cast<std::uint64_t>(my))),
           ox + cell_w - 2 - static_cast<long>(layout_rng.below(static_cast<std::uint64_t>(mx))),
           oy + cell_h - 2 - static_cast<long>(layout_rng.below(static_cast<std::uint64_t>(my)))};
    surface[k] = r;
    const auto win = centroid_window(r.box());
    sides[k][0] = {r.x1, static_cast<long>(std::ceil(win.cx - win.eps_x)) - 1};
    sides[k][1] = {static_cast<long>(std::floor(win.cx + win.eps_x)) + 1, r.x2};
  }

  // Nested objects.
  std::vector<std::optional<Rect>> nested(surfaces);
  std::vector<int> ocr_side(surfaces);
  for (std::size_t k = 0; k < surfaces; ++k) {
    const int side = static_cast<int>(layout_rng.below(2));
    ocr_side[k] = 1 - side;
    if (2 * k + 1 >= n) continue;
    const auto s = sides[k][static_cast<std::size_t>(side)];
    const Rect& r = surface[k];
    if (s.width() < 3) detail::packing_failure("surface too narrow for a nested object");
    const long w = std::max(2L, static_cast<long>(std::lround(static_cast<double>(s.width()) * layout_rng.uniform(0.5, 0.9))));
    const long h = std::max(2L, static_cast<long>(std::lround(static_cast<double>(r.y2 - r.y1) * layout_rng.uniform(0.3, 0.7))));
    const long x1 = s.first + static_cast<long>(layout_rng.below(static_cast<std::uint64_t>(s.width() - w + 1)));
    const long y1 = r.y1 + static_cast<long>(layout_rng.below(static_cast<std::uint64_t>(r.y2 - r.y1 - h + 1)));
    nested[k] = Rect{x1, y1, x1 + w, y1 + h};
  }

  // OCR roles: 0 planted, 1..distractors, then background.
  const std::size_t key = layout_rng.below(surfaces);
  std::vector<std::size_t> host(m);
  host[0] = key;
  for (std::size_t j = 1; j < m; ++j) {
    if (j <= cfg.distractor_count) {
      std::size_t h = layout_rng.below(surfaces - 1);
      host[j] = h >= key ? h + 1 : h;
    } else {
      host[j] = layout_rng.below(surfaces);
    }
  }
  std::vector<std::size_t> per_surface(surfaces, 0), slot_of(m);
  for (std::size_t j = 0; j < m; ++j) slot_of[j] = per_surface[host[j]]++;

  std::vector<Rect> ocr_rect(m);
  for (std::size_t j = 0; j < m; ++j) {
    const std::size_t k = host[j];
    const auto s = sides[k][static_cast<std::size_t>(ocr_side[k])];
    const Rect& r = surface[k];
    const long slot_h = (r.y2 - r.y1 + 1) / static_cast<long>(per_surface[k]);
    if (slot_h < 3 || s.width() < 4) detail::packing_failure("too many OCR tokens on one object");
    const long y1 = r.y1 + static_cast<long>(slot_of[j]) * slot_h;
    const long y2 = y1 + slot_h - 2;
    const long inset = s.width() / 4 + 1;
    const long x1 = s.first + static_cast<long>(layout_rng.below(static_cast<std::uint64_t>(inset)));
    const long x2 = s.last - static_cast<long>(layout_rng.below(static_cast<std::uint64_t>(inset)));
    ocr_rect[j] = Rect{x1, y1, x2, y2};
  }

  // Depth: far background, one plane per object, small jitter, float32-exact.
  std::vector<double> raw(cfg.height * cfg.width, kBackgroundDepth);
  for (std::size_t k = 0; k < surfaces; ++k) {
    detail::paint(raw, cfg.width, surface[k], detail::plane_depth(depth_rng.below(cfg.depth_layers), cfg.depth_layers));
  }
  for (std::size_t k = 0; k < surfaces; ++k) {
    if (nested[k]) {
      detail::paint(raw, cfg.width, *nested[k], detail::plane_depth(depth_rng.below(cfg.depth_layers), cfg.depth_layers));
    }
  }
  for (double& v : raw) v = static_cast<double>(static_cast<float>(v + depth_rng.uniform(0.0, kDepthJitter)));

  Scene scene;
  scene.seed = cfg.seed;
  scene.flip_scenario = cfg.flip_scenario;
  scene.depth = DepthMap(cfg.height, cfg.width, std::move(raw));
  const DepthMap normalized = scene.depth.normalized();

  // Features.
  const Vector dir = detail::random_unit(feature_rng, cfg.dim);
  for (std::size_t i = 0; i < cfg.question_length; ++i) {
    scene.question.tokens.push_back(detail::planted_vector(feature_rng, dir, kQuestionAmp, kQuestionNoise));
  }
  for (std::size_t k = 0; k < surfaces; ++k) {
    const double amp = k == key ? kKeyObjectAmp : 0.0;
    scene.objects.push_back(make_object_token(normalized, surface[k].box(),
                                              detail::planted_vector(feature_rng, dir, amp, kFeatureNoise)));
    if (nested[k]) {
      scene.objects.push_back(make_object_token(normalized, nested[k]->box(),
                                                detail::planted_vector(feature_rng, dir, 0.0, kFeatureNoise)));
    }
  }

  // Texts: distinct words, the planted one is the answer.
  const auto& words = word_list();
  std::vector<std::size_t> pool(words.size());
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
  for (std::size_t i = pool.size() - 1; i > 0; --i) std::swap(pool[i], pool[text_rng.below(i + 1)]);

  // Shuffled OCR order so the planted token is not always first.
  std::vector<std::size_t> order(m);
  for (std::size_t j = 0; j < m; ++j) order[j] = j;
  for (std::size_t j = m - 1; j > 0; --j) std::swap(order[j], order[layout_rng.below(j + 1)]);

  std::vector<Vector> ocr_feats(m);
  for (std::size_t j = 0; j < m; ++j) {
    if (j == 0) {
      ocr_feats[j] = detail::planted_vector(feature_rng, dir, kOcrAmp, kAnchorNoise);
    } else if (j <= cfg.distractor_count) {
      const double amp = (cfg.flip_scenario && j == 1) ? kOcrAmp + kFlipBoost : kDistractorAmp;
      ocr_feats[j] = detail::planted_vector(feature_rng, dir, amp, kAnchorNoise);
    } else {
      ocr_feats[j] = detail::planted_vector(feature_rng, dir, 0.0, kFeatureNoise);
    }
  }

  scene.ocrs.resize(m);
  std::size_t planted_pos = 0;
  for (std::size_t pos = 0; pos < m; ++pos) {
    const std::size_t j = order[pos];
    if (j == 0) planted_pos = pos;
    scene.ocrs[pos] = make_ocr_token(normalized, ocr_rect[j].box(), ocr_feats[j],
                                     words[pool[j % pool.size()]] + (j >= pool.size() ? std::to_string(j) : ""));
  }
  scene.gt_answer = scene.ocrs[planted_pos].text;

  // Object index of the key surface: surfaces precede their nested object.
  std::size_t key_index = 0;
  for (std::size_t k = 0; k < key; ++k) key_index += nested[k] ? 2 : 1;
  scene.planted = PlantedAnswer{planted_pos, key_index};
  return scene;
}

/// Token depths recomputed from a raw depth map (normalized first).
inline void refresh_depths(Scene& scene) {
  const DepthMap normalized = scene.depth.normalized();
  for (auto& t : scene.objects) t.depth = object_depth(normalized, t.box);
  for (auto& t : scene.ocrs) t.depth = ocr_depth(normalized, t.box);
}

// ---------------------------------------------------------------------------
// Oracles

enum class DepthMode { full, centroid };

/// Naive scan over every pixel of the map; the reference for ocr_depth and
/// object_depth.
inline double brute_force_depth(const DepthMap& map, const BoundingBox& box, DepthMode mode) {
  double lo_x = box.x1, hi_x = box.x2, lo_y = box.y1, hi_y = box.y2;
  const double cx = (box.x1 + box.x2) / 2.0, cy = (box.y1 + box.y2) / 2.0;
  if (mode == DepthMode::centroid) {
    const double ex = (box.x2 - box.x1) / 20.0, ey = (box.y2 - box.y1) / 20.0;
    lo_x = cx - ex;
    hi_x = cx + ex;
    lo_y = cy - ey;
    hi_y = cy + ey;
  }
  double total = 0.0;
  long count = 0;
  for (std::size_t y = 0; y < map.height(); ++y) {
    for (std::size_t x = 0; x < map.width(); ++x) {
      const double fx = static_cast<double>(x), fy = static_cast<double>(y);
      if (fx >= lo_x && fx <= hi_x && fy >= lo_y && fy <= hi_y) {
        total += map.at(x, y);
        ++count;
      }
    }
  }
  if (count > 0) return total / static_cast<double>(count);
  if (mode == DepthMode::full) throw Error(Errc::empty_box, "no pixel center inside box");

  // Nearest pixel center; later pixels win ties.
  double best = 0.0, best_d = INFINITY;
  for (std::size_t y = 0; y < map.height(); ++y) {
    for (std::size_t x = 0; x < map.width(); ++x) {
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      const double d = dx * dx + dy * dy;
      if (d <= best_d) {
        best_d = d;
        best = map.at(x, y);
      }
    }
  }
  return best;
}

inline Matrix brute_force_gt_map(const std::vector<Token>& objects) {
  if (objects.size() < 2) throw Error(Errc::insufficient_objects, "gt map needs at least 2 objects");
  Matrix gt(objects.size(), objects.size(), 0.0);
  for (std::size_t i = 0; i < objects.size(); ++i) {
    for (std::size_t j = 0; j < objects.size(); ++j) {
      if (i != j) gt(i, j) = gt_relation(objects[i], objects[j]);
    }
  }
  return gt;
}

}  // namespace depthcal::synth
