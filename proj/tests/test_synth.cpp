#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace depthcal;
using namespace testing_support;

namespace {

std::size_t argmax_of(const Vector& v) { return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin()); }

synth::Scene scene_for(std::uint64_t seed, bool flip = false) {
  synth::SceneConfig cfg;
  cfg.seed = seed;
  cfg.flip_scenario = flip;
  return synth::generate_scene(cfg);
}

}  // namespace

TEST(Generate, SameSeedIsBitIdentical) {
  for (std::uint64_t seed : {0ULL, 7ULL, 123456789ULL}) {
    const auto a = scene_for(seed), b = scene_for(seed);
    EXPECT_EQ(io::format_scene(a, "d.txt"), io::format_scene(b, "d.txt"));
    EXPECT_EQ(a.depth, b.depth);
  }
  EXPECT_NE(io::format_scene(scene_for(1), "d.txt"), io::format_scene(scene_for(2), "d.txt"));
}

TEST(Generate, StructuralInvariants) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    synth::SceneConfig cfg;
    cfg.seed = seed;
    cfg.n_objects = 3 + seed % 15;
    cfg.n_ocr = 3 + seed % 10;
    cfg.flip_scenario = seed % 2 == 1;
    const auto s = synth::generate_scene(cfg);
    ASSERT_EQ(s.objects.size(), cfg.n_objects);
    ASSERT_EQ(s.ocrs.size(), cfg.n_ocr);
    ASSERT_EQ(s.question.length(), cfg.question_length);
    ASSERT_TRUE(s.planted.has_value());

    const auto& planted = s.ocrs[s.planted->ocr];
    const auto& support = s.objects[s.planted->object];
    ASSERT_TRUE(support.box.contains(planted.box));
    ASSERT_LE(std::abs(planted.depth - support.depth), 0.05);
    ASSERT_EQ(s.gt_answer, planted.text);

    for (const auto& o : s.ocrs) {
      const auto holders = std::count_if(s.objects.begin(), s.objects.end(),
                                         [&](const Token& obj) { return obj.box.contains(o.box); });
      ASSERT_EQ(holders, 1) << "seed " << seed;
      ASSERT_EQ(o.feature.size(), cfg.dim);
    }
    for (const auto& t : s.objects) {
      validate_box(t.box, s.depth);
      ASSERT_GE(t.depth, 0.0);
      ASSERT_LE(t.depth, 1.0);
    }
  }
}

TEST(Generate, DepthIsPiecewiseConstantPlanes) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    synth::SceneConfig cfg;
    cfg.seed = seed;
    cfg.depth_layers = 3 + seed % 4;
    const auto s = synth::generate_scene(cfg);
    std::vector<double> planes{synth::kBackgroundDepth};
    for (std::size_t k = 0; k < cfg.depth_layers; ++k) planes.push_back(synth::detail::plane_depth(k, cfg.depth_layers));
    for (double v : s.depth.values()) {
      const double nearest = *std::min_element(planes.begin(), planes.end(), [&](double a, double b) {
        return std::abs(a - v) < std::abs(b - v);
      });
      ASSERT_LT(std::abs(nearest - v), 0.01 + 1e-6);
    }
  }
}

TEST(Generate, FlipScenarioRanksDistractorThenPlanted) {
  int flipped = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto s = scene_for(seed, true);
    const auto params = init_params(1000 + seed, s.question.dim());
    const auto st = dac::run(s.question, params.dac, s.objects, s.ocrs);
    const std::size_t raw = argmax_of(st.s_ocr), cal = argmax_of(st.s_ocr_calibrated);
    const auto& win = s.ocrs[raw].box;
    const bool distractor = raw != s.planted->ocr && !s.objects[s.planted->object].box.contains(win);
    if (distractor && cal == s.planted->ocr) ++flipped;
  }
  EXPECT_GE(flipped, 90);
}

TEST(Generate, PlainScenarioRanksPlantedFirst) {
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto s = scene_for(seed);
    const auto params = init_params(1000 + seed, s.question.dim());
    const auto st = dac::run(s.question, params.dac, s.objects, s.ocrs);
    hits += argmax_of(st.s_ocr) == s.planted->ocr;
  }
  EXPECT_GE(hits, 95);
}

TEST(Generate, ConfigErrors) {
  synth::SceneConfig cfg;
  cfg.n_objects = 101;
  try {
    synth::generate_scene(cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::limit);
    EXPECT_TRUE(std::string_view(e.what()).starts_with("packing/limit"));
  }
  cfg = {};
  cfg.n_ocr = 51;
  EXPECT_THROW(synth::generate_scene(cfg), Error);
  cfg = {};
  cfg.dim = 3;
  EXPECT_THROW(synth::generate_scene(cfg), Error);
  cfg = {};
  cfg.n_objects = 0;
  EXPECT_THROW(synth::generate_scene(cfg), Error);
}

TEST(Generate, InfeasiblePackingFails) {
  synth::SceneConfig cfg;
  cfg.n_objects = 100;
  cfg.height = 40;
  cfg.width = 40;
  try {
    synth::generate_scene(cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::packing_failure);
  }
}

TEST(Generate, LargeSceneFitsLargeImage) {
  synth::SceneConfig cfg;
  cfg.n_objects = 100;
  cfg.n_ocr = 50;
  cfg.height = 480;
  cfg.width = 640;
  const auto s = synth::generate_scene(cfg);
  EXPECT_EQ(s.objects.size(), 100u);
  EXPECT_EQ(s.ocrs.size(), 50u);
}

TEST(BruteForce, ConstantMapAndSinglePixel) {
  const DepthMap flat(5, 7, std::vector<double>(35, 0.625));
  SplitMix64 rng(71);
  for (int i = 0; i < 20; ++i) {
    const auto box = random_int_box(rng, 5, 7);
    EXPECT_EQ(synth::brute_force_depth(flat, box, synth::DepthMode::full), 0.625);
    EXPECT_EQ(synth::brute_force_depth(flat, box, synth::DepthMode::centroid), 0.625);
  }
  const auto map = random_map(rng, 6, 6);
  EXPECT_EQ(synth::brute_force_depth(map, {3, 2, 3, 2}, synth::DepthMode::full), map.at(3, 2));
  EXPECT_THROW(synth::brute_force_depth(map, {3.2, 2.2, 3.8, 2.8}, synth::DepthMode::full), Error);
}

TEST(BruteForce, AgreesWithGeometryOnThousandCases) {
  SplitMix64 rng(72);
  int checked = 0;
  while (checked < 1000) {
    const auto map = random_map(rng, 1 + rng.below(24), 1 + rng.below(24));
    const auto box = random_box(rng, static_cast<double>(map.height()), static_cast<double>(map.width()));
    ASSERT_EQ(object_depth(map, box), synth::brute_force_depth(map, box, synth::DepthMode::centroid));
    if (pixel_span(box.x1, box.x2, map.width()).empty() || pixel_span(box.y1, box.y2, map.height()).empty()) continue;
    ASSERT_EQ(ocr_depth(map, box), synth::brute_force_depth(map, box, synth::DepthMode::full));
    ++checked;
  }
}

TEST(BruteForceGt, StackedAndDisjoint) {
  const std::vector<Token> stacked{plain_token(TokenKind::object, {0, 0, 10, 10}, 0.2),
                                   plain_token(TokenKind::object, {2, 2, 6, 6}, 0.5)};
  const auto gt = synth::brute_force_gt_map(stacked);
  EXPECT_NEAR(gt(0, 1), 0.3, 1e-15);
  EXPECT_EQ(gt(1, 0), 0.0);

  const std::vector<Token> apart{plain_token(TokenKind::object, {0, 0, 2, 2}, 0.1),
                                 plain_token(TokenKind::object, {5, 5, 7, 7}, 0.9),
                                 plain_token(TokenKind::object, {10, 0, 12, 2}, 0.4)};
  const auto gt_apart = synth::brute_force_gt_map(apart);
  for (double g : gt_apart.data()) EXPECT_EQ(g, 0.0);
  EXPECT_THROW(synth::brute_force_gt_map({stacked[0]}), Error);
}

TEST(BruteForceGt, MatchesRelationModuleOnScenes) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    synth::SceneConfig cfg;
    cfg.seed = seed;
    cfg.n_objects = 5;
    const auto s = synth::generate_scene(cfg);
    EXPECT_EQ(synth::brute_force_gt_map(s.objects).data(), relation::gt_matrix(s.objects).data());
  }
}
