#include <filesystem>
#include <functional>
#include <string_view>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace depthcal;
using namespace testing_support;

namespace {

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return Errc::io;
}

std::string message_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

bool contains(std::string_view hay, std::string_view needle) { return hay.find(needle) != std::string_view::npos; }

// A small scene document; line numbers in the error tests refer to this layout.
std::string scene_doc(const std::string& depth, const std::string& bbox = "[0, 0, 3, 2]",
                      const std::string& feature = "[1, 0, 0, 0]") {
  return "{\n"
         "  \"image\": {\"h\": 3, \"w\": 4},\n"
         "  \"depth_map\": \"" + depth + "\",\n"
         "  \"objects\": [\n"
         "    {\"bbox\": [0, 0, 4, 3], \"feature\": [0, 1, 0, 0]},\n"
         "    {\"bbox\": " + bbox + ", \"feature\": " + feature + "}\n"
         "  ],\n"
         "  \"ocr\": [{\"bbox\": [1, 1, 2, 2], \"text\": \"exit\", \"feature\": [0, 0, 1, 0]}],\n"
         "  \"question\": {\"tokens\": [[1, 1, 0, 0], [0, 0, 1, 1]]},\n"
         "  \"gt_answer\": \"exit\"\n"
         "}\n";
}

}  // namespace

TEST(DepthText, RoundTripIsExact) {
  SplitMix64 rng(81);
  const auto map = random_map(rng, 7, 5, 10.0);
  EXPECT_EQ(io::parse_depth_text(io::format_depth_text(map)), map);
}

TEST(DepthText, ErrorsCarryLineNumbers) {
  EXPECT_TRUE(contains(message_of([] { io::parse_depth_text("2 2\n1 2\n3\n"); }), "line 3"));
  EXPECT_TRUE(contains(message_of([] { io::parse_depth_text("2 2\n1 x\n3 4\n"); }), "line 2"));
  EXPECT_TRUE(contains(message_of([] { io::parse_depth_text("2 2\n1 2\n3 -4\n"); }), "line 3"));
  EXPECT_TRUE(contains(message_of([] { io::parse_depth_text("2\n1 2\n"); }), "line 1"));
  EXPECT_EQ(code_of([] { io::parse_depth_text("1 1\n0.5\n9\n"); }), Errc::schema);
}

TEST(DepthBinary, RoundTripOfFloatValues) {
  SplitMix64 rng(82);
  std::vector<double> v(12);
  for (double& x : v) x = static_cast<float>(rng.uniform());
  const DepthMap map(3, 4, v);
  const auto bytes = io::format_depth_binary(map);
  ASSERT_EQ(bytes.size(), 12u + 4u * 12u);
  EXPECT_EQ(bytes.substr(0, 4), "DMAP");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 3);
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 4);
  EXPECT_EQ(io::parse_depth_binary(bytes), map);
}

TEST(DepthBinary, RejectsTruncation) {
  const DepthMap map(2, 2, {1, 2, 3, 4});
  auto bytes = io::format_depth_binary(map);
  bytes.pop_back();
  EXPECT_EQ(code_of([&] { io::parse_depth_binary(bytes); }), Errc::schema);
  EXPECT_EQ(code_of([] { io::parse_depth_binary("DMA"); }), Errc::schema);
}

TEST(DepthFiles, FormatChosenByExtensionAndSniffed) {
  const auto dir = scratch_dir("depthfiles");
  const DepthMap map(2, 3, {0, 0.25, 0.5, 0.75, 1, 0.125});
  io::save_depth_map((dir / "a.dmap").string(), map);
  io::save_depth_map((dir / "a.txt").string(), map);
  EXPECT_EQ(io::read_file((dir / "a.dmap").string()).substr(0, 4), "DMAP");
  EXPECT_EQ(io::load_depth_map((dir / "a.dmap").string()), map);
  EXPECT_EQ(io::load_depth_map((dir / "a.txt").string()), map);
  EXPECT_EQ(code_of([&] { io::load_depth_map((dir / "missing.txt").string()); }), Errc::io);
}

TEST(SceneJson, RoundTripPreservesScene) {
  const auto dir = scratch_dir("scene_roundtrip");
  synth::SceneConfig cfg;
  cfg.seed = 5;
  const auto scene = synth::generate_scene(cfg);
  for (const char* name : {"depth.txt", "depth.dmap"}) {
    io::save_depth_map((dir / name).string(), scene.depth);
    io::write_file((dir / "scene.json").string(), io::format_scene(scene, name));
    const auto back = io::load_scene((dir / "scene.json").string());
    EXPECT_EQ(back.depth, scene.depth);
    ASSERT_EQ(back.objects.size(), scene.objects.size());
    for (std::size_t i = 0; i < scene.objects.size(); ++i) {
      EXPECT_EQ(back.objects[i].box, scene.objects[i].box);
      EXPECT_EQ(back.objects[i].depth, scene.objects[i].depth);
      EXPECT_EQ(back.objects[i].feature, scene.objects[i].feature);
    }
    for (std::size_t j = 0; j < scene.ocrs.size(); ++j) {
      EXPECT_EQ(back.ocrs[j].text, scene.ocrs[j].text);
      EXPECT_EQ(back.ocrs[j].depth, scene.ocrs[j].depth);
    }
    EXPECT_EQ(back.question.tokens, scene.question.tokens);
    EXPECT_EQ(back.gt_answer, scene.gt_answer);
    EXPECT_EQ(back.planted->ocr, scene.planted->ocr);
    EXPECT_EQ(io::format_scene(back, name), io::format_scene(scene, name));
  }
}

TEST(SceneJson, DepthsComeFromNormalizedMap) {
  const auto dir = scratch_dir("scene_norm");
  io::write_file((dir / "d.txt").string(), "3 4\n2 2 2 2\n2 6 6 2\n2 6 6 2\n");
  const auto scene = io::parse_scene(scene_doc("d.txt"), "scene.json", dir.string());
  EXPECT_EQ(scene.ocrs[0].depth, 1.0);  // pixels (1..2, 1..2) hold the maximum
  EXPECT_EQ(scene.objects[0].depth, 1.0);
}

TEST(SceneJson, SchemaErrorsReportLines) {
  const auto dir = scratch_dir("scene_errors");
  io::write_file((dir / "d.txt").string(), "3 4\n1 1 1 1\n1 1 1 1\n1 1 1 1\n");
  const auto parse = [&](const std::string& doc) { io::parse_scene(doc, "scene.json", dir.string()); };

  const auto bad_box = message_of([&] { parse(scene_doc("d.txt", "[3, 0, 1, 2]")); });
  EXPECT_TRUE(bad_box.starts_with("schema")) << bad_box;
  EXPECT_TRUE(contains(bad_box, "scene.json line 6")) << bad_box;

  const auto outside = message_of([&] { parse(scene_doc("d.txt", "[0, 0, 9, 2]")); });
  EXPECT_TRUE(contains(outside, "line 6")) << outside;

  std::string missing = scene_doc("d.txt");
  missing.replace(missing.find("\"gt_answer\""), 11, "\"answer\"");
  EXPECT_EQ(code_of([&] { parse(missing); }), Errc::schema);

  const auto malformed = message_of([&] { parse("{\n  \"image\": {\"h\": 3,,\n}\n"); });
  EXPECT_TRUE(contains(malformed, "line 2")) << malformed;

  EXPECT_EQ(code_of([&] { parse(scene_doc("nope.txt")); }), Errc::schema);
}

TEST(SceneJson, FeatureLengthMismatchIsDimensionError) {
  const auto dir = scratch_dir("scene_dim");
  io::write_file((dir / "d.txt").string(), "3 4\n1 1 1 1\n1 1 1 1\n1 1 1 1\n");
  const auto msg = message_of([&] { io::parse_scene(scene_doc("d.txt", "[0, 0, 3, 2]", "[1, 0, 0]"), "s.json", dir.string()); });
  EXPECT_TRUE(msg.starts_with("dim-mismatch")) << msg;
  EXPECT_TRUE(contains(msg, "line 6")) << msg;
}

TEST(SceneJson, DepthSizeMustMatchImage) {
  const auto dir = scratch_dir("scene_size");
  io::write_file((dir / "d.txt").string(), "2 2\n1 1\n1 1\n");
  EXPECT_EQ(code_of([&] { io::parse_scene(scene_doc("d.txt"), "s.json", dir.string()); }), Errc::schema);
}

TEST(SceneJson, TooManyQuestionTokens) {
  const auto dir = scratch_dir("scene_limit");
  io::write_file((dir / "d.txt").string(), "3 4\n1 1 1 1\n1 1 1 1\n1 1 1 1\n");
  std::string tokens = "[";
  for (int i = 0; i < 21; ++i) tokens += std::string(i ? ", " : "") + "[1, 0, 0, 0]";
  tokens += "]";
  std::string doc = scene_doc("d.txt");
  const std::string original = "[[1, 1, 0, 0], [0, 0, 1, 1]]";
  doc.replace(doc.find(original), original.size(), tokens);
  EXPECT_EQ(code_of([&] { io::parse_scene(doc, "s.json", dir.string()); }), Errc::limit);
}

TEST(Params, JsonRoundTrip) {
  const auto params = init_params(3, 6);
  const auto text = json::dump(params_to_json(params));
  const auto back = parse_params(text, "params.json");
  EXPECT_EQ(flatten(back.dac), flatten(params.dac));
  EXPECT_EQ(flatten(back.relation), flatten(params.relation));
  EXPECT_EQ(back.answer.vocab, params.answer.vocab);
  EXPECT_EQ(back.answer.vocab_embeds, params.answer.vocab_embeds);
  EXPECT_EQ(json::dump(params_to_json(back)), text);
}

TEST(Params, InitIsSeededAndBounded) {
  const auto a = init_params(11, 8), b = init_params(11, 8), c = init_params(12, 8);
  EXPECT_EQ(flatten(a.dac), flatten(b.dac));
  EXPECT_NE(flatten(a.dac), flatten(c.dac));
  const double bound = 1.0 / std::sqrt(8.0);
  for (double w : a.dac.ocr.conv1.weight.data()) {
    EXPECT_LE(std::abs(w), bound);
  }
  for (double w : a.relation.fusion.w_bx.weight.data()) EXPECT_LE(std::abs(w), 1.0 / std::sqrt(5.0));
  EXPECT_EQ(a.relation.fusion.ln_v.gain, Vector(8, 1.0));
  EXPECT_EQ(a.relation.fusion.ln_v.shift, Vector(8, 0.0));
}

TEST(Params, WrongShapeIsDimensionError) {
  auto j = params_to_json(init_params(3, 4));
  j["ocr_condense"]["conv1"]["bias"] = {1.0, 2.0};
  EXPECT_EQ(code_of([&] { parse_params(json::dump(j), "p.json"); }), Errc::dim_mismatch);
}

TEST(Json, FloatsPrintWithSeventeenDigits) {
  json::Json j;
  j["x"] = 0.1;
  j["v"] = {1.0, 2.5};
  EXPECT_EQ(json::dump(j), "{\n  \"x\": 0.10000000000000001,\n  \"v\": [1, 2.5]\n}");
}
