#pragma once

// Scene documents: one JSON object per scene that points at a depth-map file.

#include <filesystem>
#include <string>
#include <vector>

#include "depthcal/depth_io.hpp"
#include "depthcal/json_util.hpp"
#include "depthcal/synth.hpp"

namespace depthcal::io {

inline json::Json box_json(const BoundingBox& b) { return json::Json::array({b.x1, b.y1, b.x2, b.y2}); }

inline json::Json scene_to_json(const synth::Scene& scene, const std::string& depth_path) {
  json::Json j;
  j["seed"] = scene.seed;
  j["flip_scenario"] = scene.flip_scenario;
  j["image"] = {{"h", scene.height()}, {"w", scene.width()}};
  j["depth_map"] = depth_path;
  j["objects"] = json::Json::array();
  for (const auto& t : scene.objects) {
    j["objects"].push_back({{"bbox", box_json(t.box)}, {"feature", t.feature}});
  }
  j["ocr"] = json::Json::array();
  for (const auto& t : scene.ocrs) {
    j["ocr"].push_back({{"bbox", box_json(t.box)}, {"text", t.text}, {"feature", t.feature}});
  }
  j["question"] = {{"tokens", scene.question.tokens}};
  j["gt_answer"] = scene.gt_answer;
  if (scene.planted) j["planted"] = {{"ocr", scene.planted->ocr}, {"object", scene.planted->object}};
  return j;
}

inline std::string format_scene(const synth::Scene& scene, const std::string& depth_path) {
  return json::dump(scene_to_json(scene, depth_path)) + "\n";
}

namespace detail {

inline std::size_t count_field(const json::Document& doc, const json::Json& v, const std::string& ptr) {
  const double x = doc.number(v, ptr);
  if (x < 1 || x != static_cast<double>(static_cast<long long>(x))) doc.fail(Errc::schema, ptr, "expected a positive integer");
  return static_cast<std::size_t>(x);
}

inline BoundingBox read_box(const json::Document& doc, const json::Json& v, const std::string& ptr,
                            std::size_t h, std::size_t w) {
  const auto c = doc.numbers(v, ptr);
  if (c.size() != 4) doc.fail(Errc::schema, ptr, "bbox must have 4 numbers");
  BoundingBox b{c[0], c[1], c[2], c[3]};
  if (!b.well_formed()) doc.fail(Errc::schema, ptr, "bbox corners out of order");
  if (b.x1 < 0 || b.y1 < 0 || b.x2 > static_cast<double>(w) || b.y2 > static_cast<double>(h)) {
    doc.fail(Errc::schema, ptr, "bbox outside the image");
  }
  return b;
}

inline Vector read_feature(const json::Document& doc, const json::Json& v, const std::string& ptr,
                           std::size_t& dim) {
  Vector f = doc.numbers(v, ptr);
  if (f.empty()) doc.fail(Errc::schema, ptr, "empty feature");
  if (dim == 0) dim = f.size();
  if (f.size() != dim) {
    doc.fail(Errc::dim_mismatch, ptr, "feature has " + std::to_string(f.size()) + " entries, expected " + std::to_string(dim));
  }
  return f;
}

}  // namespace detail

/// Parses a scene document. Relative depth-map paths resolve against
/// `base_dir`. Token depths come from the min-max normalized map.
inline synth::Scene parse_scene(std::string text, const std::string& source, const std::string& base_dir) {
  const json::Document doc(std::move(text), source);
  const auto& root = doc.root();
  if (!root.is_object()) doc.fail(Errc::schema, "", "scene must be a JSON object");

  synth::Scene scene;
  if (auto it = root.find("seed"); it != root.end()) {
    if (!it->is_number_unsigned()) doc.fail(Errc::schema, "/seed", "expected an unsigned integer");
    scene.seed = it->get<std::uint64_t>();
  }
  if (auto it = root.find("flip_scenario"); it != root.end()) {
    if (!it->is_boolean()) doc.fail(Errc::schema, "/flip_scenario", "expected a boolean");
    scene.flip_scenario = it->get<bool>();
  }

  const auto& image = doc.at(root, "", "image");
  const std::size_t h = detail::count_field(doc, doc.at(image, "/image", "h"), "/image/h");
  const std::size_t w = detail::count_field(doc, doc.at(image, "/image", "w"), "/image/w");

  std::filesystem::path depth_path = doc.string(doc.at(root, "", "depth_map"), "/depth_map");
  if (depth_path.is_relative() && !base_dir.empty()) depth_path = std::filesystem::path(base_dir) / depth_path;
  try {
    scene.depth = load_depth_map(depth_path.string());
  } catch (const Error& e) {
    doc.fail(Errc::schema, "/depth_map", e.what());
  }
  if (scene.depth.height() != h || scene.depth.width() != w) {
    doc.fail(Errc::schema, "/depth_map", "depth map is " + std::to_string(scene.depth.height()) + "x" +
                                             std::to_string(scene.depth.width()) + ", image is " +
                                             std::to_string(h) + "x" + std::to_string(w));
  }
  const DepthMap normalized = scene.depth.normalized();

  std::size_t dim = 0;
  const auto& question = doc.at(root, "", "question");
  const auto& tokens = doc.array(doc.at(question, "/question", "tokens"), "/question/tokens");
  if (tokens.empty()) doc.fail(Errc::schema, "/question/tokens", "question needs at least one token");
  if (tokens.size() > dac::kMaxQuestionLength) doc.fail(Errc::limit, "/question/tokens", "at most 20 question tokens");
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    scene.question.tokens.push_back(detail::read_feature(doc, tokens[i], "/question/tokens/" + std::to_string(i), dim));
  }

  const auto& objects = doc.array(doc.at(root, "", "objects"), "/objects");
  if (objects.size() > dac::kMaxObjects) doc.fail(Errc::limit, "/objects", "at most 100 objects");
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const std::string ptr = "/objects/" + std::to_string(i);
    const auto box = detail::read_box(doc, doc.at(objects[i], ptr, "bbox"), ptr + "/bbox", h, w);
    auto feature = detail::read_feature(doc, doc.at(objects[i], ptr, "feature"), ptr + "/feature", dim);
    scene.objects.push_back(make_object_token(normalized, box, std::move(feature)));
  }

  const auto& ocr = doc.array(doc.at(root, "", "ocr"), "/ocr");
  if (ocr.size() > dac::kMaxOcrTokens) doc.fail(Errc::limit, "/ocr", "at most 50 OCR tokens");
  for (std::size_t j = 0; j < ocr.size(); ++j) {
    const std::string ptr = "/ocr/" + std::to_string(j);
    const auto box = detail::read_box(doc, doc.at(ocr[j], ptr, "bbox"), ptr + "/bbox", h, w);
    if (!(box.area() > 0.0)) doc.fail(Errc::schema, ptr + "/bbox", "OCR box has zero area");
    std::string text = doc.string(doc.at(ocr[j], ptr, "text"), ptr + "/text");
    auto feature = detail::read_feature(doc, doc.at(ocr[j], ptr, "feature"), ptr + "/feature", dim);
    try {
      scene.ocrs.push_back(make_ocr_token(normalized, box, std::move(feature), std::move(text)));
    } catch (const Error& e) {
      doc.fail(Errc::schema, ptr + "/bbox", e.what());
    }
  }

  scene.gt_answer = doc.string(doc.at(root, "", "gt_answer"), "/gt_answer");

  if (auto it = root.find("planted"); it != root.end()) {
    const auto p_ocr = doc.number(doc.at(*it, "/planted", "ocr"), "/planted/ocr");
    const auto p_obj = doc.number(doc.at(*it, "/planted", "object"), "/planted/object");
    if (p_ocr < 0 || p_obj < 0 || p_ocr >= static_cast<double>(scene.ocrs.size()) ||
        p_obj >= static_cast<double>(scene.objects.size())) {
      doc.fail(Errc::schema, "/planted", "planted index out of range");
    }
    scene.planted = synth::PlantedAnswer{static_cast<std::size_t>(p_ocr), static_cast<std::size_t>(p_obj)};
  }
  return scene;
}

inline synth::Scene load_scene(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path().string();
  return parse_scene(read_file(path), path, parent);
}

}  // namespace depthcal::io
