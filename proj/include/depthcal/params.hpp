#pragma once

// Model parameter records for the whole pipeline, seeded initialization,
// and their JSON form.

#include <cmath>
#include <string>
#include <vector>

#include "depthcal/dac.hpp"
#include "depthcal/json_util.hpp"
#include "depthcal/relation.hpp"
#include "depthcal/rng.hpp"

namespace depthcal {

struct AnswerParams {
  std::vector<std::string> vocab;
  std::vector<Vector> vocab_embeds;
  double ocr_weight_scale = 1.0;
};

struct ModelParams {
  std::size_t dim = 0;
  dac::DacParams dac;
  relation::RelationParams relation;
  AnswerParams answer;
};

inline std::vector<std::string> default_vocab() {
  return {"yes", "no", "one", "two", "red", "blue", "white", "black", "open", "closed"};
}

namespace detail {

inline void init_uniform(LinearParams& p, SplitMix64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(p.in_dim()));
  for (double& w : p.weight.data()) w = rng.uniform(-bound, bound);
  for (double& b : p.bias) b = rng.uniform(-bound, bound);
}

}  // namespace detail

/// Linear layers draw weights and biases uniformly from +-1/sqrt(fan_in);
/// layer norms start at gain 1, shift 0; vocabulary embeddings use fan_in = dim.
inline ModelParams init_params(std::uint64_t seed, std::size_t dim, std::vector<std::string> vocab = default_vocab()) {
  SplitMix64 rng(seed);
  ModelParams m;
  m.dim = dim;
  m.dac = dac::DacParams(dim);
  for (auto* branch : {&m.dac.ocr, &m.dac.obj}) {
    detail::init_uniform(branch->conv1, rng);
    detail::init_uniform(branch->conv2, rng);
  }
  m.relation.fusion = relation::SpatialFusionParams(dim, dim);
  m.relation.head = relation::RelationHeadParams(dim, dim);
  detail::init_uniform(m.relation.fusion.w_v, rng);
  detail::init_uniform(m.relation.fusion.w_bx, rng);
  detail::init_uniform(m.relation.head.w_obj, rng);
  detail::init_uniform(m.relation.head.w, rng);
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  m.answer.vocab = std::move(vocab);
  for (std::size_t k = 0; k < m.answer.vocab.size(); ++k) {
    Vector e(dim);
    for (double& x : e) x = rng.uniform(-bound, bound);
    m.answer.vocab_embeds.push_back(std::move(e));
  }
  m.answer.ocr_weight_scale = 1.0;
  return m;
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline json::Json matrix_json(const Matrix& m) {
  json::Json rows = json::Json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return rows;
}

inline json::Json linear_json(const LinearParams& p) {
  return {{"weight", matrix_json(p.weight)}, {"bias", p.bias}};
}

inline json::Json layer_norm_json(const LayerNormParams& p) {
  return {{"gain", p.gain}, {"shift", p.shift}, {"epsilon", p.epsilon}};
}

inline json::Json condense_json(const dac::CondenseParams& p) {
  return {{"conv1", linear_json(p.conv1)}, {"conv2", linear_json(p.conv2)}};
}

}  // namespace detail

inline json::Json params_to_json(const ModelParams& m) {
  json::Json j;
  j["dim"] = m.dim;
  j["ocr_condense"] = detail::condense_json(m.dac.ocr);
  j["obj_condense"] = detail::condense_json(m.dac.obj);
  j["fusion"] = {{"w_v", detail::linear_json(m.relation.fusion.w_v)},
                 {"w_bx", detail::linear_json(m.relation.fusion.w_bx)},
                 {"ln_v", detail::layer_norm_json(m.relation.fusion.ln_v)},
                 {"ln_b", detail::layer_norm_json(m.relation.fusion.ln_b)}};
  j["head"] = {{"w_obj", detail::linear_json(m.relation.head.w_obj)}, {"w", detail::linear_json(m.relation.head.w)}};
  j["answer"] = {{"vocab", m.answer.vocab},
                 {"vocab_embeddings", m.answer.vocab_embeds},
                 {"ocr_weight_scale", m.answer.ocr_weight_scale}};
  return j;
}

namespace detail {

inline LinearParams read_linear(const json::Document& doc, const json::Json& v, const std::string& ptr,
                                std::size_t in, std::size_t out) {
  LinearParams p(in, out);
  const auto& rows = doc.array(doc.at(v, ptr, "weight"), ptr + "/weight");
  if (rows.size() != out) doc.fail(Errc::dim_mismatch, ptr + "/weight", "expected " + std::to_string(out) + " rows");
  for (std::size_t r = 0; r < out; ++r) {
    const std::string rp = ptr + "/weight/" + std::to_string(r);
    const auto row = doc.numbers(rows[r], rp);
    if (row.size() != in) doc.fail(Errc::dim_mismatch, rp, "expected " + std::to_string(in) + " columns");
    std::copy(row.begin(), row.end(), p.weight.row(r).begin());
  }
  p.bias = doc.numbers(doc.at(v, ptr, "bias"), ptr + "/bias");
  if (p.bias.size() != out) doc.fail(Errc::dim_mismatch, ptr + "/bias", "expected " + std::to_string(out) + " entries");
  return p;
}

inline LayerNormParams read_layer_norm(const json::Document& doc, const json::Json& v, const std::string& ptr,
                                       std::size_t dim) {
  LayerNormParams p(dim);
  p.gain = doc.numbers(doc.at(v, ptr, "gain"), ptr + "/gain");
  p.shift = doc.numbers(doc.at(v, ptr, "shift"), ptr + "/shift");
  p.epsilon = doc.number(doc.at(v, ptr, "epsilon"), ptr + "/epsilon");
  if (p.gain.size() != dim || p.shift.size() != dim) doc.fail(Errc::dim_mismatch, ptr, "layer norm size mismatch");
  if (!(p.epsilon > 0.0)) doc.fail(Errc::schema, ptr + "/epsilon", "epsilon must be positive");
  return p;
}

inline dac::CondenseParams read_condense(const json::Document& doc, const json::Json& v, const std::string& ptr,
                                         std::size_t dim) {
  dac::CondenseParams p;
  p.conv1 = read_linear(doc, doc.at(v, ptr, "conv1"), ptr + "/conv1", dim, dim);
  p.conv2 = read_linear(doc, doc.at(v, ptr, "conv2"), ptr + "/conv2", dim, 1);
  return p;
}

}  // namespace detail

inline ModelParams parse_params(std::string text, const std::string& source) {
  const json::Document doc(std::move(text), source);
  const auto& root = doc.root();
  ModelParams m;
  const double dim = doc.number(doc.at(root, "", "dim"), "/dim");
  if (dim < 1 || dim != std::floor(dim)) doc.fail(Errc::schema, "/dim", "expected a positive integer");
  m.dim = static_cast<std::size_t>(dim);
  m.dac.ocr = detail::read_condense(doc, doc.at(root, "", "ocr_condense"), "/ocr_condense", m.dim);
  m.dac.obj = detail::read_condense(doc, doc.at(root, "", "obj_condense"), "/obj_condense", m.dim);

  const auto& fusion = doc.at(root, "", "fusion");
  auto& f = m.relation.fusion;
  f.w_v = detail::read_linear(doc, doc.at(fusion, "/fusion", "w_v"), "/fusion/w_v", m.dim, m.dim);
  f.w_bx = detail::read_linear(doc, doc.at(fusion, "/fusion", "w_bx"), "/fusion/w_bx", relation::kBoxDims, m.dim);
  f.ln_v = detail::read_layer_norm(doc, doc.at(fusion, "/fusion", "ln_v"), "/fusion/ln_v", m.dim);
  f.ln_b = detail::read_layer_norm(doc, doc.at(fusion, "/fusion", "ln_b"), "/fusion/ln_b", m.dim);

  const auto& head = doc.at(root, "", "head");
  const auto& w_obj = doc.at(head, "/head", "w_obj");
  const std::size_t hidden = doc.array(doc.at(w_obj, "/head/w_obj", "weight"), "/head/w_obj/weight").size();
  if (hidden == 0) doc.fail(Errc::schema, "/head/w_obj/weight", "hidden width must be positive");
  m.relation.head.w_obj = detail::read_linear(doc, w_obj, "/head/w_obj", m.dim, hidden);
  m.relation.head.w = detail::read_linear(doc, doc.at(head, "/head", "w"), "/head/w", hidden, 1);

  const auto& answer = doc.at(root, "", "answer");
  const auto& vocab = doc.array(doc.at(answer, "/answer", "vocab"), "/answer/vocab");
  for (std::size_t k = 0; k < vocab.size(); ++k) {
    m.answer.vocab.push_back(doc.string(vocab[k], "/answer/vocab/" + std::to_string(k)));
  }
  const auto& embeds = doc.array(doc.at(answer, "/answer", "vocab_embeddings"), "/answer/vocab_embeddings");
  if (embeds.size() != vocab.size()) doc.fail(Errc::dim_mismatch, "/answer/vocab_embeddings", "one embedding per vocab entry");
  for (std::size_t k = 0; k < embeds.size(); ++k) {
    const std::string ptr = "/answer/vocab_embeddings/" + std::to_string(k);
    auto e = doc.numbers(embeds[k], ptr);
    if (e.size() != m.dim) doc.fail(Errc::dim_mismatch, ptr, "expected " + std::to_string(m.dim) + " entries");
    m.answer.vocab_embeds.push_back(std::move(e));
  }
  m.answer.ocr_weight_scale = doc.number(doc.at(answer, "/answer", "ocr_weight_scale"), "/answer/ocr_weight_scale");
  return m;
}

}  // namespace depthcal
