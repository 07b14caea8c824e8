#pragma once

// One forward pass over a scene in training order: condense the question,
// attend over objects and OCR tokens, compute the depth-aware transfer,
// build the summaries, score answers, then assemble the losses.

#include <algorithm>
#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include "depthcal/dac.hpp"
#include "depthcal/evalkit.hpp"
#include "depthcal/json_util.hpp"
#include "depthcal/params.hpp"
#include "depthcal/relation.hpp"
#include "depthcal/synth.hpp"

namespace depthcal {

struct PipelineOptions {
  bool apply_transfer = true;
  evalkit::TrainConfig train;
};

struct StageTiming {
  std::string stage;
  double ms;
};

struct RunReport {
  std::string predicted_answer;
  std::size_t predicted_index = 0;
  std::vector<std::string> candidates;
  Vector answer_probs;
  dac::CalibrationState calibration;
  double semantic_loss = 0.0;
  double spatial_loss = 0.0;
  double total_loss = 0.0;
  bool spatial_supervised = false;
  std::optional<synth::PlantedAnswer> planted;
  std::vector<StageTiming> timings;
};

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline RunReport run_pipeline(const synth::Scene& scene, const ModelParams& params, const PipelineOptions& opts = {}) {
  if (scene.objects.empty()) throw Error(Errc::schema, "scene has no objects");
  if (scene.ocrs.empty()) throw Error(Errc::schema, "scene has no OCR tokens");
  require_dim(scene.question.dim(), params.dim, "scene features vs parameters");

  RunReport report;
  auto clock = std::chrono::steady_clock::now();
  const auto lap = [&](const char* stage) {
    const auto now = std::chrono::steady_clock::now();
    report.timings.push_back({stage, std::chrono::duration<double, std::milli>(now - clock).count()});
    clock = now;
  };

  dac::FeatureSet feats;
  for (const auto& t : scene.objects) feats.objects.push_back(t.feature);
  for (const auto& t : scene.ocrs) feats.ocrs.push_back(t.feature);
  feats.validate();

  auto& cal = report.calibration;
  cal.q_obj = dac::condense_question(scene.question, params.dac.obj);
  cal.q_ocr = dac::condense_question(scene.question, params.dac.ocr);
  lap("condense");

  cal.s_obj = dac::attention_scores(cal.q_obj, feats.objects);
  cal.s_ocr = dac::attention_scores(cal.q_ocr, feats.ocrs);
  lap("attention");

  cal.delta = opts.apply_transfer ? dac::transfer_rates(scene.objects, scene.ocrs)
                                  : Matrix(scene.objects.size(), scene.ocrs.size(), 0.0);
  lap("transfer");

  cal.s_ocr_calibrated = dac::calibrated_ocr_weights(cal.s_obj, cal.s_ocr, cal.delta);
  auto sums = dac::calibrate(cal.s_obj, cal.s_ocr, cal.delta, feats);
  cal.f_obj = std::move(sums.f_obj);
  cal.f_ocr = std::move(sums.f_ocr);
  lap("summaries");

  evalkit::AnswerSpace space{params.answer.vocab, {}};
  for (const auto& t : scene.ocrs) space.ocr_texts.push_back(t.text);
  evalkit::AnswerInputs in;
  in.query = cal.q_ocr;
  axpy(1.0, cal.f_obj, in.query);
  axpy(1.0, cal.f_ocr, in.query);
  in.ocr_weights = cal.s_ocr_calibrated;
  in.ocr_feats = feats.ocrs;
  in.vocab_embeds = params.answer.vocab_embeds;
  in.ocr_weight_scale = params.answer.ocr_weight_scale;
  report.answer_probs = evalkit::answer_scores(in, space);
  report.predicted_index = argmax(report.answer_probs);
  report.predicted_answer = space.candidate(report.predicted_index);
  for (std::size_t k = 0; k < space.size(); ++k) report.candidates.push_back(space.candidate(k));
  lap("answer");

  report.semantic_loss = evalkit::semantic_loss(report.answer_probs, scene.gt_answer, space);
  report.spatial_supervised = scene.objects.size() >= 2;
  if (report.spatial_supervised) {
    const auto rin = relation::make_inputs(scene.objects, scene.height(), scene.width());
    report.spatial_loss = relation::spatial_loss(rin, params.relation);
  }
  report.total_loss = evalkit::total_loss(report.semantic_loss, report.spatial_loss, opts.train);
  lap("losses");

  report.planted = scene.planted;
  return report;
}

/// Timings are wall-clock and therefore left out unless asked for, keeping
/// the default report byte-stable.
inline json::Json report_to_json(const RunReport& r, bool include_timings = false) {
  const auto& c = r.calibration;
  json::Json j;
  j["predicted_answer"] = r.predicted_answer;
  j["predicted_index"] = r.predicted_index;
  j["argmax_beta"] = argmax(c.s_ocr);
  j["argmax_beta_calibrated"] = argmax(c.s_ocr_calibrated);
  if (r.planted) j["planted"] = {{"ocr", r.planted->ocr}, {"object", r.planted->object}};
  j["s_obj"] = c.s_obj;
  j["beta"] = c.s_ocr;
  j["beta_calibrated"] = c.s_ocr_calibrated;
  j["delta"] = detail::matrix_json(c.delta);
  j["candidates"] = r.candidates;
  j["answer_scores"] = r.answer_probs;
  j["losses"] = {{"semantic", r.semantic_loss}, {"spatial", r.spatial_loss}, {"total", r.total_loss}};
  j["spatial_supervised"] = r.spatial_supervised;
  if (include_timings) {
    json::Json t;
    for (const auto& s : r.timings) t[s.stage] = s.ms;
    j["timings_ms"] = t;
  }
  return j;
}

}  // namespace depthcal
