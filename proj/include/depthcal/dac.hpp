#pragma once

// Depth-aware attention calibration: question condensation, attention over
// object and OCR features, depth-aware weight transfer from objects to the
// OCR tokens they carry, and the calibrated summary vectors.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "depthcal/error.hpp"
#include "depthcal/geometry.hpp"
#include "depthcal/numerics.hpp"

namespace depthcal::dac {

inline constexpr std::size_t kMaxQuestionLength = 20;
inline constexpr std::size_t kMaxObjects = 100;
inline constexpr std::size_t kMaxOcrTokens = 50;

struct QuestionSequence {
  std::vector<Vector> tokens;

  std::size_t length() const noexcept { return tokens.size(); }
  std::size_t dim() const noexcept { return tokens.empty() ? 0 : tokens.front().size(); }

  void validate() const {
    if (tokens.empty()) throw Error(Errc::empty_vector, "question has no tokens");
    if (tokens.size() > kMaxQuestionLength) {
      throw Error(Errc::limit, "question length " + std::to_string(tokens.size()) + " exceeds 20");
    }
    for (const auto& q : tokens) require_dim(q.size(), dim(), "question token");
  }
};

/// Two pointwise convolutions (D -> D, ReLU, D -> 1) scoring each token.
struct CondenseParams {
  LinearParams conv1;
  LinearParams conv2;

  CondenseParams() = default;
  explicit CondenseParams(std::size_t dim) : conv1(dim, dim), conv2(dim, 1) {}

  std::size_t dim() const noexcept { return conv1.in_dim(); }

  template <typename F>
  void for_each_tensor(F&& fn) {
    conv1.for_each_tensor(fn);
    conv2.for_each_tensor(fn);
  }
  template <typename F>
  void for_each_tensor(F&& fn) const {
    conv1.for_each_tensor(fn);
    conv2.for_each_tensor(fn);
  }
};

/// Separate condensers for the OCR branch and the object branch.
struct DacParams {
  CondenseParams ocr;
  CondenseParams obj;

  DacParams() = default;
  explicit DacParams(std::size_t dim) : ocr(dim), obj(dim) {}

  template <typename F>
  void for_each_tensor(F&& fn) {
    ocr.for_each_tensor(fn);
    obj.for_each_tensor(fn);
  }
  template <typename F>
  void for_each_tensor(F&& fn) const {
    ocr.for_each_tensor(fn);
    obj.for_each_tensor(fn);
  }
};

struct FeatureSet {
  std::vector<Vector> objects;
  std::vector<Vector> ocrs;

  std::size_t dim() const noexcept {
    if (!objects.empty()) return objects.front().size();
    return ocrs.empty() ? 0 : ocrs.front().size();
  }

  void validate() const {
    if (objects.size() > kMaxObjects) throw Error(Errc::limit, "more than 100 objects");
    if (ocrs.size() > kMaxOcrTokens) throw Error(Errc::limit, "more than 50 OCR tokens");
    const std::size_t d = dim();
    for (const auto& x : objects) require_dim(x.size(), d, "object feature");
    for (const auto& y : ocrs) require_dim(y.size(), d, "OCR feature");
  }
};

struct Summaries {
  Vector f_obj;
  Vector f_ocr;
};

struct CalibrationState {
  Vector q_obj;             // condensed question, object branch
  Vector q_ocr;             // condensed question, OCR branch
  Vector s_obj;             // alpha, one per object
  Vector s_ocr;             // beta, one per OCR token
  Matrix delta;             // objects x OCR tokens
  Vector s_ocr_calibrated;  // beta + delta^T alpha
  Vector f_obj;
  Vector f_ocr;
};

// ---------------------------------------------------------------------------
// Question condensation

struct CondenseTrace {
  std::vector<Vector> hidden;  // conv1 outputs (pre-activation)
  Vector scores;               // conv2 outputs
  Vector weights;              // softmax over tokens
  Vector condensed;
};

inline CondenseTrace condense_trace(const QuestionSequence& q, const CondenseParams& p) {
  q.validate();
  require_dim(q.dim(), p.dim(), "condense params");
  require_dim(p.conv2.in_dim(), p.conv1.out_dim(), "conv2 input");
  require_dim(p.conv2.out_dim(), 1, "conv2 output");
  CondenseTrace t;
  t.hidden.reserve(q.length());
  t.scores.reserve(q.length());
  for (const auto& token : q.tokens) {
    t.hidden.push_back(linear(p.conv1, token));
    t.scores.push_back(linear(p.conv2, relu(t.hidden.back()))[0]);
  }
  t.weights = softmax(t.scores);
  t.condensed.assign(q.dim(), 0.0);
  for (std::size_t i = 0; i < q.length(); ++i) axpy(t.weights[i], q.tokens[i], t.condensed);
  return t;
}

/// Softmax-weighted sum of the question tokens.
inline Vector condense_question(const QuestionSequence& q, const CondenseParams& p) {
  return condense_trace(q, p).condensed;
}

/// Accumulates into `grad` and returns dL/dq_i for every token.
inline std::vector<Vector> condense_question_backward(const QuestionSequence& q, const CondenseParams& p,
                                                      std::span<const double> grad_out,
                                                      CondenseParams& grad) {
  const auto t = condense_trace(q, p);
  require_dim(grad_out.size(), q.dim(), "condense_question_backward");
  const std::size_t len = q.length();
  Vector grad_w(len);
  std::vector<Vector> grad_tokens(len, Vector(q.dim(), 0.0));
  for (std::size_t i = 0; i < len; ++i) {
    grad_w[i] = dot(grad_out, q.tokens[i]);
    axpy(t.weights[i], grad_out, grad_tokens[i]);
  }
  const Vector grad_s = softmax_backward(t.weights, grad_w);
  for (std::size_t i = 0; i < len; ++i) {
    const Vector act = relu(t.hidden[i]);
    const Vector grad_act = linear_backward(p.conv2, act, std::span<const double>(&grad_s[i], 1), grad.conv2);
    Vector grad_hidden(grad_act.size());
    for (std::size_t k = 0; k < grad_act.size(); ++k) grad_hidden[k] = t.hidden[i][k] > 0.0 ? grad_act[k] : 0.0;
    const Vector g = linear_backward(p.conv1, q.tokens[i], grad_hidden, grad.conv1);
    axpy(1.0, g, grad_tokens[i]);
  }
  return grad_tokens;
}

// ---------------------------------------------------------------------------
// Attention

/// softmax_i( query . feat_i / sqrt(D) )
inline Vector attention_scores(std::span<const double> query, const std::vector<Vector>& feats) {
  if (feats.empty()) throw Error(Errc::empty_vector, "attention over no features");
  const double scale = 1.0 / std::sqrt(static_cast<double>(query.size()));
  Vector logits(feats.size());
  for (std::size_t i = 0; i < feats.size(); ++i) logits[i] = dot(query, feats[i]) * scale;
  return softmax(logits);
}

inline void attention_scores_backward(std::span<const double> query, const std::vector<Vector>& feats,
                                      std::span<const double> scores, std::span<const double> grad_scores,
                                      Vector& grad_query, std::vector<Vector>& grad_feats) {
  require_dim(scores.size(), feats.size(), "attention scores");
  const double scale = 1.0 / std::sqrt(static_cast<double>(query.size()));
  const Vector grad_logits = softmax_backward(scores, grad_scores);
  grad_query.resize(query.size(), 0.0);
  grad_feats.resize(feats.size(), Vector(query.size(), 0.0));
  for (std::size_t i = 0; i < feats.size(); ++i) {
    axpy(grad_logits[i] * scale, feats[i], grad_query);
    axpy(grad_logits[i] * scale, query, grad_feats[i]);
  }
}

// ---------------------------------------------------------------------------
// Depth-aware weight transfer

/// Transfer rates from each object (rows) to each OCR token (columns).
/// Each column is a softmax over objects of CR * (1 - (d_obj - d_ocr)); a
/// column whose OCR box is touched by no object is zero.
inline Matrix transfer_rates(const std::vector<Token>& objects, const std::vector<Token>& ocrs) {
  const std::size_t n = objects.size(), m = ocrs.size();
  Matrix delta(n, m, 0.0);
  if (n == 0) return delta;
  Vector logits(n);
  for (std::size_t j = 0; j < m; ++j) {
    bool covered = false;
    for (std::size_t i = 0; i < n; ++i) {
      const double cr = cover_rate(objects[i].box, ocrs[j].box);
      covered = covered || cr > 0.0;
      logits[i] = cr * (1.0 - (objects[i].depth - ocrs[j].depth));
    }
    if (!covered) continue;
    const Vector column = softmax(logits);
    for (std::size_t i = 0; i < n; ++i) delta(i, j) = column[i];
  }
  return delta;
}

/// beta'_j = beta_j + sum_i delta_ij alpha_i (not renormalized).
inline Vector calibrated_ocr_weights(std::span<const double> s_obj, std::span<const double> s_ocr,
                                     const Matrix& delta) {
  require_dim(delta.rows(), s_obj.size(), "delta rows");
  require_dim(delta.cols(), s_ocr.size(), "delta cols");
  Vector out(s_ocr.begin(), s_ocr.end());
  for (std::size_t i = 0; i < delta.rows(); ++i) {
    for (std::size_t j = 0; j < delta.cols(); ++j) out[j] += delta(i, j) * s_obj[i];
  }
  return out;
}

inline Summaries calibrate(std::span<const double> s_obj, std::span<const double> s_ocr, const Matrix& delta,
                           const FeatureSet& feats) {
  require_dim(s_obj.size(), feats.objects.size(), "object scores");
  require_dim(s_ocr.size(), feats.ocrs.size(), "OCR scores");
  const Vector beta = calibrated_ocr_weights(s_obj, s_ocr, delta);
  const std::size_t d = feats.dim();
  Summaries out{Vector(d, 0.0), Vector(d, 0.0)};
  for (std::size_t i = 0; i < feats.objects.size(); ++i) axpy(s_obj[i], feats.objects[i], out.f_obj);
  for (std::size_t j = 0; j < feats.ocrs.size(); ++j) axpy(beta[j], feats.ocrs[j], out.f_ocr);
  return out;
}

struct CalibrateGrads {
  Vector s_obj;
  Vector s_ocr;
  std::vector<Vector> objects;
  std::vector<Vector> ocrs;
};

inline CalibrateGrads calibrate_backward(std::span<const double> s_obj, std::span<const double> s_ocr,
                                         const Matrix& delta, const FeatureSet& feats,
                                         std::span<const double> grad_f_obj, std::span<const double> grad_f_ocr) {
  const Vector beta = calibrated_ocr_weights(s_obj, s_ocr, delta);
  const std::size_t n = feats.objects.size(), m = feats.ocrs.size(), d = feats.dim();
  CalibrateGrads g{Vector(n, 0.0), Vector(m, 0.0), std::vector<Vector>(n, Vector(d, 0.0)),
                   std::vector<Vector>(m, Vector(d, 0.0))};
  for (std::size_t j = 0; j < m; ++j) {
    g.s_ocr[j] = dot(grad_f_ocr, feats.ocrs[j]);
    axpy(beta[j], grad_f_ocr, g.ocrs[j]);
  }
  for (std::size_t i = 0; i < n; ++i) {
    double acc = dot(grad_f_obj, feats.objects[i]);
    for (std::size_t j = 0; j < m; ++j) acc += delta(i, j) * g.s_ocr[j];
    g.s_obj[i] = acc;
    axpy(s_obj[i], grad_f_obj, g.objects[i]);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Whole module

/// Runs condensation, attention, transfer and summaries in that order.
/// With `apply_transfer` false the transfer matrix is forced to zero.
inline CalibrationState run(const QuestionSequence& q, const DacParams& p, const std::vector<Token>& objects,
                            const std::vector<Token>& ocrs, bool apply_transfer = true) {
  FeatureSet feats;
  for (const auto& t : objects) feats.objects.push_back(t.feature);
  for (const auto& t : ocrs) feats.ocrs.push_back(t.feature);
  feats.validate();
  require_dim(feats.dim(), q.dim(), "feature dim vs question dim");

  CalibrationState s;
  s.q_ocr = condense_question(q, p.ocr);
  s.q_obj = condense_question(q, p.obj);
  s.s_obj = attention_scores(s.q_obj, feats.objects);
  s.s_ocr = attention_scores(s.q_ocr, feats.ocrs);
  s.delta = apply_transfer ? transfer_rates(objects, ocrs) : Matrix(objects.size(), ocrs.size(), 0.0);
  s.s_ocr_calibrated = calibrated_ocr_weights(s.s_obj, s.s_ocr, s.delta);
  auto sums = calibrate(s.s_obj, s.s_ocr, s.delta, feats);
  s.f_obj = std::move(sums.f_obj);
  s.f_ocr = std::move(sums.f_ocr);
  return s;
}

struct DacGrads {
  DacParams params;
  std::vector<Vector> objects;
  std::vector<Vector> ocrs;
  std::vector<Vector> question;
};

/// Backpropagates dL/dF_obj and dL/dF_ocr through summaries, attention and
/// both condensers. The transfer matrix is geometry-only and held fixed.
inline DacGrads backward(const QuestionSequence& q, const DacParams& p, const FeatureSet& feats,
                         const Matrix& delta, std::span<const double> grad_f_obj,
                         std::span<const double> grad_f_ocr) {
  const Vector q_ocr = condense_question(q, p.ocr);
  const Vector q_obj = condense_question(q, p.obj);
  const Vector s_obj = attention_scores(q_obj, feats.objects);
  const Vector s_ocr = attention_scores(q_ocr, feats.ocrs);

  auto cg = calibrate_backward(s_obj, s_ocr, delta, feats, grad_f_obj, grad_f_ocr);
  DacGrads g{zeros_like(p), std::move(cg.objects), std::move(cg.ocrs), {}};

  Vector grad_q_obj, grad_q_ocr;
  std::vector<Vector> extra_obj, extra_ocr;
  attention_scores_backward(q_obj, feats.objects, s_obj, cg.s_obj, grad_q_obj, extra_obj);
  attention_scores_backward(q_ocr, feats.ocrs, s_ocr, cg.s_ocr, grad_q_ocr, extra_ocr);
  for (std::size_t i = 0; i < g.objects.size(); ++i) axpy(1.0, extra_obj[i], g.objects[i]);
  for (std::size_t j = 0; j < g.ocrs.size(); ++j) axpy(1.0, extra_ocr[j], g.ocrs[j]);

  g.question = condense_question_backward(q, p.obj, grad_q_obj, g.params.obj);
  const auto from_ocr = condense_question_backward(q, p.ocr, grad_q_ocr, g.params.ocr);
  for (std::size_t i = 0; i < g.question.size(); ++i) axpy(1.0, from_ocr[i], g.question[i]);
  return g;
}

}  // namespace depthcal::dac
