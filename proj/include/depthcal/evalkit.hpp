#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "depthcal/error.hpp"
#include "depthcal/geometry.hpp"
#include "depthcal/numerics.hpp"

namespace depthcal::evalkit {

// ---------------------------------------------------------------------------
// ANLS

inline std::string normalize_answer(std::string_view s) {
  const auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  auto first = std::find_if_not(s.begin(), s.end(), is_space);
  auto last = std::find_if_not(s.rbegin(), std::string_view::reverse_iterator(first), is_space).base();
  std::string out(first, last);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::size_t levenshtein(std::string_view a, std::string_view b) {
  if (a.size() < b.size()) std::swap(a, b);
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t subst = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, subst});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline constexpr double kAnlsThreshold = 0.5;

/// 1 - normalized edit distance, zeroed when the distance exceeds the
/// threshold. Compares after trimming and lower-casing.
inline double anls(std::string_view pred, std::string_view gt, double threshold = kAnlsThreshold) {
  const std::string p = normalize_answer(pred), g = normalize_answer(gt);
  const std::size_t longest = std::max(p.size(), g.size());
  if (longest == 0) return 1.0;
  const double nl = static_cast<double>(levenshtein(p, g)) / static_cast<double>(longest);
  return nl <= threshold ? 1.0 - nl : 0.0;
}

// ---------------------------------------------------------------------------
// Single-step answer scoring

/// Candidates are the fixed vocabulary followed by the scene's OCR tokens.
struct AnswerSpace {
  std::vector<std::string> vocab;
  std::vector<std::string> ocr_texts;

  std::size_t size() const noexcept { return vocab.size() + ocr_texts.size(); }
  const std::string& candidate(std::size_t k) const {
    return k < vocab.size() ? vocab[k] : ocr_texts.at(k - vocab.size());
  }
};

struct AnswerInputs {
  Vector query;
  Vector ocr_weights;  // calibrated OCR attention, one per OCR token
  std::vector<Vector> ocr_feats;
  std::vector<Vector> vocab_embeds;
  double ocr_weight_scale = 1.0;
};

inline void validate(const AnswerInputs& in, const AnswerSpace& space) {
  if (space.size() == 0) throw Error(Errc::empty_vector, "empty candidate space");
  require_dim(in.vocab_embeds.size(), space.vocab.size(), "vocab embeddings");
  require_dim(in.ocr_feats.size(), space.ocr_texts.size(), "OCR features");
  require_dim(in.ocr_weights.size(), space.ocr_texts.size(), "OCR weights");
  for (const auto& e : in.vocab_embeds) require_dim(e.size(), in.query.size(), "vocab embedding");
  for (const auto& y : in.ocr_feats) require_dim(y.size(), in.query.size(), "OCR feature");
}

inline Vector answer_logits(const AnswerInputs& in, const AnswerSpace& space) {
  validate(in, space);
  Vector logits;
  logits.reserve(space.size());
  for (const auto& e : in.vocab_embeds) logits.push_back(dot(in.query, e));
  for (std::size_t j = 0; j < in.ocr_feats.size(); ++j) {
    logits.push_back(dot(in.query, in.ocr_feats[j]) + in.ocr_weight_scale * in.ocr_weights[j]);
  }
  return logits;
}

inline Vector answer_scores(const AnswerInputs& in, const AnswerSpace& space) {
  return softmax(answer_logits(in, space));
}

/// Gradient of a loss with respect to every field of AnswerInputs.
inline AnswerInputs answer_scores_backward(const AnswerInputs& in, std::span<const double> probs, std::span<const double> grad_probs) {
  const Vector grad_logits = softmax_backward(probs, grad_probs);
  const std::size_t v = in.vocab_embeds.size();
  AnswerInputs g;
  g.query.assign(in.query.size(), 0.0);
  g.ocr_weights.assign(in.ocr_weights.size(), 0.0);
  g.ocr_feats.assign(in.ocr_feats.size(), Vector(in.query.size(), 0.0));
  g.vocab_embeds.assign(v, Vector(in.query.size(), 0.0));
  g.ocr_weight_scale = 0.0;
  for (std::size_t k = 0; k < v; ++k) {
    axpy(grad_logits[k], in.vocab_embeds[k], g.query);
    axpy(grad_logits[k], in.query, g.vocab_embeds[k]);
  }
  for (std::size_t j = 0; j < in.ocr_feats.size(); ++j) {
    const double gl = grad_logits[v + j];
    axpy(gl, in.ocr_feats[j], g.query);
    axpy(gl, in.query, g.ocr_feats[j]);
    g.ocr_weights[j] = gl * in.ocr_weight_scale;
    g.ocr_weight_scale += gl * in.ocr_weights[j];
  }
  return g;
}

// ---------------------------------------------------------------------------
// Losses

/// Soft target per candidate: its ANLS against the ground-truth answer.
inline Vector anls_targets(const AnswerSpace& space, std::string_view gt_answer) {
  Vector t(space.size());
  for (std::size_t k = 0; k < space.size(); ++k) t[k] = anls(space.candidate(k), gt_answer);
  return t;
}

inline double semantic_loss(std::span<const double> probs, std::span<const double> targets) {
  return bce(probs, targets);
}

inline double semantic_loss(std::span<const double> probs, std::string_view gt_answer, const AnswerSpace& space) {
  return semantic_loss(probs, anls_targets(space, gt_answer));
}

inline Vector semantic_loss_backward(std::span<const double> probs, std::span<const double> targets) {
  return bce_backward(probs, targets);
}

struct TrainConfig {
  double lambda_spatial = 1.0;
  double learning_rate = 0.05;
  std::size_t steps = 200;
  std::uint64_t seed = 0;
};

inline double total_loss(double semantic, double spatial, const TrainConfig& cfg) {
  return semantic + cfg.lambda_spatial * spatial;
}

// ---------------------------------------------------------------------------
// OCR noise reduction

inline std::string lowercase(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

/// Indices (ascending) of the OCR tokens that survive de-duplication:
/// high-IoU duplicates collapse onto the token with the longer text (earlier
/// index on ties), then tokens whose text is a strict substring of an
/// overlapping survivor's text are dropped.
inline std::vector<std::size_t> noise_reduction_keep(const std::vector<Token>& tokens, double iou_threshold = 0.5) {
  const std::size_t n = tokens.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return tokens[a].text.size() > tokens[b].text.size();
  });

  std::vector<std::size_t> first_pass;
  for (std::size_t idx : order) {
    const bool clashes = std::any_of(first_pass.begin(), first_pass.end(), [&](std::size_t kept) {
      return iou(tokens[idx].box, tokens[kept].box) > iou_threshold;
    });
    if (!clashes) first_pass.push_back(idx);
  }
  std::sort(first_pass.begin(), first_pass.end());

  std::vector<std::string> lowered(n);
  for (std::size_t i : first_pass) lowered[i] = lowercase(tokens[i].text);

  std::vector<std::size_t> keep;
  for (std::size_t i : first_pass) {
    const bool covered = std::any_of(first_pass.begin(), first_pass.end(), [&](std::size_t o) {
      return o != i && lowered[o].size() > lowered[i].size() && lowered[o].find(lowered[i]) != std::string::npos &&
             iou(tokens[i].box, tokens[o].box) > 0.0;
    });
    if (!covered) keep.push_back(i);
  }
  return keep;
}

inline std::vector<Token> ocr_noise_reduction(const std::vector<Token>& tokens, double iou_threshold = 0.5) {
  std::vector<Token> out;
  for (std::size_t i : noise_reduction_keep(tokens, iou_threshold)) out.push_back(tokens[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Spatial-question subset

inline bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

/// True when the question contains "on", "top" or "under" as a whole word.
inline bool is_spatial_question(std::string_view question) {
  std::size_t i = 0;
  while (i < question.size()) {
    while (i < question.size() && !is_word_char(question[i])) ++i;
    std::size_t j = i;
    while (j < question.size() && is_word_char(question[j])) ++j;
    if (j > i) {
      const std::string word = lowercase(question.substr(i, j - i));
      if (word == "on" || word == "top" || word == "under") return true;
    }
    i = j;
  }
  return false;
}

inline std::vector<std::size_t> subset_filter(const std::vector<std::string>& questions) {
  std::vector<std::size_t> picked;
  for (std::size_t i = 0; i < questions.size(); ++i) {
    if (is_spatial_question(questions[i])) picked.push_back(i);
  }
  return picked;
}

}  // namespace depthcal::evalkit
