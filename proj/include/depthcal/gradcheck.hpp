#pragma once

// Finite-difference verification of every hand-written backward pass.
// Each block builds a seeded random instance, flattens everything it
// differentiates into one vector, and compares the analytic gradient with
// central differences.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "depthcal/dac.hpp"
#include "depthcal/evalkit.hpp"
#include "depthcal/numerics.hpp"
#include "depthcal/relation.hpp"
#include "depthcal/rng.hpp"

namespace depthcal::gradcheck {

inline constexpr double kTolerance = 1e-4;
inline constexpr double kStep = 1e-5;

struct BlockResult {
  std::string block;
  std::string module;
  double max_rel_error = 0.0;
  std::size_t seeds = 0;
  bool passed() const noexcept { return max_rel_error < kTolerance; }
};

struct Options {
  std::size_t seeds = 10;
  std::uint64_t base_seed = 0x5EED;
  /// Test hook: corrupt the analytic gradient so the check must fail.
  bool perturb_analytic = false;
};

namespace detail {

inline Vector random_vector(SplitMix64& rng, std::size_t n, double scale = 1.0) {
  Vector v(n);
  for (double& x : v) x = rng.uniform(-scale, scale);
  return v;
}

inline std::vector<Vector> random_vectors(SplitMix64& rng, std::size_t count, std::size_t n, double scale = 1.0) {
  std::vector<Vector> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(random_vector(rng, n, scale));
  return out;
}

inline void randomize(LinearParams& p, SplitMix64& rng) {
  for (double& w : p.weight.data()) w = rng.uniform(-0.8, 0.8);
  for (double& b : p.bias) b = rng.uniform(-0.3, 0.3);
}

inline void randomize(LayerNormParams& p, SplitMix64& rng) {
  for (double& g : p.gain) g = rng.uniform(0.5, 1.5);
  for (double& s : p.shift) s = rng.uniform(-0.3, 0.3);
}

/// Runs one instance: `loss` must be a pure function of `inst`, `grad`
/// returns a record of the same shape holding the analytic gradient.
template <typename Inst, typename Loss, typename Grad>
double check_instance(const Inst& inst, Loss&& loss, Grad&& grad, bool perturb) {
  const Vector theta = flatten(inst);
  Vector analytic = flatten(grad(inst));
  if (perturb) {
    for (double& g : analytic) g *= 1.001;
    analytic[0] += 1e-3;
  }
  const Vector numeric = finite_diff_grad(
      [&](std::span<const double> x) {
        Inst probe = inst;
        unflatten(probe, x);
        return loss(probe);
      },
      theta, kStep);
  return relative_error(analytic, numeric);
}

// ---------------------------------------------------------------------------
// Instances

struct CondenseInst {
  dac::CondenseParams params;
  std::vector<Vector> tokens;
  Vector probe;  // fixed loss direction, carried but not differentiated

  template <typename F>
  void for_each_tensor(F&& fn) {
    params.for_each_tensor(fn);
    for (auto& t : tokens) fn(t);
  }
  template <typename F>
  void for_each_tensor(F&& fn) const {
    params.for_each_tensor(fn);
    for (const auto& t : tokens) fn(t);
  }
};

struct AttentionInst {
  Vector query;
  std::vector<Vector> feats;
  Vector probe;

  template <typename F>
  void for_each_tensor(F&& fn) {
    fn(query);
    for (auto& f : feats) fn(f);
  }
  template <typename F>
  void for_each_tensor(F&& fn) const {
    fn(query);
    for (const auto& f : feats) fn(f);
  }
};

struct CalibrateInst {
  Vector s_obj;
  Vector s_ocr;
  dac::FeatureSet feats;
  Matrix delta;
  Vector probe_obj, probe_ocr;

  template <typename F>
  void for_each_tensor(F&& fn) {
    fn(s_obj);
    fn(s_ocr);
    for (auto& x : feats.objects) fn(x);
    for (auto& y : feats.ocrs) fn(y);
  }
  template <typename F>
  void for_each_tensor(F&& fn) const {
    fn(s_obj);
    fn(s_ocr);
    for (const auto& x : feats.objects) fn(x);
    for (const auto& y : feats.ocrs) fn(y);
  }
};

struct DacInst {
  dac::DacParams params;
  dac::QuestionSequence question;
  dac::FeatureSet feats;
  Matrix delta;
  Vector probe_obj, probe_ocr;

  template <typename F>
  void for_each_tensor(F&& fn) {
    params.for_each_tensor(fn);
    for (auto& q : question.tokens) fn(q);
    for (auto& x : feats.objects) fn(x);
    for (auto& y : feats.ocrs) fn(y);
  }
  template <typename F>
  void for_each_tensor(F&& fn) const {
    params.for_each_tensor(fn);
    for (const auto& q : question.tokens) fn(q);
    for (const auto& x : feats.objects) fn(x);
    for (const auto& y : feats.ocrs) fn(y);
  }
};

struct FusionInst {
  relation::SpatialFusionParams params;
  Vector visual;
  relation::Box3d box{};
  Vector probe;

  template <typename F>
  void for_each_tensor(F&& fn) {
    params.for_each_tensor(fn);
    fn(visual);
  }
  template <typename F>
  void for_each_tensor(F&& fn) const {
    params.for_each_tensor(fn);
    fn(visual);
  }
};

struct HeadInst {
  relation::RelationHeadParams params;
  std::vector<Vector> fused;
  Matrix probe;

  template <typename F>
  void for_each_tensor(F&& fn) {
    params.for_each_tensor(fn);
    for (auto& f : fused) fn(f);
  }
  template <typename F>
  void for_each_tensor(F&& fn) const {
    params.for_each_tensor(fn);
    for (const auto& f : fused) fn(f);
  }
};

struct SpatialInst {
  relation::RelationParams params;
  relation::RelationInputs inputs;

  template <typename F>
  void for_each_tensor(F&& fn) {
    params.for_each_tensor(fn);
    for (auto& v : inputs.visual) fn(v);
  }
  template <typename F>
  void for_each_tensor(F&& fn) const {
    params.for_each_tensor(fn);
    for (const auto& v : inputs.visual) fn(v);
  }
};

struct SemanticInst {
  evalkit::AnswerInputs in;
  Vector scale;  // one entry mirroring in.ocr_weight_scale
  evalkit::AnswerSpace space;
  Vector targets;

  template <typename F>
  void for_each_tensor(F&& fn) {
    fn(in.query);
    fn(in.ocr_weights);
    for (auto& y : in.ocr_feats) fn(y);
    for (auto& e : in.vocab_embeds) fn(e);
    fn(scale);
  }
  template <typename F>
  void for_each_tensor(F&& fn) const {
    fn(in.query);
    fn(in.ocr_weights);
    for (const auto& y : in.ocr_feats) fn(y);
    for (const auto& e : in.vocab_embeds) fn(e);
    fn(scale);
  }
};

struct SoftmaxBceInst {
  Vector logits;
  Vector targets;
  LayerNormParams ln;

  template <typename F>
  void for_each_tensor(F&& fn) {
    fn(logits);
    ln.for_each_tensor(fn);
  }
  template <typename F>
  void for_each_tensor(F&& fn) const {
    fn(logits);
    ln.for_each_tensor(fn);
  }
};

// ---------------------------------------------------------------------------
// Blocks

inline double condense_block(std::uint64_t seed, bool perturb) {
  SplitMix64 rng(seed);
  const std::size_t d = 4 + rng.below(5), len = 1 + rng.below(8);
  CondenseInst inst{dac::CondenseParams(d), random_vectors(rng, len, d), random_vector(rng, d)};
  randomize(inst.params.conv1, rng);
  randomize(inst.params.conv2, rng);
  const auto loss = [](const CondenseInst& x) {
    return dot(x.probe, dac::condense_question({x.tokens}, x.params));
  };
  const auto grad = [](const CondenseInst& x) {
    CondenseInst g = x;
    g.params = zeros_like(x.params);
    g.tokens = dac::condense_question_backward({x.tokens}, x.params, x.probe, g.params);
    return g;
  };
  return check_instance(inst, loss, grad, perturb);
}

inline double attention_block(std::uint64_t seed, bool perturb) {
  SplitMix64 rng(seed);
  const std::size_t d = 4 + rng.below(5), n = 2 + rng.below(6);
  AttentionInst inst{random_vector(rng, d), random_vectors(rng, n, d), random_vector(rng, n)};
  const auto loss = [](const AttentionInst& x) { return dot(x.probe, dac::attention_scores(x.query, x.feats)); };
  const auto grad = [](const AttentionInst& x) {
    AttentionInst g = x;
    g.query.clear();
    g.feats.clear();
    const Vector scores = dac::attention_scores(x.query, x.feats);
    dac::attention_scores_backward(x.query, x.feats, scores, x.probe, g.query, g.feats);
    return g;
  };
  return check_instance(inst, loss, grad, perturb);
}

inline Matrix random_transfer(SplitMix64& rng, std::size_t n, std::size_t m) {
  Matrix delta(n, m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    if (rng.uniform() < 0.2) continue;  // masked column
    Vector logits = random_vector(rng, n, 2.0);
    const Vector col = softmax(logits);
    for (std::size_t i = 0; i < n; ++i) delta(i, j) = col[i];
  }
  return delta;
}

inline double calibrate_block(std::uint64_t seed, bool perturb) {
  SplitMix64 rng(seed);
  const std::size_t d = 4 + rng.below(5), n = 1 + rng.below(6), m = 1 + rng.below(6);
  CalibrateInst inst;
  inst.s_obj = softmax(random_vector(rng, n));
  inst.s_ocr = softmax(random_vector(rng, m));
  inst.feats = {random_vectors(rng, n, d), random_vectors(rng, m, d)};
  inst.delta = random_transfer(rng, n, m);
  inst.probe_obj = random_vector(rng, d);
  inst.probe_ocr = random_vector(rng, d);
  const auto loss = [](const CalibrateInst& x) {
    const auto s = dac::calibrate(x.s_obj, x.s_ocr, x.delta, x.feats);
    return dot(x.probe_obj, s.f_obj) + dot(x.probe_ocr, s.f_ocr);
  };
  const auto grad = [](const CalibrateInst& x) {
    auto cg = dac::calibrate_backward(x.s_obj, x.s_ocr, x.delta, x.feats, x.probe_obj, x.probe_ocr);
    CalibrateInst g = x;
    g.s_obj = cg.s_obj;
    g.s_ocr = cg.s_ocr;
    g.feats = {cg.objects, cg.ocrs};
    return g;
  };
  return check_instance(inst, loss, grad, perturb);
}

inline double dac_block(std::uint64_t seed, bool perturb) {
  SplitMix64 rng(seed);
  const std::size_t d = 4 + rng.below(4), n = 1 + rng.below(5), m = 1 + rng.below(5), len = 1 + rng.below(6);
  DacInst inst;
  inst.params = dac::DacParams(d);
  for (auto* b : {&inst.params.ocr, &inst.params.obj}) {
    randomize(b->conv1, rng);
    randomize(b->conv2, rng);
  }
  inst.question.tokens = random_vectors(rng, len, d);
  inst.feats = {random_vectors(rng, n, d), random_vectors(rng, m, d)};
  inst.delta = random_transfer(rng, n, m);
  inst.probe_obj = random_vector(rng, d);
  inst.probe_ocr = random_vector(rng, d);
  const auto loss = [](const DacInst& x) {
    const Vector s_obj = dac::attention_scores(dac::condense_question(x.question, x.params.obj), x.feats.objects);
    const Vector s_ocr = dac::attention_scores(dac::condense_question(x.question, x.params.ocr), x.feats.ocrs);
    const auto s = dac::calibrate(s_obj, s_ocr, x.delta, x.feats);
    return dot(x.probe_obj, s.f_obj) + dot(x.probe_ocr, s.f_ocr);
  };
  const auto grad = [](const DacInst& x) {
    auto dg = dac::backward(x.question, x.params, x.feats, x.delta, x.probe_obj, x.probe_ocr);
    DacInst g = x;
    g.params = dg.params;
    g.question.tokens = dg.question;
    g.feats = {dg.objects, dg.ocrs};
    return g;
  };
  return check_instance(inst, loss, grad, perturb);
}

inline double fusion_block(std::uint64_t seed, bool perturb) {
  SplitMix64 rng(seed);
  const std::size_t vis = 3 + rng.below(5), d = 3 + rng.below(5);
  FusionInst inst;
  inst.params = relation::SpatialFusionParams(vis, d);
  randomize(inst.params.w_v, rng);
  randomize(inst.params.w_bx, rng);
  randomize(inst.params.ln_v, rng);
  randomize(inst.params.ln_b, rng);
  inst.visual = random_vector(rng, vis);
  for (double& b : inst.box) b = rng.uniform();
  inst.probe = random_vector(rng, d);
  const auto loss = [](const FusionInst& x) { return dot(x.probe, relation::fuse_spatial(x.visual, x.box, x.params)); };
  const auto grad = [](const FusionInst& x) {
    FusionInst g = x;
    g.params = zeros_like(x.params);
    g.visual = relation::fuse_spatial_backward(x.visual, x.box, x.params, x.probe, g.params);
    return g;
  };
  return check_instance(inst, loss, grad, perturb);
}

inline double head_block(std::uint64_t seed, bool perturb) {
  SplitMix64 rng(seed);
  const std::size_t d = 3 + rng.below(5), hidden = 2 + rng.below(5), n = 2 + rng.below(4);
  HeadInst inst;
  inst.params = relation::RelationHeadParams(d, hidden);
  randomize(inst.params.w_obj, rng);
  randomize(inst.params.w, rng);
  inst.fused = random_vectors(rng, n, d);
  inst.probe = Matrix(n, n);
  for (double& c : inst.probe.data()) c = rng.uniform(-1.0, 1.0);
  const auto loss = [](const HeadInst& x) {
    const Matrix rel = relation::relation_matrix(x.fused, x.params);
    double s = 0.0;
    for (std::size_t i = 0; i < rel.rows(); ++i) {
      for (std::size_t j = 0; j < rel.cols(); ++j) {
        if (i != j) s += x.probe(i, j) * rel(i, j);
      }
    }
    return s;
  };
  const auto grad = [](const HeadInst& x) {
    HeadInst g = x;
    g.params = zeros_like(x.params);
    g.fused = relation::relation_matrix_backward(x.fused, x.params, x.probe, g.params);
    return g;
  };
  return check_instance(inst, loss, grad, perturb);
}

inline double spatial_block(std::uint64_t seed, bool perturb) {
  SplitMix64 rng(seed);
  const std::size_t vis = 3 + rng.below(4), d = 3 + rng.below(4), n = 2 + rng.below(4);
  SpatialInst inst;
  inst.params.fusion = relation::SpatialFusionParams(vis, d);
  inst.params.head = relation::RelationHeadParams(d, d);
  randomize(inst.params.fusion.w_v, rng);
  randomize(inst.params.fusion.w_bx, rng);
  randomize(inst.params.fusion.ln_v, rng);
  randomize(inst.params.fusion.ln_b, rng);
  randomize(inst.params.head.w_obj, rng);
  randomize(inst.params.head.w, rng);
  inst.inputs.visual = random_vectors(rng, n, vis);
  for (std::size_t k = 0; k < n; ++k) {
    relation::Box3d b{};
    for (double& c : b) c = rng.uniform();
    inst.inputs.boxes.push_back(b);
  }
  inst.inputs.gt = Matrix(n, n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j) inst.inputs.gt(i, j) = rng.uniform() < 0.5 ? 0.0 : rng.uniform();
    }
  }
  const auto loss = [](const SpatialInst& x) { return relation::spatial_loss(x.inputs, x.params); };
  const auto grad = [](const SpatialInst& x) {
    SpatialInst g = x;
    g.params = zeros_like(x.params);
    relation::spatial_loss_grad(x.inputs, x.params, g.params);
    // Visual inputs: chain through fusion by hand.
    const auto fused = relation::fuse_all(x.inputs, x.params.fusion);
    const Matrix rel = relation::relation_matrix(fused, x.params.head);
    relation::RelationHeadParams scratch_head = zeros_like(x.params.head);
    const auto grad_fused =
        relation::relation_matrix_backward(fused, x.params.head, relation::spatial_loss_backward(rel, x.inputs.gt), scratch_head);
    relation::SpatialFusionParams scratch_fusion = zeros_like(x.params.fusion);
    for (std::size_t k = 0; k < fused.size(); ++k) {
      g.inputs.visual[k] =
          relation::fuse_spatial_backward(x.inputs.visual[k], x.inputs.boxes[k], x.params.fusion, grad_fused[k], scratch_fusion);
    }
    return g;
  };
  return check_instance(inst, loss, grad, perturb);
}

inline double semantic_block(std::uint64_t seed, bool perturb) {
  SplitMix64 rng(seed);
  const std::size_t d = 4 + rng.below(5), v = 1 + rng.below(5), m = 1 + rng.below(5);
  SemanticInst inst;
  inst.in.query = random_vector(rng, d);
  inst.in.ocr_weights = random_vector(rng, m);
  inst.in.ocr_feats = random_vectors(rng, m, d);
  inst.in.vocab_embeds = random_vectors(rng, v, d);
  inst.scale = {rng.uniform(0.5, 2.0)};
  inst.space.vocab.assign(v, "v");
  inst.space.ocr_texts.assign(m, "o");
  inst.targets = Vector(v + m);
  for (double& t : inst.targets) t = rng.uniform() < 0.3 ? rng.uniform() : 0.0;
  const auto loss = [](const SemanticInst& x) {
    evalkit::AnswerInputs in = x.in;
    in.ocr_weight_scale = x.scale[0];
    return evalkit::semantic_loss(evalkit::answer_scores(in, x.space), x.targets);
  };
  const auto grad = [](const SemanticInst& x) {
    evalkit::AnswerInputs in = x.in;
    in.ocr_weight_scale = x.scale[0];
    const Vector probs = evalkit::answer_scores(in, x.space);
    const Vector grad_probs = evalkit::semantic_loss_backward(probs, x.targets);
    SemanticInst g = x;
    g.in = evalkit::answer_scores_backward(in, probs, grad_probs);
    g.scale = {g.in.ocr_weight_scale};
    return g;
  };
  return check_instance(inst, loss, grad, perturb);
}

inline double numerics_block(std::uint64_t seed, bool perturb) {
  SplitMix64 rng(seed);
  const std::size_t n = 3 + rng.below(6);
  SoftmaxBceInst inst{random_vector(rng, n, 2.0), Vector(n), LayerNormParams(n)};
  for (double& t : inst.targets) t = rng.uniform();
  randomize(inst.ln, rng);
  // bce(softmax(layer_norm(x)))
  const auto loss = [](const SoftmaxBceInst& x) { return bce(softmax(layer_norm(x.ln, x.logits)), x.targets); };
  const auto grad = [](const SoftmaxBceInst& x) {
    SoftmaxBceInst g = x;
    g.ln = zeros_like(x.ln);
    const Vector normed = layer_norm(x.ln, x.logits);
    const Vector probs = softmax(normed);
    const Vector grad_normed = softmax_backward(probs, bce_backward(probs, x.targets));
    g.logits = layer_norm_backward(x.ln, x.logits, grad_normed, g.ln);
    return g;
  };
  return check_instance(inst, loss, grad, perturb);
}

struct Block {
  const char* name;
  const char* module;
  double (*run)(std::uint64_t, bool);
};

inline const std::vector<Block>& blocks() {
  static const std::vector<Block> all = {
      {"softmax_bce_layer_norm", "numerics", numerics_block},
      {"condense_question", "dac", condense_block},
      {"attention_scores", "dac", attention_block},
      {"calibrate", "dac", calibrate_block},
      {"dac_end_to_end", "dac", dac_block},
      {"fuse_spatial", "relation", fusion_block},
      {"relation_head", "relation", head_block},
      {"spatial_loss", "relation", spatial_block},
      {"semantic_loss", "evalkit", semantic_block},
  };
  return all;
}

}  // namespace detail

inline bool is_known_module(const std::string& module) {
  if (module == "all") return true;
  return std::any_of(detail::blocks().begin(), detail::blocks().end(),
                     [&](const detail::Block& b) { return module == b.module; });
}

/// Runs every block belonging to `module` ("all" for everything).
inline std::vector<BlockResult> run(const std::string& module, const Options& opts) {
  if (opts.seeds == 0) throw Error(Errc::no_seeds);
  if (!is_known_module(module)) throw Error(Errc::schema, "unknown module '" + module + "'");
  std::vector<BlockResult> results;
  for (const auto& b : detail::blocks()) {
    if (module != "all" && module != b.module) continue;
    BlockResult r{b.name, b.module, 0.0, opts.seeds};
    for (std::size_t s = 0; s < opts.seeds; ++s) {
      const std::uint64_t seed = opts.base_seed * 1000003ULL + s;
      r.max_rel_error = std::max(r.max_rel_error, b.run(seed, opts.perturb_analytic));
    }
    results.push_back(r);
  }
  return results;
}

}  // namespace depthcal::gradcheck
