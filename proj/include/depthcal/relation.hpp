#pragma once

// Relation prediction: boxes and depths are fused into object features, a
// two-layer head scores every ordered object pair, and the pair scores are
// supervised with geometry-derived targets through a mean BCE.

#include <array>
#include <cstddef>
#include <vector>

#include "depthcal/error.hpp"
#include "depthcal/geometry.hpp"
#include "depthcal/numerics.hpp"

namespace depthcal::relation {

inline constexpr std::size_t kBoxDims = 5;
using Box3d = std::array<double, kBoxDims>;

/// (x1, y1, x2, y2) scaled by the image size, followed by depth.
inline Box3d box3d(const Token& t, std::size_t image_height, std::size_t image_width) {
  const double w = static_cast<double>(image_width), h = static_cast<double>(image_height);
  return {t.box.x1 / w, t.box.y1 / h, t.box.x2 / w, t.box.y2 / h, t.depth};
}

struct SpatialFusionParams {
  LinearParams w_v;   // D_vis -> D
  LinearParams w_bx;  // 5 -> D
  LayerNormParams ln_v;
  LayerNormParams ln_b;

  SpatialFusionParams() = default;
  SpatialFusionParams(std::size_t vis_dim, std::size_t dim)
      : w_v(vis_dim, dim), w_bx(kBoxDims, dim), ln_v(dim), ln_b(dim) {}

  std::size_t dim() const noexcept { return w_v.out_dim(); }

  template <typename F>
  void for_each_tensor(F&& fn) {
    w_v.for_each_tensor(fn);
    w_bx.for_each_tensor(fn);
    ln_v.for_each_tensor(fn);
    ln_b.for_each_tensor(fn);
  }
  template <typename F>
  void for_each_tensor(F&& fn) const {
    w_v.for_each_tensor(fn);
    w_bx.for_each_tensor(fn);
    ln_v.for_each_tensor(fn);
    ln_b.for_each_tensor(fn);
  }
};

struct RelationHeadParams {
  LinearParams w_obj;  // D -> D_h
  LinearParams w;      // D_h -> 1; its bias is the scalar b

  RelationHeadParams() = default;
  RelationHeadParams(std::size_t dim, std::size_t hidden) : w_obj(dim, hidden), w(hidden, 1) {}

  double bias() const { return w.bias.at(0); }

  template <typename F>
  void for_each_tensor(F&& fn) {
    w_obj.for_each_tensor(fn);
    w.for_each_tensor(fn);
  }
  template <typename F>
  void for_each_tensor(F&& fn) const {
    w_obj.for_each_tensor(fn);
    w.for_each_tensor(fn);
  }
};

struct RelationMaps {
  Matrix rel;
  Matrix gt;
};

// ---------------------------------------------------------------------------
// Spatial fusion

inline Vector fuse_spatial(std::span<const double> f_v, const Box3d& box, const SpatialFusionParams& p) {
  Vector out = layer_norm(p.ln_v, linear(p.w_v, f_v));
  axpy(1.0, layer_norm(p.ln_b, linear(p.w_bx, box)), out);
  return out;
}

/// Accumulates into `grad`, returns dL/df_v.
inline Vector fuse_spatial_backward(std::span<const double> f_v, const Box3d& box, const SpatialFusionParams& p,
                                    std::span<const double> grad_out, SpatialFusionParams& grad) {
  const Vector vis = linear(p.w_v, f_v);
  const Vector geo = linear(p.w_bx, box);
  const Vector grad_vis = layer_norm_backward(p.ln_v, vis, grad_out, grad.ln_v);
  const Vector grad_geo = layer_norm_backward(p.ln_b, geo, grad_out, grad.ln_b);
  linear_backward(p.w_bx, box, grad_geo, grad.w_bx);
  return linear_backward(p.w_v, f_v, grad_vis, grad.w_v);
}

// ---------------------------------------------------------------------------
// Relation head

/// r_ij = W (W_obj f_j - W_obj f_i) + b
inline double relation_head(std::span<const double> f_i, std::span<const double> f_j, const RelationHeadParams& p) {
  require_dim(f_i.size(), p.w_obj.in_dim(), "relation_head f_i");
  require_dim(f_j.size(), p.w_obj.in_dim(), "relation_head f_j");
  Vector diff = linear(p.w_obj, f_j);
  axpy(-1.0, linear(p.w_obj, f_i), diff);
  return linear(p.w, diff)[0];
}

inline Matrix relation_matrix(const std::vector<Vector>& fused, const RelationHeadParams& p) {
  const std::size_t n = fused.size();
  if (n < 2) throw Error(Errc::insufficient_objects, "relation map needs at least 2 objects");
  std::vector<Vector> proj;
  proj.reserve(n);
  for (const auto& f : fused) proj.push_back(linear(p.w_obj, f));
  const double b = p.bias();
  Matrix rel(n, n, b);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      Vector diff = proj[j];
      axpy(-1.0, proj[i], diff);
      rel(i, j) = dot(p.w.weight.row(0), diff) + b;
    }
  }
  return rel;
}

/// Returns dL/d fused_k given dL/d rel (diagonal entries are constant b and
/// carry no gradient).
inline std::vector<Vector> relation_matrix_backward(const std::vector<Vector>& fused, const RelationHeadParams& p,
                                                    const Matrix& grad_rel, RelationHeadParams& grad) {
  const std::size_t n = fused.size();
  require_dim(grad_rel.rows(), n, "grad_rel rows");
  require_dim(grad_rel.cols(), n, "grad_rel cols");
  std::vector<Vector> proj;
  for (const auto& f : fused) proj.push_back(linear(p.w_obj, f));
  const std::size_t hidden = p.w_obj.out_dim();
  std::vector<Vector> grad_proj(n, Vector(hidden, 0.0));
  const auto w_row = p.w.weight.row(0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double g = grad_rel(i, j);
      grad.w.bias[0] += g;
      auto gw = grad.w.weight.row(0);
      for (std::size_t k = 0; k < hidden; ++k) gw[k] += g * (proj[j][k] - proj[i][k]);
      axpy(g, w_row, grad_proj[j]);
      axpy(-g, w_row, grad_proj[i]);
    }
  }
  std::vector<Vector> grad_fused;
  grad_fused.reserve(n);
  for (std::size_t k = 0; k < n; ++k) grad_fused.push_back(linear_backward(p.w_obj, fused[k], grad_proj[k], grad.w_obj));
  return grad_fused;
}

// ---------------------------------------------------------------------------
// Targets and loss

/// gt(i, j) from geometry; the diagonal is zero.
inline Matrix gt_matrix(const std::vector<Token>& objects) {
  const std::size_t n = objects.size();
  Matrix gt(n, n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j) gt(i, j) = gt_relation(objects[i], objects[j]);
    }
  }
  return gt;
}

/// Mean over off-diagonal pairs of bce(sigmoid(r_ij), gt_ij), row-major order.
inline double spatial_loss(const Matrix& rel, const Matrix& gt) {
  require_dim(gt.rows(), rel.rows(), "spatial_loss rows");
  require_dim(gt.cols(), rel.cols(), "spatial_loss cols");
  require_dim(rel.cols(), rel.rows(), "spatial_loss square");
  const std::size_t n = rel.rows();
  if (n < 2) throw Error(Errc::insufficient_objects, "spatial loss needs at least 2 objects");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j) total += bce_term(sigmoid(rel(i, j)), gt(i, j));
    }
  }
  return total / static_cast<double>(n * (n - 1));
}

inline Matrix spatial_loss_backward(const Matrix& rel, const Matrix& gt) {
  const std::size_t n = rel.rows();
  const double count = static_cast<double>(n * (n - 1));
  Matrix grad(n, n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double p = sigmoid(rel(i, j));
      if (p <= kBceEps || p >= 1.0 - kBceEps) continue;
      grad(i, j) = (p - gt(i, j)) / count;
    }
  }
  return grad;
}

// ---------------------------------------------------------------------------
// End-to-end over a scene's objects

struct RelationParams {
  SpatialFusionParams fusion;
  RelationHeadParams head;

  template <typename F>
  void for_each_tensor(F&& fn) {
    fusion.for_each_tensor(fn);
    head.for_each_tensor(fn);
  }
  template <typename F>
  void for_each_tensor(F&& fn) const {
    fusion.for_each_tensor(fn);
    head.for_each_tensor(fn);
  }
};

struct RelationInputs {
  std::vector<Vector> visual;
  std::vector<Box3d> boxes;
  Matrix gt;
};

inline RelationInputs make_inputs(const std::vector<Token>& objects, std::size_t image_height,
                                  std::size_t image_width) {
  RelationInputs in;
  for (const auto& t : objects) {
    in.visual.push_back(t.feature);
    in.boxes.push_back(box3d(t, image_height, image_width));
  }
  in.gt = gt_matrix(objects);
  return in;
}

inline std::vector<Vector> fuse_all(const RelationInputs& in, const SpatialFusionParams& p) {
  require_dim(in.boxes.size(), in.visual.size(), "relation inputs");
  std::vector<Vector> fused;
  fused.reserve(in.visual.size());
  for (std::size_t k = 0; k < in.visual.size(); ++k) fused.push_back(fuse_spatial(in.visual[k], in.boxes[k], p));
  return fused;
}

inline RelationMaps relation_maps(const RelationInputs& in, const RelationParams& p) {
  return {relation_matrix(fuse_all(in, p.fusion), p.head), in.gt};
}

inline double spatial_loss(const RelationInputs& in, const RelationParams& p) {
  const auto maps = relation_maps(in, p);
  return spatial_loss(maps.rel, maps.gt);
}

/// Loss and full parameter gradient.
inline double spatial_loss_grad(const RelationInputs& in, const RelationParams& p, RelationParams& grad) {
  const auto fused = fuse_all(in, p.fusion);
  const Matrix rel = relation_matrix(fused, p.head);
  const Matrix grad_rel = spatial_loss_backward(rel, in.gt);
  const auto grad_fused = relation_matrix_backward(fused, p.head, grad_rel, grad.head);
  for (std::size_t k = 0; k < fused.size(); ++k) {
    fuse_spatial_backward(in.visual[k], in.boxes[k], p.fusion, grad_fused[k], grad.fusion);
  }
  return spatial_loss(rel, in.gt);
}

/// Fixed-step gradient descent on the spatial loss. Returns the loss before
/// each step followed by the final loss (steps + 1 entries).
inline std::vector<double> train(const RelationInputs& in, RelationParams& p, std::size_t steps,
                                 double learning_rate) {
  std::vector<double> history;
  history.reserve(steps + 1);
  for (std::size_t s = 0; s < steps; ++s) {
    RelationParams grad = zeros_like(p);
    history.push_back(spatial_loss_grad(in, p, grad));
    Vector theta = flatten(p);
    const Vector g = flatten(grad);
    axpy(-learning_rate, g, theta);
    unflatten(p, theta);
  }
  history.push_back(spatial_loss(in, p));
  return history;
}

}  // namespace depthcal::relation
