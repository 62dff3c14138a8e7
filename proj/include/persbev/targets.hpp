#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "persbev/geometry.hpp"
#include "persbev/tensor.hpp"

namespace persbev {

// Oriented 3D box. yaw rotates around the vertical axis; velocity lives on
// the ground plane.
struct Box3D {
  WorldPoint center;
  double length = 0.0;  // along heading
  double width = 0.0;
  double height = 0.0;
  double yaw = 0.0;
  double vx = 0.0;
  double vz = 0.0;
  int class_id = 0;
};

struct LossConfig {
  double depth_weight = 3.0;
  double heatmap_radius_min = 2.0;  // cells
  double prob_clamp_eps = 1e-6;
  bool log_sizes = true;  // regress box sizes in log space (linear available)
};

// Attribute channel layout of TargetSet::attrs and of prediction maps.
enum AttrChannel : int {
  kAttrOffsetW = 0,
  kAttrOffsetD = 1,
  kAttrHeight = 2,
  kAttrSizeL = 3,
  kAttrSizeW = 4,
  kAttrSizeH = 5,
  kAttrSinYaw = 6,
  kAttrCosYaw = 7,
  kAttrVelX = 8,
  kAttrVelZ = 9,
};
constexpr int kNumAttrChannels = 10;

constexpr int kDirIgnore = -1;

// Learning targets on the perspective (w, d) lattice.
struct TargetSet {
  int n_classes = 0;
  int feat_w = 0;
  int depth_bins = 0;
  Tensor<double> heatmap;        // [K][W][Dbins], peaks exactly 1
  Tensor<double> attrs;          // [10][W][Dbins], defined where mask is true
  std::vector<int> dir_class;    // [W][Dbins]; 0, 1, or kDirIgnore
  std::vector<std::uint8_t> mask;  // [W][Dbins] positive cells
  int n_skipped = 0;             // boxes outside the frustum or depth range

  std::size_t cell(int w, int d) const { return static_cast<std::size_t>(w) * depth_bins + d; }
};

// Orientation relative to the viewing ray through the box center; invariant
// to translation along that ray.
inline double local_yaw(double yaw, const WorldPoint& center) {
  if (!(center.z > 0.0)) throw std::domain_error("local_yaw: center depth must be positive");
  return wrap_angle(yaw - std::atan2(center.x, center.z));
}

// 0 for wrapped yaw in [-pi/2, pi/2), else 1.
inline int direction_class(double yaw) {
  const double a = wrap_angle(yaw);
  return (a >= -kPi / 2.0 && a < kPi / 2.0) ? 0 : 1;
}

// Lattice assignment of a box center: positive cell plus the continuous
// coordinates it was rounded from.
struct CellAssignment {
  int w = 0;
  int k = 0;
  double cw = 0.0;
  double ck = 0.0;
  FrustumPoint proj;
};

inline std::optional<CellAssignment> assign_cell(const Box3D& box, const FrustumGrid& grid) {
  if (!(box.center.z > 0.0)) return std::nullopt;
  const FrustumPoint fp = project(grid.intr, box.center);
  if (fp.u < 0.0 || fp.u >= grid.intr.image_w || fp.v < 0.0 || fp.v >= grid.intr.image_h ||
      fp.d < grid.depth_min || fp.d >= grid.depth_max) {
    return std::nullopt;
  }
  CellAssignment a;
  a.cw = grid.cell_of_u(fp.u);
  a.ck = grid.bin_of_depth(fp.d);
  a.w = static_cast<int>(std::clamp<long>(std::llround(a.cw), 0, grid.feat_w - 1));
  a.k = static_cast<int>(std::clamp<long>(std::llround(a.ck), 0, grid.depth_bins - 1));
  a.proj = fp;
  return a;
}

// Renders heatmap targets with the perspective effect baked into the lattice,
// fills attribute channels at positive cells, and records direction classes.
// Boxes whose centers project outside the frustum or depth range are skipped
// and counted. Overlapping positives resolve last-writer-wins in input order.
inline TargetSet encode_targets(std::span<const Box3D> boxes, const FrustumGrid& grid,
                                const LossConfig& cfg, int n_classes = -1) {
  if (n_classes < 0) {
    n_classes = 1;
    for (const Box3D& b : boxes) n_classes = std::max(n_classes, b.class_id + 1);
  }
  const int W = grid.feat_w, D = grid.depth_bins;
  TargetSet t;
  t.n_classes = n_classes;
  t.feat_w = W;
  t.depth_bins = D;
  t.heatmap = Tensor<double>({static_cast<std::size_t>(n_classes), static_cast<std::size_t>(W),
                              static_cast<std::size_t>(D)});
  t.attrs = Tensor<double>({static_cast<std::size_t>(kNumAttrChannels), static_cast<std::size_t>(W),
                            static_cast<std::size_t>(D)});
  t.dir_class.assign(static_cast<std::size_t>(W) * D, kDirIgnore);
  t.mask.assign(static_cast<std::size_t>(W) * D, 0);

  const double bin_w = grid.bin_width();
  for (const Box3D& box : boxes) {
    if (!(box.length > 0.0 && box.width > 0.0 && box.height > 0.0)) {
      throw std::invalid_argument("encode_targets: box sizes must be positive");
    }
    if (box.class_id < 0 || box.class_id >= n_classes) {
      throw std::invalid_argument("encode_targets: class_id out of range");
    }
    const auto a = assign_cell(box, grid);
    if (!a) {
      ++t.n_skipped;
      continue;
    }

    // Splat radius per axis, in cells. Horizontal cell size in meters grows
    // with depth, so the footprint is converted at the box's own depth.
    const double half_diag = 0.5 * std::hypot(box.length, box.width);
    const double spacing = a->proj.d * grid.stride / grid.intr.fx;
    const double rw = std::max(cfg.heatmap_radius_min, half_diag / spacing);
    const double rd = std::max(cfg.heatmap_radius_min, half_diag / bin_w);
    const double sw = rw / 3.0, sd = rd / 3.0;
    const int win_w = static_cast<int>(std::ceil(rw));
    const int win_d = static_cast<int>(std::ceil(rd));
    for (int dw = -win_w; dw <= win_w; ++dw) {
      const int w = a->w + dw;
      if (w < 0 || w >= W) continue;
      for (int dd = -win_d; dd <= win_d; ++dd) {
        const int k = a->k + dd;
        if (k < 0 || k >= D) continue;
        const double g = std::exp(-0.5 * (dw * dw / (sw * sw) + dd * dd / (sd * sd)));
        double& cell = t.heatmap(box.class_id, w, k);
        cell = std::max(cell, g);
      }
    }
    t.heatmap(box.class_id, a->w, a->k) = 1.0;

    const std::size_t cell = t.cell(a->w, a->k);
    t.mask[cell] = 1;
    t.dir_class[cell] = direction_class(box.yaw);
    const double alpha = local_yaw(box.yaw, box.center);
    t.attrs(kAttrOffsetW, a->w, a->k) = a->cw - a->w;
    t.attrs(kAttrOffsetD, a->w, a->k) = a->ck - a->k;
    t.attrs(kAttrHeight, a->w, a->k) = box.center.y;
    t.attrs(kAttrSizeL, a->w, a->k) = cfg.log_sizes ? std::log(box.length) : box.length;
    t.attrs(kAttrSizeW, a->w, a->k) = cfg.log_sizes ? std::log(box.width) : box.width;
    t.attrs(kAttrSizeH, a->w, a->k) = cfg.log_sizes ? std::log(box.height) : box.height;
    t.attrs(kAttrSinYaw, a->w, a->k) = std::sin(alpha);
    t.attrs(kAttrCosYaw, a->w, a->k) = std::cos(alpha);
    t.attrs(kAttrVelX, a->w, a->k) = box.vx;
    t.attrs(kAttrVelZ, a->w, a->k) = box.vz;
  }
  return t;
}

struct DetectionLoss {
  double total = 0.0;
  double objectness_ce = 0.0;
  double attr_l1 = 0.0;
  double direction_ce = 0.0;
};

// Binary cross-entropy over every heatmap cell (targets may be soft in splat
// skirts), mean absolute attribute error averaged per positive cell, and an
// optional 2-way direction cross-entropy on positive cells. pred_dir holds
// class probabilities shaped [2][W][Dbins]; pass an empty tensor to skip it.
inline DetectionLoss detection_loss(const Tensor<double>& pred_obj, const Tensor<double>& pred_attr,
                                    const TargetSet& t, const LossConfig& cfg,
                                    const Tensor<double>& pred_dir = Tensor<double>{}) {
  if (!pred_obj.same_shape(t.heatmap)) throw std::invalid_argument("detection_loss: heatmap shape mismatch");
  if (!pred_attr.same_shape(t.attrs)) throw std::invalid_argument("detection_loss: attr shape mismatch");
  const double eps = cfg.prob_clamp_eps;

  DetectionLoss out;
  double ce = 0.0;
  for (std::size_t i = 0; i < pred_obj.size(); ++i) {
    const double p = std::clamp(pred_obj.data()[i], eps, 1.0 - eps);
    const double y = t.heatmap.data()[i];
    ce -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  out.objectness_ce = pred_obj.size() ? ce / static_cast<double>(pred_obj.size()) : 0.0;

  std::size_t n_pos = 0;
  double l1 = 0.0;
  const std::size_t cells = t.mask.size();
  for (std::size_t cell = 0; cell < cells; ++cell) {
    if (!t.mask[cell]) continue;
    ++n_pos;
    for (int a = 0; a < kNumAttrChannels; ++a) {
      const std::size_t idx = static_cast<std::size_t>(a) * cells + cell;
      l1 += std::abs(pred_attr.data()[idx] - t.attrs.data()[idx]);
    }
  }
  out.attr_l1 = n_pos ? l1 / (static_cast<double>(n_pos) * kNumAttrChannels) : 0.0;

  if (!pred_dir.empty()) {
    if (pred_dir.rank() != 3 || pred_dir.dim(0) != 2 || pred_dir.dim(1) != t.heatmap.dim(1) ||
        pred_dir.dim(2) != t.heatmap.dim(2)) {
      throw std::invalid_argument("detection_loss: direction prediction must be [2][W][Dbins]");
    }
    double dce = 0.0;
    std::size_t n_dir = 0;
    for (std::size_t cell = 0; cell < cells; ++cell) {
      const int y = t.dir_class[cell];
      if (!t.mask[cell] || y == kDirIgnore) continue;
      ++n_dir;
      dce -= std::log(std::clamp(pred_dir.data()[static_cast<std::size_t>(y) * cells + cell], eps, 1.0 - eps));
    }
    out.direction_ce = n_dir ? dce / static_cast<double>(n_dir) : 0.0;
  }

  out.total = out.objectness_ce + out.attr_l1 + out.direction_ce;
  return out;
}

struct DepthLoss {
  double loss = 0.0;
  Tensor<double> grad;  // [Dbins][H][W], zero at excluded pixels
  std::size_t valid_pixels = 0;
};

// Per-pixel softmax cross-entropy against the bin containing the ground-truth
// depth. Pixels outside [depth_min, depth_max) are excluded from loss and
// gradient; the gradient is (softmax - onehot) / n_valid at the rest.
inline DepthLoss depth_loss(const Tensor<double>& depth_logits, const Tensor<double>& gt_depth,
                            const FrustumGrid& grid) {
  if (depth_logits.rank() != 3 || depth_logits.dim(0) != static_cast<std::size_t>(grid.depth_bins)) {
    throw std::invalid_argument("depth_loss: logits must be [Dbins][H][W]");
  }
  if (gt_depth.rank() != 2 || gt_depth.dim(0) != depth_logits.dim(1) ||
      gt_depth.dim(1) != depth_logits.dim(2)) {
    throw std::invalid_argument("depth_loss: depth map shape mismatch");
  }
  for (std::size_t i = 0; i < depth_logits.size(); ++i) {
    if (!std::isfinite(depth_logits.data()[i])) throw std::domain_error("depth_loss: non-finite logit");
  }
  const std::size_t d = depth_logits.dim(0);
  const std::size_t plane = depth_logits.dim(1) * depth_logits.dim(2);
  const double bw = grid.bin_width();

  DepthLoss out;
  out.grad = Tensor<double>(depth_logits.dims());
  std::vector<std::size_t> valid_pix;
  std::vector<std::size_t> valid_bin;
  for (std::size_t p = 0; p < plane; ++p) {
    const double depth = gt_depth.data()[p];
    if (!std::isfinite(depth) || depth < grid.depth_min || depth >= grid.depth_max) continue;
    auto k = static_cast<std::size_t>((depth - grid.depth_min) / bw);
    if (k >= d) k = d - 1;
    valid_pix.push_back(p);
    valid_bin.push_back(k);
  }
  out.valid_pixels = valid_pix.size();
  if (valid_pix.empty()) return out;

  const double inv_n = 1.0 / static_cast<double>(valid_pix.size());
  double loss = 0.0;
  std::vector<double> prob(d);
  for (std::size_t i = 0; i < valid_pix.size(); ++i) {
    const std::size_t p = valid_pix[i];
    double mx = depth_logits.data()[p];
    for (std::size_t k = 1; k < d; ++k) mx = std::max(mx, depth_logits.data()[k * plane + p]);
    double sum = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      prob[k] = std::exp(depth_logits.data()[k * plane + p] - mx);
      sum += prob[k];
    }
    for (std::size_t k = 0; k < d; ++k) prob[k] /= sum;
    loss -= std::log(prob[valid_bin[i]]);
    for (std::size_t k = 0; k < d; ++k) {
      out.grad.data()[k * plane + p] = (prob[k] - (k == valid_bin[i] ? 1.0 : 0.0)) * inv_n;
    }
  }
  out.loss = loss * inv_n;
  return out;
}

inline double total_loss(double det, double depth, const LossConfig& cfg) {
  if (!std::isfinite(det) || !std::isfinite(depth)) {
    throw std::invalid_argument("total_loss: terms must be finite");
  }
  return det + cfg.depth_weight * depth;
}

}  // namespace persbev
