#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "persbev/geometry.hpp"
#include "persbev/tensor.hpp"

namespace persbev {

// Image feature tensor, [C][H][W].
struct FeatureMap {
  Tensor<float> data;
};

enum class DepthMode { predicted, uniform_one, static_random, onehot_oracle };

inline const char* to_string(DepthMode m) {
  switch (m) {
    case DepthMode::predicted: return "predicted";
    case DepthMode::uniform_one: return "uniform_one";
    case DepthMode::static_random: return "static_random";
    case DepthMode::onehot_oracle: return "onehot_oracle";
  }
  return "?";
}

// Categorical depth, [Dbins][H][W]. All modes except uniform_one carry a
// per-pixel distribution summing to 1; uniform_one is deliberately left
// unnormalized at exactly 1 per entry.
struct DepthDistribution {
  Tensor<float> data;
  DepthMode mode = DepthMode::predicted;
};

// Lifted frustum tensor, [C][Dbins][H][W].
struct Frustum3DFeature {
  Tensor<float> data;
};

// Height-collapsed perspective BEV feature, [C][Dbins][W].
struct PerspBEVFeature {
  Tensor<float> data;
};

// Deterministic uniform in [0,1); mt19937_64 output is standardized, so this
// reproduces bitwise across platforms.
inline double u01(std::mt19937_64& rng) { return (rng() >> 11) * 0x1.0p-53; }

inline DepthDistribution softmax_depth(const Tensor<float>& logits) {
  if (logits.rank() != 3) throw std::invalid_argument("softmax_depth: expected [D][H][W] logits");
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!std::isfinite(logits.data()[i])) throw std::domain_error("softmax_depth: non-finite logit");
  }
  const std::size_t d = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
  DepthDistribution out{Tensor<float>({d, h, w}), DepthMode::predicted};
  const std::size_t plane = h * w;
  for (std::size_t p = 0; p < plane; ++p) {
    double mx = logits.data()[p];
    for (std::size_t k = 1; k < d; ++k) mx = std::max(mx, static_cast<double>(logits.data()[k * plane + p]));
    double sum = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double e = std::exp(static_cast<double>(logits.data()[k * plane + p]) - mx);
      out.data.data()[k * plane + p] = static_cast<float>(e);
      sum += e;
    }
    for (std::size_t k = 0; k < d; ++k) {
      out.data.data()[k * plane + p] = static_cast<float>(out.data.data()[k * plane + p] / sum);
    }
  }
  return out;
}

// uniform_one and static_random factories; predicted comes from softmax_depth
// and onehot_oracle from onehot_oracle_depth.
inline DepthDistribution make_depth_mode(DepthMode mode, std::uint64_t seed,
                                         std::array<std::size_t, 3> shape) {
  const auto dims = std::vector<std::size_t>{shape[0], shape[1], shape[2]};
  switch (mode) {
    case DepthMode::uniform_one:
      return {Tensor<float>(dims, 1.0f), DepthMode::uniform_one};
    case DepthMode::static_random: {
      DepthDistribution out{Tensor<float>(dims), DepthMode::static_random};
      std::mt19937_64 rng(seed);
      for (std::size_t i = 0; i < out.data.size(); ++i) out.data.data()[i] = static_cast<float>(u01(rng));
      const std::size_t d = shape[0], plane = shape[1] * shape[2];
      for (std::size_t p = 0; p < plane; ++p) {
        double sum = 0.0;
        for (std::size_t k = 0; k < d; ++k) sum += out.data.data()[k * plane + p];
        if (sum <= 0.0) sum = 1.0;
        for (std::size_t k = 0; k < d; ++k) {
          out.data.data()[k * plane + p] = static_cast<float>(out.data.data()[k * plane + p] / sum);
        }
      }
      return out;
    }
    case DepthMode::predicted:
      throw std::invalid_argument("make_depth_mode: predicted requires logits, use softmax_depth");
    case DepthMode::onehot_oracle:
      throw std::invalid_argument("make_depth_mode: onehot_oracle requires a depth map, use onehot_oracle_depth");
  }
  throw std::invalid_argument("make_depth_mode: unknown mode");
}

// One-hot distribution from a ground-truth depth map at feature resolution.
// Pixels whose depth falls outside [depth_min, depth_max) get an all-zero
// column (flagged invalid by construction).
inline DepthDistribution onehot_oracle_depth(const Tensor<float>& gt_depth, const FrustumGrid& grid) {
  if (gt_depth.rank() != 2 || gt_depth.dim(0) != static_cast<std::size_t>(grid.feat_h) ||
      gt_depth.dim(1) != static_cast<std::size_t>(grid.feat_w)) {
    throw std::invalid_argument("onehot_oracle_depth: depth map must be [feat_h][feat_w]");
  }
  const std::size_t d = grid.depth_bins, h = grid.feat_h, w = grid.feat_w;
  DepthDistribution out{Tensor<float>({d, h, w}), DepthMode::onehot_oracle};
  const double bw = grid.bin_width();
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const double depth = gt_depth(i, j);
      if (!std::isfinite(depth) || depth < grid.depth_min || depth >= grid.depth_max) continue;
      auto k = static_cast<std::size_t>((depth - grid.depth_min) / bw);
      if (k >= d) k = d - 1;
      out.data(k, i, j) = 1.0f;
    }
  }
  return out;
}

// F3D[c,k,h,w] = F[c,h,w] * D[k,h,w].
inline Frustum3DFeature outer_product_lift(const FeatureMap& f, const DepthDistribution& d) {
  if (f.data.rank() != 3 || d.data.rank() != 3 || f.data.dim(1) != d.data.dim(1) ||
      f.data.dim(2) != d.data.dim(2)) {
    throw std::invalid_argument("outer_product_lift: feature/depth shape mismatch");
  }
  const std::size_t c = f.data.dim(0), k = d.data.dim(0), h = f.data.dim(1), w = f.data.dim(2);
  Frustum3DFeature out{Tensor<float>({c, k, h, w})};
  const std::size_t plane = h * w;
  const float* fp = f.data.data();
  const float* dp = d.data.data();
  float* op = out.data.data();
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      const float* frow = fp + ci * plane;
      const float* drow = dp + ki * plane;
      float* orow = op + (ci * k + ki) * plane;
      for (std::size_t p = 0; p < plane; ++p) orow[p] = frow[p] * drow[p];
    }
  }
  return out;
}

inline std::vector<float> ones_weights(std::size_t h) { return std::vector<float>(h, 1.0f); }

// Weighted linear reduction along the image-height axis:
// out[c,k,w] = sum_h weights[h] * f3d[c,k,h,w].
inline PerspBEVFeature collapse_height(const Frustum3DFeature& f3d, std::span<const float> weights) {
  if (f3d.data.rank() != 4) throw std::invalid_argument("collapse_height: expected [C][D][H][W]");
  const std::size_t c = f3d.data.dim(0), k = f3d.data.dim(1), h = f3d.data.dim(2), w = f3d.data.dim(3);
  if (weights.size() != h) throw std::invalid_argument("collapse_height: weight length must equal H");
  PerspBEVFeature out{Tensor<float>({c, k, w})};
  const float* ip = f3d.data.data();
  float* op = out.data.data();
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      float* orow = op + (ci * k + ki) * w;
      for (std::size_t hi = 0; hi < h; ++hi) {
        const float wt = weights[hi];
        const float* irow = ip + ((ci * k + ki) * h + hi) * w;
        for (std::size_t wi = 0; wi < w; ++wi) orow[wi] += wt * irow[wi];
      }
    }
  }
  return out;
}

}  // namespace persbev
