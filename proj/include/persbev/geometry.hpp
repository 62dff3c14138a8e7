#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "persbev/error.hpp"

namespace persbev {

constexpr double kPi = 3.14159265358979323846;

// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  a = std::fmod(a, 2.0 * kPi);
  if (a <= -kPi) {
    a += 2.0 * kPi;
  } else if (a > kPi) {
    a -= 2.0 * kPi;
  }
  return a;
}

// Camera-centric axes: x right, y down (image-vertical), z forward (depth).
struct WorldPoint {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

// A point in frustum coordinates: image pixels plus metric depth.
struct FrustumPoint {
  double u = 0.0;
  double v = 0.0;
  double d = 0.0;
};

struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int image_w = 0;
  int image_h = 0;
};

inline void validate(const CameraIntrinsics& intr) {
  if (!(intr.fx > 0.0) || !(intr.fy > 0.0)) {
    throw ConfigError("camera intrinsics: focal lengths must be positive");
  }
  if (intr.image_w <= 0 || intr.image_h <= 0) {
    throw ConfigError("camera intrinsics: image size must be positive");
  }
}

inline FrustumPoint project(const CameraIntrinsics& intr, const WorldPoint& p) {
  if (!(p.z > 0.0)) throw std::domain_error("project: point depth must be positive");
  return {intr.fx * p.x / p.z + intr.cx, intr.fy * p.y / p.z + intr.cy, p.z};
}

inline WorldPoint inverse_project(const CameraIntrinsics& intr, double u, double v, double d) {
  if (!(d > 0.0)) throw std::domain_error("inverse_project: depth must be positive");
  return {(u - intr.cx) * d / intr.fx, (v - intr.cy) * d / intr.fy, d};
}

enum class DepthSpacing { uniform };

// Lattice of frustum anchors, one per feature cell and depth bin, with the
// matching world-space anchors cached. Treated as immutable once built; safe
// to share across threads.
struct FrustumGrid {
  CameraIntrinsics intr;
  int feat_w = 0;
  int feat_h = 0;
  int stride = 0;
  int depth_bins = 0;
  double depth_min = 0.0;
  double depth_max = 0.0;
  std::vector<WorldPoint> world_anchors;       // layout [feat_w][feat_h][depth_bins]
  std::vector<FrustumPoint> frustum_anchors;   // same layout

  double bin_width() const { return (depth_max - depth_min) / depth_bins; }

  std::size_t anchor_index(int w, int h, int k) const {
    return (static_cast<std::size_t>(w) * feat_h + h) * depth_bins + k;
  }
  const WorldPoint& world_anchor(int w, int h, int k) const {
    return world_anchors[anchor_index(w, h, k)];
  }
  const FrustumPoint& frustum_anchor(int w, int h, int k) const {
    return frustum_anchors[anchor_index(w, h, k)];
  }

  // Continuous cell coordinates; integer values land on cell centers.
  double u_of_cell(double cw) const { return (cw + 0.5) * stride; }
  double v_of_cell(double ch) const { return (ch + 0.5) * stride; }
  double depth_of_bin(double ck) const { return depth_min + (ck + 0.5) * bin_width(); }
  double cell_of_u(double u) const { return u / stride - 0.5; }
  double cell_of_v(double v) const { return v / stride - 0.5; }
  double bin_of_depth(double d) const { return (d - depth_min) / bin_width() - 0.5; }
};

inline FrustumGrid make_frustum_grid(const CameraIntrinsics& intr, int stride, int depth_bins,
                                     double depth_min, double depth_max,
                                     DepthSpacing spacing = DepthSpacing::uniform) {
  (void)spacing;  // only uniform bin spacing exists
  validate(intr);
  if (stride <= 0) throw ConfigError("frustum grid: stride must be positive");
  if (depth_bins < 1) throw ConfigError("frustum grid: need at least one depth bin");
  if (!(depth_min < depth_max)) throw ConfigError("frustum grid: depth_min must be below depth_max");
  if (intr.image_w % stride != 0 || intr.image_h % stride != 0) {
    throw ConfigError("frustum grid: image size must be divisible by stride");
  }

  FrustumGrid g;
  g.intr = intr;
  g.stride = stride;
  g.depth_bins = depth_bins;
  g.depth_min = depth_min;
  g.depth_max = depth_max;
  g.feat_w = intr.image_w / stride;
  g.feat_h = intr.image_h / stride;

  const double bw = g.bin_width();
  g.world_anchors.reserve(static_cast<std::size_t>(g.feat_w) * g.feat_h * depth_bins);
  g.frustum_anchors.reserve(g.world_anchors.capacity());
  for (int w = 0; w < g.feat_w; ++w) {
    const double u = (w + 0.5) * stride;
    for (int h = 0; h < g.feat_h; ++h) {
      const double v = (h + 0.5) * stride;
      for (int k = 0; k < depth_bins; ++k) {
        const double d = depth_min + (k + 0.5) * bw;
        g.frustum_anchors.push_back({u, v, d});
        g.world_anchors.push_back(inverse_project(intr, u, v, d));
      }
    }
  }
  return g;
}

struct SpacingSample {
  double depth = 0.0;    // depth bin center, meters
  double spacing = 0.0;  // horizontal world distance between adjacent anchors, meters
};

// Horizontal anchor spacing per depth bin. Grows linearly with depth
// (d * stride / fx), which is the perspective effect on the lattice.
inline std::vector<SpacingSample> anchor_spacing_profile(const FrustumGrid& g) {
  if (g.feat_w < 2) throw std::domain_error("anchor_spacing_profile: needs feat_w >= 2");
  std::vector<SpacingSample> out;
  out.reserve(g.depth_bins);
  for (int k = 0; k < g.depth_bins; ++k) {
    const WorldPoint& a = g.world_anchor(0, 0, k);
    const WorldPoint& b = g.world_anchor(1, 0, k);
    out.push_back({g.frustum_anchor(0, 0, k).d, b.x - a.x});
  }
  return out;
}

}  // namespace persbev
