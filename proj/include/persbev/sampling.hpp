#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "persbev/error.hpp"
#include "persbev/geometry.hpp"
#include "persbev/lift.hpp"

namespace persbev {

struct AxisRange {
  double lo = 0.0;
  double hi = 0.0;
};

// Regular world-space grid for the legacy sampling path. Axes: x lateral,
// z depth, y height (down). Cell centers sit at lo + (i + 0.5) * size.
struct VoxelGridSpec {
  AxisRange x_range, z_range, y_range;
  double size_x = 0.0, size_z = 0.0, size_y = 0.0;
  int nx = 0, nz = 0, ny = 0;

  double x_center(int i) const { return x_range.lo + (i + 0.5) * size_x; }
  double z_center(int i) const { return z_range.lo + (i + 0.5) * size_z; }
  double y_center(int i) const { return y_range.lo + (i + 0.5) * size_y; }

  // Floor binning; a value exactly on a cell boundary goes to the
  // lower-index cell. Returns -1 outside the grid.
  static int bin_index(double value, double lo, double size, int n) {
    const double t = (value - lo) / size;
    if (t < 0.0 || t > static_cast<double>(n)) return -1;
    int idx = static_cast<int>(std::ceil(t)) - 1;
    if (idx < 0) idx = 0;
    if (idx >= n) return -1;
    return idx;
  }
  int x_index(double x) const { return bin_index(x, x_range.lo, size_x, nx); }
  int z_index(double z) const { return bin_index(z, z_range.lo, size_z, nz); }
  int y_index(double y) const { return bin_index(y, y_range.lo, size_y, ny); }

  std::int64_t cell_count() const { return static_cast<std::int64_t>(nx) * nz * ny; }
};

inline VoxelGridSpec build_voxel_grid(AxisRange x_range, AxisRange z_range, AxisRange y_range,
                                      double size_x, double size_z, double size_y) {
  auto check = [](AxisRange r, double s, const char* axis) {
    if (!(r.lo < r.hi)) throw ConfigError(std::string("voxel grid: empty ") + axis + " range");
    if (!(s > 0.0)) throw ConfigError(std::string("voxel grid: non-positive ") + axis + " size");
  };
  check(x_range, size_x, "x");
  check(z_range, size_z, "z");
  check(y_range, size_y, "y");
  // floor(extent/size), with a small slack so exact multiples survive
  // floating-point division noise.
  auto dims_of = [](AxisRange r, double s) {
    return static_cast<int>(std::floor((r.hi - r.lo) / s + 1e-9));
  };
  VoxelGridSpec spec;
  spec.x_range = x_range;
  spec.z_range = z_range;
  spec.y_range = y_range;
  spec.size_x = size_x;
  spec.size_z = size_z;
  spec.size_y = size_y;
  spec.nx = dims_of(x_range, size_x);
  spec.nz = dims_of(z_range, size_z);
  spec.ny = dims_of(y_range, size_y);
  if (spec.nx < 1 || spec.nz < 1 || spec.ny < 1) {
    throw ConfigError("voxel grid: each axis must fit at least one cell");
  }
  return spec;
}

enum class Interp { nearest, trilinear };

// BEV feature on the regular lattice after height collapse, [C][nx][nz],
// with per-cell inside-FOV flags. Cells whose whole height column fell
// outside the FOV carry the fill value.
struct SampledBEVFeature {
  Tensor<float> data;
  std::vector<std::uint8_t> validity;  // [nx][nz]
  int nx = 0, nz = 0;

  bool valid(int ix, int iz) const { return validity[static_cast<std::size_t>(ix) * nz + iz] != 0; }
};

struct SourceCell {
  int w = 0, h = 0, k = 0;
};

// Continuous frustum-lattice coordinates of a world point (cell-center
// convention), or nothing for points at or behind the camera plane.
inline std::optional<std::array<double, 3>> frustum_coords(const FrustumGrid& g, const WorldPoint& p) {
  if (!(p.z > 0.0)) return std::nullopt;
  const double u = g.intr.fx * p.x / p.z + g.intr.cx;
  const double v = g.intr.fy * p.y / p.z + g.intr.cy;
  return std::array<double, 3>{g.cell_of_u(u), g.cell_of_v(v), g.bin_of_depth(p.z)};
}

inline std::optional<SourceCell> nearest_source_cell(const FrustumGrid& g, const WorldPoint& p) {
  const auto c = frustum_coords(g, p);
  if (!c) return std::nullopt;
  const long wi = std::llround((*c)[0]);
  const long hi = std::llround((*c)[1]);
  const long ki = std::llround((*c)[2]);
  if (wi < 0 || wi >= g.feat_w || hi < 0 || hi >= g.feat_h || ki < 0 || ki >= g.depth_bins) {
    return std::nullopt;
  }
  return SourceCell{static_cast<int>(wi), static_cast<int>(hi), static_cast<int>(ki)};
}

namespace detail {

inline void check_f3d_shape(const Frustum3DFeature& f3d, const FrustumGrid& grid) {
  if (f3d.data.rank() != 4 || f3d.data.dim(1) != static_cast<std::size_t>(grid.depth_bins) ||
      f3d.data.dim(2) != static_cast<std::size_t>(grid.feat_h) ||
      f3d.data.dim(3) != static_cast<std::size_t>(grid.feat_w)) {
    throw std::invalid_argument("sampling: frustum feature shape does not match grid");
  }
}

}  // namespace detail

// Gather-style resampling: each voxel center is projected into continuous
// frustum coordinates and reads the source feature there. Out-of-FOV voxels
// contribute the fill value. The height axis is collapsed with all-ones
// weights so the output is directly comparable to the sampling-free path.
inline SampledBEVFeature grid_sample(const Frustum3DFeature& f3d, const FrustumGrid& grid,
                                     const VoxelGridSpec& spec, Interp interp, float fill = 0.0f) {
  detail::check_f3d_shape(f3d, grid);
  const std::size_t c = f3d.data.dim(0);
  const std::size_t d = grid.depth_bins, h = grid.feat_h, w = grid.feat_w;
  SampledBEVFeature out;
  out.nx = spec.nx;
  out.nz = spec.nz;
  out.data = Tensor<float>({c, static_cast<std::size_t>(spec.nx), static_cast<std::size_t>(spec.nz)});
  out.validity.assign(static_cast<std::size_t>(spec.nx) * spec.nz, 0);

  const float* src = f3d.data.data();
  const std::size_t bev_plane = static_cast<std::size_t>(spec.nx) * spec.nz;
  float* dst = out.data.data();

  for (int ix = 0; ix < spec.nx; ++ix) {
    const double x = spec.x_center(ix);
    for (int iz = 0; iz < spec.nz; ++iz) {
      const double z = spec.z_center(iz);
      const std::size_t cell = static_cast<std::size_t>(ix) * spec.nz + iz;
      int valid_in_column = 0;
      for (int iy = 0; iy < spec.ny; ++iy) {
        const double y = spec.y_center(iy);
        const auto fc = frustum_coords(grid, {x, y, z});
        bool ok = false;
        if (fc) {
          const double cw = (*fc)[0], ch = (*fc)[1], ck = (*fc)[2];
          if (interp == Interp::nearest) {
            const long wi = std::llround(cw), hi = std::llround(ch), ki = std::llround(ck);
            if (wi >= 0 && wi < static_cast<long>(w) && hi >= 0 && hi < static_cast<long>(h) &&
                ki >= 0 && ki < static_cast<long>(d)) {
              ok = true;
              const std::size_t base = (static_cast<std::size_t>(ki) * h + hi) * w + wi;
              for (std::size_t ci = 0; ci < c; ++ci) {
                dst[ci * bev_plane + cell] += src[ci * d * h * w + base];
              }
            }
          } else {  // trilinear over the convex hull of cell centers
            if (cw >= 0.0 && cw <= static_cast<double>(w - 1) && ch >= 0.0 &&
                ch <= static_cast<double>(h - 1) && ck >= 0.0 && ck <= static_cast<double>(d - 1)) {
              ok = true;
              auto base_frac = [](double t, std::size_t n) {
                std::size_t b = static_cast<std::size_t>(t);
                if (n >= 2 && b > n - 2) b = n - 2;
                if (n == 1) b = 0;
                return std::pair<std::size_t, double>(b, t - static_cast<double>(b));
              };
              const auto [w0, tw] = base_frac(cw, w);
              const auto [h0, th] = base_frac(ch, h);
              const auto [k0, tk] = base_frac(ck, d);
              const std::size_t w1 = (w >= 2) ? w0 + 1 : w0;
              const std::size_t h1 = (h >= 2) ? h0 + 1 : h0;
              const std::size_t k1 = (d >= 2) ? k0 + 1 : k0;
              for (std::size_t ci = 0; ci < c; ++ci) {
                const float* ch0 = src + ci * d * h * w;
                auto at = [&](std::size_t ki, std::size_t hi, std::size_t wi) {
                  return static_cast<double>(ch0[(ki * h + hi) * w + wi]);
                };
                const double v000 = at(k0, h0, w0), v001 = at(k0, h0, w1);
                const double v010 = at(k0, h1, w0), v011 = at(k0, h1, w1);
                const double v100 = at(k1, h0, w0), v101 = at(k1, h0, w1);
                const double v110 = at(k1, h1, w0), v111 = at(k1, h1, w1);
                const double blend =
                    (1 - tk) * ((1 - th) * ((1 - tw) * v000 + tw * v001) + th * ((1 - tw) * v010 + tw * v011)) +
                    tk * ((1 - th) * ((1 - tw) * v100 + tw * v101) + th * ((1 - tw) * v110 + tw * v111));
                dst[ci * bev_plane + cell] += static_cast<float>(blend);
              }
            }
          }
        }
        if (ok) {
          ++valid_in_column;
        } else {
          for (std::size_t ci = 0; ci < c; ++ci) dst[ci * bev_plane + cell] += fill;
        }
      }
      if (valid_in_column > 0) {
        out.validity[cell] = 1;
      } else {
        for (std::size_t ci = 0; ci < c; ++ci) dst[ci * bev_plane + cell] = fill;
      }
    }
  }
  return out;
}

// Scatter-style resampling: every frustum cell's world anchor is binned into
// the voxel containing it (boundaries resolve to the lower-index cell) and
// summed, then the height axis is collapsed. Voxels nothing scattered into
// are zero with validity false.
inline SampledBEVFeature voxel_pool(const Frustum3DFeature& f3d, const FrustumGrid& grid,
                                    const VoxelGridSpec& spec) {
  detail::check_f3d_shape(f3d, grid);
  const std::size_t c = f3d.data.dim(0);
  const std::size_t d = grid.depth_bins, h = grid.feat_h, w = grid.feat_w;
  SampledBEVFeature out;
  out.nx = spec.nx;
  out.nz = spec.nz;
  out.data = Tensor<float>({c, static_cast<std::size_t>(spec.nx), static_cast<std::size_t>(spec.nz)});
  out.validity.assign(static_cast<std::size_t>(spec.nx) * spec.nz, 0);

  const float* src = f3d.data.data();
  const std::size_t bev_plane = static_cast<std::size_t>(spec.nx) * spec.nz;
  float* dst = out.data.data();

  // Fixed anchor iteration order keeps the scatter-sum deterministic.
  for (std::size_t wi = 0; wi < w; ++wi) {
    for (std::size_t hi = 0; hi < h; ++hi) {
      for (std::size_t ki = 0; ki < d; ++ki) {
        const WorldPoint& p =
            grid.world_anchor(static_cast<int>(wi), static_cast<int>(hi), static_cast<int>(ki));
        const int ix = spec.x_index(p.x);
        const int iz = spec.z_index(p.z);
        const int iy = spec.y_index(p.y);
        if (ix < 0 || iz < 0 || iy < 0) continue;
        const std::size_t cell = static_cast<std::size_t>(ix) * spec.nz + iz;
        out.validity[cell] = 1;
        const std::size_t base = (ki * h + hi) * w + wi;
        for (std::size_t ci = 0; ci < c; ++ci) {
          dst[ci * bev_plane + cell] += src[ci * d * h * w + base];
        }
      }
    }
  }
  return out;
}

struct CensusQuartile {
  std::int64_t n_sources = 0;                // all source cells in the quartile
  std::int64_t n_in_volume = 0;              // sources whose anchor lies inside the voxel volume
  std::int64_t n_unreferenced = 0;           // in-volume sources never read
  std::int64_t n_referenced = 0;             // sources read at least once
  std::int64_t n_referenced_in_volume = 0;
  std::int64_t total_references = 0;
  std::int64_t n_voxels = 0;
  std::int64_t n_invalid_voxels = 0;
  double under_sampled_fraction = 0.0;  // unreferenced / in-volume
  double duplication_factor = 0.0;      // mean references per referenced source; 0 if none
  double invalid_cell_fraction = 0.0;
};

// Exhaustive voxel-to-source census under the nearest rule. Source quartiles
// split the depth-bin axis; voxel quartiles split the voxel depth axis.
// Under-sampling is measured over sources the voxel volume actually covers:
// a far-field source above or below the grid's height range is
// unrepresentable rather than skipped, and counting it would mask the
// near-field/far-field asymmetry this census exists to expose.
struct SamplingCensus {
  std::array<CensusQuartile, 4> quartiles;
  CensusQuartile overall;
};

inline SamplingCensus sampling_census(const FrustumGrid& grid, const VoxelGridSpec& spec) {
  const std::size_t d = grid.depth_bins, h = grid.feat_h, w = grid.feat_w;
  std::vector<std::int64_t> refs(d * h * w, 0);
  std::array<std::int64_t, 4> voxels_per_q{}, invalid_per_q{};

  for (int ix = 0; ix < spec.nx; ++ix) {
    const double x = spec.x_center(ix);
    for (int iz = 0; iz < spec.nz; ++iz) {
      const double z = spec.z_center(iz);
      const int vq = std::min(3, iz * 4 / spec.nz);
      for (int iy = 0; iy < spec.ny; ++iy) {
        ++voxels_per_q[vq];
        const auto cell = nearest_source_cell(grid, {x, spec.y_center(iy), z});
        if (!cell) {
          ++invalid_per_q[vq];
        } else {
          ++refs[(static_cast<std::size_t>(cell->k) * h + cell->h) * w + cell->w];
        }
      }
    }
  }

  SamplingCensus census;
  for (std::size_t ki = 0; ki < d; ++ki) {
    const int sq = std::min<std::size_t>(3, ki * 4 / d);
    auto& q = census.quartiles[sq];
    for (std::size_t hi = 0; hi < h; ++hi) {
      for (std::size_t wi = 0; wi < w; ++wi) {
        const std::int64_t r = refs[(ki * h + hi) * w + wi];
        const WorldPoint& p =
            grid.world_anchor(static_cast<int>(wi), static_cast<int>(hi), static_cast<int>(ki));
        const bool in_volume =
            spec.x_index(p.x) >= 0 && spec.z_index(p.z) >= 0 && spec.y_index(p.y) >= 0;
        ++q.n_sources;
        if (in_volume) ++q.n_in_volume;
        if (r == 0) {
          if (in_volume) ++q.n_unreferenced;
        } else {
          ++q.n_referenced;
          if (in_volume) ++q.n_referenced_in_volume;
          q.total_references += r;
        }
      }
    }
  }
  for (int i = 0; i < 4; ++i) {
    auto& q = census.quartiles[i];
    q.n_voxels = voxels_per_q[i];
    q.n_invalid_voxels = invalid_per_q[i];
    q.under_sampled_fraction =
        q.n_in_volume ? static_cast<double>(q.n_unreferenced) / q.n_in_volume : 0.0;
    q.duplication_factor = q.n_referenced ? static_cast<double>(q.total_references) / q.n_referenced : 0.0;
    q.invalid_cell_fraction = q.n_voxels ? static_cast<double>(q.n_invalid_voxels) / q.n_voxels : 0.0;
    census.overall.n_sources += q.n_sources;
    census.overall.n_in_volume += q.n_in_volume;
    census.overall.n_unreferenced += q.n_unreferenced;
    census.overall.n_referenced += q.n_referenced;
    census.overall.n_referenced_in_volume += q.n_referenced_in_volume;
    census.overall.total_references += q.total_references;
    census.overall.n_voxels += q.n_voxels;
    census.overall.n_invalid_voxels += q.n_invalid_voxels;
  }
  auto& o = census.overall;
  o.under_sampled_fraction = o.n_in_volume ? static_cast<double>(o.n_unreferenced) / o.n_in_volume : 0.0;
  o.duplication_factor = o.n_referenced ? static_cast<double>(o.total_references) / o.n_referenced : 0.0;
  o.invalid_cell_fraction = o.n_voxels ? static_cast<double>(o.n_invalid_voxels) / o.n_voxels : 0.0;
  return census;
}

// Tensor payload bytes; overflow is reported, never wrapped.
inline std::uint64_t memory_footprint(std::span<const std::size_t> dims,
                                      std::uint64_t bytes_per_element = 4) {
  std::uint64_t acc = bytes_per_element;
  for (std::size_t dim : dims) {
    const auto d = static_cast<std::uint64_t>(dim);
    if (d == 0) return 0;
    if (acc > std::numeric_limits<std::uint64_t>::max() / d) {
      throw std::overflow_error("memory_footprint: byte count overflows 64 bits");
    }
    acc *= d;
  }
  return acc;
}

inline std::uint64_t memory_footprint(std::initializer_list<std::size_t> dims,
                                      std::uint64_t bytes_per_element = 4) {
  return memory_footprint(std::span<const std::size_t>(dims.begin(), dims.size()), bytes_per_element);
}

// Side-by-side footprint of the frustum tensor, the voxel tensor, and the
// voxel bytes wasted on out-of-FOV cells.
struct MemoryReport {
  std::uint64_t frustum_bytes = 0;
  std::uint64_t voxel_bytes = 0;
  double invalid_cell_fraction = 0.0;
  std::uint64_t invalid_waste_bytes = 0;
};

inline MemoryReport memory_report(const FrustumGrid& grid, const VoxelGridSpec& spec,
                                  std::size_t channels, double invalid_cell_fraction) {
  MemoryReport r;
  r.frustum_bytes = memory_footprint({channels, static_cast<std::size_t>(grid.depth_bins),
                                      static_cast<std::size_t>(grid.feat_h),
                                      static_cast<std::size_t>(grid.feat_w)});
  r.voxel_bytes = memory_footprint({channels, static_cast<std::size_t>(spec.nx),
                                    static_cast<std::size_t>(spec.nz), static_cast<std::size_t>(spec.ny)});
  r.invalid_cell_fraction = invalid_cell_fraction;
  r.invalid_waste_bytes = static_cast<std::uint64_t>(invalid_cell_fraction * static_cast<double>(r.voxel_bytes));
  return r;
}

}  // namespace persbev
