#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "persbev/decode.hpp"
#include "persbev/error.hpp"
#include "persbev/geometry.hpp"
#include "persbev/lift.hpp"
#include "persbev/report.hpp"
#include "persbev/sampling.hpp"
#include "persbev/targets.hpp"
#include "persbev/tensor.hpp"

namespace persbev {

enum class SamplingMode { none, grid_nearest, grid_trilinear, voxel_pool };
enum class PipelineDepthMode { onehot_oracle, uniform_one, static_random, predicted_stub };

inline const char* to_string(SamplingMode m) {
  switch (m) {
    case SamplingMode::none: return "none";
    case SamplingMode::grid_nearest: return "grid_nearest";
    case SamplingMode::grid_trilinear: return "grid_trilinear";
    case SamplingMode::voxel_pool: return "voxel_pool";
  }
  return "?";
}

inline const char* to_string(PipelineDepthMode m) {
  switch (m) {
    case PipelineDepthMode::onehot_oracle: return "onehot_oracle";
    case PipelineDepthMode::uniform_one: return "uniform_one";
    case PipelineDepthMode::static_random: return "static_random";
    case PipelineDepthMode::predicted_stub: return "predicted_stub";
  }
  return "?";
}

inline SamplingMode parse_sampling_mode(const std::string& s) {
  if (s == "none") return SamplingMode::none;
  if (s == "grid_nearest") return SamplingMode::grid_nearest;
  if (s == "grid_trilinear") return SamplingMode::grid_trilinear;
  if (s == "voxel_pool") return SamplingMode::voxel_pool;
  throw ConfigError("unknown sampling_mode: " + s);
}

inline PipelineDepthMode parse_depth_mode(const std::string& s) {
  if (s == "onehot_oracle") return PipelineDepthMode::onehot_oracle;
  if (s == "uniform_one") return PipelineDepthMode::uniform_one;
  if (s == "static_random") return PipelineDepthMode::static_random;
  if (s == "predicted_stub") return PipelineDepthMode::predicted_stub;
  throw ConfigError("unknown depth_mode: " + s);
}

struct DecodeConfig {
  double score_threshold = 0.3;
  int k_max = 100;
  double match_max_dist = 2.0;  // meters, ground plane
};

struct VoxelParams {
  double x_min = -40.0, x_max = 40.0;
  double z_min = 2.0, z_max = 58.0;
  double y_min = -5.0, y_max = 3.0;
  double size_x = 0.64, size_z = 0.64, size_y = 0.64;
};

// Defaults are the reference setup: a 704x256 image at stride 16 (44x16
// feature cells), 56 one-meter depth bins over [2,58] m, and a 0.64 m voxel
// grid spanning [-40,40]x[2,58]x[-5,3] for the legacy path.
struct PipelineConfig {
  std::string config_id = "default";
  CameraIntrinsics intr{560.0, 560.0, 352.0, 128.0, 704, 256};
  int stride = 16;
  int depth_bins = 56;
  double depth_min = 2.0;
  double depth_max = 58.0;
  SamplingMode sampling = SamplingMode::none;
  PipelineDepthMode depth_mode = PipelineDepthMode::onehot_oracle;
  VoxelParams voxel;
  LossConfig loss;
  DecodeConfig decode;
  int channels = 64;
  int n_objects = 8;
  std::uint64_t seed = 1;
  int thread_count = 1;

  FrustumGrid make_grid() const {
    return make_frustum_grid(intr, stride, depth_bins, depth_min, depth_max);
  }
  VoxelGridSpec make_voxel_spec() const {
    return build_voxel_grid({voxel.x_min, voxel.x_max}, {voxel.z_min, voxel.z_max},
                            {voxel.y_min, voxel.y_max}, voxel.size_x, voxel.size_z, voxel.size_y);
  }
  void validate() const {
    persbev::validate(intr);
    if (thread_count < 1) throw ConfigError("thread_count must be >= 1");
    if (channels < 1) throw ConfigError("channels must be >= 1");
    if (n_objects < 0) throw ConfigError("n_objects must be >= 0");
    if (decode.score_threshold < 0.0 || decode.score_threshold > 1.0) {
      throw ConfigError("score_threshold must lie in [0,1]");
    }
    if (!(decode.match_max_dist > 0.0)) throw ConfigError("match_max_dist must be positive");
    make_grid();  // validates image/stride/depth parameters
    if (sampling != SamplingMode::none) make_voxel_spec();
  }
};

namespace detail {

inline double parse_double_value(const std::string& key, const std::string& s) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc() || res.ptr != e) throw ConfigError("bad number for " + key + ": " + s);
  return v;
}

inline std::int64_t parse_int_value(const std::string& key, const std::string& s) {
  std::int64_t v = 0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc() || res.ptr != e) throw ConfigError("bad integer for " + key + ": " + s);
  return v;
}

inline bool parse_bool_value(const std::string& key, const std::string& s) {
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  throw ConfigError("bad boolean for " + key + ": " + s);
}

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

// Plain-text config: one `key = value` per line, `#` comments. Unknown keys
// are configuration errors. Keys mirror PipelineConfig field names.
inline PipelineConfig parse_pipeline_config(std::istream& is) {
  PipelineConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string body = detail::trim(line);
    if (body.empty()) continue;
    const std::size_t eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = detail::trim(body.substr(0, eq));
    const std::string val = detail::trim(body.substr(eq + 1));
    if (key.empty() || val.empty()) {
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key or value");
    }

    if (key == "config_id") cfg.config_id = val;
    else if (key == "image_w") cfg.intr.image_w = static_cast<int>(detail::parse_int_value(key, val));
    else if (key == "image_h") cfg.intr.image_h = static_cast<int>(detail::parse_int_value(key, val));
    else if (key == "fx") cfg.intr.fx = detail::parse_double_value(key, val);
    else if (key == "fy") cfg.intr.fy = detail::parse_double_value(key, val);
    else if (key == "cx") cfg.intr.cx = detail::parse_double_value(key, val);
    else if (key == "cy") cfg.intr.cy = detail::parse_double_value(key, val);
    else if (key == "stride") cfg.stride = static_cast<int>(detail::parse_int_value(key, val));
    else if (key == "depth_bins") cfg.depth_bins = static_cast<int>(detail::parse_int_value(key, val));
    else if (key == "depth_min") cfg.depth_min = detail::parse_double_value(key, val);
    else if (key == "depth_max") cfg.depth_max = detail::parse_double_value(key, val);
    else if (key == "sampling_mode") cfg.sampling = parse_sampling_mode(val);
    else if (key == "depth_mode") cfg.depth_mode = parse_depth_mode(val);
    else if (key == "voxel_x_min") cfg.voxel.x_min = detail::parse_double_value(key, val);
    else if (key == "voxel_x_max") cfg.voxel.x_max = detail::parse_double_value(key, val);
    else if (key == "voxel_z_min") cfg.voxel.z_min = detail::parse_double_value(key, val);
    else if (key == "voxel_z_max") cfg.voxel.z_max = detail::parse_double_value(key, val);
    else if (key == "voxel_y_min") cfg.voxel.y_min = detail::parse_double_value(key, val);
    else if (key == "voxel_y_max") cfg.voxel.y_max = detail::parse_double_value(key, val);
    else if (key == "voxel_size_x") cfg.voxel.size_x = detail::parse_double_value(key, val);
    else if (key == "voxel_size_z") cfg.voxel.size_z = detail::parse_double_value(key, val);
    else if (key == "voxel_size_y") cfg.voxel.size_y = detail::parse_double_value(key, val);
    else if (key == "channels") cfg.channels = static_cast<int>(detail::parse_int_value(key, val));
    else if (key == "n_objects") cfg.n_objects = static_cast<int>(detail::parse_int_value(key, val));
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(detail::parse_int_value(key, val));
    else if (key == "thread_count") cfg.thread_count = static_cast<int>(detail::parse_int_value(key, val));
    else if (key == "depth_weight") cfg.loss.depth_weight = detail::parse_double_value(key, val);
    else if (key == "heatmap_radius_min") cfg.loss.heatmap_radius_min = detail::parse_double_value(key, val);
    else if (key == "prob_clamp_eps") cfg.loss.prob_clamp_eps = detail::parse_double_value(key, val);
    else if (key == "log_sizes") cfg.loss.log_sizes = detail::parse_bool_value(key, val);
    else if (key == "score_threshold") cfg.decode.score_threshold = detail::parse_double_value(key, val);
    else if (key == "k_max") cfg.decode.k_max = static_cast<int>(detail::parse_int_value(key, val));
    else if (key == "match_max_dist") cfg.decode.match_max_dist = detail::parse_double_value(key, val);
    else throw ConfigError("unknown config key: " + key);
  }
  cfg.validate();
  return cfg;
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  return parse_pipeline_config(is);
}

// splitmix64; used to derive independent deterministic seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Synthetic monocular scene: ground-truth boxes, an analytic depth map at
// image resolution (objects render as fronto-parallel billboards at their
// center depth; background is +inf), and per-object signature channels
// imprinted at the projected footprint. Deterministic for a given seed.
struct Scene {
  std::uint64_t seed = 0;
  std::vector<Box3D> boxes;
  Tensor<float> gt_depth;  // [image_h][image_w] meters
  FeatureMap features;     // [n_objects][feat_h][feat_w]
};

inline Scene synth_scene(std::uint64_t seed, int n_objects, const PipelineConfig& cfg) {
  if (n_objects < 0) throw std::invalid_argument("synth_scene: n_objects must be >= 0");
  const CameraIntrinsics& intr = cfg.intr;
  const int feat_w = intr.image_w / cfg.stride;
  const int feat_h = intr.image_h / cfg.stride;
  const double depth_span = cfg.depth_max - cfg.depth_min;
  const double z_lo = cfg.depth_min + 0.10 * depth_span;
  const double z_hi = cfg.depth_max - 0.05 * depth_span;
  const double min_ground_spacing = 2.0 * std::hypot(cfg.voxel.size_x, cfg.voxel.size_z);

  Scene scene;
  scene.seed = seed;
  scene.gt_depth = Tensor<float>({static_cast<std::size_t>(intr.image_h),
                                  static_cast<std::size_t>(intr.image_w)},
                                 std::numeric_limits<float>::infinity());
  scene.features.data = Tensor<float>({static_cast<std::size_t>(n_objects),
                                       static_cast<std::size_t>(feat_h),
                                       static_cast<std::size_t>(feat_w)});

  std::mt19937_64 rng(mix64(seed));
  struct Placed {
    Box3D box;
    double u0, u1, v0, v1;  // footprint rect, pixels
    int cell_w, cell_k;
  };
  std::vector<Placed> placed;
  const FrustumGrid probe_grid = make_frustum_grid(intr, cfg.stride, cfg.depth_bins,
                                                   cfg.depth_min, cfg.depth_max);

  for (int i = 0; i < n_objects; ++i) {
    bool ok = false;
    for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
      Box3D box;
      box.length = 3.5 + 1.5 * u01(rng);
      box.width = 1.6 + 0.6 * u01(rng);
      box.height = 1.4 + 0.5 * u01(rng);
      box.yaw = wrap_angle((2.0 * u01(rng) - 1.0) * kPi);
      box.vx = 0.0;
      box.vz = 0.0;
      box.class_id = i;
      const double u = (0.08 + 0.84 * u01(rng)) * intr.image_w;
      const double v = (0.15 + 0.70 * u01(rng)) * intr.image_h;
      const double z = z_lo + (z_hi - z_lo) * u01(rng);
      box.center = inverse_project(intr, u, v, z);

      const auto cell = assign_cell(box, probe_grid);
      if (!cell) continue;
      const double min_half = cfg.stride / 2.0 + 1.0;
      const double hw = std::max(intr.fx * 0.5 * std::max(box.length, box.width) / z, min_half);
      const double hh = std::max(intr.fy * 0.5 * box.height / z, min_half);
      const Placed cand{box, u - hw, u + hw, v - hh, v + hh, cell->w, cell->k};

      bool clash = false;
      for (const Placed& p : placed) {
        if (ground_distance(p.box.center, box.center) < min_ground_spacing) { clash = true; break; }
        // disjoint image footprints keep the analytic depth map unoccluded
        const bool rect_overlap = cand.u0 < p.u1 + 2.0 && p.u0 < cand.u1 + 2.0 &&
                                  cand.v0 < p.v1 + 2.0 && p.v0 < cand.v1 + 2.0;
        if (rect_overlap) { clash = true; break; }
        // separate positive cells so heatmap peaks never abut
        if (std::max(std::abs(p.cell_w - cell->w), std::abs(p.cell_k - cell->k)) < 2) {
          clash = true;
          break;
        }
      }
      if (clash) continue;
      placed.push_back(cand);
      ok = true;
    }
    if (!ok) {
      throw std::runtime_error("synth_scene: placement infeasible (seed " + std::to_string(seed) +
                               ", object " + std::to_string(i) + " of " + std::to_string(n_objects) +
                               ") - reduce n_objects or widen the scene ranges");
    }
  }

  for (std::size_t i = 0; i < placed.size(); ++i) {
    const Placed& p = placed[i];
    scene.boxes.push_back(p.box);
    const int px0 = std::max(0, static_cast<int>(std::floor(p.u0)));
    const int px1 = std::min(intr.image_w - 1, static_cast<int>(std::ceil(p.u1)));
    const int py0 = std::max(0, static_cast<int>(std::floor(p.v0)));
    const int py1 = std::min(intr.image_h - 1, static_cast<int>(std::ceil(p.v1)));
    const auto z = static_cast<float>(p.box.center.z);
    for (int py = py0; py <= py1; ++py) {
      for (int px = px0; px <= px1; ++px) {
        float& d = scene.gt_depth(py, px);
        d = std::min(d, z);
      }
    }
    for (int fh = 0; fh < feat_h; ++fh) {
      const double pv = (fh + 0.5) * cfg.stride;
      if (pv < p.v0 || pv > p.v1) continue;
      for (int fw = 0; fw < feat_w; ++fw) {
        const double pu = (fw + 0.5) * cfg.stride;
        if (pu < p.u0 || pu > p.u1) continue;
        scene.features.data(i, fh, fw) = 1.0f;
      }
    }
  }
  return scene;
}

// Depth map sampled at feature-cell centers, [feat_h][feat_w].
inline Tensor<float> depth_at_feature_cells(const Scene& scene, const FrustumGrid& grid) {
  Tensor<float> out({static_cast<std::size_t>(grid.feat_h), static_cast<std::size_t>(grid.feat_w)});
  for (int h = 0; h < grid.feat_h; ++h) {
    const int pv = static_cast<int>((h + 0.5) * grid.stride);
    for (int w = 0; w < grid.feat_w; ++w) {
      const int pu = static_cast<int>((w + 0.5) * grid.stride);
      out(h, w) = scene.gt_depth(pv, pu);
    }
  }
  return out;
}

struct StageTimings {
  double lift_us = 0.0;
  double sample_us = 0.0;
  double collapse_us = 0.0;
  double decode_us = 0.0;
  double total_us = 0.0;
};

struct PipelineResult {
  std::vector<Detection> detections;
  MatchReport report;
  StageTimings timings;
  int n_in_view = 0;
  double bev_checksum = 0.0;  // keeps the view transform observable for timing
};

namespace detail {

static_assert(std::chrono::steady_clock::is_steady, "monotonic clock required for benchmarks");

inline double elapsed_us(std::chrono::steady_clock::time_point a, std::chrono::steady_clock::time_point b) {
  return std::chrono::duration<double, std::micro>(b - a).count();
}

// Depth-bin readout for the sampling-free path: argmax of the object's
// signature column in the collapsed BEV; exact ties (the degenerate depth
// modes) resolve by a seeded uniform draw, which is what "no depth
// information" means operationally.
inline int depth_bin_readout(const PerspBEVFeature& bev, int channel, int w_cell,
                             std::uint64_t tie_seed) {
  const std::size_t d = bev.data.dim(1);
  const std::size_t wdim = bev.data.dim(2);
  const float* col = bev.data.data() + static_cast<std::size_t>(channel) * d * wdim + w_cell;
  float best = col[0];
  for (std::size_t k = 1; k < d; ++k) best = std::max(best, col[k * wdim]);
  std::vector<int> ties;
  for (std::size_t k = 0; k < d; ++k) {
    if (col[k * wdim] == best) ties.push_back(static_cast<int>(k));
  }
  if (ties.size() == 1) return ties[0];
  std::mt19937_64 rng(tie_seed);
  return ties[rng() % ties.size()];
}

}  // namespace detail

// Full desk-scale pipeline: lift, optional legacy resampling, collapse, and
// an oracle-head readout standing in for a trained head.
//
// sampling none: targets-as-predictions on the frustum lattice; the depth
// bin is read from the object's feature column so the depth mode shapes the
// decoded depth, then boxes go through the regular peak decoding path.
// sampled modes: the readout quantizes each center onto the voxel lattice
// (nearest voxel-center anchor, no sub-cell offsets), which is exactly the
// localization the resampled feature can support.
inline PipelineResult run_pipeline(const Scene& scene, const PipelineConfig& cfg) {
  cfg.validate();
  const FrustumGrid grid = cfg.make_grid();
  const int n_obj = static_cast<int>(scene.boxes.size());
  const std::size_t C = static_cast<std::size_t>(std::max(cfg.channels, std::max(n_obj, 1)));
  const std::size_t fh = grid.feat_h, fw = grid.feat_w, D = grid.depth_bins;

  // signature channels first, deterministic noise padding after
  FeatureMap features{Tensor<float>({C, fh, fw})};
  const std::size_t plane = fh * fw;
  if (n_obj > 0) {
    std::copy(scene.features.data.data(), scene.features.data.data() + n_obj * plane,
              features.data.data());
  }
  std::mt19937_64 noise_rng(mix64(scene.seed ^ 0x6fe3u));
  for (std::size_t i = static_cast<std::size_t>(n_obj) * plane; i < features.data.size(); ++i) {
    features.data.data()[i] = static_cast<float>(u01(noise_rng));
  }

  DepthDistribution depth;
  switch (cfg.depth_mode) {
    case PipelineDepthMode::onehot_oracle:
      depth = onehot_oracle_depth(depth_at_feature_cells(scene, grid), grid);
      break;
    case PipelineDepthMode::uniform_one:
      depth = make_depth_mode(DepthMode::uniform_one, 0, {D, fh, fw});
      break;
    case PipelineDepthMode::static_random:
      depth = make_depth_mode(DepthMode::static_random, cfg.seed, {D, fh, fw});
      break;
    case PipelineDepthMode::predicted_stub: {
      Tensor<float> logits({D, fh, fw});
      std::mt19937_64 rng(mix64(cfg.seed ^ 0x51abu));
      for (std::size_t i = 0; i < logits.size(); ++i) {
        logits.data()[i] = static_cast<float>(4.0 * u01(rng) - 2.0);
      }
      depth = softmax_depth(logits);
      break;
    }
  }

  PipelineResult result;
  const auto t_start = std::chrono::steady_clock::now();

  const auto t0 = std::chrono::steady_clock::now();
  const Frustum3DFeature lifted = outer_product_lift(features, depth);
  const auto t1 = std::chrono::steady_clock::now();
  result.timings.lift_us = detail::elapsed_us(t0, t1);

  SampledBEVFeature sampled;
  PerspBEVFeature bev;
  if (cfg.sampling == SamplingMode::none) {
    const auto tc0 = std::chrono::steady_clock::now();
    const std::vector<float> weights = ones_weights(fh);
    bev = collapse_height(lifted, weights);
    const auto tc1 = std::chrono::steady_clock::now();
    result.timings.collapse_us = detail::elapsed_us(tc0, tc1);
    for (std::size_t c = 0; c < C; ++c) result.bev_checksum += bev.data(c, D / 2, fw / 2);
  } else {
    const VoxelGridSpec spec = cfg.make_voxel_spec();
    const auto ts0 = std::chrono::steady_clock::now();
    switch (cfg.sampling) {
      case SamplingMode::grid_nearest:
        sampled = grid_sample(lifted, grid, spec, Interp::nearest, 0.0f);
        break;
      case SamplingMode::grid_trilinear:
        sampled = grid_sample(lifted, grid, spec, Interp::trilinear, 0.0f);
        break;
      case SamplingMode::voxel_pool:
        sampled = voxel_pool(lifted, grid, spec);
        break;
      case SamplingMode::none:
        break;
    }
    const auto ts1 = std::chrono::steady_clock::now();
    result.timings.sample_us = detail::elapsed_us(ts0, ts1);
    // sampling already collapsed the height axis; no separate collapse stage
    for (std::size_t c = 0; c < C; ++c) {
      result.bev_checksum += sampled.data(c, sampled.nx / 2, sampled.nz / 2);
    }
  }

  const auto td0 = std::chrono::steady_clock::now();
  std::vector<Detection> dets;
  if (cfg.sampling == SamplingMode::none) {
    const TargetSet targets = encode_targets(scene.boxes, grid, cfg.loss, std::max(1, n_obj));
    std::vector<Peak> peaks;
    for (int i = 0; i < n_obj; ++i) {
      const auto cell = assign_cell(scene.boxes[i], grid);
      if (!cell) continue;
      ++result.n_in_view;
      const int k = detail::depth_bin_readout(bev, i, cell->w,
                                              mix64(scene.seed ^ (0x7d5au + 31ull * i)));
      peaks.push_back({i, cell->w, k, targets.heatmap(i, cell->w, k)});
    }
    const DecodeResult decoded =
        decode_boxes(peaks, targets.attrs, grid, &targets.dir_class, cfg.loss.log_sizes);
    dets = decoded.detections;
  } else {
    const VoxelGridSpec spec = cfg.make_voxel_spec();
    for (int i = 0; i < n_obj; ++i) {
      const auto cell = assign_cell(scene.boxes[i], grid);
      if (!cell) continue;
      ++result.n_in_view;
      const int ix = spec.x_index(scene.boxes[i].center.x);
      const int iz = spec.z_index(scene.boxes[i].center.z);
      if (ix < 0 || iz < 0) continue;
      Detection det;
      det.box = scene.boxes[i];
      det.box.center.x = spec.x_center(ix);
      det.box.center.z = spec.z_center(iz);
      det.score = 1.0;
      det.cell_w = ix;
      det.cell_d = iz;
      det.class_id = scene.boxes[i].class_id;
      dets.push_back(det);
    }
  }
  result.report = match_and_score(scene.boxes, dets, cfg.decode.match_max_dist);
  result.detections = std::move(dets);
  const auto td1 = std::chrono::steady_clock::now();
  result.timings.decode_us = detail::elapsed_us(td0, td1);
  result.timings.total_us = detail::elapsed_us(t_start, td1);
  return result;
}

struct SceneOutcome {
  std::uint64_t seed = 0;
  int n_objects = 0;
  int n_matched = 0;
  int n_gt_unmatched = 0;
  int n_det_unmatched = 0;
  double mean_translation_error = 0.0;
  StageTimings timings;
};

struct BatchResult {
  std::vector<SceneOutcome> scenes;
  double mean_translation_error = 0.0;  // over all matched pairs
  std::int64_t total_matches = 0;
};

// Seeded scene batch; optionally data-parallel over scenes. Results are
// keyed by seed order, so thread_count never changes the output values.
inline BatchResult run_scene_batch(const PipelineConfig& cfg, int n_seeds, std::uint64_t base_seed,
                                   int thread_count = 1) {
  cfg.validate();
  if (n_seeds < 0) throw ConfigError("run_scene_batch: n_seeds must be >= 0");
  if (thread_count < 1) throw ConfigError("run_scene_batch: thread_count must be >= 1");
  BatchResult out;
  out.scenes.resize(n_seeds);
  auto work = [&](int first, int step) {
    for (int i = first; i < n_seeds; i += step) {
      const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(i);
      const Scene scene = synth_scene(seed, cfg.n_objects, cfg);
      const PipelineResult r = run_pipeline(scene, cfg);
      SceneOutcome& row = out.scenes[i];
      row.seed = seed;
      row.n_objects = static_cast<int>(scene.boxes.size());
      row.n_matched = static_cast<int>(r.report.pairs.size());
      row.n_gt_unmatched = r.report.n_gt_unmatched;
      row.n_det_unmatched = r.report.n_det_unmatched;
      row.mean_translation_error = r.report.mean_translation_error;
      row.timings = r.timings;
    }
  };
  if (thread_count == 1 || n_seeds <= 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> threads;
    const int n_threads = std::min(thread_count, n_seeds);
    threads.reserve(n_threads);
    for (int t = 0; t < n_threads; ++t) threads.emplace_back(work, t, n_threads);
    for (auto& t : threads) t.join();
  }
  double err_sum = 0.0;
  for (const SceneOutcome& row : out.scenes) {
    err_sum += row.mean_translation_error * row.n_matched;
    out.total_matches += row.n_matched;
  }
  out.mean_translation_error = out.total_matches ? err_sum / static_cast<double>(out.total_matches) : 0.0;
  return out;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct BenchRow {
  std::string config_id;
  SamplingMode sampling = SamplingMode::none;
  PipelineDepthMode depth_mode = PipelineDepthMode::onehot_oracle;
  int repetitions = 0;
  double lift_us = 0.0, sample_us = 0.0, collapse_us = 0.0, decode_us = 0.0, total_us = 0.0;
  std::uint64_t frustum_bytes = 0;
  std::uint64_t voxel_bytes = 0;
  double invalid_cell_fraction = 0.0;
  double under_sampled_overall = 0.0;
  double duplication_overall = 0.0;
  double mean_translation_error = 0.0;
  int n_objects = 0;
  int n_scenes = 1;
};

struct BenchReport {
  std::vector<BenchRow> rows;
};

// Median-of-repetitions stage timings after 3 warmups. The headline latency
// comparison is single-threaded by definition; asking for more threads here
// is a configuration error (scene batches are where data parallelism lives).
inline BenchReport latency_bench(const std::vector<PipelineConfig>& cfgs, int repetitions,
                                 int thread_count = 1) {
  if (repetitions < 5) throw ConfigError("latency_bench: repetitions must be >= 5");
  if (thread_count != 1) throw ConfigError("latency_bench: timing runs are single-threaded");
  BenchReport report;
  for (const PipelineConfig& cfg : cfgs) {
    cfg.validate();
    const FrustumGrid grid = cfg.make_grid();
    const Scene scene = synth_scene(cfg.seed, cfg.n_objects, cfg);
    for (int i = 0; i < 3; ++i) (void)run_pipeline(scene, cfg);

    std::vector<double> lift, sample, collapse, decode, total;
    PipelineResult last;
    for (int i = 0; i < repetitions; ++i) {
      last = run_pipeline(scene, cfg);
      lift.push_back(last.timings.lift_us);
      sample.push_back(last.timings.sample_us);
      collapse.push_back(last.timings.collapse_us);
      decode.push_back(last.timings.decode_us);
      total.push_back(last.timings.total_us);
    }

    BenchRow row;
    row.config_id = cfg.config_id;
    row.sampling = cfg.sampling;
    row.depth_mode = cfg.depth_mode;
    row.repetitions = repetitions;
    row.lift_us = median(lift);
    row.sample_us = median(sample);
    row.collapse_us = median(collapse);
    row.decode_us = median(decode);
    row.total_us = median(total);
    const std::size_t C = static_cast<std::size_t>(std::max(cfg.channels, std::max(cfg.n_objects, 1)));
    row.frustum_bytes = memory_footprint({C, static_cast<std::size_t>(grid.depth_bins),
                                          static_cast<std::size_t>(grid.feat_h),
                                          static_cast<std::size_t>(grid.feat_w)});
    if (cfg.sampling != SamplingMode::none) {
      const VoxelGridSpec spec = cfg.make_voxel_spec();
      const SamplingCensus census = sampling_census(grid, spec);
      row.voxel_bytes = memory_footprint({C, static_cast<std::size_t>(spec.nx),
                                          static_cast<std::size_t>(spec.nz),
                                          static_cast<std::size_t>(spec.ny)});
      row.invalid_cell_fraction = census.overall.invalid_cell_fraction;
      row.under_sampled_overall = census.overall.under_sampled_fraction;
      row.duplication_overall = census.overall.duplication_factor;
    }
    row.mean_translation_error = last.report.mean_translation_error;
    row.n_objects = static_cast<int>(scene.boxes.size());
    report.rows.push_back(std::move(row));
  }
  return report;
}

struct SweepRow {
  int factor = 0;
  int nx = 0, nz = 0, ny = 0;
  std::uint64_t voxel_bytes = 0;
  std::uint64_t frustum_bytes = 0;
  double invalid_cell_fraction = 0.0;
  double under_sampled_near = 0.0;   // nearest source depth quartile
  double under_sampled_far = 0.0;    // farthest source depth quartile
  double duplication_near = 0.0;
  double duplication_far = 0.0;
  double duplication_overall = 0.0;
  double quantization_error_m = 0.0;  // mean anchor-to-voxel-center distance
};

// Horizontal anchor-density sweep: the lateral voxel size is divided by each
// factor, so nx scales up while the frustum side stays fixed. Quantization
// error is measured on a deterministic 4x-refined lattice of ground-plane
// frustum anchor positions.
inline std::vector<SweepRow> density_sweep(const PipelineConfig& base_cfg, const std::string& axis,
                                           const std::vector<int>& factors) {
  if (axis != "x-density" && axis != "x_density") {
    throw ConfigError("density_sweep: unsupported axis " + axis + " (expected x-density)");
  }
  if (factors.empty()) throw ConfigError("density_sweep: factors must not be empty");
  for (std::size_t i = 0; i + 1 < factors.size(); ++i) {
    if (factors[i] >= factors[i + 1]) throw ConfigError("density_sweep: factors must be ascending");
  }
  for (int f : factors) {
    if (f < 1) throw ConfigError("density_sweep: factors must be >= 1");
  }
  base_cfg.validate();
  const FrustumGrid grid = base_cfg.make_grid();

  // deterministic ground-plane probe lattice, 4x denser than the feature grid
  struct Probe { double x, z; };
  std::vector<Probe> probes;
  const int uw = 4 * grid.feat_w;
  const int ud = 4 * grid.depth_bins;
  probes.reserve(static_cast<std::size_t>(uw) * ud);
  for (int wi = 0; wi < uw; ++wi) {
    const double u = (wi + 0.5) * grid.stride / 4.0;
    for (int ki = 0; ki < ud; ++ki) {
      const double d = grid.depth_min + (ki + 0.5) * (grid.depth_max - grid.depth_min) / ud;
      probes.push_back({(u - grid.intr.cx) * d / grid.intr.fx, d});
    }
  }

  std::vector<SweepRow> rows;
  for (int f : factors) {
    VoxelParams vp = base_cfg.voxel;
    vp.size_x /= f;
    const VoxelGridSpec spec = build_voxel_grid({vp.x_min, vp.x_max}, {vp.z_min, vp.z_max},
                                                {vp.y_min, vp.y_max}, vp.size_x, vp.size_z, vp.size_y);
    const SamplingCensus census = sampling_census(grid, spec);
    SweepRow row;
    row.factor = f;
    row.nx = spec.nx;
    row.nz = spec.nz;
    row.ny = spec.ny;
    const std::size_t C = static_cast<std::size_t>(std::max(base_cfg.channels, 1));
    row.voxel_bytes = memory_footprint({C, static_cast<std::size_t>(spec.nx),
                                        static_cast<std::size_t>(spec.nz),
                                        static_cast<std::size_t>(spec.ny)});
    row.frustum_bytes = memory_footprint({C, static_cast<std::size_t>(grid.depth_bins),
                                          static_cast<std::size_t>(grid.feat_h),
                                          static_cast<std::size_t>(grid.feat_w)});
    row.invalid_cell_fraction = census.overall.invalid_cell_fraction;
    row.under_sampled_near = census.quartiles[0].under_sampled_fraction;
    row.under_sampled_far = census.quartiles[3].under_sampled_fraction;
    row.duplication_near = census.quartiles[0].duplication_factor;
    row.duplication_far = census.quartiles[3].duplication_factor;
    row.duplication_overall = census.overall.duplication_factor;

    double err_sum = 0.0;
    std::size_t n_in = 0;
    for (const Probe& p : probes) {
      const int ix = spec.x_index(p.x);
      const int iz = spec.z_index(p.z);
      if (ix < 0 || iz < 0) continue;
      ++n_in;
      err_sum += std::hypot(p.x - spec.x_center(ix), p.z - spec.z_center(iz));
    }
    row.quantization_error_m = n_in ? err_sum / static_cast<double>(n_in) : 0.0;
    rows.push_back(row);
  }
  return rows;
}

// --- CSV emission ---------------------------------------------------------

inline CsvTable census_to_csv(const std::string& config_id, const SamplingCensus& census,
                              std::uint64_t tensor_bytes) {
  CsvTable t;
  t.header = {"config_id", "quartile", "under_sampled_fraction", "duplication_factor",
              "invalid_fraction", "tensor_bytes"};
  auto row = [&](const std::string& q, const CensusQuartile& c) {
    t.rows.push_back({config_id, q, format_double(c.under_sampled_fraction),
                      format_double(c.duplication_factor), format_double(c.invalid_cell_fraction),
                      format_uint(tensor_bytes)});
  };
  for (int i = 0; i < 4; ++i) row(std::to_string(i), census.quartiles[i]);
  row("overall", census.overall);
  return t;
}

inline CsvTable bench_to_csv(const BenchReport& report) {
  CsvTable t;
  t.header = {"config_id", "sampling_mode", "depth_mode", "repetitions",
              "lift_us", "sample_us", "collapse_us", "decode_us", "total_us",
              "frustum_bytes", "voxel_bytes", "invalid_fraction",
              "under_sampled_overall", "duplication_overall",
              "mean_translation_error", "n_objects", "n_scenes"};
  for (const BenchRow& r : report.rows) {
    t.rows.push_back({r.config_id, to_string(r.sampling), to_string(r.depth_mode),
                      format_int(r.repetitions), format_double(r.lift_us), format_double(r.sample_us),
                      format_double(r.collapse_us), format_double(r.decode_us),
                      format_double(r.total_us), format_uint(r.frustum_bytes),
                      format_uint(r.voxel_bytes), format_double(r.invalid_cell_fraction),
                      format_double(r.under_sampled_overall), format_double(r.duplication_overall),
                      format_double(r.mean_translation_error), format_int(r.n_objects),
                      format_int(r.n_scenes)});
  }
  return t;
}

inline CsvTable batch_to_csv(const PipelineConfig& cfg, const BatchResult& batch) {
  CsvTable t;
  t.header = {"scene_id", "sampling_mode", "depth_mode", "n_objects", "n_matched",
              "n_gt_unmatched", "n_det_unmatched", "mean_translation_error",
              "lift_us", "sample_us", "collapse_us", "decode_us", "total_us"};
  for (const SceneOutcome& s : batch.scenes) {
    t.rows.push_back({format_uint(s.seed), to_string(cfg.sampling), to_string(cfg.depth_mode),
                      format_int(s.n_objects), format_int(s.n_matched), format_int(s.n_gt_unmatched),
                      format_int(s.n_det_unmatched), format_double(s.mean_translation_error),
                      format_double(s.timings.lift_us), format_double(s.timings.sample_us),
                      format_double(s.timings.collapse_us), format_double(s.timings.decode_us),
                      format_double(s.timings.total_us)});
  }
  return t;
}

inline CsvTable sweep_to_csv(const std::vector<SweepRow>& rows) {
  CsvTable t;
  t.header = {"factor", "nx", "nz", "ny", "voxel_bytes", "frustum_bytes", "invalid_fraction",
              "under_sampled_near", "under_sampled_far", "duplication_near", "duplication_far",
              "duplication_overall", "quantization_error_m"};
  for (const SweepRow& r : rows) {
    t.rows.push_back({format_int(r.factor), format_int(r.nx), format_int(r.nz), format_int(r.ny),
                      format_uint(r.voxel_bytes), format_uint(r.frustum_bytes),
                      format_double(r.invalid_cell_fraction), format_double(r.under_sampled_near),
                      format_double(r.under_sampled_far), format_double(r.duplication_near),
                      format_double(r.duplication_far), format_double(r.duplication_overall),
                      format_double(r.quantization_error_m)});
  }
  return t;
}

inline CsvTable detections_to_csv(std::uint64_t scene_id, std::span<const Detection> dets) {
  CsvTable t;
  t.header = {"scene_id", "class", "x", "z", "height", "l", "w", "h", "yaw", "score"};
  for (const Detection& d : dets) {
    t.rows.push_back({format_uint(scene_id), format_int(d.class_id), format_double(d.box.center.x),
                      format_double(d.box.center.z), format_double(d.box.center.y),
                      format_double(d.box.length), format_double(d.box.width),
                      format_double(d.box.height), format_double(d.box.yaw),
                      format_double(d.score)});
  }
  return t;
}

inline void emit_report(const CsvTable& table, const std::string& path) { write_csv(table, path); }

// Frustum grid world anchors as a PBEV fixture, [feat_w][feat_h][depth_bins][3].
inline void save_grid_anchors(const FrustumGrid& grid, const std::string& path) {
  Tensor<float> t({static_cast<std::size_t>(grid.feat_w), static_cast<std::size_t>(grid.feat_h),
                   static_cast<std::size_t>(grid.depth_bins), 3});
  std::size_t i = 0;
  for (const WorldPoint& p : grid.world_anchors) {
    t.data()[i++] = static_cast<float>(p.x);
    t.data()[i++] = static_cast<float>(p.y);
    t.data()[i++] = static_cast<float>(p.z);
  }
  save_pbev(path, t);
}

}  // namespace persbev
