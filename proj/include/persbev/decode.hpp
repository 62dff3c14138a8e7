#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "persbev/geometry.hpp"
#include "persbev/targets.hpp"
#include "persbev/tensor.hpp"

namespace persbev {

struct Peak {
  int class_id = 0;
  int w = 0;
  int d = 0;
  double score = 0.0;
};

// Cells that are >= all 8 lattice neighbors and >= threshold, ranked by
// score, at most k_max. On an exact plateau only the lowest (w, d) index
// survives.
inline std::vector<Peak> extract_peaks(const Tensor<double>& heatmap, int k_max, double threshold) {
  if (heatmap.rank() != 3) throw std::invalid_argument("extract_peaks: expected [K][W][Dbins]");
  if (threshold < 0.0 || threshold > 1.0) throw std::invalid_argument("extract_peaks: threshold in [0,1]");
  const int K = static_cast<int>(heatmap.dim(0));
  const int W = static_cast<int>(heatmap.dim(1));
  const int D = static_cast<int>(heatmap.dim(2));

  std::vector<Peak> peaks;
  for (int k = 0; k < K; ++k) {
    for (int w = 0; w < W; ++w) {
      for (int d = 0; d < D; ++d) {
        const double v = heatmap(k, w, d);
        if (v < threshold) continue;
        bool is_peak = true;
        for (int dw = -1; dw <= 1 && is_peak; ++dw) {
          for (int dd = -1; dd <= 1 && is_peak; ++dd) {
            if (dw == 0 && dd == 0) continue;
            const int nw = w + dw, nd = d + dd;
            if (nw < 0 || nw >= W || nd < 0 || nd >= D) continue;
            const double nv = heatmap(k, nw, nd);
            if (nv > v) is_peak = false;
            if (nv == v && (nw < w || (nw == w && nd < d))) is_peak = false;
          }
        }
        if (is_peak) peaks.push_back({k, w, d, v});
      }
    }
  }
  std::sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.class_id != b.class_id) return a.class_id < b.class_id;
    if (a.w != b.w) return a.w < b.w;
    return a.d < b.d;
  });
  if (k_max >= 0 && peaks.size() > static_cast<std::size_t>(k_max)) peaks.resize(k_max);
  return peaks;
}

struct Detection {
  Box3D box;
  double score = 0.0;
  int cell_w = 0;
  int cell_d = 0;
  int class_id = 0;
};

struct DecodeResult {
  std::vector<Detection> detections;
  int n_dropped = 0;  // peaks whose attributes were non-finite
};

// Anchor-relative box decoding: the fractional (w + dw, d + dd) cell is
// mapped back through the frustum lattice and inverse projection, sizes are
// exponentiated when they were regressed in log space, and yaw comes from
// local yaw plus the viewing-ray angle, flipped by pi when inconsistent with
// the direction class.
inline DecodeResult decode_boxes(std::span<const Peak> peaks, const Tensor<double>& attrs,
                                 const FrustumGrid& grid, const std::vector<int>* dir_class = nullptr,
                                 bool log_sizes = true) {
  if (attrs.rank() != 3 || attrs.dim(0) != kNumAttrChannels ||
      attrs.dim(1) != static_cast<std::size_t>(grid.feat_w) ||
      attrs.dim(2) != static_cast<std::size_t>(grid.depth_bins)) {
    throw std::invalid_argument("decode_boxes: attrs must be [10][feat_w][depth_bins]");
  }
  DecodeResult out;
  for (const Peak& pk : peaks) {
    if (pk.w < 0 || pk.w >= grid.feat_w || pk.d < 0 || pk.d >= grid.depth_bins) {
      throw std::invalid_argument("decode_boxes: peak cell out of range");
    }
    double ch[kNumAttrChannels];
    bool finite = true;
    for (int a = 0; a < kNumAttrChannels; ++a) {
      ch[a] = attrs(a, pk.w, pk.d);
      finite = finite && std::isfinite(ch[a]);
    }
    if (!finite) {
      ++out.n_dropped;
      continue;
    }

    const double u = grid.u_of_cell(pk.w + ch[kAttrOffsetW]);
    const double depth = grid.depth_of_bin(pk.d + ch[kAttrOffsetD]);
    Detection det;
    det.box.center.x = (u - grid.intr.cx) * depth / grid.intr.fx;
    det.box.center.z = depth;
    det.box.center.y = ch[kAttrHeight];
    det.box.length = log_sizes ? std::exp(ch[kAttrSizeL]) : ch[kAttrSizeL];
    det.box.width = log_sizes ? std::exp(ch[kAttrSizeW]) : ch[kAttrSizeW];
    det.box.height = log_sizes ? std::exp(ch[kAttrSizeH]) : ch[kAttrSizeH];
    const double alpha = std::atan2(ch[kAttrSinYaw], ch[kAttrCosYaw]);
    double yaw = wrap_angle(alpha + std::atan2(det.box.center.x, det.box.center.z));
    if (dir_class) {
      const int want = (*dir_class)[static_cast<std::size_t>(pk.w) * grid.depth_bins + pk.d];
      if (want != kDirIgnore && direction_class(yaw) != want) yaw = wrap_angle(yaw + kPi);
    }
    det.box.yaw = yaw;
    det.box.vx = ch[kAttrVelX];
    det.box.vz = ch[kAttrVelZ];
    det.box.class_id = pk.class_id;
    det.score = pk.score;
    det.cell_w = pk.w;
    det.cell_d = pk.d;
    det.class_id = pk.class_id;
    out.detections.push_back(det);
  }
  return out;
}

struct MatchPair {
  int gt_index = 0;
  int det_index = 0;
  double distance = 0.0;  // ground-plane center distance, meters
};

struct MatchReport {
  std::vector<MatchPair> pairs;
  int n_gt_unmatched = 0;
  int n_det_unmatched = 0;
  double mean_translation_error = 0.0;
};

inline double ground_distance(const WorldPoint& a, const WorldPoint& b) {
  return std::hypot(a.x - b.x, a.z - b.z);
}

// Greedy center-distance matching: detections in descending score order each
// take the nearest unmatched ground truth within max_dist. Deterministic
// given input order.
inline MatchReport match_and_score(std::span<const Box3D> gts, std::span<const Detection> dets,
                                   double max_dist) {
  if (!(max_dist > 0.0)) throw std::invalid_argument("match_and_score: max_dist must be positive");
  std::vector<int> order(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return dets[a].score > dets[b].score; });

  MatchReport report;
  std::vector<std::uint8_t> gt_taken(gts.size(), 0);
  for (int di : order) {
    int best = -1;
    double best_dist = 0.0;
    for (std::size_t gi = 0; gi < gts.size(); ++gi) {
      if (gt_taken[gi]) continue;
      const double dist = ground_distance(gts[gi].center, dets[di].box.center);
      if (dist <= max_dist && (best < 0 || dist < best_dist)) {
        best = static_cast<int>(gi);
        best_dist = dist;
      }
    }
    if (best >= 0) {
      gt_taken[best] = 1;
      report.pairs.push_back({best, di, best_dist});
    } else {
      ++report.n_det_unmatched;
    }
  }
  for (std::size_t gi = 0; gi < gts.size(); ++gi) {
    if (!gt_taken[gi]) ++report.n_gt_unmatched;
  }
  double sum = 0.0;
  for (const MatchPair& p : report.pairs) sum += p.distance;
  report.mean_translation_error = report.pairs.empty() ? 0.0 : sum / report.pairs.size();
  return report;
}

}  // namespace persbev
