#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "persbev/decode.hpp"
#include "persbev/lift.hpp"
#include "persbev/sampling.hpp"

namespace persbev {
namespace {

FrustumGrid wide_grid() {
  const CameraIntrinsics intr{560.0, 560.0, 352.0, 128.0, 704, 256};
  return make_frustum_grid(intr, 16, 56, 2.0, 58.0);
}

TEST(ExtractPeaks, IsolatedMaximum) {
  Tensor<double> h({1, 5, 5});
  h(0, 2, 3) = 0.9;
  const auto peaks = extract_peaks(h, 10, 0.5);
  ASSERT_EQ(peaks.size(), 1u);
  EXPECT_EQ(peaks[0].w, 2);
  EXPECT_EQ(peaks[0].d, 3);
  EXPECT_DOUBLE_EQ(peaks[0].score, 0.9);
}

TEST(ExtractPeaks, AdjacentPlateauKeepsLowestIndex) {
  Tensor<double> h({1, 5, 5});
  h(0, 2, 2) = 0.8;
  h(0, 2, 3) = 0.8;
  const auto peaks = extract_peaks(h, 10, 0.5);
  ASSERT_EQ(peaks.size(), 1u);
  EXPECT_EQ(peaks[0].w, 2);
  EXPECT_EQ(peaks[0].d, 2);
}

TEST(ExtractPeaks, ThresholdCutsEverything) {
  Tensor<double> h({2, 4, 4}, 0.2);
  EXPECT_TRUE(extract_peaks(h, 10, 0.5).empty());
}

TEST(ExtractPeaks, TopKLimit) {
  Tensor<double> h({1, 9, 1});
  h(0, 0, 0) = 0.9;
  h(0, 3, 0) = 0.8;
  h(0, 6, 0) = 0.7;
  const auto peaks = extract_peaks(h, 2, 0.1);
  ASSERT_EQ(peaks.size(), 2u);
  EXPECT_DOUBLE_EQ(peaks[0].score, 0.9);
  EXPECT_DOUBLE_EQ(peaks[1].score, 0.8);
}

TEST(ExtractPeaks, StableUnderSubThresholdShift) {
  Tensor<double> h({1, 8, 8});
  h(0, 1, 1) = 0.9;
  h(0, 5, 6) = 0.7;
  h(0, 3, 3) = 0.2;  // sub-threshold local maximum
  const double threshold = 0.5;
  const auto before = extract_peaks(h, 100, threshold);
  // largest shift that keeps the sub-threshold maximum below the threshold
  const double gap = threshold - 0.2;
  Tensor<double> shifted = h;
  for (std::size_t i = 0; i < shifted.size(); ++i) shifted.data()[i] += gap / 2.0;
  const auto after = extract_peaks(shifted, 100, threshold);
  ASSERT_EQ(before.size(), after.size());
  for (std::size_t i = 0; i < before.size(); ++i) {
    EXPECT_EQ(before[i].w, after[i].w);
    EXPECT_EQ(before[i].d, after[i].d);
  }
}

TEST(ExtractPeaks, MonotoneTransformPreservesSetAndOrder) {
  Tensor<double> h({1, 8, 8});
  h(0, 1, 1) = 0.9;
  h(0, 5, 6) = 0.7;
  h(0, 6, 2) = 0.6;
  const auto base = extract_peaks(h, 100, 0.25);
  Tensor<double> squared = h;
  for (std::size_t i = 0; i < squared.size(); ++i) squared.data()[i] *= squared.data()[i];
  const auto transformed = extract_peaks(squared, 100, 0.25 * 0.25);
  ASSERT_EQ(base.size(), transformed.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    EXPECT_EQ(base[i].w, transformed[i].w);
    EXPECT_EQ(base[i].d, transformed[i].d);
  }
}

TEST(DecodeBoxes, ZeroOffsetsRecoverAnchor) {
  const FrustumGrid grid = wide_grid();
  Tensor<double> attrs({kNumAttrChannels, static_cast<std::size_t>(grid.feat_w),
                        static_cast<std::size_t>(grid.depth_bins)});
  // log sizes of a unit box; everything else zero
  const std::vector<Peak> peaks{{0, 10, 20, 1.0}};
  const DecodeResult out = decode_boxes(peaks, attrs, grid);
  ASSERT_EQ(out.detections.size(), 1u);
  const WorldPoint anchor = grid.world_anchor(10, 0, 20);  // same x/z for every h
  EXPECT_NEAR(out.detections[0].box.center.x, anchor.x, 1e-12);
  EXPECT_NEAR(out.detections[0].box.center.z, anchor.z, 1e-12);
  EXPECT_DOUBLE_EQ(out.detections[0].box.length, 1.0);  // exp(0)
}

TEST(DecodeBoxes, UnnormalizedSinCosStillDecodes) {
  const FrustumGrid grid = wide_grid();
  Tensor<double> attrs({kNumAttrChannels, static_cast<std::size_t>(grid.feat_w),
                        static_cast<std::size_t>(grid.depth_bins)});
  attrs(kAttrSinYaw, 22, 5) = 0.6;
  attrs(kAttrCosYaw, 22, 5) = 0.6;
  const std::vector<Peak> peaks{{0, 22, 5, 1.0}};
  const DecodeResult out = decode_boxes(peaks, attrs, grid);
  ASSERT_EQ(out.detections.size(), 1u);
  const double ray = std::atan2(out.detections[0].box.center.x, out.detections[0].box.center.z);
  EXPECT_NEAR(out.detections[0].box.yaw, wrap_angle(kPi / 4.0 + ray), 1e-12);
}

TEST(DecodeBoxes, NonFiniteAttributesDropTheDetection) {
  const FrustumGrid grid = wide_grid();
  Tensor<double> attrs({kNumAttrChannels, static_cast<std::size_t>(grid.feat_w),
                        static_cast<std::size_t>(grid.depth_bins)});
  attrs(kAttrHeight, 4, 4) = std::numeric_limits<double>::quiet_NaN();
  const std::vector<Peak> peaks{{0, 4, 4, 1.0}, {0, 8, 8, 0.9}};
  const DecodeResult out = decode_boxes(peaks, attrs, grid);
  EXPECT_EQ(out.n_dropped, 1);
  ASSERT_EQ(out.detections.size(), 1u);
  EXPECT_EQ(out.detections[0].cell_w, 8);
}

TEST(DecodeBoxes, DirectionClassFlipsInconsistentYaw) {
  const FrustumGrid grid = wide_grid();
  std::vector<Box3D> boxes;
  Box3D box;
  box.center = grid.world_anchor(12, 8, 25);
  box.length = 4.0;
  box.width = 1.8;
  box.height = 1.5;
  box.yaw = 0.4;  // class 0
  boxes.push_back(box);
  TargetSet t = encode_targets(boxes, grid, LossConfig{});
  // corrupt the regression by pi: sin/cos both negated
  t.attrs(kAttrSinYaw, 12, 25) = -t.attrs(kAttrSinYaw, 12, 25);
  t.attrs(kAttrCosYaw, 12, 25) = -t.attrs(kAttrCosYaw, 12, 25);
  const std::vector<Peak> peaks{{0, 12, 25, 1.0}};
  const DecodeResult with_dir = decode_boxes(peaks, t.attrs, grid, &t.dir_class);
  const DecodeResult without_dir = decode_boxes(peaks, t.attrs, grid, nullptr);
  ASSERT_EQ(with_dir.detections.size(), 1u);
  EXPECT_NEAR(with_dir.detections[0].box.yaw, 0.4, 1e-9);  // flipped back
  EXPECT_NEAR(std::abs(wrap_angle(without_dir.detections[0].box.yaw - 0.4)), kPi, 1e-9);
}

TEST(Roundtrip, EncodeDecodeRecoversBoxesExactly) {
  const FrustumGrid grid = wide_grid();
  std::mt19937_64 rng(101);
  for (int scene = 0; scene < 20; ++scene) {
    std::vector<Box3D> boxes;
    std::vector<std::pair<int, int>> cells;
    while (boxes.size() < 6u) {
      const double u = (0.05 + 0.9 * u01(rng)) * 704.0;
      const double v = (0.1 + 0.8 * u01(rng)) * 256.0;
      const double d = 4.0 + 52.0 * u01(rng);
      Box3D box;
      box.center = inverse_project(grid.intr, u, v, d);
      box.length = 3.0 + 2.0 * u01(rng);
      box.width = 1.5 + 0.8 * u01(rng);
      box.height = 1.2 + 0.8 * u01(rng);
      box.yaw = wrap_angle((2.0 * u01(rng) - 1.0) * kPi);
      box.vx = 2.0 * u01(rng) - 1.0;
      box.vz = 2.0 * u01(rng) - 1.0;
      box.class_id = static_cast<int>(boxes.size());
      const auto cell = assign_cell(box, grid);
      if (!cell) continue;
      bool clash = false;
      for (const auto& c : cells) {
        if (std::max(std::abs(c.first - cell->w), std::abs(c.second - cell->k)) < 2) clash = true;
      }
      if (clash) continue;
      cells.emplace_back(cell->w, cell->k);
      boxes.push_back(box);
    }

    const TargetSet t = encode_targets(boxes, grid, LossConfig{});
    ASSERT_EQ(t.n_skipped, 0);
    const auto peaks = extract_peaks(t.heatmap, 100, 0.5);
    ASSERT_EQ(peaks.size(), boxes.size());
    const DecodeResult decoded = decode_boxes(peaks, t.attrs, grid, &t.dir_class);
    ASSERT_EQ(decoded.detections.size(), boxes.size());
    const MatchReport report = match_and_score(boxes, decoded.detections, 2.0);
    ASSERT_EQ(report.pairs.size(), boxes.size());
    for (const MatchPair& pair : report.pairs) {
      const Box3D& gt = boxes[pair.gt_index];
      const Box3D& det = decoded.detections[pair.det_index].box;
      EXPECT_NEAR(det.center.x, gt.center.x, 1e-6);
      EXPECT_NEAR(det.center.y, gt.center.y, 1e-6);
      EXPECT_NEAR(det.center.z, gt.center.z, 1e-6);
      EXPECT_NEAR(std::abs(wrap_angle(det.yaw - gt.yaw)), 0.0, 1e-6);
      EXPECT_NEAR(det.length, gt.length, 1e-6);
      EXPECT_NEAR(det.width, gt.width, 1e-6);
      EXPECT_NEAR(det.height, gt.height, 1e-6);
      EXPECT_NEAR(det.vx, gt.vx, 1e-12);
      EXPECT_NEAR(det.vz, gt.vz, 1e-12);
    }
  }
}

TEST(MatchAndScore, IdenticalSets) {
  std::vector<Box3D> gts(3);
  gts[0].center = {0.0, 0.0, 10.0};
  gts[1].center = {5.0, 0.0, 20.0};
  gts[2].center = {-4.0, 0.0, 30.0};
  std::vector<Detection> dets(3);
  for (int i = 0; i < 3; ++i) {
    dets[i].box = gts[i];
    dets[i].score = 1.0;
  }
  const MatchReport r = match_and_score(gts, dets, 2.0);
  EXPECT_EQ(r.pairs.size(), 3u);
  EXPECT_EQ(r.n_gt_unmatched, 0);
  EXPECT_EQ(r.n_det_unmatched, 0);
  EXPECT_DOUBLE_EQ(r.mean_translation_error, 0.0);
}

TEST(MatchAndScore, SinglePairWithOffset) {
  std::vector<Box3D> gts(1);
  gts[0].center = {1.0, 0.0, 10.0};
  std::vector<Detection> dets(1);
  dets[0].box.center = {1.3, 0.0, 10.0};
  dets[0].score = 0.9;
  const MatchReport r = match_and_score(gts, dets, 2.0);
  ASSERT_EQ(r.pairs.size(), 1u);
  EXPECT_NEAR(r.pairs[0].distance, 0.3, 1e-12);
  EXPECT_NEAR(r.mean_translation_error, 0.3, 1e-12);
}

TEST(MatchAndScore, DistanceGate) {
  std::vector<Box3D> gts(1);
  gts[0].center = {0.0, 0.0, 10.0};
  std::vector<Detection> dets(1);
  dets[0].box.center = {5.0, 0.0, 10.0};
  const MatchReport r = match_and_score(gts, dets, 2.0);
  EXPECT_TRUE(r.pairs.empty());
  EXPECT_EQ(r.n_gt_unmatched, 1);
  EXPECT_EQ(r.n_det_unmatched, 1);
}

TEST(MatchAndScore, HigherScoreMatchesFirst) {
  std::vector<Box3D> gts(1);
  gts[0].center = {0.0, 0.0, 10.0};
  std::vector<Detection> dets(2);
  dets[0].box.center = {0.5, 0.0, 10.0};
  dets[0].score = 0.3;
  dets[1].box.center = {0.4, 0.0, 10.0};
  dets[1].score = 0.9;
  const MatchReport r = match_and_score(gts, dets, 2.0);
  ASSERT_EQ(r.pairs.size(), 1u);
  EXPECT_EQ(r.pairs[0].det_index, 1);  // the stronger detection takes the gt
  EXPECT_EQ(r.n_det_unmatched, 1);
}

TEST(QuantizationGap, VoxelLatticeDecodeStaysWithinHalfDiagonal) {
  const VoxelGridSpec spec =
      build_voxel_grid({-40.0, 40.0}, {2.0, 58.0}, {-5.0, 3.0}, 0.64, 0.64, 0.64);
  const double half_diag = 0.5 * std::hypot(0.64, 0.64);
  std::mt19937_64 rng(113);
  for (int i = 0; i < 2000; ++i) {
    const double x = -39.0 + 78.0 * u01(rng);
    const double z = 3.0 + 54.0 * u01(rng);
    const int ix = spec.x_index(x);
    const int iz = spec.z_index(z);
    ASSERT_GE(ix, 0);
    ASSERT_GE(iz, 0);
    const double err = std::hypot(x - spec.x_center(ix), z - spec.z_center(iz));
    EXPECT_LE(err, half_diag + 1e-12);
    EXPECT_GT(err, 0.0);  // off-center almost surely
  }
}

}  // namespace
}  // namespace persbev
