#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "persbev/lift.hpp"
#include "persbev/targets.hpp"

namespace persbev {
namespace {

// 4x2 feature cells, 6 depth bins of 2 m over [2,14].
FrustumGrid test_grid() {
  const CameraIntrinsics intr{100.0, 100.0, 32.0, 16.0, 64, 32};
  return make_frustum_grid(intr, 16, 6, 2.0, 14.0);
}

Box3D car_at(WorldPoint center, double yaw = 0.0, int class_id = 0) {
  Box3D b;
  b.center = center;
  b.length = 4.2;
  b.width = 1.8;
  b.height = 1.6;
  b.yaw = yaw;
  b.class_id = class_id;
  return b;
}

TEST(LocalYaw, OnAxisEqualsYaw) {
  EXPECT_DOUBLE_EQ(local_yaw(0.7, {0.0, 0.0, 12.0}), 0.7);
  EXPECT_DOUBLE_EQ(local_yaw(-1.2, {0.0, 5.0, 3.0}), -1.2);
}

TEST(LocalYaw, HandValueAtDiagonal) {
  // viewing-ray angle atan2(x, z) = pi/4, so alpha = 0 - pi/4
  EXPECT_NEAR(local_yaw(0.0, {5.0, 0.0, 5.0}), -kPi / 4.0, 1e-12);
}

TEST(LocalYaw, InvariantAlongViewingRay) {
  const double yaw = 1.1;
  const WorldPoint base{3.0, -1.0, 7.0};
  const double a0 = local_yaw(yaw, base);
  for (double s : {0.5, 2.0, 4.5}) {
    EXPECT_NEAR(local_yaw(yaw, {base.x * s, base.y * s, base.z * s}), a0, 1e-12);
  }
}

TEST(LocalYaw, NonPositiveDepthIsDomainError) {
  EXPECT_THROW(local_yaw(0.0, {1.0, 0.0, 0.0}), std::domain_error);
}

TEST(DirectionClass, SpecValues) {
  EXPECT_EQ(direction_class(0.0), 0);
  EXPECT_EQ(direction_class(2.0), 1);
  EXPECT_EQ(direction_class(kPi / 2.0), 1);  // boundary goes to class 1
  EXPECT_EQ(direction_class(-kPi / 2.0), 0);
  EXPECT_EQ(direction_class(kPi), 1);
  EXPECT_EQ(direction_class(0.49 * kPi), 0);
}

TEST(EncodeTargets, AnchorCenteredObject) {
  const FrustumGrid grid = test_grid();
  const WorldPoint anchor = grid.world_anchor(2, 1, 3);
  const Box3D box = car_at(anchor, 0.3);
  const TargetSet t = encode_targets(std::vector<Box3D>{box}, grid, LossConfig{});
  EXPECT_EQ(t.n_skipped, 0);
  EXPECT_DOUBLE_EQ(t.heatmap(0, 2, 3), 1.0);
  EXPECT_TRUE(t.mask[t.cell(2, 3)]);
  EXPECT_DOUBLE_EQ(t.attrs(kAttrOffsetW, 2, 3), 0.0);
  EXPECT_DOUBLE_EQ(t.attrs(kAttrOffsetD, 2, 3), 0.0);
  EXPECT_DOUBLE_EQ(t.attrs(kAttrHeight, 2, 3), anchor.y);
  EXPECT_DOUBLE_EQ(t.attrs(kAttrSizeL, 2, 3), std::log(4.2));
  EXPECT_EQ(t.dir_class[t.cell(2, 3)], 0);
}

TEST(EncodeTargets, FractionalOffsets) {
  const FrustumGrid grid = test_grid();
  // continuous cell coordinates (1.25, 2.4): u = 28, d = 7.8
  const WorldPoint center = inverse_project(grid.intr, 28.0, 20.0, 7.8);
  const TargetSet t = encode_targets(std::vector<Box3D>{car_at(center)}, grid, LossConfig{});
  EXPECT_TRUE(t.mask[t.cell(1, 2)]);
  EXPECT_NEAR(t.attrs(kAttrOffsetW, 1, 2), 0.25, 1e-12);
  EXPECT_NEAR(t.attrs(kAttrOffsetD, 1, 2), 0.4, 1e-12);
}

TEST(EncodeTargets, OffsetsStayWithinHalfCell) {
  const FrustumGrid grid = test_grid();
  std::mt19937_64 rng(13);
  std::vector<Box3D> boxes;
  for (int i = 0; i < 60; ++i) {
    const double u = u01(rng) * 64.0;
    const double v = u01(rng) * 32.0;
    const double d = 2.0 + u01(rng) * 11.9;
    boxes.push_back(car_at(inverse_project(grid.intr, u, v, d), u01(rng) * 6.0 - 3.0));
  }
  const TargetSet t = encode_targets(boxes, grid, LossConfig{});
  for (int w = 0; w < grid.feat_w; ++w) {
    for (int k = 0; k < grid.depth_bins; ++k) {
      if (!t.mask[t.cell(w, k)]) continue;
      EXPECT_LE(std::abs(t.attrs(kAttrOffsetW, w, k)), 0.5);
      EXPECT_LE(std::abs(t.attrs(kAttrOffsetD, w, k)), 0.5);
    }
  }
}

TEST(EncodeTargets, OutOfRangeBoxesAreSkipped) {
  const FrustumGrid grid = test_grid();
  std::vector<Box3D> boxes;
  boxes.push_back(car_at({0.0, 0.0, 15.0}));   // beyond depth_max
  boxes.push_back(car_at({0.0, 0.0, 1.0}));    // before depth_min
  boxes.push_back(car_at({50.0, 0.0, 5.0}));   // projects outside the image
  boxes.push_back(car_at({0.0, 0.0, -3.0}));   // behind the camera
  const TargetSet t = encode_targets(boxes, grid, LossConfig{});
  EXPECT_EQ(t.n_skipped, 4);
  for (std::size_t i = 0; i < t.mask.size(); ++i) EXPECT_FALSE(t.mask[i]);
  for (std::size_t i = 0; i < t.heatmap.size(); ++i) EXPECT_EQ(t.heatmap.data()[i], 0.0);
}

TEST(EncodeTargets, GaussianSkirtDecaysMonotonically) {
  const CameraIntrinsics intr{560.0, 560.0, 352.0, 128.0, 704, 256};
  const FrustumGrid grid = make_frustum_grid(intr, 16, 56, 2.0, 58.0);
  const WorldPoint anchor = grid.world_anchor(20, 8, 30);
  const TargetSet t = encode_targets(std::vector<Box3D>{car_at(anchor)}, grid, LossConfig{});
  // exactly one cell at 1.0
  int peaks = 0;
  for (std::size_t i = 0; i < t.heatmap.size(); ++i) {
    if (t.heatmap.data()[i] == 1.0) ++peaks;
    EXPECT_LE(t.heatmap.data()[i], 1.0);
  }
  EXPECT_EQ(peaks, 1);
  // strictly decreasing when walking away from the peak along each axis
  // (the splat window spans 3 cells here, so step 4 reaches the zero rim)
  for (int step = 1; step < 5; ++step) {
    EXPECT_LT(t.heatmap(0, 20 + step, 30), t.heatmap(0, 20 + step - 1, 30));
    EXPECT_LT(t.heatmap(0, 20 - step, 30), t.heatmap(0, 20 - step + 1, 30));
    EXPECT_LT(t.heatmap(0, 20, 30 + step), t.heatmap(0, 20, 30 + step - 1));
    EXPECT_LT(t.heatmap(0, 20, 30 - step), t.heatmap(0, 20, 30 - step + 1));
  }
}

TEST(EncodeTargets, FocalLengthMovesPositiveCellsAsReprojectionPredicts) {
  const WorldPoint center{1.2, 0.3, 9.3};
  for (double fx : {100.0, 200.0}) {
    const CameraIntrinsics intr{fx, fx, 32.0, 16.0, 64, 32};
    const FrustumGrid grid = make_frustum_grid(intr, 16, 6, 2.0, 14.0);
    const Box3D box = car_at(center);
    const TargetSet t = encode_targets(std::vector<Box3D>{box}, grid, LossConfig{});
    const auto cell = assign_cell(box, grid);
    if (!cell) {
      EXPECT_EQ(t.n_skipped, 1);
      continue;
    }
    const FrustumPoint fp = project(intr, center);
    const int expect_w = static_cast<int>(std::llround(grid.cell_of_u(fp.u)));
    const int expect_k = static_cast<int>(std::llround(grid.bin_of_depth(fp.d)));
    for (int w = 0; w < grid.feat_w; ++w) {
      for (int k = 0; k < grid.depth_bins; ++k) {
        EXPECT_EQ(t.mask[t.cell(w, k)] != 0, w == expect_w && k == expect_k);
      }
    }
  }
}

TEST(EncodeTargets, LastWriterWinsOnSharedCell) {
  const FrustumGrid grid = test_grid();
  const WorldPoint anchor = grid.world_anchor(2, 1, 3);
  Box3D first = car_at(anchor, 0.0);
  Box3D second = car_at({anchor.x + 0.01, anchor.y, anchor.z}, 1.0);
  const TargetSet t = encode_targets(std::vector<Box3D>{first, second}, grid, LossConfig{});
  EXPECT_NEAR(t.attrs(kAttrSinYaw, 2, 3), std::sin(local_yaw(1.0, second.center)), 1e-12);
}

TEST(DetectionLoss, PerfectPredictionOnHardTargets) {
  const FrustumGrid grid = test_grid();
  TargetSet t;
  t.n_classes = 1;
  t.feat_w = grid.feat_w;
  t.depth_bins = grid.depth_bins;
  t.heatmap = Tensor<double>({1, 4, 6});
  t.attrs = Tensor<double>({kNumAttrChannels, 4, 6});
  t.dir_class.assign(24, kDirIgnore);
  t.mask.assign(24, 0);
  t.heatmap(0, 1, 2) = 1.0;
  t.mask[t.cell(1, 2)] = 1;
  t.dir_class[t.cell(1, 2)] = 1;
  for (int a = 0; a < kNumAttrChannels; ++a) t.attrs(a, 1, 2) = 0.1 * a;

  Tensor<double> pred_dir({2, 4, 6});
  pred_dir(1, 1, 2) = 1.0;
  const DetectionLoss loss = detection_loss(t.heatmap, t.attrs, t, LossConfig{}, pred_dir);
  EXPECT_LE(loss.total, 1e-4);
  EXPECT_NEAR(loss.attr_l1, 0.0, 1e-12);
  EXPECT_LE(loss.objectness_ce, 1e-5);  // clamp-induced floor only
}

TEST(DetectionLoss, HandCrossEntropy) {
  TargetSet t;
  t.n_classes = 1;
  t.feat_w = 1;
  t.depth_bins = 1;
  t.heatmap = Tensor<double>({1, 1, 1});
  t.attrs = Tensor<double>({kNumAttrChannels, 1, 1});
  t.dir_class.assign(1, kDirIgnore);
  t.mask.assign(1, 0);
  t.heatmap(0, 0, 0) = 1.0;
  Tensor<double> pred = t.heatmap;
  pred(0, 0, 0) = 0.5;
  const DetectionLoss loss = detection_loss(pred, t.attrs, t, LossConfig{});
  EXPECT_NEAR(loss.objectness_ce, std::log(2.0), 1e-6);
}

TEST(DetectionLoss, EmptyMaskGivesZeroAttrTerm) {
  TargetSet t;
  t.n_classes = 1;
  t.feat_w = 2;
  t.depth_bins = 2;
  t.heatmap = Tensor<double>({1, 2, 2});
  t.attrs = Tensor<double>({kNumAttrChannels, 2, 2});
  t.dir_class.assign(4, kDirIgnore);
  t.mask.assign(4, 0);
  Tensor<double> pred_attr({kNumAttrChannels, 2, 2}, 5.0);  // wildly wrong, but unmasked
  const DetectionLoss loss = detection_loss(t.heatmap, pred_attr, t, LossConfig{});
  EXPECT_DOUBLE_EQ(loss.attr_l1, 0.0);
}

TEST(DetectionLoss, PositiveForPerturbedPrediction) {
  const FrustumGrid grid = test_grid();
  const TargetSet t =
      encode_targets(std::vector<Box3D>{car_at(grid.world_anchor(1, 0, 2))}, grid, LossConfig{});
  Tensor<double> pred_obj = t.heatmap;
  pred_obj(0, 1, 2) = 0.8;
  Tensor<double> clamped_obj = pred_obj;
  for (std::size_t i = 0; i < clamped_obj.size(); ++i) {
    clamped_obj.data()[i] = std::clamp(clamped_obj.data()[i], 1e-6, 1.0 - 1e-6);
  }
  const DetectionLoss base = detection_loss(clamped_obj, t.attrs, t, LossConfig{});
  Tensor<double> pred_attr = t.attrs;
  pred_attr(kAttrOffsetW, 1, 2) += 0.2;
  const DetectionLoss bumped = detection_loss(clamped_obj, pred_attr, t, LossConfig{});
  EXPECT_GT(base.objectness_ce, 1e-4);
  EXPECT_GT(bumped.attr_l1, base.attr_l1);
}

TEST(DetectionLoss, DirectionTermFiresOnWrongClass) {
  const FrustumGrid grid = test_grid();
  const TargetSet t =
      encode_targets(std::vector<Box3D>{car_at(grid.world_anchor(1, 0, 2), 2.5)}, grid, LossConfig{});
  ASSERT_EQ(t.dir_class[t.cell(1, 2)], 1);
  Tensor<double> good({2, 4, 6});
  Tensor<double> bad({2, 4, 6});
  for (int w = 0; w < 4; ++w) {
    for (int k = 0; k < 6; ++k) {
      good(1, w, k) = 1.0;
      bad(0, w, k) = 1.0;
    }
  }
  const DetectionLoss lg = detection_loss(t.heatmap, t.attrs, t, LossConfig{}, good);
  const DetectionLoss lb = detection_loss(t.heatmap, t.attrs, t, LossConfig{}, bad);
  EXPECT_LT(lg.direction_ce, 1e-5);
  EXPECT_GT(lb.direction_ce, 1.0);
}

TEST(DetectionLoss, ShapeMismatchIsContractViolation) {
  const FrustumGrid grid = test_grid();
  const TargetSet t = encode_targets(std::vector<Box3D>{}, grid, LossConfig{});
  Tensor<double> wrong({1, 4, 5});
  EXPECT_THROW(detection_loss(wrong, t.attrs, t, LossConfig{}), std::invalid_argument);
}

TEST(DepthLoss, HandValueAndGradient) {
  const CameraIntrinsics intr{100.0, 100.0, 8.0, 8.0, 16, 16};
  const FrustumGrid grid = make_frustum_grid(intr, 16, 2, 0.0, 2.0);
  Tensor<double> logits({2, 1, 1});
  Tensor<double> gt({1, 1});
  gt(0, 0) = 0.5;  // bin 0
  const DepthLoss out = depth_loss(logits, gt, grid);
  EXPECT_EQ(out.valid_pixels, 1u);
  EXPECT_NEAR(out.loss, std::log(2.0), 1e-12);
  EXPECT_NEAR(out.grad(0, 0, 0), -0.5, 1e-12);
  EXPECT_NEAR(out.grad(1, 0, 0), 0.5, 1e-12);
}

TEST(DepthLoss, OutOfRangePixelsAreExcluded) {
  const CameraIntrinsics intr{100.0, 100.0, 8.0, 8.0, 16, 16};
  const FrustumGrid grid = make_frustum_grid(intr, 16, 4, 2.0, 10.0);
  Tensor<double> logits({4, 1, 1}, 0.3);
  Tensor<double> gt({1, 1});
  gt(0, 0) = 1.0;  // below depth_min
  const DepthLoss out = depth_loss(logits, gt, grid);
  EXPECT_EQ(out.valid_pixels, 0u);
  EXPECT_DOUBLE_EQ(out.loss, 0.0);
  for (std::size_t i = 0; i < out.grad.size(); ++i) EXPECT_EQ(out.grad.data()[i], 0.0);
}

// Central finite differences as the independent gradient oracle.
TEST(DepthLoss, GradientMatchesFiniteDifferences) {
  const CameraIntrinsics intr{100.0, 100.0, 16.0, 16.0, 32, 32};
  const FrustumGrid grid = make_frustum_grid(intr, 16, 3, 2.0, 8.0);
  std::mt19937_64 rng(91);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor<double> logits({3, 2, 2});
    for (std::size_t i = 0; i < logits.size(); ++i) logits.data()[i] = 4.0 * u01(rng) - 2.0;
    Tensor<double> gt({2, 2});
    for (std::size_t i = 0; i < gt.size(); ++i) {
      gt.data()[i] = (u01(rng) < 0.2) ? 100.0 : 2.0 + 6.0 * u01(rng);  // some excluded
    }
    const DepthLoss out = depth_loss(logits, gt, grid);
    const double step = 1e-4;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      Tensor<double> lo = logits, hi = logits;
      lo.data()[i] -= step;
      hi.data()[i] += step;
      const double fd = (depth_loss(hi, gt, grid).loss - depth_loss(lo, gt, grid).loss) / (2.0 * step);
      ASSERT_NEAR(out.grad.data()[i], fd, 1e-5);
    }
  }
}

TEST(TotalLoss, WeightedSum) {
  LossConfig cfg;
  EXPECT_DOUBLE_EQ(total_loss(1.0, 0.5, cfg), 2.5);  // default depth weight 3
  cfg.depth_weight = 0.0;
  EXPECT_DOUBLE_EQ(total_loss(1.0, 0.5, cfg), 1.0);
  cfg.depth_weight = 3.0;
  EXPECT_DOUBLE_EQ(total_loss(1.0, 0.0, cfg), 1.0);
  EXPECT_THROW(total_loss(std::numeric_limits<double>::infinity(), 0.0, cfg), std::invalid_argument);
}

}  // namespace
}  // namespace persbev
