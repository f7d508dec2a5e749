#include <algorithm>
#include <limits>

#include <gtest/gtest.h>

#include "dynslam/motionmask.hpp"
#include "helpers.hpp"

using namespace dynslam;

namespace
{

WarpMask make_warp(int w, int h, const std::vector<Eigen::Vector2i> &dyn)
{
  WarpMask m{BinaryMask(w, h, 1, 0), BinaryMask(w, h, 1, 1)};
  for (const auto &p : dyn)
    m.dynamic(p.x(), p.y()) = 1;
  return m;
}

size_t count(const BinaryMask &m) { return static_cast<size_t>(std::count(m.data().begin(), m.data().end(), 1)); }

bool subset(const BinaryMask &a, const BinaryMask &b)
{
  for (size_t i = 0; i < a.pixel_count(); ++i)
    if (a.at_index(i) && !b.at_index(i))
      return false;
  return true;
}

FlowField zero_flow(int w, int h) { return {Image<float>(w, h, 1, 0.f), Image<float>(w, h, 1, 0.f)}; }

/// Camera translating along x while the sphere moves vertically.
SyntheticSceneSpec lateral_scene()
{
  SyntheticSceneSpec s;
  s.intrinsics = {70, 70, 39.5, 29.5, 80, 60, 5000};
  s.supersample = 1;
  s.camera_trajectory = {PoseSE3(), PoseSE3::from_rt(Eigen::Matrix3d::Identity(), {0.1, 0, 0})};
  s.sphere_path = {Eigen::Vector3d(0.0, -0.1, 1.3), Eigen::Vector3d(0.0, 0.1, 1.3)};
  s.sphere_radius = 0.3;
  return s;
}

} // namespace

TEST(WarpMask, ZeroFlowUnderTranslationIsStatic)
{
  const Intrinsics k{50, 50, 19.5, 14.5, 40, 30, 5000};
  const FundamentalMatrix f = fundamental_from_motion(k, PoseSE3::from_rt(Eigen::Matrix3d::Identity(), {0.1, 0.02, 0.05}));
  const WarpMask m = warp_mask(zero_flow(40, 30), f, 1.0);
  EXPECT_EQ(count(m.dynamic), 0u);
  EXPECT_GT(count(m.valid), 1000u);
}

TEST(WarpMask, ZeroFlowUnderPureRotationHasNoDynamicPixels)
{
  const Intrinsics k{50, 50, 19.5, 14.5, 40, 30, 5000};
  Vector6d xi = Vector6d::Zero();
  xi(4) = 0.05;
  const FundamentalMatrix f = fundamental_from_motion(k, PoseSE3::exp(xi));
  const WarpMask m = warp_mask(zero_flow(40, 30), f, 1.0);
  for (size_t i = 0; i < m.dynamic.pixel_count(); ++i)
    EXPECT_FALSE(m.valid.at_index(i) && m.dynamic.at_index(i));
}

TEST(WarpMask, InfiniteThresholdIsEmpty)
{
  const SyntheticSceneSpec spec = lateral_scene();
  const SyntheticScene scene(spec);
  const FundamentalMatrix f = fundamental_from_motion(spec.intrinsics, spec.camera_trajectory[1].inverse());
  const WarpMask m = warp_mask(synthetic_flow(scene, 0, 1), f, std::numeric_limits<double>::infinity());
  EXPECT_EQ(count(m.dynamic), 0u);
}

TEST(WarpMask, MovingSphereMatchesGroundTruth)
{
  const SyntheticSceneSpec spec = lateral_scene();
  const SyntheticScene scene(spec);
  const auto syn = generate_synthetic_sequence(spec);
  const FundamentalMatrix f =
      fundamental_from_motion(spec.intrinsics, spec.camera_trajectory[1].inverse() * spec.camera_trajectory[0]);
  const WarpMask m = warp_mask(synthetic_flow(scene, 0, 1), f, 1.0);
  EXPECT_GE(mask_iou(m.dynamic, syn.gt_dynamic_masks[0]), 0.9);
  // Background pixels are consistent with the true epipolar geometry.
  for (size_t i = 0; i < m.dynamic.pixel_count(); ++i)
    if (!syn.gt_dynamic_masks[0].at_index(i) && m.valid.at_index(i))
      EXPECT_EQ(m.dynamic.at_index(i), 0);
}

TEST(WarpMask, UnknownOrOutgoingFlowIsInvalid)
{
  FlowField f = zero_flow(10, 10);
  f.u(2, 2) = FlowField::unknown;
  f.u(9, 5) = 3.0f;
  FundamentalMatrix fm;
  fm.f << 0, 0, 0, 0, 0, -1, 0, 1, 0;
  const WarpMask m = warp_mask(f, fm, 1.0);
  EXPECT_EQ(m.valid(2, 2), 0);
  EXPECT_EQ(m.valid(9, 5), 0);
  EXPECT_EQ(m.dynamic(9, 5), 0);
}

TEST(Fuse, EmptyInputsGiveEmptyMask)
{
  std::vector<WarpMask> w(3, make_warp(8, 8, {}));
  EXPECT_EQ(count(fuse_window(w, BinaryMask(8, 8, 1, 0), 2).mask), 0u);
}

TEST(Fuse, SegAloneIsCopiedExactly)
{
  BinaryMask seg(8, 8, 1, 0);
  seg(1, 2) = seg(5, 5) = seg(7, 0) = 1;
  std::vector<WarpMask> w(2, make_warp(8, 8, {}));
  EXPECT_EQ(fuse_window(w, seg, 2).mask, seg);
  EXPECT_EQ(fuse_window({}, seg, 2).mask, seg);
}

TEST(Fuse, VoteThreshold)
{
  std::vector<WarpMask> w;
  for (int i = 0; i < 4; ++i)
  {
    std::vector<Eigen::Vector2i> dyn;
    if (i < 3)
      dyn.emplace_back(1, 1); // 3 of 4
    if (i < 2)
      dyn.emplace_back(4, 4); // 2 of 4
    w.push_back(make_warp(8, 8, dyn));
  }
  BinaryMask seg(8, 8, 1, 0);
  const MotionMask a = fuse_window(w, seg, 3);
  EXPECT_EQ(a.mask(1, 1), 1);
  EXPECT_EQ(a.mask(4, 4), 0);
  EXPECT_EQ(a.counters(1, 1), 3);
  seg(4, 4) = 1;
  EXPECT_EQ(fuse_window(w, seg, 3).mask(4, 4), 1);
}

TEST(Fuse, VotesOnlyCountWhereValid)
{
  WarpMask a = make_warp(4, 4, {{1, 1}});
  WarpMask b = a;
  b.valid(1, 1) = 0;
  const MotionMask m = fuse_window({a, b}, BinaryMask(4, 4, 1, 0), 2);
  EXPECT_EQ(m.counters(1, 1), 1);
  EXPECT_EQ(m.mask(1, 1), 0);
}

TEST(Fuse, IdenticalWindowGivesMaskUnionSeg)
{
  const WarpMask a = make_warp(8, 8, {{2, 3}, {6, 6}});
  BinaryMask seg(8, 8, 1, 0);
  seg(0, 0) = 1;
  BinaryMask expect = a.dynamic;
  expect(0, 0) = 1;
  for (int o_th = 1; o_th <= 3; ++o_th)
    EXPECT_EQ(fuse_window({a, a, a}, seg, o_th).mask, expect);
}

TEST(Fuse, Properties)
{
  Rng rng(5);
  std::vector<WarpMask> w;
  for (int i = 0; i < 4; ++i)
  {
    std::vector<Eigen::Vector2i> dyn;
    for (int j = 0; j < 30; ++j)
      dyn.emplace_back(static_cast<int>(uniform_index(rng, 16)), static_cast<int>(uniform_index(rng, 16)));
    w.push_back(make_warp(16, 16, dyn));
  }
  BinaryMask seg(16, 16, 1, 0), seg_big(16, 16, 1, 0);
  for (size_t i = 0; i < seg.pixel_count(); ++i)
  {
    seg.at_index(i) = uniform01(rng) < 0.1;
    seg_big.at_index(i) = seg.at_index(i) || uniform01(rng) < 0.1;
  }
  // Enlarging seg never shrinks the mask.
  EXPECT_TRUE(subset(fuse_window(w, seg, 2, 1).mask, fuse_window(w, seg_big, 2, 1).mask));
  // Raising o_th never adds flow pixels.
  const BinaryMask none(16, 16, 1, 0);
  for (int o = 1; o < 4; ++o)
    EXPECT_TRUE(subset(fuse_window(w, none, o + 1).mask, fuse_window(w, none, o).mask));
  // Order-insensitive.
  auto r = w;
  std::reverse(r.begin(), r.end());
  std::swap(r[0], r[2]);
  EXPECT_EQ(fuse_window(w, seg, 2, 1).mask, fuse_window(r, seg, 2, 1).mask);
}

TEST(Fuse, DilationGrowsFlowPartOnly)
{
  const WarpMask a = make_warp(9, 9, {{4, 4}});
  BinaryMask seg(9, 9, 1, 0);
  seg(0, 8) = 1;
  const MotionMask m = fuse_window({a}, seg, 1, 1);
  EXPECT_EQ(count(m.mask), 9u + 1u);
  EXPECT_EQ(m.mask(1, 7), 0);
}

TEST(KeyframeMasks, FirstKeyframeWithoutPriorsIsSeg)
{
  BinaryMask seg(8, 6, 1, 0);
  seg(3, 3) = 1;
  MaskConfig cfg;
  cfg.dilate = 0;
  const SegProvider segs = [&](int) { return std::optional<BinaryMask>(seg); };
  const FlowProvider flows = [](int, int) { return std::optional<FlowField>(); };
  const auto masks = build_masks_for_keyframes({0}, 8, 6, flows, segs, cfg);
  EXPECT_EQ(masks.at(0).mask, seg);
  cfg.bootstrap_forward = false;
  const auto m2 = build_masks_for_keyframes({0, 5}, 8, 6, flows, segs, cfg);
  EXPECT_EQ(m2.at(0).mask, seg);
  EXPECT_EQ(m2.at(0).window_used, 0);
}

TEST(KeyframeMasks, MissingFlowsAreLoggedAndSkipped)
{
  MaskConfig cfg;
  MaskBuildLog log;
  const FlowProvider flows = [](int, int) { return std::optional<FlowField>(); };
  const auto masks = build_masks_for_keyframes({0, 5, 10}, 8, 6, flows, nullptr, cfg, &log);
  EXPECT_EQ(masks.size(), 3u);
  EXPECT_FALSE(log.lines.empty());
  for (const auto &[id, m] : masks)
    EXPECT_EQ(count(m.mask), 0u);
}

TEST(KeyframeMasks, WrongFlowSizeIsDataError)
{
  const FlowProvider flows = [](int, int) { return std::optional<FlowField>(zero_flow(3, 3)); };
  EXPECT_THROW(build_masks_for_keyframes({0, 5}, 8, 6, flows, nullptr, MaskConfig{}), Error);
}

TEST(KeyframeMasks, NearestKeyframe)
{
  const std::vector<int> kfs{0, 5, 10};
  EXPECT_EQ(nearest_keyframe(kfs, 2), 0);
  EXPECT_EQ(nearest_keyframe(kfs, 3), 5);
  EXPECT_EQ(nearest_keyframe(kfs, 12), 10);
}

TEST(KeyframeMasks, IouEdgeCases)
{
  BinaryMask a(4, 4, 1, 0), b(4, 4, 1, 0);
  EXPECT_DOUBLE_EQ(mask_iou(a, b), 1.0);
  a(0, 0) = 1;
  EXPECT_DOUBLE_EQ(mask_iou(a, b), 0.0);
  b(0, 0) = b(1, 0) = 1;
  EXPECT_DOUBLE_EQ(mask_iou(a, b), 0.5);
}
