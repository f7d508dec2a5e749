#include <fstream>
#include <iterator>

#include <gtest/gtest.h>

#include "dynslam/dataio.hpp"
#include "dynslam/png_io.hpp"
#include "helpers.hpp"

using namespace dynslam;
using testutil::temp_dir;

namespace
{

std::string slurp(const fs::path &p)
{
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path &p, const std::string &s) { std::ofstream(p) << s; }

void write_gray(const fs::path &p, int w, int h, int bits, const std::vector<uint16_t> &v) { png::write(p, w, h, 1, bits, v); }

void write_rgb(const fs::path &p, int w, int h, uint16_t value)
{
  png::write(p, w, h, 3, 8, std::vector<uint16_t>(static_cast<size_t>(w) * h * 3, value));
}

Intrinsics tiny_k() { return {10, 10, 1.5, 1.0, 4, 3, 5000}; }

} // namespace

TEST(TumList, SkipsCommentsAndSorts)
{
  const auto dir = temp_dir("list");
  write_text(dir / "l.txt", "# header\n2.0 b.png\n\n1.0 a.png\n");
  const auto l = read_tum_list(dir / "l.txt");
  ASSERT_EQ(l.size(), 2u);
  EXPECT_EQ(l[0].value, "a.png");
  EXPECT_DOUBLE_EQ(l[1].timestamp, 2.0);
}

TEST(TumList, MissingFileIsDataError)
{
  try
  {
    read_tum_list("/nonexistent/rgb.txt");
    FAIL();
  }
  catch (const Error &e)
  {
    EXPECT_EQ(e.kind(), ErrorKind::data);
  }
}

TEST(Association, NearestWithinTolerance)
{
  const std::vector<TimedEntry> rgb{{1.000, "r"}};
  const std::vector<TimedEntry> depth{{1.008, "a"}, {1.500, "b"}};
  const auto p = associate(rgb, depth, 0.02);
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p[0], (std::pair<size_t, size_t>{0, 0}));
}

TEST(Association, StableAndOneToOne)
{
  Rng rng(3);
  std::vector<TimedEntry> a, b;
  for (int i = 0; i < 200; ++i)
  {
    a.push_back({i * 0.033 + uniform(rng, -0.005, 0.005), ""});
    b.push_back({i * 0.033 + uniform(rng, -0.015, 0.015), ""});
  }
  const auto p1 = associate(a, b, 0.02), p2 = associate(a, b, 0.02);
  EXPECT_EQ(p1, p2);
  std::set<size_t> used;
  for (const auto &[i, j] : p1)
  {
    EXPECT_LE(std::abs(a[i].timestamp - b[j].timestamp), 0.02);
    EXPECT_TRUE(used.insert(j).second);
  }
}

TEST(DepthPng, RawValueScales)
{
  const auto dir = temp_dir("depth");
  write_gray(dir / "d.png", 2, 1, 16, {5000, 0});
  const ImageF d = load_depth_png(dir / "d.png", 5000);
  EXPECT_DOUBLE_EQ(d(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(d(1, 0), 0.0);
}

TEST(TumSequence, ThreeFrameFixture)
{
  const auto dir = temp_dir("tum3");
  fs::create_directories(dir / "rgb");
  fs::create_directories(dir / "depth");
  std::string rgb = "# rgb\n", depth = "# depth\n";
  for (int i = 0; i < 3; ++i)
  {
    const std::string n = std::to_string(i) + ".png";
    write_rgb(dir / "rgb" / n, 4, 3, static_cast<uint16_t>(50 * i));
    write_gray(dir / "depth" / n, 4, 3, 16, std::vector<uint16_t>(12, static_cast<uint16_t>(5000 + 1000 * i)));
    rgb += std::to_string(1.0 + i * 0.1) + " rgb/" + n + "\n";
    depth += std::to_string(1.005 + i * 0.1) + " depth/" + n + "\n";
  }
  write_text(dir / "rgb.txt", rgb);
  write_text(dir / "depth.txt", depth);
  write_text(dir / "groundtruth.txt", "# gt\n"
                                      "1.000 0 0 0 0 0 0 1\n"
                                      "1.100 0.5 0 0 0 0 0 1\n"
                                      "1.200 1.0 2.0 3.0 0 0 0.7071067811865476 0.7071067811865476\n");
  const Sequence s = load_tum_sequence(dir, tiny_k());
  ASSERT_EQ(s.size(), 3u);
  ASSERT_EQ(s.gt_trajectory.size(), 3u);
  for (int i = 0; i < 3; ++i)
  {
    EXPECT_EQ(s.frames[static_cast<size_t>(i)].id, i);
    EXPECT_NEAR(s.frames[static_cast<size_t>(i)].timestamp, 1.0 + 0.1 * i, 1e-9);
    EXPECT_NEAR(s.frames[static_cast<size_t>(i)].depth(2, 1), 1.0 + 0.2 * i, 1e-12);
    EXPECT_NEAR(s.frames[static_cast<size_t>(i)].color(0, 0, 1), 50.0 * i / 255.0, 1e-12);
    ASSERT_TRUE(s.gt_per_frame[static_cast<size_t>(i)].has_value());
  }
  const PoseSE3 &p2 = *s.gt_per_frame[2];
  EXPECT_LT((p2.translation() - Eigen::Vector3d(1, 2, 3)).norm(), 1e-12);
  Eigen::Matrix3d rz;
  rz << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  EXPECT_LT((p2.rotation() - rz).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(TumSequence, MissingRootIsDataError)
{
  try
  {
    load_tum_sequence("/nonexistent/dataset", tiny_k());
    FAIL();
  }
  catch (const Error &e)
  {
    EXPECT_EQ(e.kind(), ErrorKind::data);
  }
}

TEST(TumSequence, NoAssociationsIsDataError)
{
  const auto dir = temp_dir("noassoc");
  write_text(dir / "rgb.txt", "1.0 a.png\n");
  write_text(dir / "depth.txt", "5.0 b.png\n");
  EXPECT_THROW(load_tum_sequence(dir, tiny_k()), Error);
}

TEST(TumSequence, DiscoversFlowsAndSegs)
{
  const auto dir = temp_dir("tumflow");
  fs::create_directories(dir / "flows");
  fs::create_directories(dir / "seg");
  for (int i = 0; i < 2; ++i)
  {
    write_rgb(dir / (std::to_string(i) + "c.png"), 4, 3, 0);
    write_gray(dir / (std::to_string(i) + "d.png"), 4, 3, 16, std::vector<uint16_t>(12, 1000));
  }
  write_text(dir / "rgb.txt", "1.0 0c.png\n1.1 1c.png\n");
  write_text(dir / "depth.txt", "1.0 0d.png\n1.1 1d.png\n");
  FlowField f{Image<float>(4, 3), Image<float>(4, 3)};
  write_flow(dir / "flows" / flow_filename(1, 0), f);
  write_flow(dir / "flows" / "flow_01_0.flo", f); // not the canonical spelling
  write_flow(dir / "flows" / flow_filename(5, 0), f); // frame out of range
  write_gray(dir / "seg" / seg_filename(1), 4, 3, 8, std::vector<uint16_t>(12, 0));
  const Sequence s = load_tum_sequence(dir, tiny_k());
  ASSERT_EQ(s.flow_paths.size(), 1u);
  EXPECT_TRUE(s.flow_paths.count({1, 0}));
  ASSERT_EQ(s.seg_paths.size(), 1u);
  EXPECT_TRUE(s.seg_paths.count(1));
}

TEST(Flow, HandBuiltFile)
{
  const auto dir = temp_dir("flo");
  {
    std::ofstream f(dir / "a.flo", std::ios::binary);
    const float magic = 202021.25f;
    const int32_t w = 2, h = 1;
    const float data[4] = {1.5f, -0.5f, 0.0f, 0.0f};
    f.write(reinterpret_cast<const char *>(&magic), 4);
    f.write(reinterpret_cast<const char *>(&w), 4);
    f.write(reinterpret_cast<const char *>(&h), 4);
    f.write(reinterpret_cast<const char *>(data), 16);
  }
  const FlowField fl = load_flow(dir / "a.flo");
  ASSERT_EQ(fl.width(), 2);
  ASSERT_EQ(fl.height(), 1);
  EXPECT_EQ(fl.u(0, 0), 1.5f);
  EXPECT_EQ(fl.v(0, 0), -0.5f);
  EXPECT_EQ(fl.u(1, 0), 0.0f);
  EXPECT_EQ(fl.v(1, 0), 0.0f);
}

TEST(Flow, WrongMagicAndTruncation)
{
  const auto dir = temp_dir("flobad");
  {
    std::ofstream f(dir / "bad.flo", std::ios::binary);
    const float magic = 0.0f;
    const int32_t w = 1, h = 1;
    f.write(reinterpret_cast<const char *>(&magic), 4);
    f.write(reinterpret_cast<const char *>(&w), 4);
    f.write(reinterpret_cast<const char *>(&h), 4);
    f.write("\0\0\0\0\0\0\0\0", 8);
  }
  {
    std::ofstream f(dir / "short.flo", std::ios::binary);
    const int32_t w = 4, h = 4;
    f.write(reinterpret_cast<const char *>(&flo_magic), 4);
    f.write(reinterpret_cast<const char *>(&w), 4);
    f.write(reinterpret_cast<const char *>(&h), 4);
    f.write("\0\0\0\0", 4);
  }
  for (const char *name : {"bad.flo", "short.flo"})
  {
    try
    {
      load_flow(dir / name);
      ADD_FAILURE() << name;
    }
    catch (const Error &e)
    {
      EXPECT_EQ(e.kind(), ErrorKind::data);
    }
  }
}

TEST(Flow, RoundTripIsBitIdentical)
{
  const auto dir = temp_dir("flort");
  Rng rng(4);
  FlowField f{Image<float>(16, 16), Image<float>(16, 16)};
  for (size_t i = 0; i < 256; ++i)
  {
    f.u.at_index(i) = static_cast<float>(uniform(rng, -50, 50));
    f.v.at_index(i) = static_cast<float>(uniform(rng, -50, 50));
  }
  f.u(3, 3) = FlowField::unknown;
  write_flow(dir / "a.flo", f);
  write_flow(dir / "b.flo", load_flow(dir / "a.flo"));
  EXPECT_EQ(slurp(dir / "a.flo"), slurp(dir / "b.flo"));
  EXPECT_FALSE(load_flow(dir / "a.flo").valid(3, 3));
}

TEST(SegMask, AllZeroAndSinglePixel)
{
  const auto dir = temp_dir("seg");
  write_gray(dir / "z.png", 8, 6, 8, std::vector<uint16_t>(48, 0));
  std::vector<uint16_t> one(48, 0);
  one[4 * 8 + 3] = 255;
  write_gray(dir / "o.png", 8, 6, 8, one);
  const BinaryMask z = load_seg_mask(dir / "z.png");
  for (auto v : z.data())
    EXPECT_EQ(v, 0);
  const BinaryMask o = load_seg_mask(dir / "o.png");
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 8; ++x)
      EXPECT_EQ(o(x, y), (x == 3 && y == 4) ? 1 : 0);
}

TEST(SegMask, MatchesPerPixelNonzero)
{
  const auto dir = temp_dir("segdither");
  std::vector<uint16_t> v(20 * 10);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 20; ++x)
      v[static_cast<size_t>(y * 20 + x)] = ((x + y) % 2) ? static_cast<uint16_t>(1 + (x * 37 + y * 11) % 255) : 0;
  write_gray(dir / "d.png", 20, 10, 8, v);
  const BinaryMask m = load_seg_mask(dir / "d.png");
  for (size_t i = 0; i < v.size(); ++i)
    EXPECT_EQ(m.at_index(i), v[i] > 0 ? 1 : 0);
}

TEST(SegMask, RejectsMultiChannelAndWrongSize)
{
  const auto dir = temp_dir("segbad");
  write_rgb(dir / "c.png", 4, 3, 255);
  write_gray(dir / "g.png", 4, 3, 8, std::vector<uint16_t>(12, 0));
  EXPECT_THROW(load_seg_mask(dir / "c.png"), Error);
  EXPECT_THROW(load_seg_mask(dir / "g.png", 5, 3), Error);
}

TEST(Trajectory, WriteReadRoundTrip)
{
  const auto dir = temp_dir("traj");
  std::vector<TimedPose> t;
  Rng rng(5);
  for (int i = 0; i < 5; ++i)
  {
    Vector6d xi;
    for (int j = 0; j < 6; ++j)
      xi(j) = uniform(rng, -1, 1);
    t.push_back({1.0 + i, PoseSE3::exp(xi)});
  }
  write_tum_trajectory(dir / "t.txt", t);
  const auto r = read_tum_trajectory(dir / "t.txt");
  ASSERT_EQ(r.size(), t.size());
  for (size_t i = 0; i < t.size(); ++i)
    EXPECT_LT((r[i].pose.matrix() - t[i].pose.matrix()).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Synthetic, WallDepthIsExact)
{
  auto spec = testutil::tiny_static_spec(1);
  spec.intrinsics = {40, 40, 24, 18, 48, 36, 5000};
  const auto syn = generate_synthetic_sequence(spec);
  // Identity camera at the room centre; the +z wall is 2 m away.
  EXPECT_NEAR(syn.sequence.frames[0].depth(24, 18), 2.0, 1e-12);
  for (auto d : syn.sequence.frames[0].depth.data())
    EXPECT_TRUE(std::isfinite(d) && d >= 0);
}

TEST(Synthetic, GtMaskIsSphereFootprint)
{
  auto spec = testutil::tiny_static_spec(1);
  spec.sphere_path = {Eigen::Vector3d(0.1, -0.05, 1.2)};
  spec.sphere_radius = 0.3;
  const auto syn = generate_synthetic_sequence(spec);
  const auto &k = spec.intrinsics;
  size_t on = 0;
  for (int y = 0; y < k.height; ++y)
    for (int x = 0; x < k.width; ++x)
    {
      // Independent ray/sphere test from the origin.
      const Eigen::Vector3d d = Eigen::Vector3d((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1).normalized();
      const Eigen::Vector3d c = spec.sphere_path[0];
      const double b = d.dot(c);
      const bool hit = b * b - (c.squaredNorm() - 0.09) >= 0 && b > 0;
      EXPECT_EQ(syn.gt_dynamic_masks[0](x, y), hit ? 1 : 0) << x << "," << y;
      on += hit;
    }
  EXPECT_GT(on, 20u);
  EXPECT_EQ(syn.gt_dynamic_masks[0](static_cast<int>(k.cx), static_cast<int>(k.cy)), 1);
}

TEST(Synthetic, IdenticalPosesGiveZeroFlow)
{
  const auto spec = testutil::tiny_static_spec(2, 0.0);
  const auto syn = generate_synthetic_sequence(spec);
  ASSERT_EQ(syn.gt_flow.size(), 1u);
  for (size_t i = 0; i < syn.gt_flow[0].u.pixel_count(); ++i)
  {
    EXPECT_NEAR(syn.gt_flow[0].u.at_index(i), 0.0f, 1e-4f);
    EXPECT_NEAR(syn.gt_flow[0].v.at_index(i), 0.0f, 1e-4f);
  }
}

TEST(Synthetic, FlowWarpedDepthMatchesNextFrame)
{
  SyntheticSceneSpec spec = testutil::tiny_static_spec(1);
  spec.camera_trajectory = {PoseSE3::from_rt(Eigen::Matrix3d::Identity(), {0, 0, 0}),
                            PoseSE3::exp((Vector6d() << 0.05, -0.02, 0.03, 0.01, 0.04, -0.02).finished())};
  const auto syn = generate_synthetic_sequence(spec);
  const SyntheticScene scene(spec);
  const auto &k = spec.intrinsics;
  const PoseSE3 rel = spec.camera_trajectory[1].inverse() * spec.camera_trajectory[0];
  double worst = 0;
  size_t checked = 0;
  for (int y = 0; y < k.height; ++y)
    for (int x = 0; x < k.width; ++x)
    {
      const FlowField &f = syn.gt_flow[0];
      if (!f.valid(x, y))
        continue;
      const Eigen::Vector2d q(x + f.u(x, y), y + f.v(x, y));
      if (q.x() < 0 || q.y() < 0 || q.x() > k.width - 1 || q.y() > k.height - 1)
        continue;
      const double z = (rel * backproject(k, {x, y}, syn.sequence.frames[0].depth(x, y))).z();
      double z_next = 0;
      scene.cast_pixel(1, q, &z_next);
      worst = std::max(worst, std::abs(z - z_next));
      ++checked;
    }
  EXPECT_GT(checked, 1000u);
  EXPECT_LT(worst, 1e-6);
}

TEST(Synthetic, CameraOutsideRoomRejected)
{
  auto spec = testutil::tiny_static_spec(1);
  spec.camera_trajectory[0] = PoseSE3::from_rt(Eigen::Matrix3d::Identity(), {3, 0, 0});
  EXPECT_THROW(generate_synthetic_sequence(spec), Error);
}

TEST(Synthetic, DatasetWrittenToDiskReloads)
{
  const auto dir = temp_dir("synthdisk");
  SyntheticSceneSpec spec = testutil::tiny_static_spec(6, 0.01);
  spec.sphere_path = {Eigen::Vector3d(0.3, 0, 1.2), Eigen::Vector3d(-0.3, 0, 1.2)};
  const auto syn = generate_synthetic_sequence(spec);
  write_synthetic_dataset(dir, spec, syn, 5, 4);
  const Sequence s = load_tum_sequence(dir, spec.intrinsics, {0.02, "flows", "seg"});
  ASSERT_EQ(s.size(), 6u);
  EXPECT_TRUE(s.flow_paths.count({0, 5}));
  EXPECT_TRUE(s.flow_paths.count({5, 0}));
  for (size_t i = 0; i < s.size(); ++i)
    EXPECT_LT((s.frames[i].depth.data()[10] - syn.sequence.frames[i].depth.data()[10]), 1.0 / 5000);
}

TEST(Synthetic, KeyframeFlowPairs)
{
  const auto p = keyframe_flow_pairs(16, 5, 2);
  const std::vector<std::pair<int, int>> expect{{0, 5}, {5, 0}, {10, 5}, {10, 0}, {15, 10}, {15, 5}};
  EXPECT_EQ(p, expect);
}
