#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include <Eigen/Dense>

#include "dynslam/core.hpp"
#include "dynslam/dataio.hpp"
#include "dynslam/field.hpp"

namespace testutil
{

namespace fs = std::filesystem;

/// Fresh scratch directory under the system temp dir.
inline fs::path temp_dir(const std::string &name)
{
  const fs::path p = fs::temp_directory_path() / ("dynslam_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

inline double rel_err(double a, double b, double floor = 1e-8)
{
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Small field with a direct-indexed coarse level and hashed fine levels.
inline dynslam::FieldParams small_field(uint64_t seed = 5, double bias = 0.1)
{
  dynslam::HashGridConfig g;
  g.levels = 4;
  g.r_min = 4;
  g.r_max = 64;
  g.log2_table = 10;
  g.feat_dim = 2;
  g.bounds_min = Eigen::Vector3d(-1, -1, -1);
  g.bounds_max = Eigen::Vector3d(1, 1, 1);
  dynslam::DecoderConfig d;
  d.hidden = 8;
  d.feature_dim = 3;
  d.blob_bins = 4;
  auto p = dynslam::FieldParams::create(g, d, seed, bias);
  // Larger table entries so the encoding actually influences the output.
  dynslam::Rng rng(seed + 100);
  for (size_t i = p.w.layout.tables; i < p.w.layout.g_w1; ++i)
    p.w.data[i] = dynslam::uniform(rng, -0.5, 0.5);
  return p;
}

/// Static synthetic scene: camera at the room centre looking down +z.
inline dynslam::SyntheticSceneSpec tiny_static_spec(int frames = 3, double step = 0.0)
{
  dynslam::SyntheticSceneSpec s;
  s.room_half_extents = {2.0, 1.5, 2.0};
  s.intrinsics = {40.0, 40.0, 23.5, 17.5, 48, 36, 5000.0};
  s.supersample = 1;
  for (int i = 0; i < frames; ++i)
    s.camera_trajectory.push_back(dynslam::PoseSE3::from_rt(Eigen::Matrix3d::Identity(), {step * i, 0, 0}));
  return s;
}

/// Field whose SDF is the trilinear interpolant of |x| - radius: the first (dense) level stores
/// the distance, and the geometry decoder passes it through a +/- ReLU pair.
inline dynslam::FieldParams sphere_field(double radius)
{
  dynslam::HashGridConfig g;
  g.levels = 2;
  g.r_min = 16;
  g.r_max = 32;
  g.log2_table = 16;
  g.feat_dim = 2;
  g.bounds_min = Eigen::Vector3d(-1, -1, -1);
  g.bounds_max = Eigen::Vector3d(1, 1, 1);
  dynslam::DecoderConfig d;
  d.hidden = 8;
  d.feature_dim = 3;
  d.blob_bins = 4;
  auto p = dynslam::FieldParams::create(g, d, 1, 0.0);
  std::fill(p.w.data.begin(), p.w.data.end(), 0.0);
  const int res = g.resolution(0);
  const Eigen::Vector3d ext = g.extent();
  for (uint32_t z = 0; z <= static_cast<uint32_t>(res); ++z)
    for (uint32_t y = 0; y <= static_cast<uint32_t>(res); ++y)
      for (uint32_t x = 0; x <= static_cast<uint32_t>(res); ++x)
      {
        const Eigen::Vector3d v = g.bounds_min + Eigen::Vector3d(x, y, z).cwiseProduct(ext) / res;
        p.w.data[p.w.layout.tables + dynslam::detail::grid_index(g, res, x, y, z) * static_cast<size_t>(g.feat_dim)] =
            v.norm() - radius;
      }
  const int in = p.w.layout.blob_dim;
  p.w.g_w1()(0, in) = 1.0;
  p.w.g_w1()(1, in) = -1.0;
  p.w.g_w2()(0, 0) = 1.0;
  p.w.g_w2()(0, 1) = -1.0;
  return p;
}

} // namespace testutil
