#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "dynslam/core.hpp"
#include "dynslam/dataio.hpp"
#include "dynslam/geometry.hpp"

namespace dynslam
{

/// Rays through sampled pixels. Directions are unit vectors; a point at z-depth z lies at
/// origin + (z / dir_z_cam) * direction, where dir_z_cam is the direction's camera-frame z.
struct RayBatch
{
  int frame_id = -1;
  Eigen::Matrix3Xd origins;
  Eigen::Matrix3Xd directions;
  Eigen::VectorXd dir_z_cam;
  std::vector<Eigen::Vector2i> pixels;
  Eigen::Matrix3Xd gt_color;
  Eigen::VectorXd gt_depth; // 0 = invalid
  std::vector<uint8_t> dynamic; // always 0 once sampled; kept for audits
  size_t shortfall = 0;

  Eigen::Index size() const noexcept { return origins.cols(); }

  void resize(Eigen::Index n)
  {
    origins.resize(3, n);
    directions.resize(3, n);
    dir_z_cam.resize(n);
    pixels.resize(static_cast<size_t>(n));
    gt_color.resize(3, n);
    gt_depth.resize(n);
    dynamic.assign(static_cast<size_t>(n), 0);
  }
};

/// Fills ray geometry for batch entries from a camera-to-world pose.
inline void set_ray_geometry(RayBatch &b, Eigen::Index i, const Intrinsics &k, const PoseSE3 &pose)
{
  const auto &p = b.pixels[static_cast<size_t>(i)];
  const Eigen::Vector3d dc((p.x() - k.cx) / k.fx, (p.y() - k.cy) / k.fy, 1.0);
  const double norm = dc.norm();
  b.origins.col(i) = pose.translation();
  b.directions.col(i) = pose.rotation() * (dc / norm);
  b.dir_z_cam(i) = 1.0 / norm;
}

/// Uniform choice without replacement among pixels whose mask is 0 (mask may be empty = all static).
inline RayBatch sample_pixels(const Frame &frame, const BinaryMask &mask, size_t n, uint64_t seed, const Intrinsics &k,
                              const PoseSE3 &pose)
{
  const int w = frame.color.width(), h = frame.color.height();
  if (!mask.empty() && !mask.same_size(w, h))
    throw usage_error("sample_pixels: mask size does not match frame");
  std::vector<uint32_t> valid;
  valid.reserve(static_cast<size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (mask.empty() || !mask(x, y))
        valid.push_back(static_cast<uint32_t>(y * w + x));

  RayBatch b;
  b.frame_id = frame.id;
  const size_t take = std::min(n, valid.size());
  b.shortfall = n - take;
  Rng rng(seed);
  for (size_t i = 0; i < take; ++i)
  {
    const size_t j = i + static_cast<size_t>(uniform_index(rng, valid.size() - i));
    std::swap(valid[i], valid[j]);
  }
  b.resize(static_cast<Eigen::Index>(take));
  for (size_t i = 0; i < take; ++i)
  {
    const int x = static_cast<int>(valid[i] % static_cast<uint32_t>(w));
    const int y = static_cast<int>(valid[i] / static_cast<uint32_t>(w));
    const auto ii = static_cast<Eigen::Index>(i);
    b.pixels[i] = {x, y};
    set_ray_geometry(b, ii, k, pose);
    for (int c = 0; c < 3; ++c)
      b.gt_color(c, ii) = frame.color(x, y, c);
    const double d = frame.depth(x, y);
    b.gt_depth(ii) = std::isfinite(d) && d > 0 ? d : 0.0;
  }
  return b;
}

struct RaySamplingConfig
{
  int n_samples = 85;
  double surface_fraction = 0.6;
  double tr = 0.1;
  double near = 0.05;
  double far = 8.0;

  void validate() const
  {
    if (n_samples < 2)
      throw usage_error("ray sampling: need at least 2 samples per ray");
    if (!(far > near) || !(near >= 0))
      throw usage_error("ray sampling: require 0 <= near < far");
    if (!(tr > 0))
      throw usage_error("ray sampling: truncation must be positive");
    if (!(surface_fraction >= 0 && surface_fraction <= 1))
      throw usage_error("ray sampling: surface fraction must lie in [0, 1]");
  }
};

/// Per-ray sorted sample z-depths; the interval [near, far] is first clipped to the scene box.
/// Returns nullopt when the ray misses the box entirely.
inline std::optional<std::vector<double>> sample_along_ray(const Eigen::Vector3d &origin, const Eigen::Vector3d &dir,
                                                           double dir_z_cam, double gt_depth,
                                                           const RaySamplingConfig &cfg, const Eigen::Vector3d &bmin,
                                                           const Eigen::Vector3d &bmax, Rng &rng)
{
  cfg.validate();
  double t0 = 0, t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a)
  {
    if (std::abs(dir[a]) < 1e-15)
    {
      if (origin[a] < bmin[a] || origin[a] > bmax[a])
        return std::nullopt;
      continue;
    }
    double ta = (bmin[a] - origin[a]) / dir[a];
    double tb = (bmax[a] - origin[a]) / dir[a];
    if (ta > tb)
      std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  // Shrink slightly so every sample point stays strictly inside the box.
  const double near = std::max(cfg.near, t0 * dir_z_cam * (1 + 1e-9) + 1e-9);
  const double far = std::min(cfg.far, t1 * dir_z_cam * (1 - 1e-9) - 1e-9);
  if (!(far > near))
    return std::nullopt;

  const int n = cfg.n_samples;
  const bool surface = gt_depth > 0;
  const int n_surf = surface ? static_cast<int>(std::lround(cfg.surface_fraction * n)) : 0;
  const int n_strat = n - n_surf;
  std::vector<double> z;
  z.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n_strat; ++i)
  {
    const double lo = near + (far - near) * i / n_strat;
    const double hi = near + (far - near) * (i + 1) / n_strat;
    z.push_back(uniform(rng, lo, hi));
  }
  if (n_surf > 0)
  {
    const double lo = std::clamp(gt_depth - cfg.tr, near, far);
    const double hi = std::clamp(gt_depth + cfg.tr, near, far);
    for (int i = 0; i < n_surf; ++i)
      z.push_back(uniform(rng, lo + (hi - lo) * i / n_surf, lo + (hi - lo) * (i + 1) / n_surf));
  }
  std::sort(z.begin(), z.end());
  return z;
}

/// Fixed M samples per ray, stored ray-major.
struct RaySamples
{
  int per_ray = 0;
  double tr = 0.1;
  std::vector<double> z;
  Eigen::Matrix3Xd points;
  std::vector<uint8_t> ray_valid;

  Eigen::Index rays() const noexcept { return static_cast<Eigen::Index>(ray_valid.size()); }
};

inline RaySamples sample_batch(const RayBatch &b, const RaySamplingConfig &cfg, const Eigen::Vector3d &bmin,
                               const Eigen::Vector3d &bmax, uint64_t seed)
{
  cfg.validate();
  RaySamples s;
  s.per_ray = cfg.n_samples;
  s.tr = cfg.tr;
  const Eigen::Index n = b.size();
  const size_t m = static_cast<size_t>(cfg.n_samples);
  s.z.assign(static_cast<size_t>(n) * m, 0.0);
  s.points.resize(3, n * cfg.n_samples);
  s.ray_valid.assign(static_cast<size_t>(n), 0);
  Rng rng(seed);
  const Eigen::Vector3d center = 0.5 * (bmin + bmax);
  for (Eigen::Index i = 0; i < n; ++i)
  {
    auto z = sample_along_ray(b.origins.col(i), b.directions.col(i), b.dir_z_cam(i), b.gt_depth(i), cfg, bmin, bmax, rng);
    for (size_t k = 0; k < m; ++k)
    {
      const auto col = static_cast<Eigen::Index>(static_cast<size_t>(i) * m + k);
      if (z)
      {
        s.z[static_cast<size_t>(col)] = (*z)[k];
        s.points.col(col) = b.origins.col(i) + ((*z)[k] / b.dir_z_cam(i)) * b.directions.col(i);
      }
      else
      {
        s.z[static_cast<size_t>(col)] = 1.0;
        s.points.col(col) = center;
      }
    }
    s.ray_valid[static_cast<size_t>(i)] = z.has_value();
  }
  return s;
}

/// Bell-shaped weight sigma(s/tr) * sigma(-s/tr).
// Written in |s| so that w(s) == w(-s) bit for bit.
inline double sdf_to_weight(double s, double tr)
{
  const double e = std::exp(-std::abs(s) / tr);
  return e / ((1.0 + e) * (1.0 + e));
}

/// d weight / d s.
inline double sdf_to_weight_grad(double s, double tr)
{
  const double e = std::exp(-std::abs(s) / tr);
  const double g = e * (1.0 - e) / ((1.0 + e) * (1.0 + e) * (1.0 + e)) / tr;
  return s > 0 ? -g : s < 0 ? g : 0.0;
}

inline std::vector<double> sdf_to_weights(std::span<const double> s, double tr)
{
  if (!(tr > 0))
    throw usage_error("sdf_to_weights: truncation must be positive");
  std::vector<double> w(s.size());
  for (size_t i = 0; i < s.size(); ++i)
    w[i] = sdf_to_weight(s[i], tr);
  return w;
}

inline constexpr double degenerate_weight_sum = 1e-8;

struct RayRender
{
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
  double depth = 0;
  double variance = 0;
  double weight_sum = 0;
  bool degenerate = true;
};

/// Normalized weighted accumulation of per-sample colors and depths.
inline RayRender render_ray(std::span<const double> z, std::span<const double> w, const Eigen::Ref<const Eigen::Matrix3Xd> &c)
{
  RayRender r;
  if (z.empty())
    return r;
  double ws = 0, wz = 0, wzz = 0;
  Eigen::Vector3d wc = Eigen::Vector3d::Zero();
  for (size_t i = 0; i < z.size(); ++i)
  {
    ws += w[i];
    wz += w[i] * z[i];
    wc += w[i] * c.col(static_cast<Eigen::Index>(i));
  }
  r.weight_sum = ws;
  if (!(ws >= degenerate_weight_sum))
    return r;
  r.degenerate = false;
  r.color = wc / ws;
  r.depth = wz / ws;
  for (size_t i = 0; i < z.size(); ++i)
    wzz += w[i] * (r.depth - z[i]) * (r.depth - z[i]);
  r.variance = wzz / ws;
  return r;
}

struct RayRenderGrad
{
  std::vector<double> d_w; // per-sample weight gradient
  std::vector<double> d_z;
  Eigen::Matrix3Xd d_c;
};

/// Back-propagates (dL/dColor, dL/dDepth, dL/dVariance) to per-sample weights, depths and colors.
inline RayRenderGrad render_ray_backward(std::span<const double> z, std::span<const double> w,
                                         const Eigen::Ref<const Eigen::Matrix3Xd> &c, const RayRender &r,
                                         const Eigen::Vector3d &d_color, double d_depth, double d_var)
{
  const size_t m = z.size();
  RayRenderGrad g;
  g.d_w.assign(m, 0.0);
  g.d_z.assign(m, 0.0);
  g.d_c = Eigen::Matrix3Xd::Zero(3, static_cast<Eigen::Index>(m));
  if (r.degenerate)
    return g;
  const double inv = 1.0 / r.weight_sum;
  for (size_t i = 0; i < m; ++i)
  {
    const auto ii = static_cast<Eigen::Index>(i);
    const double dz = z[i] - r.depth;
    g.d_w[i] = inv * (d_color.dot(c.col(ii) - r.color) + d_depth * dz + d_var * (dz * dz - r.variance));
    g.d_z[i] = inv * w[i] * (d_depth + 2.0 * d_var * dz);
    g.d_c.col(ii) = inv * w[i] * d_color;
  }
  return g;
}

} // namespace dynslam
