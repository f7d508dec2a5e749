#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dynslam/core.hpp"
#include "dynslam/geometry.hpp"
#include "dynslam/imageproc.hpp"

namespace dynslam
{

struct LossWeights
{
  double rgb = 1.0;
  double depth = 0.1;
  double fs = 10.0;
  double sdf_middle = 2000.0;
  double sdf_tail = 500.0;
  double edge = 1.0;

  void validate() const
  {
    if (rgb < 0 || depth < 0 || fs < 0 || sdf_middle < 0 || sdf_tail < 0 || edge < 0)
      throw usage_error("loss weights must be non-negative");
  }
};

enum class SdfTarget
{
  standard_tsdf, // s -> D - z
  paper_literal, // s -> D - T*tr, as the objective is printed
};

struct TruncationSpec
{
  double tr = 0.1;
  double middle_ratio = 0.4; // T
  double track_middle_w = 1.0;
  double track_tail_w = 0.5;
  double map_middle_w = 1.0;
  double map_tail_w = 1.0;
  SdfTarget target = SdfTarget::standard_tsdf;

  void validate() const
  {
    if (!(tr > 0))
      throw usage_error("truncation distance must be positive");
    if (!(middle_ratio > 0 && middle_ratio < 1))
      throw usage_error("middle truncation ratio must lie in (0, 1)");
  }
};

struct EdgeLossCfg
{
  double huber_delta = 1.0; // px
  double outlier_px = 10.0; // residuals above this are dropped
  bool skip_source_dynamic = true;

  void validate() const
  {
    if (!(huber_delta > 0 && outlier_px > 0))
      throw usage_error("edge loss: huber delta and outlier cutoff must be positive");
  }
};

struct LossValue
{
  double value = 0;
  size_t count = 0; // rays / samples / edges that contributed
  bool empty() const noexcept { return count == 0; }
};

/// Mean over usable rays of ||(C_hat - C) * M||^2. `static_w` is the mask M (1 = static).
inline LossValue rgb_loss(const Eigen::Matrix3Xd &pred, const Eigen::Matrix3Xd &gt, std::span<const double> static_w,
                          std::span<const uint8_t> usable, Eigen::Matrix3Xd *d_pred = nullptr)
{
  LossValue out;
  const Eigen::Index n = pred.cols();
  for (Eigen::Index i = 0; i < n; ++i)
    out.count += usable[static_cast<size_t>(i)];
  if (d_pred)
    d_pred->setZero(3, n);
  if (out.count == 0)
    return out;
  const double inv = 1.0 / static_cast<double>(out.count);
  for (Eigen::Index i = 0; i < n; ++i)
  {
    const auto ii = static_cast<size_t>(i);
    if (!usable[ii])
      continue;
    const double m = static_w[ii];
    const Eigen::Vector3d r = (pred.col(i) - gt.col(i)) * m;
    out.value += r.squaredNorm() * inv;
    if (d_pred)
      d_pred->col(i) = 2.0 * r * m * inv;
  }
  return out;
}

inline constexpr double depth_variance_floor = 1e-6;

/// Mean over usable rays with valid depth of ((D_hat - D) / sqrt(var + eps))^2 * M.
inline LossValue depth_loss(std::span<const double> pred, std::span<const double> gt, std::span<const double> var,
                            std::span<const double> static_w, std::span<const uint8_t> usable,
                            std::vector<double> *d_pred = nullptr, std::vector<double> *d_var = nullptr)
{
  LossValue out;
  const size_t n = pred.size();
  for (size_t i = 0; i < n; ++i)
    out.count += usable[i] && gt[i] > 0;
  if (d_pred)
    d_pred->assign(n, 0.0);
  if (d_var)
    d_var->assign(n, 0.0);
  if (out.count == 0)
    return out;
  const double inv = 1.0 / static_cast<double>(out.count);
  for (size_t i = 0; i < n; ++i)
  {
    if (!usable[i] || !(gt[i] > 0))
      continue;
    const double m = static_w[i];
    const double v = var[i] + depth_variance_floor;
    const double r = pred[i] - gt[i];
    out.value += r * r / v * m * inv;
    if (d_pred)
      (*d_pred)[i] = 2.0 * r / v * m * inv;
    if (d_var)
      (*d_var)[i] = -r * r / (v * v) * m * inv;
  }
  return out;
}

/// Mean over rays of the mean over free-space samples (z < D - tr) of (s - tr)^2.
/// Samples are ray-major with `per_ray` entries each; rays with ray_w = 0 are skipped but counted.
inline LossValue free_space_loss(std::span<const double> z, std::span<const double> s, std::span<const double> gt_depth,
                                 int per_ray, double tr, std::span<const double> ray_w, std::span<const uint8_t> usable,
                                 double grad_scale = 1.0, std::vector<double> *d_s = nullptr)
{
  LossValue out;
  const size_t rays = gt_depth.size();
  size_t denom = 0;
  for (size_t r = 0; r < rays; ++r)
    denom += usable[r];
  if (d_s && d_s->size() != s.size())
    d_s->assign(s.size(), 0.0);
  if (denom == 0)
    return out;
  const double inv_rays = 1.0 / static_cast<double>(denom);
  for (size_t r = 0; r < rays; ++r)
  {
    if (!usable[r] || !(gt_depth[r] > 0) || ray_w[r] == 0)
      continue;
    const size_t base = r * static_cast<size_t>(per_ray);
    size_t cnt = 0;
    for (int k = 0; k < per_ray; ++k)
      cnt += z[base + static_cast<size_t>(k)] < gt_depth[r] - tr;
    if (cnt == 0)
      continue;
    const double inv = inv_rays / static_cast<double>(cnt) * ray_w[r];
    for (int k = 0; k < per_ray; ++k)
    {
      const size_t i = base + static_cast<size_t>(k);
      if (!(z[i] < gt_depth[r] - tr))
        continue;
      const double e = s[i] - tr;
      out.value += e * e * inv;
      if (d_s)
        (*d_s)[i] += grad_scale * 2.0 * e * inv;
    }
    out.count += cnt;
  }
  return out;
}

struct SdfLoss
{
  LossValue middle;
  LossValue tail;
};

/// Near-surface SDF supervision split into the middle band |D - z| <= T*tr and the tail band
/// T*tr < |D - z| <= tr. Each term is a mean over rays of the mean over that band.
/// Gradients of (w_middle * middle + w_tail * tail) are added into d_s.
inline SdfLoss sdf_loss(std::span<const double> z, std::span<const double> s, std::span<const double> gt_depth, int per_ray,
                        const TruncationSpec &t, std::span<const double> ray_w, std::span<const uint8_t> usable,
                        double w_middle = 1.0, double w_tail = 1.0, std::vector<double> *d_s = nullptr)
{
  SdfLoss out;
  const size_t rays = gt_depth.size();
  size_t denom = 0;
  for (size_t r = 0; r < rays; ++r)
    denom += usable[r];
  if (d_s && d_s->size() != s.size())
    d_s->assign(s.size(), 0.0);
  if (denom == 0)
    return out;
  const double inv_rays = 1.0 / static_cast<double>(denom);
  const double band = t.middle_ratio * t.tr;
  for (size_t r = 0; r < rays; ++r)
  {
    if (!usable[r] || !(gt_depth[r] > 0) || ray_w[r] == 0)
      continue;
    const double d = gt_depth[r];
    const size_t base = r * static_cast<size_t>(per_ray);
    size_t n_mid = 0, n_tail = 0;
    for (int k = 0; k < per_ray; ++k)
    {
      const double dist = std::abs(d - z[base + static_cast<size_t>(k)]);
      if (dist <= band)
        ++n_mid;
      else if (dist <= t.tr)
        ++n_tail;
    }
    for (int k = 0; k < per_ray; ++k)
    {
      const size_t i = base + static_cast<size_t>(k);
      const double dist = std::abs(d - z[i]);
      if (dist > t.tr)
        continue;
      const bool mid = dist <= band;
      const double target = t.target == SdfTarget::standard_tsdf ? d - z[i] : d - band;
      const double e = s[i] - target;
      const double inv = inv_rays / static_cast<double>(mid ? n_mid : n_tail) * ray_w[r];
      LossValue &term = mid ? out.middle : out.tail;
      term.value += e * e * inv;
      ++term.count;
      if (d_s)
        (*d_s)[i] += (mid ? w_middle : w_tail) * 2.0 * e * inv;
    }
  }
  return out;
}

inline double huber(double r, double delta)
{
  const double a = std::abs(r);
  return a <= delta ? 0.5 * r * r : delta * (a - 0.5 * delta);
}

inline double huber_grad(double r, double delta)
{
  return std::abs(r) <= delta ? r : delta * (r > 0 ? 1.0 : -1.0);
}

struct EdgeLossResult
{
  double value = 0;
  Vector6d gradient = Vector6d::Zero(); // w.r.t. left perturbation of T_ji
  size_t used = 0;
  size_t skipped_dynamic = 0;
  bool ok() const noexcept { return used > 0; }
};

/// Sum over edge pixels of frame i of Huber(DT_j(warp(T_ji, p, D_i(p)))). Residuals are dropped
/// when the warp leaves the image or lands behind the camera, when the warped pixel is dynamic in
/// mask_j, or when the distance exceeds the outlier cutoff. `ok()` is false when nothing is usable.
inline EdgeLossResult edge_loss(const std::vector<Eigen::Vector2i> &edges, const ImageF &depth_i, const DTMap &dt_j,
                                const BinaryMask &mask_j, const BinaryMask &mask_i, const PoseSE3 &t_ji,
                                const Intrinsics &k, const EdgeLossCfg &cfg, int threads = 1)
{
  struct Term
  {
    double v = 0;
    Vector6d g = Vector6d::Zero();
    uint8_t used = 0, dyn = 0;
  };
  std::vector<Term> terms(edges.size());
  parallel_for(edges.size(), threads, [&](size_t e) {
    const Eigen::Vector2i &p = edges[e];
    const double d = depth_i(p.x(), p.y());
    if (!(d > 0) || !std::isfinite(d))
      return;
    if (cfg.skip_source_dynamic && !mask_i.empty() && mask_i(p.x(), p.y()))
    {
      terms[e].dyn = 1;
      return;
    }
    Matrix26d jac;
    const WarpResult w = warp_pixel(t_ji, p.cast<double>(), d, k, &jac);
    if (!w.valid())
      return;
    if (!mask_j.empty())
    {
      const int qx = static_cast<int>(std::lround(w.pixel.x())), qy = static_cast<int>(std::lround(w.pixel.y()));
      if (mask_j.contains(qx, qy) && mask_j(qx, qy))
      {
        terms[e].dyn = 1;
        return;
      }
    }
    const DTSample s = sample_dt_bilinear(dt_j, w.pixel);
    if (!s.in_bounds || s.value > cfg.outlier_px)
      return;
    terms[e].v = huber(s.value, cfg.huber_delta);
    terms[e].g = huber_grad(s.value, cfg.huber_delta) * (s.gradient.transpose() * jac).transpose();
    terms[e].used = 1;
  });
  EdgeLossResult out;
  for (const auto &t : terms)
  {
    if (t.used)
    {
      out.value += t.v;
      out.gradient += t.g;
      ++out.used;
    }
    out.skipped_dynamic += t.dyn;
  }
  return out;
}

struct LossTerms
{
  double rgb = 0, depth = 0, fs = 0, sdf_middle = 0, sdf_tail = 0, edge = 0;
};

struct TotalLoss
{
  double total = 0;
  LossTerms terms;
};

/// Weighted sum of the rendering and geometric terms (and the edge term when present).
inline TotalLoss total_loss(const LossTerms &t, const LossWeights &w)
{
  TotalLoss out;
  out.terms = t;
  out.total = w.rgb * t.rgb + w.depth * t.depth + w.fs * t.fs + w.sdf_middle * t.sdf_middle + w.sdf_tail * t.sdf_tail +
              w.edge * t.edge;
  return out;
}

} // namespace dynslam
