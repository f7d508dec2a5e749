#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "dynslam/core.hpp"
#include "dynslam/dataio.hpp"
#include "dynslam/field.hpp"
#include "dynslam/geometry.hpp"
#include "dynslam/losses.hpp"
#include "dynslam/render.hpp"

namespace dynslam
{

/// Rays stored in their camera frame; world geometry is rebuilt from the owner's pose.
struct RayBundle
{
  Eigen::Matrix3Xd dir_cam; // unit
  std::vector<int> owner;   // index into the pose list passed to the objective
  std::vector<Eigen::Vector2i> pixels;
  Eigen::Matrix3Xd gt_color;
  Eigen::VectorXd gt_depth;

  Eigen::Index size() const noexcept { return dir_cam.cols(); }

  void append(const RayBundle &o)
  {
    const Eigen::Index n = size(), m = o.size();
    dir_cam.conservativeResize(3, n + m);
    gt_color.conservativeResize(3, n + m);
    gt_depth.conservativeResize(n + m);
    dir_cam.rightCols(m) = o.dir_cam;
    gt_color.rightCols(m) = o.gt_color;
    gt_depth.tail(m) = o.gt_depth;
    owner.insert(owner.end(), o.owner.begin(), o.owner.end());
    pixels.insert(pixels.end(), o.pixels.begin(), o.pixels.end());
  }
};

inline Eigen::Vector3d pixel_direction(const Intrinsics &k, const Eigen::Vector2i &p)
{
  return Eigen::Vector3d((p.x() - k.cx) / k.fx, (p.y() - k.cy) / k.fy, 1.0).normalized();
}

/// Bundle of rays from a RayBatch's pixels and ground truth, all owned by pose `owner`.
inline RayBundle bundle_from_batch(const RayBatch &b, const Intrinsics &k, int owner)
{
  RayBundle r;
  const Eigen::Index n = b.size();
  r.dir_cam.resize(3, n);
  for (Eigen::Index i = 0; i < n; ++i)
    r.dir_cam.col(i) = pixel_direction(k, b.pixels[static_cast<size_t>(i)]);
  r.owner.assign(static_cast<size_t>(n), owner);
  r.pixels = b.pixels;
  r.gt_color = b.gt_color;
  r.gt_depth = b.gt_depth;
  return r;
}

/// Bundle drawn uniformly without replacement from mask-free pixels of a frame.
inline RayBundle sample_bundle_pixels(const Frame &f, const BinaryMask &mask, size_t n, uint64_t seed, const Intrinsics &k,
                                      int owner)
{
  return bundle_from_batch(sample_pixels(f, mask, n, seed, k, PoseSE3()), k, owner);
}

/// Random subset (without replacement) of a bundle.
inline RayBundle subsample(const RayBundle &b, size_t n, Rng &rng)
{
  const size_t total = static_cast<size_t>(b.size());
  std::vector<size_t> idx(total);
  for (size_t i = 0; i < total; ++i)
    idx[i] = i;
  const size_t take = std::min(n, total);
  for (size_t i = 0; i < take; ++i)
    std::swap(idx[i], idx[i + static_cast<size_t>(uniform_index(rng, total - i))]);
  RayBundle r;
  r.dir_cam.resize(3, static_cast<Eigen::Index>(take));
  r.gt_color.resize(3, static_cast<Eigen::Index>(take));
  r.gt_depth.resize(static_cast<Eigen::Index>(take));
  for (size_t i = 0; i < take; ++i)
  {
    const auto src = static_cast<Eigen::Index>(idx[i]);
    const auto dst = static_cast<Eigen::Index>(i);
    r.dir_cam.col(dst) = b.dir_cam.col(src);
    r.gt_color.col(dst) = b.gt_color.col(src);
    r.gt_depth(dst) = b.gt_depth(src);
    r.owner.push_back(b.owner[idx[i]]);
    r.pixels.push_back(b.pixels[idx[i]]);
  }
  return r;
}

/// Sample z-depths (camera frame), fixed while poses vary.
struct BundleSamples
{
  int per_ray = 0;
  std::vector<double> z;
  std::vector<uint8_t> valid;
};

inline BundleSamples sample_bundle(const RayBundle &b, const std::vector<PoseSE3> &poses, const RaySamplingConfig &cfg,
                                   const Eigen::Vector3d &bmin, const Eigen::Vector3d &bmax, uint64_t seed)
{
  cfg.validate();
  BundleSamples s;
  s.per_ray = cfg.n_samples;
  const auto m = static_cast<size_t>(cfg.n_samples);
  s.z.assign(static_cast<size_t>(b.size()) * m, 1.0);
  s.valid.assign(static_cast<size_t>(b.size()), 0);
  Rng rng(seed);
  for (Eigen::Index i = 0; i < b.size(); ++i)
  {
    const PoseSE3 &pose = poses[static_cast<size_t>(b.owner[static_cast<size_t>(i)])];
    const Eigen::Vector3d d = pose.rotation() * b.dir_cam.col(i);
    const auto z = sample_along_ray(pose.translation(), d, b.dir_cam(2, i), b.gt_depth(i), cfg, bmin, bmax, rng);
    if (!z)
      continue;
    s.valid[static_cast<size_t>(i)] = 1;
    std::copy(z->begin(), z->end(), s.z.begin() + static_cast<std::ptrdiff_t>(static_cast<size_t>(i) * m));
  }
  return s;
}

enum class LossRegime
{
  tracking,
  mapping,
};

struct ObjectiveOptions
{
  LossWeights weights;
  TruncationSpec trunc;
  LossRegime regime = LossRegime::mapping;
  double weight_tr = 0.01; // temperature of the bell-shaped rendering weight (m)
  bool field_grad = false;
  bool pose_grad = false;
  int threads = 1;
  /// Per-owner masks used only to audit that no dynamic pixel is read (may be empty).
  std::vector<const BinaryMask *> audit_masks;
};

struct ObjectiveResult
{
  double total = 0;
  LossTerms terms;
  GradientBundle field_grad;
  std::vector<Vector6d> pose_grad;
  size_t usable_rays = 0;
  size_t dynamic_reads = 0;
  double depth_mae = 0;
  bool degenerate() const noexcept { return usable_rays == 0; }
};

/// Losses and their gradients as functions of the per-sample field outputs (SDF and color).
struct OutputLoss
{
  double total = 0;
  LossTerms terms;
  std::vector<RayRender> renders;
  std::vector<uint8_t> usable_render, usable_geo;
  Eigen::RowVectorXd ds; // filled when gradients are requested
  Eigen::Matrix3Xd dc;
};

inline OutputLoss loss_from_outputs(std::span<const double> s, const Eigen::Matrix3Xd &colors, const RayBundle &b,
                                    const BundleSamples &smp, const ObjectiveOptions &opt, bool grads)
{
  const Eigen::Index n = b.size();
  const int m = smp.per_ray;
  const Eigen::Index total = n * m;
  if (static_cast<Eigen::Index>(s.size()) != total || colors.cols() != total)
    throw usage_error("loss_from_outputs: output count does not match the bundle");
  const double wtr = opt.weight_tr;

  OutputLoss out;
  out.renders.resize(static_cast<size_t>(n));
  out.usable_render.assign(static_cast<size_t>(n), 0);
  out.usable_geo.assign(static_cast<size_t>(n), 0);
  std::vector<double> weights(static_cast<size_t>(total));
  Eigen::Matrix3Xd pred_c(3, n);
  std::vector<double> pred_d(static_cast<size_t>(n), 0), pred_var(static_cast<size_t>(n), 0),
      gt_d(static_cast<size_t>(n), 0), ones(static_cast<size_t>(n), 1.0);
  for (Eigen::Index i = 0; i < n; ++i)
  {
    const auto ii = static_cast<size_t>(i);
    gt_d[ii] = b.gt_depth(i);
    pred_c.col(i).setZero();
    if (!smp.valid[ii])
      continue;
    const size_t base = ii * static_cast<size_t>(m);
    for (int k = 0; k < m; ++k)
      weights[base + static_cast<size_t>(k)] = sdf_to_weight(s[base + static_cast<size_t>(k)], wtr);
    const std::span<const double> zr(smp.z.data() + base, static_cast<size_t>(m));
    const std::span<const double> wr(weights.data() + base, static_cast<size_t>(m));
    out.renders[ii] = render_ray(zr, wr, colors.middleCols(i * m, m));
    out.usable_geo[ii] = 1;
    out.usable_render[ii] = !out.renders[ii].degenerate;
    pred_c.col(i) = out.renders[ii].color;
    pred_d[ii] = out.renders[ii].depth;
    pred_var[ii] = out.renders[ii].variance;
  }

  Eigen::Matrix3Xd d_pred_c;
  std::vector<double> d_pred_d, d_pred_var;
  const auto rgb = rgb_loss(pred_c, b.gt_color, ones, out.usable_render, grads ? &d_pred_c : nullptr);
  const auto dep = depth_loss(pred_d, gt_d, pred_var, ones, out.usable_render, grads ? &d_pred_d : nullptr,
                              grads ? &d_pred_var : nullptr);
  const auto &w = opt.weights;
  const auto &t = opt.trunc;
  const bool track = opt.regime == LossRegime::tracking;
  const double rw_mid = track ? t.track_middle_w : t.map_middle_w;
  const double rw_tail = track ? t.track_tail_w : t.map_tail_w;
  std::vector<double> d_s;
  if (grads)
    d_s.assign(static_cast<size_t>(total), 0.0);
  const auto fs = free_space_loss(smp.z, s, gt_d, m, t.tr, ones, out.usable_geo, w.fs, grads ? &d_s : nullptr);
  const auto sdf = sdf_loss(smp.z, s, gt_d, m, t, ones, out.usable_geo, w.sdf_middle * rw_mid, w.sdf_tail * rw_tail,
                            grads ? &d_s : nullptr);

  out.terms.rgb = rgb.value;
  out.terms.depth = dep.value;
  out.terms.fs = fs.value;
  out.terms.sdf_middle = rw_mid * sdf.middle.value;
  out.terms.sdf_tail = rw_tail * sdf.tail.value;
  out.total = total_loss(out.terms, w).total;
  if (!grads)
    return out;

  out.ds.resize(total);
  out.dc = Eigen::Matrix3Xd::Zero(3, total);
  for (Eigen::Index i = 0; i < n; ++i)
  {
    const auto ii = static_cast<size_t>(i);
    const size_t base = ii * static_cast<size_t>(m);
    for (int k = 0; k < m; ++k)
      out.ds(i * m + k) = d_s[base + static_cast<size_t>(k)];
    if (!out.usable_render[ii])
      continue;
    const std::span<const double> zr(smp.z.data() + base, static_cast<size_t>(m));
    const std::span<const double> wr(weights.data() + base, static_cast<size_t>(m));
    const Eigen::Vector3d g_c = w.rgb * d_pred_c.col(i);
    const RayRenderGrad g = render_ray_backward(zr, wr, colors.middleCols(i * m, m), out.renders[ii], g_c,
                                                w.depth * d_pred_d[ii], w.depth * d_pred_var[ii]);
    for (int k = 0; k < m; ++k)
      out.ds(i * m + k) += g.d_w[static_cast<size_t>(k)] * sdf_to_weight_grad(s[base + static_cast<size_t>(k)], wtr);
    out.dc.middleCols(i * m, m) = g.d_c;
  }
  return out;
}

/// World-space sample positions for a bundle under the given owner poses.
inline Eigen::Matrix3Xd bundle_points(const RayBundle &b, const BundleSamples &smp, const std::vector<PoseSE3> &poses)
{
  const Eigen::Index n = b.size();
  const int m = smp.per_ray;
  Eigen::Matrix3Xd pts(3, n * m);
  for (Eigen::Index i = 0; i < n; ++i)
  {
    const PoseSE3 &pose = poses[static_cast<size_t>(b.owner[static_cast<size_t>(i)])];
    const Eigen::Vector3d o = pose.translation();
    const Eigen::Vector3d d = pose.rotation() * b.dir_cam.col(i);
    const double dz = b.dir_cam(2, i);
    for (int k = 0; k < m; ++k)
      pts.col(i * m + k) = o + (smp.z[static_cast<size_t>(i * m + k)] / dz) * d;
  }
  return pts;
}

/// Weighted rendering objective over a bundle, with optional gradients for the field
/// parameters and for a left perturbation of each owner pose.
inline ObjectiveResult render_objective(const FieldParams &params, const RayBundle &b, const BundleSamples &smp,
                                        const std::vector<PoseSE3> &poses, const ObjectiveOptions &opt,
                                        FieldEvaluation *eval_out = nullptr)
{
  const Eigen::Index n = b.size();
  const int m = smp.per_ray;
  const Eigen::Index total = n * m;
  const Eigen::Matrix3Xd pts = bundle_points(b, smp, poses);

  FieldEvaluation local;
  FieldEvaluation &fe = eval_out ? *eval_out : local;
  fe.forward(params, pts, opt.threads);
  std::vector<double> s(static_cast<size_t>(total));
  for (Eigen::Index j = 0; j < total; ++j)
    s[static_cast<size_t>(j)] = fe.sdf(j);

  const bool grads = opt.field_grad || opt.pose_grad;
  const OutputLoss ol = loss_from_outputs(s, fe.colors(), b, smp, opt, grads);
  ObjectiveResult res;
  res.terms = ol.terms;
  res.total = ol.total;

  size_t mae_n = 0;
  for (Eigen::Index i = 0; i < n; ++i)
  {
    const auto ii = static_cast<size_t>(i);
    if (!ol.usable_geo[ii])
      continue;
    ++res.usable_rays;
    const int owner = b.owner[ii];
    if (static_cast<size_t>(owner) < opt.audit_masks.size() && opt.audit_masks[static_cast<size_t>(owner)])
    {
      const BinaryMask &am = *opt.audit_masks[static_cast<size_t>(owner)];
      const auto &p = b.pixels[ii];
      if (!am.empty() && am(p.x(), p.y()))
        ++res.dynamic_reads;
    }
    if (ol.usable_render[ii] && b.gt_depth(i) > 0)
    {
      res.depth_mae += std::abs(ol.renders[ii].depth - b.gt_depth(i));
      ++mae_n;
    }
  }
  if (mae_n)
    res.depth_mae /= static_cast<double>(mae_n);

  if (!grads)
    return res;

  if (opt.field_grad)
    res.field_grad = params.zero_gradient();
  Eigen::Matrix3Xd dx;
  fe.backward(ol.ds, Eigen::MatrixXd(), ol.dc, opt.field_grad ? &res.field_grad : nullptr, opt.pose_grad ? &dx : nullptr,
              opt.threads);
  if (opt.pose_grad)
  {
    res.pose_grad.assign(poses.size(), Vector6d::Zero());
    for (Eigen::Index j = 0; j < total; ++j)
    {
      const Eigen::Index i = j / m;
      if (!ol.usable_geo[static_cast<size_t>(i)])
        continue;
      Vector6d &g = res.pose_grad[static_cast<size_t>(b.owner[static_cast<size_t>(i)])];
      const Eigen::Vector3d gx = dx.col(j);
      g.head<3>() += gx;
      g.tail<3>() += pts.col(j).cross(gx);
    }
  }
  return res;
}

} // namespace dynslam
