#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "dynslam/core.hpp"

namespace dynslam
{

using Vector6d = Eigen::Matrix<double, 6, 1>;
using Matrix26d = Eigen::Matrix<double, 2, 6>;

inline Eigen::Matrix3d skew(const Eigen::Vector3d &v)
{
  Eigen::Matrix3d m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

namespace detail
{

inline Eigen::Matrix3d so3_exp(const Eigen::Vector3d &phi)
{
  const double theta2 = phi.squaredNorm();
  const Eigen::Matrix3d k = skew(phi);
  double a, b;
  if (theta2 < 1e-12)
  {
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
  }
  else
  {
    const double theta = std::sqrt(theta2);
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  return Eigen::Matrix3d::Identity() + a * k + b * k * k;
}

// Rotation vector of R. Near theta = pi the antisymmetric part vanishes, so the axis is
// recovered from the symmetric part instead.
inline Eigen::Vector3d so3_log(const Eigen::Matrix3d &r)
{
  const double cos_theta = std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
  const double theta = std::acos(cos_theta);
  const Eigen::Vector3d w(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  if (theta < 1e-6)
    return 0.5 * (1.0 + theta * theta / 6.0) * w;
  if (theta < M_PI - 1e-2)
    return theta / (2.0 * std::sin(theta)) * w;

  const Eigen::Matrix3d sym = 0.5 * (r + r.transpose());
  const Eigen::Matrix3d kk = (sym - cos_theta * Eigen::Matrix3d::Identity()) / (1.0 - cos_theta);
  int col = 0;
  kk.diagonal().maxCoeff(&col);
  Eigen::Vector3d axis = kk.col(col) / std::sqrt(std::max(kk(col, col), 1e-300));
  axis.normalize();
  if (axis.dot(w) < 0)
    axis = -axis;
  return theta * axis;
}

// Left Jacobian V of SO(3), used for the translation part of the SE(3) exponential.
inline Eigen::Matrix3d so3_left_jacobian(const Eigen::Vector3d &phi)
{
  const double theta2 = phi.squaredNorm();
  const Eigen::Matrix3d k = skew(phi);
  double b, c;
  if (theta2 < 1e-12)
  {
    b = 0.5 - theta2 / 24.0;
    c = 1.0 / 6.0 - theta2 / 120.0;
  }
  else
  {
    const double theta = std::sqrt(theta2);
    b = (1.0 - std::cos(theta)) / theta2;
    c = (theta - std::sin(theta)) / (theta2 * theta);
  }
  return Eigen::Matrix3d::Identity() + b * k + c * k * k;
}

} // namespace detail

/// Rigid camera-to-world transform. xi = (rho, phi): translation-like part first.
class PoseSE3
{
public:
  PoseSE3() : m_(Eigen::Matrix4d::Identity()) {}

  static PoseSE3 identity() { return PoseSE3(); }

  static PoseSE3 exp(const Vector6d &xi)
  {
    const Eigen::Vector3d rho = xi.head<3>();
    const Eigen::Vector3d phi = xi.tail<3>();
    PoseSE3 p;
    p.m_.topLeftCorner<3, 3>() = detail::so3_exp(phi);
    p.m_.topRightCorner<3, 1>() = detail::so3_left_jacobian(phi) * rho;
    return p;
  }

  static PoseSE3 from_rt(const Eigen::Matrix3d &r, const Eigen::Vector3d &t)
  {
    PoseSE3 p;
    p.m_.topLeftCorner<3, 3>() = r;
    p.m_.topRightCorner<3, 1>() = t;
    return p;
  }

  static PoseSE3 from_matrix(const Eigen::Matrix4d &m)
  {
    PoseSE3 p;
    p.m_ = m;
    p.m_.row(3) << 0, 0, 0, 1;
    return p;
  }

  /// Translation + unit quaternion (x, y, z, w) as in TUM trajectory files.
  static PoseSE3 from_tq(const Eigen::Vector3d &t, const Eigen::Quaterniond &q)
  {
    return from_rt(q.normalized().toRotationMatrix(), t);
  }

  Vector6d log() const
  {
    const Eigen::Vector3d phi = detail::so3_log(rotation());
    const Eigen::Matrix3d v = detail::so3_left_jacobian(phi);
    Vector6d xi;
    xi.head<3>() = v.partialPivLu().solve(translation());
    xi.tail<3>() = phi;
    return xi;
  }

  const Eigen::Matrix4d &matrix() const noexcept { return m_; }
  Eigen::Matrix3d rotation() const { return m_.topLeftCorner<3, 3>(); }
  Eigen::Vector3d translation() const { return m_.topRightCorner<3, 1>(); }
  Eigen::Quaterniond quaternion() const { return Eigen::Quaterniond(rotation()).normalized(); }

  PoseSE3 inverse() const
  {
    const Eigen::Matrix3d rt = rotation().transpose();
    return from_rt(rt, -rt * translation());
  }

  PoseSE3 operator*(const PoseSE3 &o) const
  {
    PoseSE3 p;
    p.m_ = m_ * o.m_;
    return p;
  }

  Eigen::Vector3d operator*(const Eigen::Vector3d &x) const
  {
    return m_.topLeftCorner<3, 3>() * x + m_.topRightCorner<3, 1>();
  }

  /// T <- exp(delta) * T
  void left_update(const Vector6d &delta) { *this = exp(delta) * (*this); }

  /// Re-orthonormalizes the rotation block after many small updates.
  void orthonormalize()
  {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(rotation(), Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
    if (r.determinant() < 0)
    {
      Eigen::Matrix3d u = svd.matrixU();
      u.col(2) *= -1;
      r = u * svd.matrixV().transpose();
    }
    m_.topLeftCorner<3, 3>() = r;
  }

  bool operator==(const PoseSE3 &o) const { return m_ == o.m_; }

private:
  Eigen::Matrix4d m_;
};

inline PoseSE3 se3_exp(const Vector6d &xi) { return PoseSE3::exp(xi); }
inline Vector6d se3_log(const PoseSE3 &p) { return p.log(); }

inline Eigen::Vector2d project(const Intrinsics &k, const Eigen::Vector3d &x)
{
  if (!(x.z() > 0))
    throw numerical_error("project: point not in front of the camera");
  return {k.fx * x.x() / x.z() + k.cx, k.fy * x.y() / x.z() + k.cy};
}

inline Eigen::Vector3d backproject(const Intrinsics &k, const Eigen::Vector2d &p, double depth)
{
  if (!(depth > 0))
    throw numerical_error("backproject: depth must be positive");
  return {(p.x() - k.cx) / k.fx * depth, (p.y() - k.cy) / k.fy * depth, depth};
}

struct WarpResult
{
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
  Eigen::Vector3d point = Eigen::Vector3d::Zero(); // in the target camera
  bool behind_camera = false;
  bool out_of_bounds = false;
  bool valid() const noexcept { return !behind_camera && !out_of_bounds; }
};

/// Reprojects pixel p (depth d in frame i) into frame j, where t_ji maps frame-i camera
/// coordinates into frame-j camera coordinates. In-bounds means inside [0,W-1]x[0,H-1].
inline WarpResult warp_pixel(const PoseSE3 &t_ji, const Eigen::Vector2d &p, double depth, const Intrinsics &k,
                             Matrix26d *jacobian = nullptr)
{
  WarpResult r;
  r.point = t_ji * backproject(k, p, depth);
  if (r.point.z() <= 1e-9)
  {
    r.behind_camera = true;
    return r;
  }
  const double iz = 1.0 / r.point.z();
  r.pixel = {k.fx * r.point.x() * iz + k.cx, k.fy * r.point.y() * iz + k.cy};
  r.out_of_bounds = !(r.pixel.x() >= 0 && r.pixel.y() >= 0 && r.pixel.x() <= k.width - 1 && r.pixel.y() <= k.height - 1);
  if (jacobian)
  {
    // d pixel / d X' times d X' / d delta for T <- exp(delta) T, i.e. [I | -[X']x].
    Eigen::Matrix<double, 2, 3> dp;
    dp << k.fx * iz, 0, -k.fx * r.point.x() * iz * iz, 0, k.fy * iz, -k.fy * r.point.y() * iz * iz;
    Eigen::Matrix<double, 3, 6> dx;
    dx.leftCols<3>().setIdentity();
    dx.rightCols<3>() = -skew(r.point);
    *jacobian = dp * dx;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Two-view epipolar geometry

struct Correspondence
{
  Eigen::Vector2d src;
  Eigen::Vector2d dst;
};

/// Satisfies dst^T F src = 0 for exact correspondences.
struct FundamentalMatrix
{
  Eigen::Matrix3d f = Eigen::Matrix3d::Zero();
};

struct EpipolarLine
{
  double a = 0, b = 0, c = 0;
};

inline EpipolarLine epipolar_line(const FundamentalMatrix &f, const Eigen::Vector2d &src)
{
  const Eigen::Vector3d l = f.f * src.homogeneous();
  return {l.x(), l.y(), l.z()};
}

/// Distance of dst to the epipolar line F*src: |dst^T F src| / sqrt(A^2 + B^2).
/// Returns nullopt when the line is degenerate (A = B = 0).
inline std::optional<double> epipolar_distance_checked(const FundamentalMatrix &f, const Correspondence &c)
{
  const EpipolarLine l = epipolar_line(f, c.src);
  const double norm = std::sqrt(l.a * l.a + l.b * l.b);
  if (!(norm > 0))
    return std::nullopt;
  return std::abs(l.a * c.dst.x() + l.b * c.dst.y() + l.c) / norm;
}

inline double epipolar_distance(const FundamentalMatrix &f, const Correspondence &c)
{
  auto d = epipolar_distance_checked(f, c);
  if (!d)
    throw numerical_error("epipolar_distance: degenerate epipolar line");
  return *d;
}

struct RansacConfig
{
  int iters = 500;
  double inlier_thresh_px = 1.0;
  uint64_t seed = 7;
};

struct FundamentalEstimate
{
  FundamentalMatrix f;
  std::vector<uint8_t> inliers;
  size_t inlier_count = 0;
};

namespace detail
{

// Hartley normalization: centroid to origin, mean distance sqrt(2).
inline Eigen::Matrix3d hartley_transform(std::span<const Eigen::Vector2d> pts)
{
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto &p : pts)
    mean += p;
  mean /= static_cast<double>(pts.size());
  double dist = 0;
  for (const auto &p : pts)
    dist += (p - mean).norm();
  dist /= static_cast<double>(pts.size());
  if (!(dist > 1e-12))
    throw numerical_error("estimate_fundamental: degenerate point set (all coincident)");
  const double s = std::sqrt(2.0) / dist;
  Eigen::Matrix3d t;
  t << s, 0, -s * mean.x(), 0, s, -s * mean.y(), 0, 0, 1;
  return t;
}

inline bool collinear(std::span<const Eigen::Vector2d> pts)
{
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto &p : pts)
    mean += p;
  mean /= static_cast<double>(pts.size());
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const auto &p : pts)
    cov += (p - mean) * (p - mean).transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
  const double hi = es.eigenvalues()(1);
  return !(hi > 0) || es.eigenvalues()(0) <= 1e-12 * hi;
}

/// Normalized eight-point solution over the given correspondences (≥ 8), rank 2, unit Frobenius norm.
inline std::optional<Eigen::Matrix3d> eight_point(std::span<const Correspondence> m)
{
  std::vector<Eigen::Vector2d> src(m.size()), dst(m.size());
  for (size_t i = 0; i < m.size(); ++i)
  {
    src[i] = m[i].src;
    dst[i] = m[i].dst;
  }
  if (collinear(src) || collinear(dst))
    return std::nullopt;
  const Eigen::Matrix3d ts = hartley_transform(src);
  const Eigen::Matrix3d td = hartley_transform(dst);

  Eigen::MatrixXd a(m.size(), 9);
  for (size_t i = 0; i < m.size(); ++i)
  {
    const Eigen::Vector3d s = ts * src[i].homogeneous();
    const Eigen::Vector3d d = td * dst[i].homogeneous();
    a.row(static_cast<Eigen::Index>(i)) << d.x() * s.x(), d.x() * s.y(), d.x(), d.y() * s.x(), d.y() * s.y(), d.y(),
        s.x(), s.y(), 1.0;
  }
  Eigen::Matrix<double, 9, 9> ata = a.transpose() * a;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 9, 9>> es(ata);
  const Eigen::Matrix<double, 9, 1> ev = es.eigenvalues();
  if (!(ev(8) > 0) || ev(1) <= 1e-14 * ev(8))
    return std::nullopt; // null space of dimension > 1
  const Eigen::Matrix<double, 9, 1> v = es.eigenvectors().col(0);
  Eigen::Matrix3d f;
  f << v(0), v(1), v(2), v(3), v(4), v(5), v(6), v(7), v(8);

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(f, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d sv = svd.singularValues();
  sv(2) = 0;
  f = svd.matrixU() * sv.asDiagonal() * svd.matrixV().transpose();
  f = td.transpose() * f * ts;
  const double n = f.norm();
  if (!(n > 0))
    return std::nullopt;
  return f / n;
}

inline double residual_or_inf(const Eigen::Matrix3d &f, const Correspondence &c)
{
  auto d = epipolar_distance_checked(FundamentalMatrix{f}, c);
  return d ? *d : std::numeric_limits<double>::infinity();
}

} // namespace detail

/// RANSAC over minimal eight-point samples, then a refit on every inlier of the best
/// hypothesis. Hypotheses are ranked by (inlier count, lower mean inlier residual, lower index).
inline FundamentalEstimate estimate_fundamental(std::span<const Correspondence> matches, const RansacConfig &cfg = {})
{
  if (matches.size() < 8)
    throw numerical_error("estimate_fundamental: need at least 8 matches");
  {
    std::vector<Eigen::Vector2d> src(matches.size());
    for (size_t i = 0; i < matches.size(); ++i)
      src[i] = matches[i].src;
    if (detail::collinear(src))
      throw numerical_error("estimate_fundamental: degenerate (collinear) correspondences");
  }

  const size_t n = matches.size();
  Rng rng(cfg.seed);
  std::optional<Eigen::Matrix3d> best;
  size_t best_count = 0;
  double best_mean = std::numeric_limits<double>::infinity();
  std::array<Correspondence, 8> sample;
  std::array<size_t, 8> idx{};

  for (int it = 0; it < cfg.iters; ++it)
  {
    for (size_t k = 0; k < 8; ++k)
    {
      bool dup;
      do
      {
        idx[k] = uniform_index(rng, n);
        dup = std::find(idx.begin(), idx.begin() + static_cast<long>(k), idx[k]) != idx.begin() + static_cast<long>(k);
      } while (dup);
      sample[k] = matches[idx[k]];
    }
    auto f = detail::eight_point(sample);
    if (!f)
      continue;
    size_t count = 0;
    double sum = 0;
    for (const auto &c : matches)
    {
      const double r = detail::residual_or_inf(*f, c);
      if (r < cfg.inlier_thresh_px)
      {
        ++count;
        sum += r;
      }
    }
    const double mean = count ? sum / static_cast<double>(count) : std::numeric_limits<double>::infinity();
    if (count > best_count || (count == best_count && count > 0 && mean < best_mean))
    {
      best = f;
      best_count = count;
      best_mean = mean;
    }
  }
  // With very few matches every random sample may be degenerate; fall back to all of them.
  if (!best || best_count < 8)
  {
    best = detail::eight_point(matches);
    if (!best)
      throw numerical_error("estimate_fundamental: degenerate configuration");
  }

  std::vector<Correspondence> inl;
  for (const auto &c : matches)
    if (detail::residual_or_inf(*best, c) < cfg.inlier_thresh_px)
      inl.push_back(c);
  if (inl.size() >= 8)
  {
    if (auto refit = detail::eight_point(inl))
      best = refit;
  }

  FundamentalEstimate out;
  out.f.f = *best;
  out.inliers.resize(n);
  for (size_t i = 0; i < n; ++i)
  {
    out.inliers[i] = detail::residual_or_inf(*best, matches[i]) < cfg.inlier_thresh_px;
    out.inlier_count += out.inliers[i];
  }
  return out;
}

/// F = K_dst^-T [t]x R K_src^-1 for X_dst = R X_src + t.
inline FundamentalMatrix fundamental_from_motion(const Intrinsics &k, const PoseSE3 &dst_from_src)
{
  const Eigen::Matrix3d kinv = k.matrix().inverse();
  Eigen::Matrix3d f = kinv.transpose() * skew(dst_from_src.translation()) * dst_from_src.rotation() * kinv;
  const double n = f.norm();
  if (n > 0)
    f /= n;
  return {f};
}

} // namespace dynslam
