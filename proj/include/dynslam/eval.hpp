#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "dynslam/core.hpp"
#include "dynslam/dataio.hpp"
#include "dynslam/field.hpp"
#include "dynslam/geometry.hpp"

namespace dynslam
{

// ---------------------------------------------------------------------------
// Trajectory alignment and ATE

struct RigidTransform
{
  Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  Eigen::Vector3d operator()(const Eigen::Vector3d &x) const { return r * x + t; }
  PoseSE3 pose() const { return PoseSE3::from_rt(r, t); }
};

/// Least-squares rigid transform mapping `src` points onto `dst` (no scale), using the
/// unit-quaternion eigenvector of the cross-covariance.
inline RigidTransform align_horn(const std::vector<Eigen::Vector3d> &src, const std::vector<Eigen::Vector3d> &dst)
{
  if (src.size() != dst.size())
    throw usage_error("align_horn: point sets differ in size");
  if (src.size() < 3)
    throw data_error("align_horn: need at least 3 associated poses, got " + std::to_string(src.size()));
  const double n = static_cast<double>(src.size());
  Eigen::Vector3d cs = Eigen::Vector3d::Zero(), cd = Eigen::Vector3d::Zero();
  for (size_t i = 0; i < src.size(); ++i)
  {
    cs += src[i];
    cd += dst[i];
  }
  cs /= n;
  cd /= n;
  Eigen::Matrix3d s = Eigen::Matrix3d::Zero();
  for (size_t i = 0; i < src.size(); ++i)
    s += (src[i] - cs) * (dst[i] - cd).transpose();

  const double sxx = s(0, 0), sxy = s(0, 1), sxz = s(0, 2);
  const double syx = s(1, 0), syy = s(1, 1), syz = s(1, 2);
  const double szx = s(2, 0), szy = s(2, 1), szz = s(2, 2);
  Eigen::Matrix4d nmat;
  nmat << sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,
      syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,
      szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,
      sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(nmat);
  const Eigen::Vector4d q = es.eigenvectors().col(3);
  RigidTransform out;
  out.r = Eigen::Quaterniond(q(0), q(1), q(2), q(3)).normalized().toRotationMatrix();
  out.t = cd - out.r * cs;
  return out;
}

struct AlignedATE
{
  double rmse = 0;
  double mean = 0;
  double std = 0; // population
  std::vector<double> errors;
  RigidTransform alignment;
  size_t pairs = 0;
};

/// Associates est/gt by timestamp, aligns est onto gt and reports translational errors.
inline AlignedATE ate(const std::vector<TimedPose> &est, const std::vector<TimedPose> &gt, double max_dt = 0.02)
{
  std::vector<TimedEntry> a, b;
  for (const auto &p : est)
    a.push_back({p.timestamp, {}});
  for (const auto &p : gt)
    b.push_back({p.timestamp, {}});
  const auto pairs = associate(a, b, max_dt);
  std::vector<Eigen::Vector3d> ps, pg;
  for (const auto &[i, j] : pairs)
  {
    ps.push_back(est[i].pose.translation());
    pg.push_back(gt[j].pose.translation());
  }
  AlignedATE out;
  out.alignment = align_horn(ps, pg);
  out.pairs = ps.size();
  double sum = 0, sq = 0;
  for (size_t i = 0; i < ps.size(); ++i)
  {
    const double e = (out.alignment(ps[i]) - pg[i]).norm();
    out.errors.push_back(e);
    sum += e;
    sq += e * e;
  }
  const double n = static_cast<double>(ps.size());
  out.mean = sum / n;
  out.rmse = std::sqrt(sq / n);
  double var = 0;
  for (double e : out.errors)
    var += (e - out.mean) * (e - out.mean);
  out.std = std::sqrt(var / n);
  return out;
}

/// Largest distance between any two positions of a trajectory.
inline double trajectory_diameter(const std::vector<TimedPose> &traj)
{
  double d = 0;
  for (size_t i = 0; i < traj.size(); ++i)
    for (size_t j = i + 1; j < traj.size(); ++j)
      d = std::max(d, (traj[i].pose.translation() - traj[j].pose.translation()).norm());
  return d;
}

// ---------------------------------------------------------------------------
// Marching cubes

struct Mesh
{
  std::vector<Eigen::Vector3d> vertices;
  std::vector<std::array<uint32_t, 3>> triangles;
  std::vector<Eigen::Vector3d> colors; // empty or one per vertex, [0,1]
  bool empty_surface = false;

  bool empty() const noexcept { return triangles.empty(); }
};

namespace mc
{
// Corner c has coordinates (c & 1, (c >> 1) & 1, (c >> 2) & 1). Edge a*4 + j runs along axis a
// from the j-th corner with bit a clear.
struct Edge
{
  int c0, c1, axis;
};

inline const std::array<Edge, 12> &edges()
{
  static const std::array<Edge, 12> e = [] {
    std::array<Edge, 12> out{};
    for (int a = 0; a < 3; ++a)
    {
      int j = 0;
      for (int c = 0; c < 8; ++c)
        if (!((c >> a) & 1))
          out[static_cast<size_t>(a * 4 + j++)] = {c, c | (1 << a), a};
    }
    return out;
  }();
  return e;
}

inline int edge_between(int a, int b)
{
  const auto &e = edges();
  for (int i = 0; i < 12; ++i)
    if ((e[static_cast<size_t>(i)].c0 == a && e[static_cast<size_t>(i)].c1 == b) ||
        (e[static_cast<size_t>(i)].c0 == b && e[static_cast<size_t>(i)].c1 == a))
      return i;
  return -1;
}

/// Face corners in counter-clockwise order seen from outside the cube.
inline std::array<std::array<int, 4>, 6> faces()
{
  std::array<std::array<int, 4>, 6> out{};
  for (int a = 0; a < 3; ++a)
    for (int s = 0; s < 2; ++s)
    {
      const int u = (a + 1) % 3, v = (a + 2) % 3;
      const int uv[4][2] = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
      std::array<int, 4> cyc{};
      for (int i = 0; i < 4; ++i)
        cyc[static_cast<size_t>(i)] = (s << a) | (uv[i][0] << u) | (uv[i][1] << v);
      if (s == 0)
        std::reverse(cyc.begin(), cyc.end());
      out[static_cast<size_t>(a * 2 + s)] = cyc;
    }
  return out;
}

/// Directed surface segments (edge -> edge) on one face for a corner sign pattern.
/// Each run of inside corners is cut off by its own segment, so ambiguous faces keep
/// diagonal inside corners apart.
inline std::vector<std::pair<int, int>> face_segments(const std::array<int, 4> &cyc, int inside_bits)
{
  auto in = [&](int i) { return (inside_bits >> cyc[static_cast<size_t>(i & 3)]) & 1; };
  std::vector<std::pair<int, int>> segs;
  for (int i = 0; i < 4; ++i)
  {
    if (in(i) || !in(i + 1))
      continue; // want out -> in at edge (i, i+1)
    const int start = edge_between(cyc[static_cast<size_t>(i)], cyc[static_cast<size_t>((i + 1) & 3)]);
    for (int k = 1; k <= 4; ++k)
    {
      const int p = i + k, q = i + k + 1;
      if (in(p) && !in(q))
      {
        segs.emplace_back(start, edge_between(cyc[static_cast<size_t>(p & 3)], cyc[static_cast<size_t>(q & 3)]));
        break;
      }
    }
  }
  return segs;
}

using TriangleList = std::vector<std::array<int, 3>>;

/// Triangles (as cube-edge ids) for every inside-corner pattern, generated by chaining face
/// segments into loops and fan-triangulating each loop. Triangles face the outside region.
inline const std::array<TriangleList, 256> &table()
{
  static const std::array<TriangleList, 256> t = [] {
    std::array<TriangleList, 256> out{};
    const auto fs = faces();
    for (int cfg = 0; cfg < 256; ++cfg)
    {
      std::array<int, 12> next{};
      next.fill(-1);
      for (const auto &f : fs)
        for (const auto &[a, b] : face_segments(f, cfg))
          next[static_cast<size_t>(a)] = b;
      std::array<bool, 12> seen{};
      for (int e0 = 0; e0 < 12; ++e0)
      {
        if (next[static_cast<size_t>(e0)] < 0 || seen[static_cast<size_t>(e0)])
          continue;
        std::vector<int> loop;
        for (int e = e0; !seen[static_cast<size_t>(e)]; e = next[static_cast<size_t>(e)])
        {
          seen[static_cast<size_t>(e)] = true;
          loop.push_back(e);
        }
        for (size_t i = 1; i + 1 < loop.size(); ++i)
          out[static_cast<size_t>(cfg)].push_back({loop[0], loop[i], loop[i + 1]});
      }
    }
    return out;
  }();
  return t;
}
} // namespace mc

/// SDF sampled on a regular grid, evaluated one z-slab at a time.
using SdfBatchFn = std::function<Eigen::VectorXd(const Eigen::Matrix3Xd &)>;

struct MeshGrid
{
  Eigen::Vector3d bmin;
  Eigen::Vector3d bmax;
  double voxel = 0.02;
  std::array<int, 3> dims{}; // grid points per axis

  static MeshGrid make(const Eigen::Vector3d &bmin, const Eigen::Vector3d &bmax, double voxel, size_t max_points = 200'000'000)
  {
    if (!(voxel > 0))
      throw usage_error("mesh: voxel size must be positive");
    if (!((bmax - bmin).array() > 0).all())
      throw usage_error("mesh: empty bounds");
    MeshGrid g{bmin, bmax, voxel, {}};
    size_t total = 1;
    for (int a = 0; a < 3; ++a)
    {
      g.dims[static_cast<size_t>(a)] = static_cast<int>(std::floor((bmax[a] - bmin[a]) / voxel + 1e-9)) + 1;
      total *= static_cast<size_t>(g.dims[static_cast<size_t>(a)]);
    }
    if (total > max_points)
      throw usage_error("mesh: grid of " + std::to_string(total) + " points exceeds the memory budget");
    return g;
  }

  Eigen::Vector3d point(int i, int j, int k) const { return bmin + voxel * Eigen::Vector3d(i, j, k); }
};

/// Zero level set of `sdf` (negative = inside) by marching cubes with shared edge vertices.
inline Mesh extract_mesh(const SdfBatchFn &sdf, const MeshGrid &g)
{
  const int nx = g.dims[0], ny = g.dims[1], nz = g.dims[2];
  Mesh mesh;
  auto slab = [&](int k) {
    Eigen::Matrix3Xd pts(3, static_cast<Eigen::Index>(nx) * ny);
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i)
        pts.col(static_cast<Eigen::Index>(j) * nx + i) = g.point(i, j, k);
    Eigen::VectorXd v = sdf(pts);
    if (v.size() != pts.cols())
      throw usage_error("mesh: SDF callback returned the wrong number of values");
    return v;
  };
  std::unordered_map<uint64_t, uint32_t> vid;
  const auto &table = mc::table();
  const auto &edges = mc::edges();
  std::array<Eigen::VectorXd, 2> val{slab(0), Eigen::VectorXd()};
  for (int k = 0; k + 1 < nz; ++k)
  {
    val[1] = slab(k + 1);
    for (int j = 0; j + 1 < ny; ++j)
      for (int i = 0; i + 1 < nx; ++i)
      {
        std::array<double, 8> s{};
        int cfg = 0;
        for (int c = 0; c < 8; ++c)
        {
          const int di = c & 1, dj = (c >> 1) & 1, dk = (c >> 2) & 1;
          s[static_cast<size_t>(c)] = val[static_cast<size_t>(dk)](static_cast<Eigen::Index>(j + dj) * nx + i + di);
          if (s[static_cast<size_t>(c)] < 0)
            cfg |= 1 << c;
        }
        const auto &tris = table[static_cast<size_t>(cfg)];
        if (tris.empty())
          continue;
        auto vertex = [&](int e) {
          const auto &ed = edges[static_cast<size_t>(e)];
          const int i0 = i + (ed.c0 & 1), j0 = j + ((ed.c0 >> 1) & 1), k0 = k + ((ed.c0 >> 2) & 1);
          const uint64_t key =
              ((static_cast<uint64_t>(k0) * static_cast<uint64_t>(ny) + static_cast<uint64_t>(j0)) * static_cast<uint64_t>(nx) +
               static_cast<uint64_t>(i0)) * 3 + static_cast<uint64_t>(ed.axis);
          auto it = vid.find(key);
          if (it != vid.end())
            return it->second;
          const double a = s[static_cast<size_t>(ed.c0)], b = s[static_cast<size_t>(ed.c1)];
          const double t = a / (a - b);
          const Eigen::Vector3d p0 = g.point(i0, j0, k0);
          Eigen::Vector3d p = p0;
          p[ed.axis] += t * g.voxel;
          const auto id = static_cast<uint32_t>(mesh.vertices.size());
          mesh.vertices.push_back(p);
          vid.emplace(key, id);
          return id;
        };
        for (const auto &tri : tris)
        {
          const std::array<uint32_t, 3> t{vertex(tri[0]), vertex(tri[1]), vertex(tri[2])};
          const Eigen::Vector3d n = (mesh.vertices[t[1]] - mesh.vertices[t[0]]).cross(mesh.vertices[t[2]] - mesh.vertices[t[0]]);
          if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2] || !(n.norm() > 1e-14 * g.voxel * g.voxel))
            continue;
          mesh.triangles.push_back(t);
        }
      }
    std::swap(val[0], val[1]);
  }
  mesh.empty_surface = mesh.triangles.empty();
  return mesh;
}

/// Marching cubes over the learned field, with vertex colors from the color decoder.
inline Mesh extract_field_mesh(const FieldParams &p, const MeshGrid &g, int threads = 1)
{
  Mesh m = extract_mesh(
      [&](const Eigen::Matrix3Xd &pts) {
        FieldEvaluation fe;
        fe.forward(p, pts, threads);
        return Eigen::VectorXd(fe.sdf_row().transpose());
      },
      g);
  if (m.vertices.empty())
    return m;
  Eigen::Matrix3Xd v(3, static_cast<Eigen::Index>(m.vertices.size()));
  for (size_t i = 0; i < m.vertices.size(); ++i)
    v.col(static_cast<Eigen::Index>(i)) = m.vertices[i];
  FieldEvaluation fe;
  fe.forward(p, v, threads);
  for (Eigen::Index i = 0; i < v.cols(); ++i)
    m.colors.push_back(fe.colors().col(i));
  return m;
}

/// Drops unreferenced vertices, keeping relative order.
inline void compact(Mesh &m)
{
  std::vector<int64_t> remap(m.vertices.size(), -1);
  std::vector<Eigen::Vector3d> v, c;
  for (auto &t : m.triangles)
    for (auto &idx : t)
    {
      if (remap[idx] < 0)
      {
        remap[idx] = static_cast<int64_t>(v.size());
        v.push_back(m.vertices[idx]);
        if (!m.colors.empty())
          c.push_back(m.colors[idx]);
      }
      idx = static_cast<uint32_t>(remap[idx]);
    }
  m.vertices = std::move(v);
  m.colors = std::move(c);
}

/// Keeps triangles with at least one vertex observed by some frame: inside the image, in
/// front of the camera, and not farther than the recorded depth plus `margin`.
inline Mesh cull_mesh(const Mesh &in, const std::vector<PoseSE3> &poses, const Intrinsics &k,
                      const std::vector<const ImageF *> &depths, double margin = 0.05)
{
  if (poses.size() != depths.size())
    throw usage_error("cull_mesh: need one depth image per pose");
  std::vector<uint8_t> seen(in.vertices.size(), 0);
  for (size_t f = 0; f < poses.size(); ++f)
  {
    const PoseSE3 inv = poses[f].inverse();
    const ImageF &d = *depths[f];
    for (size_t i = 0; i < in.vertices.size(); ++i)
    {
      if (seen[i])
        continue;
      const Eigen::Vector3d pc = inv * in.vertices[i];
      if (!(pc.z() > 1e-6))
        continue;
      const double u = k.fx * pc.x() / pc.z() + k.cx, v = k.fy * pc.y() / pc.z() + k.cy;
      const int x = static_cast<int>(std::lround(u)), y = static_cast<int>(std::lround(v));
      if (!d.contains(x, y))
        continue;
      const double z = d(x, y);
      if (z > 0 && pc.z() <= z + margin)
        seen[i] = 1;
    }
  }
  Mesh out;
  out.vertices = in.vertices;
  out.colors = in.colors;
  for (const auto &t : in.triangles)
    if (seen[t[0]] || seen[t[1]] || seen[t[2]])
      out.triangles.push_back(t);
  compact(out);
  out.empty_surface = out.triangles.empty();
  return out;
}

// ---------------------------------------------------------------------------
// Reconstruction metrics

/// Balanced k-d tree over a point set for exact nearest-neighbour queries. Ties go to the
/// lowest point index, so results match an exhaustive scan.
class PointIndex
{
public:
  explicit PointIndex(const std::vector<Eigen::Vector3d> &pts) : pts_(pts), idx_(pts.size()), axis_(pts.size(), 0), split_(pts.size(), 0.0)
  {
    if (pts.empty())
      throw usage_error("nearest neighbour: empty point set");
    for (size_t i = 0; i < idx_.size(); ++i)
      idx_[i] = static_cast<uint32_t>(i);
    build(0, idx_.size());
  }

  /// Distance and index of the nearest point.
  std::pair<double, size_t> nearest(const Eigen::Vector3d &q) const
  {
    double best = std::numeric_limits<double>::infinity();
    uint32_t best_i = 0;
    search(q, 0, idx_.size(), best, best_i);
    return {std::sqrt(best), best_i};
  }

private:
  static constexpr size_t kLeaf = 8;

  void build(size_t lo, size_t hi)
  {
    if (hi - lo <= kLeaf)
      return;
    Eigen::Vector3d a = pts_[idx_[lo]], b = a;
    for (size_t i = lo; i < hi; ++i)
    {
      a = a.cwiseMin(pts_[idx_[i]]);
      b = b.cwiseMax(pts_[idx_[i]]);
    }
    int ax = 0;
    (b - a).maxCoeff(&ax);
    const size_t mid = lo + (hi - lo) / 2;
    std::nth_element(idx_.begin() + static_cast<std::ptrdiff_t>(lo), idx_.begin() + static_cast<std::ptrdiff_t>(mid),
                     idx_.begin() + static_cast<std::ptrdiff_t>(hi),
                     [&](uint32_t u, uint32_t v) { return pts_[u][ax] < pts_[v][ax]; });
    axis_[mid] = static_cast<uint8_t>(ax);
    split_[mid] = pts_[idx_[mid]][ax]; // recorded now: the right child's partition reorders idx_[mid]
    build(lo, mid);
    build(mid, hi);
  }

  void search(const Eigen::Vector3d &q, size_t lo, size_t hi, double &best, uint32_t &best_i) const
  {
    if (hi - lo <= kLeaf)
    {
      for (size_t k = lo; k < hi; ++k)
      {
        const uint32_t i = idx_[k];
        const double d = (pts_[i] - q).squaredNorm();
        if (d < best || (d == best && i < best_i))
        {
          best = d;
          best_i = i;
        }
      }
      return;
    }
    const size_t mid = lo + (hi - lo) / 2;
    const int ax = axis_[mid];
    const double diff = q[ax] - split_[mid];
    // Left half holds coordinates <= split, right half >= split.
    if (diff < 0)
    {
      search(q, lo, mid, best, best_i);
      if (diff * diff <= best)
        search(q, mid, hi, best, best_i);
    }
    else
    {
      search(q, mid, hi, best, best_i);
      if (diff * diff <= best)
        search(q, lo, mid, best, best_i);
    }
  }

  std::vector<Eigen::Vector3d> pts_;
  std::vector<uint32_t> idx_;
  std::vector<uint8_t> axis_;
  std::vector<double> split_;
};

/// Area-weighted surface samples (uniform barycentric within each triangle).
inline std::vector<Eigen::Vector3d> sample_mesh_surface(const Mesh &m, size_t n, uint64_t seed)
{
  if (m.triangles.empty())
    throw data_error("mesh sampling: mesh has no triangles");
  std::vector<double> cdf;
  double acc = 0;
  for (const auto &t : m.triangles)
  {
    acc += 0.5 * (m.vertices[t[1]] - m.vertices[t[0]]).cross(m.vertices[t[2]] - m.vertices[t[0]]).norm();
    cdf.push_back(acc);
  }
  if (!(acc > 0))
    throw data_error("mesh sampling: zero surface area");
  Rng rng(seed);
  std::vector<Eigen::Vector3d> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i)
  {
    const double r = uniform01(rng) * acc;
    const size_t ti = std::min(static_cast<size_t>(std::upper_bound(cdf.begin(), cdf.end(), r) - cdf.begin()), cdf.size() - 1);
    double a = uniform01(rng), b = uniform01(rng);
    if (a + b > 1)
    {
      a = 1 - a;
      b = 1 - b;
    }
    const auto &t = m.triangles[ti];
    out.push_back(m.vertices[t[0]] + a * (m.vertices[t[1]] - m.vertices[t[0]]) + b * (m.vertices[t[2]] - m.vertices[t[0]]));
  }
  return out;
}

/// Random subset without replacement (all points when n >= size).
inline std::vector<Eigen::Vector3d> sample_points(const std::vector<Eigen::Vector3d> &pts, size_t n, uint64_t seed)
{
  if (n >= pts.size())
    return pts;
  std::vector<size_t> idx(pts.size());
  for (size_t i = 0; i < idx.size(); ++i)
    idx[i] = i;
  Rng rng(seed);
  for (size_t i = 0; i < n; ++i)
    std::swap(idx[i], idx[i + static_cast<size_t>(uniform_index(rng, idx.size() - i))]);
  std::vector<Eigen::Vector3d> out;
  for (size_t i = 0; i < n; ++i)
    out.push_back(pts[idx[i]]);
  return out;
}

struct ReconMetrics
{
  double accuracy = 0;         // m
  double completion = 0;       // m
  double completion_ratio = 0; // percent
};

/// Directed mean nearest-neighbour distances between two sample sets.
inline ReconMetrics sample_metrics(const std::vector<Eigen::Vector3d> &rec, const std::vector<Eigen::Vector3d> &gt,
                                   double thresh, int threads = 1)
{
  if (rec.empty() || gt.empty())
    throw data_error("reconstruction metrics: empty input");
  const PointIndex grid_gt(gt), grid_rec(rec);
  std::vector<double> d_acc(rec.size()), d_comp(gt.size());
  parallel_for(rec.size(), threads, [&](size_t i) { d_acc[i] = grid_gt.nearest(rec[i]).first; });
  parallel_for(gt.size(), threads, [&](size_t i) { d_comp[i] = grid_rec.nearest(gt[i]).first; });
  ReconMetrics m;
  size_t within = 0;
  for (double d : d_acc)
    m.accuracy += d;
  for (double d : d_comp)
  {
    m.completion += d;
    within += d < thresh;
  }
  m.accuracy /= static_cast<double>(rec.size());
  m.completion /= static_cast<double>(gt.size());
  m.completion_ratio = 100.0 * static_cast<double>(within) / static_cast<double>(gt.size());
  return m;
}

inline ReconMetrics recon_metrics(const Mesh &mesh, const std::vector<Eigen::Vector3d> &gt_points, size_t n_samples,
                                  double thresh = 0.05, uint64_t seed = 0, int threads = 1)
{
  if (mesh.triangles.empty() || gt_points.empty())
    throw data_error("reconstruction metrics: mesh and ground-truth cloud must be nonempty");
  return sample_metrics(sample_mesh_surface(mesh, n_samples, seed), sample_points(gt_points, n_samples, seed + 1), thresh,
                        threads);
}

// ---------------------------------------------------------------------------
// ASCII PLY

inline void write_ply(const fs::path &path, const Mesh &m)
{
  std::ofstream f(path);
  if (!f)
    throw data_error("cannot write mesh: " + path.string());
  const bool col = !m.colors.empty();
  f << "ply\nformat ascii 1.0\nelement vertex " << m.vertices.size() << "\nproperty float x\nproperty float y\nproperty float z\n";
  if (col)
    f << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  f << "element face " << m.triangles.size() << "\nproperty list uchar int vertex_indices\nend_header\n";
  char buf[160];
  for (size_t i = 0; i < m.vertices.size(); ++i)
  {
    const auto &v = m.vertices[i];
    int n = std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g", v.x(), v.y(), v.z());
    if (col)
    {
      const Eigen::Vector3d c = (m.colors[i].cwiseMax(0.0).cwiseMin(1.0) * 255.0).array().round();
      std::snprintf(buf + n, sizeof buf - static_cast<size_t>(n), " %d %d %d", int(c.x()), int(c.y()), int(c.z()));
    }
    f << buf << '\n';
  }
  for (const auto &t : m.triangles)
    f << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
}

inline void write_ply_points(const fs::path &path, const std::vector<Eigen::Vector3d> &pts)
{
  Mesh m;
  m.vertices = pts;
  write_ply(path, m);
}

/// Reads vertices (x y z first) and triangle faces of an ASCII PLY.
inline Mesh read_ply(const fs::path &path)
{
  std::ifstream f(path);
  if (!f)
    throw data_error("missing PLY file: " + path.string());
  std::string line;
  if (!std::getline(f, line) || line.rfind("ply", 0) != 0)
    throw data_error(path.string() + ": not a PLY file");
  size_t nv = 0, nf = 0;
  int vprops = 0;
  bool has_rgb = false, in_vertex = false;
  while (std::getline(f, line))
  {
    std::istringstream in(line);
    std::string tok;
    in >> tok;
    if (tok == "format")
    {
      std::string fmt;
      in >> fmt;
      if (fmt != "ascii")
        throw data_error(path.string() + ": only ASCII PLY is supported");
    }
    else if (tok == "element")
    {
      std::string name;
      size_t n = 0;
      in >> name >> n;
      in_vertex = name == "vertex";
      if (name == "vertex")
        nv = n;
      else if (name == "face")
        nf = n;
    }
    else if (tok == "property" && in_vertex)
    {
      std::string type, name;
      in >> type >> name;
      ++vprops;
      has_rgb = has_rgb || name == "red";
    }
    else if (tok == "end_header")
      break;
  }
  Mesh m;
  for (size_t i = 0; i < nv; ++i)
  {
    if (!std::getline(f, line))
      throw data_error(path.string() + ": truncated vertex list");
    std::istringstream in(line);
    std::vector<double> vals(static_cast<size_t>(vprops));
    for (auto &v : vals)
      if (!(in >> v))
        throw data_error(path.string() + ": malformed vertex line");
    m.vertices.emplace_back(vals[0], vals[1], vals[2]);
    if (has_rgb && vprops >= 6)
      m.colors.emplace_back(vals[3] / 255.0, vals[4] / 255.0, vals[5] / 255.0);
  }
  for (size_t i = 0; i < nf; ++i)
  {
    if (!std::getline(f, line))
      throw data_error(path.string() + ": truncated face list");
    std::istringstream in(line);
    size_t cnt = 0;
    in >> cnt;
    std::vector<uint32_t> idx(cnt);
    for (auto &v : idx)
      if (!(in >> v) || v >= nv)
        throw data_error(path.string() + ": bad face index");
    for (size_t j = 1; j + 1 < cnt; ++j)
      m.triangles.push_back({idx[0], idx[j], idx[j + 1]});
  }
  m.empty_surface = m.triangles.empty();
  return m;
}

// ---------------------------------------------------------------------------
// Ground-truth cloud of the synthetic room

/// Points on the static room walls at a regular spacing (the moving sphere is excluded).
inline std::vector<Eigen::Vector3d> synthetic_room_cloud(const SyntheticSceneSpec &spec, double spacing = 0.02)
{
  const Eigen::Vector3d h = spec.room_half_extents;
  std::vector<Eigen::Vector3d> out;
  for (int a = 0; a < 3; ++a)
  {
    const int u = (a + 1) % 3, v = (a + 2) % 3;
    const int nu = static_cast<int>(std::floor(2 * h[u] / spacing)) + 1;
    const int nv = static_cast<int>(std::floor(2 * h[v] / spacing)) + 1;
    for (int s = -1; s <= 1; s += 2)
      for (int i = 0; i < nu; ++i)
        for (int j = 0; j < nv; ++j)
        {
          Eigen::Vector3d p;
          p[a] = s * h[a];
          p[u] = -h[u] + i * spacing;
          p[v] = -h[v] + j * spacing;
          out.push_back(p);
        }
  }
  return out;
}

} // namespace dynslam
