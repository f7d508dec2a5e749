#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dynslam/core.hpp"
#include "dynslam/geometry.hpp"
#include "dynslam/keyvalue.hpp"
#include "dynslam/png_io.hpp"

namespace dynslam
{

namespace fs = std::filesystem;

struct Frame
{
  int id = 0;
  double timestamp = 0;
  ImageF color; // 3 channels, [0,1]
  ImageF depth; // meters, 0 = no measurement
  int camera_id = 0;
};

struct TimedPose
{
  double timestamp = 0;
  PoseSE3 pose;
};

struct Sequence
{
  std::vector<Frame> frames;
  Intrinsics intrinsics;
  std::vector<TimedPose> gt_trajectory;             // as read from groundtruth.txt
  std::vector<std::optional<PoseSE3>> gt_per_frame; // associated within max_dt
  std::map<std::pair<int, int>, fs::path> flow_paths; // (src id, dst id)
  std::map<int, fs::path> seg_paths;

  size_t size() const noexcept { return frames.size(); }
};

/// Per-pixel displacement in pixels. Values above 1e9 mark unknown flow (Middlebury convention).
struct FlowField
{
  Image<float> u;
  Image<float> v;

  int width() const { return u.width(); }
  int height() const { return u.height(); }
  static constexpr float unknown = 1e10f;
  bool valid(int x, int y) const { return std::abs(u(x, y)) < 1e9f && std::abs(v(x, y)) < 1e9f; }
};

// ---------------------------------------------------------------------------
// TUM list files

struct TimedEntry
{
  double timestamp = 0;
  std::string value;
};

inline std::vector<TimedEntry> read_tum_list(const fs::path &path)
{
  std::ifstream f(path);
  if (!f)
    throw data_error("missing index file: " + path.string());
  std::vector<TimedEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line))
  {
    ++lineno;
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#')
      continue;
    std::istringstream in(line);
    TimedEntry e;
    if (!(in >> e.timestamp))
      throw data_error(path.string() + ":" + std::to_string(lineno) + ": bad timestamp");
    std::getline(in, e.value);
    const auto vb = e.value.find_first_not_of(" \t");
    const auto ve = e.value.find_last_not_of(" \t\r");
    e.value = vb == std::string::npos ? std::string() : e.value.substr(vb, ve - vb + 1);
    out.push_back(std::move(e));
  }
  std::stable_sort(out.begin(), out.end(), [](const auto &a, const auto &b) { return a.timestamp < b.timestamp; });
  return out;
}

/// For each entry of `a`, index of the nearest-in-time entry of `b` within max_dt.
/// Pairs are resolved greedily by time difference so each `b` entry is used once;
/// ties break on lower indices, which keeps the pairing stable across runs.
inline std::vector<std::pair<size_t, size_t>> associate(const std::vector<TimedEntry> &a, const std::vector<TimedEntry> &b,
                                                        double max_dt)
{
  struct Cand
  {
    double dt;
    size_t i, j;
  };
  std::vector<Cand> cands;
  size_t lo = 0;
  for (size_t i = 0; i < a.size(); ++i)
  {
    while (lo < b.size() && b[lo].timestamp < a[i].timestamp - max_dt)
      ++lo;
    for (size_t j = lo; j < b.size() && b[j].timestamp <= a[i].timestamp + max_dt; ++j)
      cands.push_back({std::abs(a[i].timestamp - b[j].timestamp), i, j});
  }
  std::sort(cands.begin(), cands.end(), [](const Cand &x, const Cand &y) {
    if (x.dt != y.dt)
      return x.dt < y.dt;
    if (x.i != y.i)
      return x.i < y.i;
    return x.j < y.j;
  });
  std::vector<uint8_t> used_a(a.size(), 0), used_b(b.size(), 0);
  std::vector<std::pair<size_t, size_t>> out;
  for (const auto &c : cands)
  {
    if (used_a[c.i] || used_b[c.j])
      continue;
    used_a[c.i] = used_b[c.j] = 1;
    out.emplace_back(c.i, c.j);
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<TimedPose> read_tum_trajectory(const fs::path &path)
{
  std::vector<TimedPose> out;
  for (const auto &e : read_tum_list(path))
  {
    std::istringstream in(e.value);
    double tx, ty, tz, qx, qy, qz, qw;
    if (!(in >> tx >> ty >> tz >> qx >> qy >> qz >> qw))
      throw data_error(path.string() + ": malformed pose line at t=" + std::to_string(e.timestamp));
    out.push_back({e.timestamp, PoseSE3::from_tq({tx, ty, tz}, Eigen::Quaterniond(qw, qx, qy, qz))});
  }
  return out;
}

inline void write_tum_trajectory(const fs::path &path, const std::vector<TimedPose> &traj)
{
  std::ofstream f(path);
  if (!f)
    throw data_error("cannot write trajectory: " + path.string());
  f << "# timestamp tx ty tz qx qy qz qw\n";
  char buf[256];
  for (const auto &p : traj)
  {
    const Eigen::Vector3d t = p.pose.translation();
    Eigen::Quaterniond q = p.pose.quaternion();
    if (q.w() < 0)
      q.coeffs() *= -1;
    std::snprintf(buf, sizeof buf, "%.6f %.9f %.9f %.9f %.9f %.9f %.9f %.9f\n", p.timestamp, t.x(), t.y(), t.z(), q.x(),
                  q.y(), q.z(), q.w());
    f << buf;
  }
}

// ---------------------------------------------------------------------------
// Images

inline ImageF load_color_png(const fs::path &path)
{
  const auto raw = png::read(path);
  if (raw.channels < 3)
    throw data_error("expected RGB image: " + path.string());
  const double scale = raw.bit_depth == 16 ? 1.0 / 65535.0 : 1.0 / 255.0;
  ImageF img(raw.width, raw.height, 3);
  for (int y = 0; y < raw.height; ++y)
    for (int x = 0; x < raw.width; ++x)
      for (int c = 0; c < 3; ++c)
        img(x, y, c) = raw.samples[(static_cast<size_t>(y) * raw.width + x) * raw.channels + c] * scale;
  return img;
}

inline ImageF load_depth_png(const fs::path &path, double depth_scale)
{
  const auto raw = png::read(path);
  if (raw.channels != 1)
    throw data_error("expected single-channel depth image: " + path.string());
  ImageF img(raw.width, raw.height, 1);
  for (size_t i = 0; i < raw.samples.size(); ++i)
    img.at_index(i) = raw.samples[i] / depth_scale;
  return img;
}

inline void save_color_png(const fs::path &path, const ImageF &img)
{
  std::vector<uint16_t> s(img.data().size());
  for (size_t i = 0; i < s.size(); ++i)
    s[i] = static_cast<uint16_t>(std::lround(std::clamp(img.at_index(i), 0.0, 1.0) * 255.0));
  png::write(path, img.width(), img.height(), img.channels(), 8, s);
}

inline void save_depth_png(const fs::path &path, const ImageF &depth, double depth_scale)
{
  std::vector<uint16_t> s(depth.data().size());
  for (size_t i = 0; i < s.size(); ++i)
  {
    const double d = depth.at_index(i);
    s[i] = std::isfinite(d) && d > 0 ? static_cast<uint16_t>(std::min(65535L, std::lround(d * depth_scale))) : 0;
  }
  png::write(path, depth.width(), depth.height(), 1, 16, s);
}

inline void save_mask_png(const fs::path &path, const BinaryMask &m)
{
  std::vector<uint16_t> s(m.data().size());
  for (size_t i = 0; i < s.size(); ++i)
    s[i] = m.at_index(i) ? 255 : 0;
  png::write(path, m.width(), m.height(), 1, 8, s);
}

/// 8-bit single-channel mask; nonzero marks a dynamic-class pixel.
inline BinaryMask load_seg_mask(const fs::path &path, int expect_w = -1, int expect_h = -1)
{
  const auto raw = png::read(path);
  if (raw.channels != 1 || raw.bit_depth != 8)
    throw data_error("segmentation mask must be 8-bit single-channel: " + path.string());
  if (expect_w >= 0 && (raw.width != expect_w || raw.height != expect_h))
    throw data_error("segmentation mask size does not match frame: " + path.string());
  BinaryMask m(raw.width, raw.height, 1, 0);
  for (size_t i = 0; i < raw.samples.size(); ++i)
    m.at_index(i) = raw.samples[i] != 0;
  return m;
}

// ---------------------------------------------------------------------------
// Middlebury .flo

inline constexpr float flo_magic = 202021.25f;

inline FlowField load_flow(const fs::path &path)
{
  static_assert(std::endian::native == std::endian::little, "flow I/O assumes a little-endian host");
  std::ifstream f(path, std::ios::binary);
  if (!f)
    throw data_error("cannot open flow file: " + path.string());
  float magic = 0;
  int32_t w = 0, h = 0;
  f.read(reinterpret_cast<char *>(&magic), 4);
  f.read(reinterpret_cast<char *>(&w), 4);
  f.read(reinterpret_cast<char *>(&h), 4);
  if (!f || magic != flo_magic)
    throw data_error("bad .flo magic: " + path.string());
  if (w <= 0 || h <= 0 || w > 1 << 15 || h > 1 << 15)
    throw data_error("bad .flo dimensions: " + path.string());
  std::vector<float> buf(static_cast<size_t>(w) * h * 2);
  f.read(reinterpret_cast<char *>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
  if (f.gcount() != static_cast<std::streamsize>(buf.size() * 4))
    throw data_error("truncated .flo payload: " + path.string());
  FlowField flow{Image<float>(w, h), Image<float>(w, h)};
  for (size_t i = 0; i < flow.u.pixel_count(); ++i)
  {
    flow.u.at_index(i) = buf[2 * i];
    flow.v.at_index(i) = buf[2 * i + 1];
  }
  return flow;
}

inline void write_flow(const fs::path &path, const FlowField &flow)
{
  std::ofstream f(path, std::ios::binary);
  if (!f)
    throw data_error("cannot write flow file: " + path.string());
  const int32_t w = flow.width(), h = flow.height();
  f.write(reinterpret_cast<const char *>(&flo_magic), 4);
  f.write(reinterpret_cast<const char *>(&w), 4);
  f.write(reinterpret_cast<const char *>(&h), 4);
  std::vector<float> buf(flow.u.pixel_count() * 2);
  for (size_t i = 0; i < flow.u.pixel_count(); ++i)
  {
    buf[2 * i] = flow.u.at_index(i);
    buf[2 * i + 1] = flow.v.at_index(i);
  }
  f.write(reinterpret_cast<const char *>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
}

inline fs::path flow_filename(int src, int dst)
{
  return "flow_" + std::to_string(src) + "_" + std::to_string(dst) + ".flo";
}

inline fs::path seg_filename(int id) { return "seg_" + std::to_string(id) + ".png"; }

// ---------------------------------------------------------------------------
// TUM sequence

struct TumLoadOptions
{
  double max_dt = 0.02;
  std::string flow_dir = "flows";
  std::string seg_dir = "seg";
};

/// Frame ids are positions in the associated, time-ordered frame list.
inline Sequence load_tum_sequence(const fs::path &root, const Intrinsics &intrinsics, const TumLoadOptions &opt = {})
{
  if (!fs::is_directory(root))
    throw data_error("dataset path does not exist: " + root.string());
  intrinsics.validate();
  const auto rgb = read_tum_list(root / "rgb.txt");
  const auto depth = read_tum_list(root / "depth.txt");
  const auto pairs = associate(rgb, depth, opt.max_dt);
  if (pairs.empty())
    throw data_error("no rgb/depth associations within " + std::to_string(opt.max_dt) + " s in " + root.string());

  Sequence seq;
  seq.intrinsics = intrinsics;
  for (const auto &[i, j] : pairs)
  {
    Frame fr;
    fr.id = static_cast<int>(seq.frames.size());
    fr.timestamp = rgb[i].timestamp;
    fr.color = load_color_png(root / rgb[i].value);
    fr.depth = load_depth_png(root / depth[j].value, intrinsics.depth_scale);
    if (!fr.color.same_size(fr.depth))
      throw data_error("color/depth size mismatch at t=" + std::to_string(fr.timestamp));
    if (!fr.color.same_size(intrinsics.width, intrinsics.height))
      throw data_error("image size does not match intrinsics at t=" + std::to_string(fr.timestamp));
    seq.frames.push_back(std::move(fr));
  }

  seq.gt_per_frame.assign(seq.frames.size(), std::nullopt);
  if (fs::exists(root / "groundtruth.txt"))
  {
    seq.gt_trajectory = read_tum_trajectory(root / "groundtruth.txt");
    std::vector<TimedEntry> fe, ge;
    for (const auto &f : seq.frames)
      fe.push_back({f.timestamp, {}});
    for (const auto &g : seq.gt_trajectory)
      ge.push_back({g.timestamp, {}});
    for (const auto &[i, j] : associate(fe, ge, opt.max_dt))
      seq.gt_per_frame[i] = seq.gt_trajectory[j].pose;
  }

  const int n = static_cast<int>(seq.frames.size());
  if (fs::is_directory(root / opt.flow_dir))
  {
    for (const auto &entry : fs::directory_iterator(root / opt.flow_dir))
    {
      int s = -1, d = -1;
      char tail = 0;
      const std::string name = entry.path().filename().string();
      if (std::sscanf(name.c_str(), "flow_%d_%d.fl%c", &s, &d, &tail) == 3 && tail == 'o' && s != d && s >= 0 &&
          d >= 0 && s < n && d < n && entry.path().filename() == flow_filename(s, d))
        seq.flow_paths[{s, d}] = entry.path();
    }
  }
  if (fs::is_directory(root / opt.seg_dir))
  {
    for (int s = 0; s < n; ++s)
    {
      const fs::path p = root / opt.seg_dir / seg_filename(s);
      if (fs::exists(p))
        seq.seg_paths[s] = p;
    }
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Synthetic box room with a moving sphere

struct SyntheticSceneSpec
{
  Eigen::Vector3d room_half_extents{2.0, 1.5, 2.0};
  uint64_t texture_seed = 1;
  double tile_size = 0.25;
  std::vector<Eigen::Vector3d> sphere_path; // evenly spread over the sequence; empty = no sphere
  double sphere_radius = 0.3;
  std::vector<PoseSE3> camera_trajectory; // camera-to-world, one per frame
  Intrinsics intrinsics{130.0, 130.0, 79.5, 59.5, 160, 120, 5000.0};
  double depth_noise = 0.0; // m, Gaussian sigma
  double color_noise = 0.0;
  uint64_t noise_seed = 3;
  double fps = 30.0;
  int supersample = 2;

  void validate() const
  {
    intrinsics.validate();
    if (!(room_half_extents.minCoeff() > 0))
      throw usage_error("synthetic spec: room half-extents must be positive");
    if (!(sphere_radius > 0))
      throw usage_error("synthetic spec: sphere radius must be positive");
    if (!(tile_size > 0))
      throw usage_error("synthetic spec: tile size must be positive");
    if (camera_trajectory.empty())
      throw usage_error("synthetic spec: camera trajectory is empty");
    if (supersample < 1)
      throw usage_error("synthetic spec: supersample must be >= 1");
    for (size_t i = 0; i < camera_trajectory.size(); ++i)
    {
      const Eigen::Vector3d t = camera_trajectory[i].translation();
      if (((t.cwiseAbs() - room_half_extents).array() >= 0).any())
        throw usage_error("synthetic spec: camera " + std::to_string(i) + " is outside the room");
    }
  }

  /// Reads the plain-text scene description (see configs/synthetic_*.txt).
  static SyntheticSceneSpec from_keyvalue(const KeyValueFile &kv)
  {
    SyntheticSceneSpec s;
    if (auto v = kv.find("room.half_extents"))
      s.room_half_extents = KeyValueFile::vec3("room.half_extents", *v);
    kv.get("texture.seed", s.texture_seed);
    kv.get("texture.tile", s.tile_size);
    kv.get("sphere.radius", s.sphere_radius);
    for (const auto &w : kv.all("sphere.waypoint"))
      s.sphere_path.push_back(KeyValueFile::vec3("sphere.waypoint", w));
    kv.get("camera.fx", s.intrinsics.fx);
    kv.get("camera.fy", s.intrinsics.fy);
    kv.get("camera.cx", s.intrinsics.cx);
    kv.get("camera.cy", s.intrinsics.cy);
    kv.get("camera.width", s.intrinsics.width);
    kv.get("camera.height", s.intrinsics.height);
    kv.get("camera.depth_scale", s.intrinsics.depth_scale);
    kv.get("noise.depth", s.depth_noise);
    kv.get("noise.color", s.color_noise);
    kv.get("noise.seed", s.noise_seed);
    kv.get("fps", s.fps);
    kv.get("supersample", s.supersample);

    int frames = 1;
    kv.get("trajectory.frames", frames);
    std::vector<Vector6d> keys;
    for (const auto &w : kv.all("trajectory.waypoint"))
    {
      const auto n = KeyValueFile::numbers("trajectory.waypoint", w);
      if (n.size() != 6)
        throw usage_error("trajectory.waypoint: expected `tx ty tz rx ry rz`");
      Vector6d k;
      k << n[0], n[1], n[2], n[3], n[4], n[5];
      keys.push_back(k);
    }
    if (keys.empty())
      keys.push_back(Vector6d::Zero());
    if (frames < 1)
      throw usage_error("trajectory.frames must be >= 1");
    s.camera_trajectory = interpolate_waypoints(keys, frames);
    return s;
  }

  /// Linear interpolation of (translation, rotation vector) waypoints spread evenly over n frames.
  static std::vector<PoseSE3> interpolate_waypoints(const std::vector<Vector6d> &keys, int n)
  {
    std::vector<PoseSE3> out;
    for (int f = 0; f < n; ++f)
    {
      Vector6d k = keys.front();
      if (keys.size() > 1 && n > 1)
      {
        const double s = static_cast<double>(f) / (n - 1) * static_cast<double>(keys.size() - 1);
        const size_t i = std::min(static_cast<size_t>(s), keys.size() - 2);
        const double a = s - static_cast<double>(i);
        k = (1 - a) * keys[i] + a * keys[i + 1];
      }
      out.push_back(PoseSE3::from_rt(detail::so3_exp(k.tail<3>()), k.head<3>()));
    }
    return out;
  }
};

struct SceneHit
{
  double t = std::numeric_limits<double>::infinity(); // along the (unit) ray
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
  bool sphere = false;
  bool valid = false;
};

/// Analytic ray tracer for the synthetic scene.
class SyntheticScene
{
public:
  explicit SyntheticScene(SyntheticSceneSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

  const SyntheticSceneSpec &spec() const noexcept { return spec_; }
  int frame_count() const noexcept { return static_cast<int>(spec_.camera_trajectory.size()); }
  bool has_sphere() const noexcept { return !spec_.sphere_path.empty(); }

  Eigen::Vector3d sphere_center(double frame) const
  {
    const auto &p = spec_.sphere_path;
    if (p.size() == 1 || frame_count() < 2)
      return p.front();
    const double s = std::clamp(frame / (frame_count() - 1), 0.0, 1.0) * static_cast<double>(p.size() - 1);
    const size_t i = std::min(static_cast<size_t>(s), p.size() - 2);
    const double a = s - static_cast<double>(i);
    return (1 - a) * p[i] + a * p[i + 1];
  }

  SceneHit raycast(const Eigen::Vector3d &o, const Eigen::Vector3d &d, double frame) const
  {
    SceneHit hit;
    const Eigen::Vector3d &e = spec_.room_half_extents;
    int axis = -1;
    double sign = 0;
    for (int a = 0; a < 3; ++a)
    {
      if (d[a] == 0)
        continue;
      const double b = d[a] > 0 ? e[a] : -e[a];
      const double t = (b - o[a]) / d[a];
      if (t > 0 && t < hit.t)
      {
        hit.t = t;
        axis = a;
        sign = d[a] > 0 ? 1 : -1;
      }
    }
    if (axis < 0)
      return hit;
    hit.valid = true;
    hit.point = o + hit.t * d;
    hit.point[axis] = sign * e[axis];
    hit.color = wall_color(axis, sign, hit.point);

    if (has_sphere())
    {
      const Eigen::Vector3d c = sphere_center(frame);
      const double r = spec_.sphere_radius;
      const Eigen::Vector3d oc = o - c;
      const double b = oc.dot(d);
      const double disc = b * b - (oc.squaredNorm() - r * r);
      if (disc >= 0)
      {
        const double sq = std::sqrt(disc);
        double t = -b - sq;
        if (t <= 0)
          t = -b + sq;
        if (t > 0 && t < hit.t)
        {
          hit.t = t;
          hit.point = o + t * d;
          hit.sphere = true;
          hit.color = sphere_color(hit.point - c);
        }
      }
    }
    return hit;
  }

  /// Unit ray through a continuous pixel in the given camera.
  Eigen::Vector3d pixel_ray_camera(const Eigen::Vector2d &p) const
  {
    const auto &k = spec_.intrinsics;
    return Eigen::Vector3d((p.x() - k.cx) / k.fx, (p.y() - k.cy) / k.fy, 1.0).normalized();
  }

  /// Z-depth of the first surface through pixel p at frame f (0 when nothing is hit).
  SceneHit cast_pixel(int f, const Eigen::Vector2d &p, double *zdepth = nullptr) const
  {
    const PoseSE3 &pose = spec_.camera_trajectory[static_cast<size_t>(f)];
    const Eigen::Vector3d dc = pixel_ray_camera(p);
    const SceneHit h = raycast(pose.translation(), pose.rotation() * dc, f);
    if (zdepth)
      *zdepth = h.valid ? h.t * dc.z() : 0.0;
    return h;
  }

private:
  static uint64_t mix(uint64_t x)
  {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  Eigen::Vector3d tile_color(uint64_t key) const
  {
    uint64_t h = mix(key ^ mix(spec_.texture_seed));
    Eigen::Vector3d c;
    for (int i = 0; i < 3; ++i)
    {
      h = mix(h);
      c[i] = 0.1 + 0.8 * static_cast<double>(h >> 11) * 0x1.0p-53;
    }
    return c;
  }

  Eigen::Vector3d wall_color(int axis, double sign, const Eigen::Vector3d &p) const
  {
    const int ua = (axis + 1) % 3, va = (axis + 2) % 3;
    const auto iu = static_cast<int64_t>(std::floor(p[ua] / spec_.tile_size));
    const auto iv = static_cast<int64_t>(std::floor(p[va] / spec_.tile_size));
    const uint64_t wall = static_cast<uint64_t>(axis * 2 + (sign > 0));
    return tile_color((wall << 56) ^ (static_cast<uint64_t>(iu & 0xffffff) << 28) ^ static_cast<uint64_t>(iv & 0xfffffff));
  }

  Eigen::Vector3d sphere_color(const Eigen::Vector3d &local) const
  {
    const Eigen::Vector3d n = local.normalized();
    const double lat = std::acos(std::clamp(n.y(), -1.0, 1.0));
    const double lon = std::atan2(n.z(), n.x()) + M_PI;
    const auto i = static_cast<uint64_t>(lat / M_PI * 6.0);
    const auto j = static_cast<uint64_t>(lon / (2 * M_PI) * 10.0);
    return tile_color((7ULL << 56) ^ (i << 20) ^ j);
  }

  SyntheticSceneSpec spec_;
};

struct SyntheticSequence
{
  Sequence sequence;
  std::vector<BinaryMask> gt_dynamic_masks;
  std::vector<FlowField> gt_flow; // gt_flow[i]: frame i -> i + 1
};

/// Ground-truth flow src -> dst: each scene point moves with its object and is reprojected.
inline FlowField synthetic_flow(const SyntheticScene &scene, int src, int dst)
{
  const auto &k = scene.spec().intrinsics;
  FlowField flow{Image<float>(k.width, k.height), Image<float>(k.width, k.height)};
  const PoseSE3 dst_inv = scene.spec().camera_trajectory[static_cast<size_t>(dst)].inverse();
  for (int y = 0; y < k.height; ++y)
    for (int x = 0; x < k.width; ++x)
    {
      const SceneHit h = scene.cast_pixel(src, {x, y});
      float u = FlowField::unknown, v = FlowField::unknown;
      if (h.valid)
      {
        Eigen::Vector3d pw = h.point;
        if (h.sphere)
          pw += scene.sphere_center(dst) - scene.sphere_center(src);
        const Eigen::Vector3d pc = dst_inv * pw;
        if (pc.z() > 1e-9)
        {
          const Eigen::Vector2d q(k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy);
          u = static_cast<float>(q.x() - x);
          v = static_cast<float>(q.y() - y);
        }
      }
      flow.u(x, y) = u;
      flow.v(x, y) = v;
    }
  return flow;
}

inline SyntheticSequence generate_synthetic_sequence(const SyntheticSceneSpec &spec)
{
  const SyntheticScene scene(spec);
  const auto &k = spec.intrinsics;
  const int n = scene.frame_count();
  const int ss = spec.supersample;
  SyntheticSequence out;
  out.sequence.intrinsics = k;
  Rng noise(spec.noise_seed);

  for (int f = 0; f < n; ++f)
  {
    Frame fr;
    fr.id = f;
    fr.timestamp = 1.0 + f / spec.fps;
    fr.color = ImageF(k.width, k.height, 3);
    fr.depth = ImageF(k.width, k.height, 1);
    BinaryMask mask(k.width, k.height, 1, 0);
    for (int y = 0; y < k.height; ++y)
      for (int x = 0; x < k.width; ++x)
      {
        double z = 0;
        const SceneHit center = scene.cast_pixel(f, {x, y}, &z);
        fr.depth(x, y) = z;
        mask(x, y) = center.valid && center.sphere;
        Eigen::Vector3d c = Eigen::Vector3d::Zero();
        for (int sy = 0; sy < ss; ++sy)
          for (int sx = 0; sx < ss; ++sx)
          {
            const Eigen::Vector2d p(x + (sx + 0.5) / ss - 0.5, y + (sy + 0.5) / ss - 0.5);
            c += scene.cast_pixel(f, p).color;
          }
        c /= ss * ss;
        for (int ch = 0; ch < 3; ++ch)
          fr.color(x, y, ch) = c[ch];
      }
    if (spec.depth_noise > 0 || spec.color_noise > 0)
    {
      for (int y = 0; y < k.height; ++y)
        for (int x = 0; x < k.width; ++x)
        {
          if (spec.depth_noise > 0 && fr.depth(x, y) > 0)
            fr.depth(x, y) = std::max(1e-3, fr.depth(x, y) + spec.depth_noise * gaussian(noise));
          if (spec.color_noise > 0)
            for (int ch = 0; ch < 3; ++ch)
              fr.color(x, y, ch) = std::clamp(fr.color(x, y, ch) + spec.color_noise * gaussian(noise), 0.0, 1.0);
        }
    }
    out.sequence.frames.push_back(std::move(fr));
    out.gt_dynamic_masks.push_back(std::move(mask));
    out.sequence.gt_trajectory.push_back({1.0 + f / spec.fps, spec.camera_trajectory[static_cast<size_t>(f)]});
    out.sequence.gt_per_frame.emplace_back(spec.camera_trajectory[static_cast<size_t>(f)]);
  }
  for (int f = 0; f + 1 < n; ++f)
    out.gt_flow.push_back(synthetic_flow(scene, f, f + 1));
  return out;
}

/// Keyframe pairs (src, dst) with src a multiple of `stride`, dst an earlier multiple within `window` strides.
inline std::vector<std::pair<int, int>> keyframe_flow_pairs(int frame_count, int stride, int window)
{
  std::vector<std::pair<int, int>> out;
  if (stride < frame_count)
    out.emplace_back(0, stride); // forward pair for the first keyframe
  for (int s = stride; s < frame_count; s += stride)
    for (int w = 1; w <= window && s - w * stride >= 0; ++w)
      out.emplace_back(s, s - w * stride);
  return out;
}

/// Writes a synthetic sequence in TUM layout: rgb/, depth/, rgb.txt, depth.txt, groundtruth.txt,
/// gt_masks/, flows/ (keyframe pairs), and gt_cloud.ply is left to the caller.
inline void write_synthetic_dataset(const fs::path &out, const SyntheticSceneSpec &spec, const SyntheticSequence &syn,
                                    int flow_stride = 5, int flow_window = 4)
{
  fs::create_directories(out / "rgb");
  fs::create_directories(out / "depth");
  fs::create_directories(out / "gt_masks");
  fs::create_directories(out / "flows");
  std::ofstream rgb(out / "rgb.txt"), depth(out / "depth.txt");
  rgb << "# timestamp filename\n";
  depth << "# timestamp filename\n";
  char name[64], ts[64];
  for (const auto &f : syn.sequence.frames)
  {
    std::snprintf(name, sizeof name, "%06d.png", f.id);
    std::snprintf(ts, sizeof ts, "%.6f", f.timestamp);
    save_color_png(out / "rgb" / name, f.color);
    save_depth_png(out / "depth" / name, f.depth, spec.intrinsics.depth_scale);
    save_mask_png(out / "gt_masks" / seg_filename(f.id), syn.gt_dynamic_masks[static_cast<size_t>(f.id)]);
    rgb << ts << " rgb/" << name << "\n";
    depth << ts << " depth/" << name << "\n";
  }
  write_tum_trajectory(out / "groundtruth.txt", syn.sequence.gt_trajectory);
  const SyntheticScene scene(spec);
  for (const auto &[s, d] : keyframe_flow_pairs(scene.frame_count(), flow_stride, flow_window))
    write_flow(out / "flows" / flow_filename(s, d), synthetic_flow(scene, s, d));
}

} // namespace dynslam
