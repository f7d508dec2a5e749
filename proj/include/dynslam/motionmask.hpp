#pragma once

#include <algorithm>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dynslam/core.hpp"
#include "dynslam/dataio.hpp"
#include "dynslam/geometry.hpp"

namespace dynslam
{

struct MaskConfig
{
  double e_th = 1.0;   // px
  int o_th = 2;        // votes
  int window = 4;      // prior keyframes
  int dilate = 1;      // px, applied to the flow-derived part
  int match_stride = 2; // pixel stride of flow matches used for F estimation
  bool bootstrap_forward = true; // first keyframe: use forward flow to the second keyframe
  RansacConfig ransac;

  void validate() const
  {
    if (!(e_th > 0))
      throw usage_error("mask: e_th must be positive");
    if (o_th < 1 || window < 1)
      throw usage_error("mask: o_th and window must be >= 1");
    if (dilate < 0 || match_stride < 1)
      throw usage_error("mask: invalid dilate / match_stride");
  }
};

/// Dynamic/valid planes for one keyframe pair. Pixels with unknown flow, or whose flow leaves
/// the image, are invalid rather than dynamic.
struct WarpMask
{
  BinaryMask dynamic;
  BinaryMask valid;
  int src = -1;
  int dst = -1;
};

struct MotionMask
{
  BinaryMask mask;          // 1 = dynamic
  Image<uint16_t> counters; // dynamic votes within the window
  int keyframe_id = -1;
  int window_used = 0;
};

inline std::vector<Correspondence> flow_matches(const FlowField &flow, int stride = 1)
{
  std::vector<Correspondence> out;
  const int w = flow.width(), h = flow.height();
  for (int y = 0; y < h; y += stride)
    for (int x = 0; x < w; x += stride)
    {
      if (!flow.valid(x, y))
        continue;
      const Eigen::Vector2d q(x + flow.u(x, y), y + flow.v(x, y));
      if (q.x() < 0 || q.y() < 0 || q.x() > w - 1 || q.y() > h - 1)
        continue;
      out.push_back({Eigen::Vector2d(x, y), q});
    }
  return out;
}

/// A pixel is dynamic when its flow correspondence lies at least e_th from its epipolar line.
inline WarpMask warp_mask(const FlowField &flow, const FundamentalMatrix &f, double e_th)
{
  const int w = flow.width(), h = flow.height();
  WarpMask m{BinaryMask(w, h, 1, 0), BinaryMask(w, h, 1, 0)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
    {
      if (!flow.valid(x, y))
        continue;
      const Eigen::Vector2d q(x + flow.u(x, y), y + flow.v(x, y));
      if (q.x() < 0 || q.y() < 0 || q.x() > w - 1 || q.y() > h - 1)
        continue;
      const auto d = epipolar_distance_checked(f, {Eigen::Vector2d(x, y), q});
      if (!d)
        continue;
      m.valid(x, y) = 1;
      m.dynamic(x, y) = *d >= e_th;
    }
  return m;
}

inline BinaryMask dilate(const BinaryMask &m, int radius)
{
  if (radius <= 0)
    return m;
  BinaryMask out(m.width(), m.height(), 1, 0);
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x)
    {
      if (!m(x, y))
        continue;
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
          if (out.contains(x + dx, y + dy))
            out(x + dx, y + dy) = 1;
    }
  return out;
}

/// Vote fusion over the window: a pixel is dynamic-by-flow when at least min(o_th, N) of the
/// N warp masks flag it (counting only masks where it is valid). The result is united with seg.
/// `dilate_px` grows only the flow-derived part.
inline MotionMask fuse_window(const std::vector<WarpMask> &warps, const BinaryMask &seg, int o_th, int dilate_px = 0)
{
  if (o_th < 1)
    throw usage_error("fuse_window: o_th must be >= 1");
  MotionMask out;
  out.window_used = static_cast<int>(warps.size());
  if (warps.empty())
  {
    out.mask = seg;
    out.counters = Image<uint16_t>(seg.width(), seg.height(), 1, 0);
    return out;
  }
  const int w = warps.front().dynamic.width(), h = warps.front().dynamic.height();
  for (const auto &m : warps)
    if (!m.dynamic.same_size(w, h))
      throw usage_error("fuse_window: warp masks differ in size");
  if (!seg.empty() && !seg.same_size(w, h))
    throw usage_error("fuse_window: segmentation mask size mismatch");

  out.counters = Image<uint16_t>(w, h, 1, 0);
  for (const auto &m : warps)
    for (size_t i = 0; i < out.counters.pixel_count(); ++i)
      out.counters.at_index(i) += m.valid.at_index(i) && m.dynamic.at_index(i);
  const int need = std::min<int>(o_th, static_cast<int>(warps.size()));
  BinaryMask flow_dyn(w, h, 1, 0);
  for (size_t i = 0; i < flow_dyn.pixel_count(); ++i)
    flow_dyn.at_index(i) = out.counters.at_index(i) >= need;
  out.mask = dilate(flow_dyn, dilate_px);
  if (!seg.empty())
    for (size_t i = 0; i < out.mask.pixel_count(); ++i)
      out.mask.at_index(i) = out.mask.at_index(i) || seg.at_index(i);
  return out;
}

using FlowProvider = std::function<std::optional<FlowField>(int src, int dst)>;
using SegProvider = std::function<std::optional<BinaryMask>(int frame)>;

struct MaskBuildLog
{
  std::vector<std::string> lines;
};

/// Warp mask of keyframe j against prior keyframe k; nullopt when flow is missing or F is degenerate.
inline std::optional<WarpMask> keyframe_warp_mask(const FlowField &flow, const MaskConfig &cfg, int j, int k,
                                                  MaskBuildLog *log = nullptr)
{
  const auto matches = flow_matches(flow, cfg.match_stride);
  try
  {
    const auto est = estimate_fundamental(matches, cfg.ransac);
    WarpMask m = warp_mask(flow, est.f, cfg.e_th);
    m.src = j;
    m.dst = k;
    return m;
  }
  catch (const Error &e)
  {
    if (log)
      log->lines.push_back("kf " + std::to_string(j) + " vs " + std::to_string(k) + ": " + e.what());
    return std::nullopt;
  }
}

/// Motion mask of keyframe `kfs[index]` against up to `window` preceding keyframes.
/// For index 0 with `bootstrap_forward`, `kfs[1]` (if present) is used instead.
inline MotionMask build_keyframe_mask(const std::vector<int> &kfs, size_t index, int width, int height,
                                      const FlowProvider &flows, const SegProvider &segs, const MaskConfig &cfg,
                                      MaskBuildLog *log = nullptr)
{
  cfg.validate();
  const int j = kfs[index];
  std::vector<int> partners;
  for (size_t back = 1; back <= static_cast<size_t>(cfg.window) && back <= index; ++back)
    partners.push_back(kfs[index - back]);
  // The first keyframe has nothing behind it; the next keyframe stands in.
  if (index == 0 && cfg.bootstrap_forward && kfs.size() > 1)
    partners.push_back(kfs[1]);
  std::vector<WarpMask> warps;
  for (const int k : partners)
  {
    std::optional<FlowField> flow = flows ? flows(j, k) : std::nullopt;
    if (!flow)
    {
      if (log)
        log->lines.push_back("kf " + std::to_string(j) + " vs " + std::to_string(k) + ": flow missing, skipped");
      continue;
    }
    if (!flow->u.same_size(width, height))
      throw data_error("flow " + std::to_string(j) + "->" + std::to_string(k) + " has wrong dimensions");
    if (auto m = keyframe_warp_mask(*flow, cfg, j, k, log))
      warps.push_back(std::move(*m));
  }
  std::optional<BinaryMask> seg = segs ? segs(j) : std::nullopt;
  if (seg && !seg->same_size(width, height))
    throw data_error("segmentation mask for frame " + std::to_string(j) + " has wrong dimensions");
  MotionMask out = fuse_window(warps, seg ? *seg : BinaryMask(width, height, 1, 0), cfg.o_th, cfg.dilate);
  out.keyframe_id = j;
  return out;
}

inline std::map<int, MotionMask> build_masks_for_keyframes(const std::vector<int> &kfs, int width, int height,
                                                           const FlowProvider &flows, const SegProvider &segs,
                                                           const MaskConfig &cfg, MaskBuildLog *log = nullptr)
{
  std::map<int, MotionMask> out;
  for (size_t i = 0; i < kfs.size(); ++i)
    out[kfs[i]] = build_keyframe_mask(kfs, i, width, height, flows, segs, cfg, log);
  return out;
}

/// Non-keyframes take the mask of the nearest keyframe in time (earlier one on ties).
inline int nearest_keyframe(const std::vector<int> &kfs, int frame)
{
  if (kfs.empty())
    throw usage_error("nearest_keyframe: no keyframes");
  int best = kfs.front();
  for (int k : kfs)
    if (std::abs(k - frame) < std::abs(best - frame))
      best = k;
  return best;
}

inline double mask_iou(const BinaryMask &a, const BinaryMask &b)
{
  size_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.pixel_count(); ++i)
  {
    inter += a.at_index(i) && b.at_index(i);
    uni += a.at_index(i) || b.at_index(i);
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

} // namespace dynslam
