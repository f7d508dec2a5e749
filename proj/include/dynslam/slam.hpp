#pragma once

#include <chrono>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dynslam/core.hpp"
#include "dynslam/dataio.hpp"
#include "dynslam/field.hpp"
#include "dynslam/geometry.hpp"
#include "dynslam/imageproc.hpp"
#include "dynslam/losses.hpp"
#include "dynslam/motionmask.hpp"
#include "dynslam/objective.hpp"
#include "dynslam/optim.hpp"
#include "dynslam/render.hpp"

namespace dynslam
{

enum class TrackerMode
{
  edge_render, // edges for non-keyframes; edges then rendering for keyframes
  render_only, // rendering loss for every frame
  edge_only,   // edges for every frame
};

inline std::string to_string(TrackerMode m)
{
  switch (m)
  {
  case TrackerMode::edge_render:
    return "edge_render";
  case TrackerMode::render_only:
    return "render_only";
  case TrackerMode::edge_only:
    return "edge_only";
  }
  return "?";
}

inline TrackerMode tracker_mode_from_string(const std::string &s)
{
  if (s == "edge_render")
    return TrackerMode::edge_render;
  if (s == "render_only")
    return TrackerMode::render_only;
  if (s == "edge_only")
    return TrackerMode::edge_only;
  throw usage_error("unknown tracker mode '" + s + "' (expected edge_render, render_only or edge_only)");
}

struct TrackerConfig
{
  int n_rays = 1024;
  int track_iters = 20; // rendering-based pose iterations
  int edge_iters = 300; // edge-based pose iterations (cheap: no field evaluation)
  int init_iters = 300; // mapping iterations on the first frame
  int gba_iters = 40;
  int gba_rays = 1024;
  int kf_interval = 5;
  int reservoir = 2048;
  RaySamplingConfig sampling;
  double weight_tr = 0.01;
  AdamConfig field_opt;
  AdamConfig pose_opt;       // rendering-based tracking
  AdamConfig edge_opt{2e-3}; // edge-based tracking
  AdamConfig gba_pose_opt;   // keyframe poses inside GBA
  LossWeights weights;
  TruncationSpec trunc;
  EdgeLossCfg edge;
  CannyConfig canny;
  MaskConfig mask;
  bool use_masks = true;
  TrackerMode mode = TrackerMode::edge_render;
  uint64_t seed = 1;
  int threads = 1;

  void validate() const
  {
    if (n_rays < 1 || gba_rays < 1 || reservoir < 1 || kf_interval < 1)
      throw usage_error("tracker: ray counts, reservoir and kf_interval must be positive");
    if (track_iters < 0 || edge_iters < 0 || init_iters < 0 || gba_iters < 0)
      throw usage_error("tracker: iteration counts must be non-negative");
    if (!(weight_tr > 0))
      throw usage_error("tracker: weight_tr must be positive");
    if (threads < 1)
      throw usage_error("tracker: threads must be >= 1");
    sampling.validate();
    field_opt.validate();
    pose_opt.validate();
    edge_opt.validate();
    gba_pose_opt.validate();
    weights.validate();
    trunc.validate();
    edge.validate();
    mask.validate();
  }
};

struct SlamConfig
{
  TrackerConfig tracker;
  HashGridConfig grid;
  DecoderConfig decoder;
  double sdf_bias = 0.1;
  uint64_t field_seed = 11;

  void validate() const
  {
    tracker.validate();
    grid.validate();
  }
};

namespace detail
{
inline uint64_t splitmix(uint64_t x)
{
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}
} // namespace detail

inline uint64_t derive_seed(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0)
{
  return detail::splitmix(detail::splitmix(detail::splitmix(seed ^ detail::splitmix(a)) ^ b) ^ c);
}

struct Keyframe
{
  int frame_index = -1;
  int frame_id = -1;
  PoseSE3 pose;
  BinaryMask mask;
  EdgeSet edges;
  DTMap dt;
  RayBundle reservoir; // owner field is rewritten to the keyframe's slot when batched
};

/// Edges, DT and reservoir for a new keyframe. Reservoir pixels are mask-free by construction.
inline Keyframe insert_keyframe(const Frame &f, int frame_index, const PoseSE3 &pose, const BinaryMask &mask,
                                const Intrinsics &k, const TrackerConfig &cfg)
{
  Keyframe kf;
  kf.frame_index = frame_index;
  kf.frame_id = f.id;
  kf.pose = pose;
  kf.mask = mask.empty() ? BinaryMask(f.color.width(), f.color.height(), 1, 0) : mask;
  kf.edges = canny_edges(to_gray(f.color), cfg.canny, f.id);
  if (!kf.edges.pixels.empty())
    kf.dt = distance_transform(kf.edges.map);
  kf.reservoir = sample_bundle_pixels(f, kf.mask, static_cast<size_t>(cfg.reservoir), derive_seed(cfg.seed, 1, static_cast<uint64_t>(f.id)),
                                      k, 0);
  return kf;
}

struct EdgeTrackResult
{
  PoseSE3 t_ji;
  double loss = 0;
  size_t used = 0;
  bool degraded = false;
};

/// Minimizes the edge loss over T_ji (frame i camera -> keyframe j camera) and returns the
/// lowest mean-loss pose visited.
inline EdgeTrackResult track_edges(const std::vector<Eigen::Vector2i> &edges_i, const ImageF &depth_i, const DTMap &dt_j,
                                   const BinaryMask &mask_j, const BinaryMask &mask_i, const PoseSE3 &init_t_ji,
                                   const Intrinsics &k, const EdgeLossCfg &ecfg, const AdamConfig &opt, int iters,
                                   int threads = 1)
{
  EdgeTrackResult best;
  best.t_ji = init_t_ji;
  best.degraded = true;
  if (dt_j.empty() || edges_i.empty())
    return best;
  PoseSE3 t = init_t_ji;
  PoseAdam adam(opt);
  double best_mean = std::numeric_limits<double>::infinity();
  for (int it = 0; it <= iters; ++it)
  {
    const EdgeLossResult r = edge_loss(edges_i, depth_i, dt_j, mask_j, mask_i, t, k, ecfg, threads);
    if (!r.ok())
      break;
    const double mean = r.value / static_cast<double>(r.used);
    if (mean < best_mean)
    {
      best_mean = mean;
      best.t_ji = t;
      best.loss = r.value;
      best.used = r.used;
      best.degraded = false;
    }
    if (it == iters)
      break;
    adam.step(t, r.gradient);
  }
  return best;
}

struct RenderTrackResult
{
  PoseSE3 pose;
  double loss = 0;
  LossTerms terms;
  bool degraded = false;
  size_t dynamic_reads = 0;
};

/// Pose-only minimization of the rendering objective with the field frozen.
inline RenderTrackResult track_render(const FieldParams &field, const Frame &f, const BinaryMask &mask, const PoseSE3 &init,
                                      const Intrinsics &k, const TrackerConfig &cfg)
{
  RenderTrackResult best;
  best.pose = init;
  best.degraded = true;
  PoseSE3 pose = init;
  PoseAdam adam(cfg.pose_opt);
  ObjectiveOptions opt;
  opt.weights = cfg.weights;
  opt.trunc = cfg.trunc;
  opt.regime = LossRegime::tracking;
  opt.weight_tr = cfg.weight_tr;
  opt.pose_grad = true;
  opt.threads = cfg.threads;
  opt.audit_masks = {&mask};
  double best_loss = std::numeric_limits<double>::infinity();
  for (int it = 0; it < cfg.track_iters; ++it)
  {
    const uint64_t s = derive_seed(cfg.seed, 2, static_cast<uint64_t>(f.id), static_cast<uint64_t>(it));
    const RayBundle rays = sample_bundle_pixels(f, mask, static_cast<size_t>(cfg.n_rays), s, k, 0);
    std::vector<PoseSE3> poses{pose};
    const BundleSamples smp = sample_bundle(rays, poses, cfg.sampling, field.grid.bounds_min, field.grid.bounds_max, s + 1);
    const ObjectiveResult r = render_objective(field, rays, smp, poses, opt);
    best.dynamic_reads += r.dynamic_reads;
    if (r.degenerate())
      continue;
    if (r.total < best_loss)
    {
      best_loss = r.total;
      best.pose = pose;
      best.loss = r.total;
      best.terms = r.terms;
      best.degraded = false;
    }
    adam.step(pose, r.pose_grad[0]);
  }
  return best;
}

struct MapperState
{
  FieldParams field;
  Adam field_adam;
  std::vector<PoseAdam> kf_adams;
};

struct GbaStats
{
  double last_loss = 0;
  LossTerms last_terms;
  size_t dynamic_reads = 0;
  size_t degenerate_batches = 0;
};

inline ObjectiveOptions mapping_options(const TrackerConfig &cfg, bool pose_grad)
{
  ObjectiveOptions opt;
  opt.weights = cfg.weights;
  opt.trunc = cfg.trunc;
  opt.regime = LossRegime::mapping;
  opt.weight_tr = cfg.weight_tr;
  opt.field_grad = true;
  opt.pose_grad = pose_grad;
  opt.threads = cfg.threads;
  return opt;
}

/// Union of keyframe reservoirs with owners set to keyframe slots.
inline RayBundle reservoir_union(const std::vector<Keyframe> &kfs)
{
  RayBundle all;
  all.dir_cam.resize(3, 0);
  all.gt_color.resize(3, 0);
  all.gt_depth.resize(0);
  for (size_t i = 0; i < kfs.size(); ++i)
  {
    RayBundle b = kfs[i].reservoir;
    std::fill(b.owner.begin(), b.owner.end(), static_cast<int>(i));
    all.append(b);
  }
  return all;
}

/// Joint optimization of the field and every keyframe pose except the first (gauge).
inline GbaStats global_ba(MapperState &st, std::vector<Keyframe> &kfs, const TrackerConfig &cfg, int iters, uint64_t round)
{
  GbaStats stats;
  if (kfs.empty())
    throw usage_error("global_ba: no keyframes");
  if (iters <= 0)
    return stats;
  while (st.kf_adams.size() < kfs.size())
    st.kf_adams.emplace_back(cfg.gba_pose_opt);
  const RayBundle all = reservoir_union(kfs);
  const bool pose_grad = kfs.size() > 1;
  ObjectiveOptions opt = mapping_options(cfg, pose_grad);
  for (const auto &kf : kfs)
    opt.audit_masks.push_back(&kf.mask);
  Rng rng(derive_seed(cfg.seed, 3, round));
  for (int it = 0; it < iters; ++it)
  {
    const RayBundle rays = subsample(all, static_cast<size_t>(cfg.gba_rays), rng);
    std::vector<PoseSE3> poses;
    for (const auto &kf : kfs)
      poses.push_back(kf.pose);
    const BundleSamples smp = sample_bundle(rays, poses, cfg.sampling, st.field.grid.bounds_min, st.field.grid.bounds_max,
                                            derive_seed(cfg.seed, 4, round, static_cast<uint64_t>(it)));
    ObjectiveResult r = render_objective(st.field, rays, smp, poses, opt);
    stats.dynamic_reads += r.dynamic_reads;
    if (r.degenerate())
    {
      ++stats.degenerate_batches;
      continue;
    }
    stats.last_loss = r.total;
    stats.last_terms = r.terms;
    st.field_adam.step(st.field.w.data, r.field_grad.data);
    if (pose_grad)
      for (size_t i = 1; i < kfs.size(); ++i)
        st.kf_adams[i].step(kfs[i].pose, r.pose_grad[i]);
  }
  return stats;
}

/// Field-only fitting on fresh rays of one frame at a fixed pose.
inline GbaStats map_frame(MapperState &st, const Frame &f, const BinaryMask &mask, const PoseSE3 &pose, const Intrinsics &k,
                          const TrackerConfig &cfg, int iters)
{
  GbaStats stats;
  ObjectiveOptions opt = mapping_options(cfg, false);
  opt.audit_masks = {&mask};
  const std::vector<PoseSE3> poses{pose};
  for (int it = 0; it < iters; ++it)
  {
    const uint64_t s = derive_seed(cfg.seed, 5, static_cast<uint64_t>(f.id), static_cast<uint64_t>(it));
    const RayBundle rays = sample_bundle_pixels(f, mask, static_cast<size_t>(cfg.n_rays), s, k, 0);
    const BundleSamples smp = sample_bundle(rays, poses, cfg.sampling, st.field.grid.bounds_min, st.field.grid.bounds_max, s + 1);
    ObjectiveResult r = render_objective(st.field, rays, smp, poses, opt);
    stats.dynamic_reads += r.dynamic_reads;
    if (r.degenerate())
    {
      ++stats.degenerate_batches;
      continue;
    }
    stats.last_loss = r.total;
    stats.last_terms = r.terms;
    st.field_adam.step(st.field.w.data, r.field_grad.data);
  }
  return stats;
}

struct FrameReport
{
  int frame_id = 0;
  bool keyframe = false;
  std::string method;
  double edge_loss = 0;
  size_t edge_used = 0;
  double render_loss = 0;
  LossTerms terms;
  double map_loss = 0;
  bool edge_degraded = false;
  bool render_degraded = false;
  double millis = 0;

  std::string line() const
  {
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "frame=%d kf=%d method=%s edge_loss=%.6g edge_used=%zu render_loss=%.6g rgb=%.6g depth=%.6g fs=%.6g "
                  "sdf_m=%.6g sdf_t=%.6g map_loss=%.6g edge_degraded=%d render_degraded=%d ms=%.1f",
                  frame_id, keyframe ? 1 : 0, method.c_str(), edge_loss, edge_used, render_loss, terms.rgb, terms.depth,
                  terms.fs, terms.sdf_middle, terms.sdf_tail, map_loss, edge_degraded ? 1 : 0, render_degraded ? 1 : 0,
                  millis);
    return buf;
  }
};

struct SlamResult
{
  std::vector<TimedPose> trajectory;
  std::vector<uint8_t> is_keyframe;
  FieldParams field;
  std::map<int, BinaryMask> masks; // per keyframe id
  std::vector<FrameReport> report;
  std::vector<std::string> mask_log;
  size_t dynamic_reads = 0;
};

/// Online pipeline over a sequence: tracking frontend, keyframe insertion with motion masks,
/// and GBA after every insertion.
inline SlamResult run_system(const Sequence &seq, const FlowProvider &flows, const SegProvider &segs, const SlamConfig &cfg)
{
  cfg.validate();
  if (seq.frames.empty())
    throw usage_error("run_system: empty sequence");
  TrackerConfig tc = cfg.tracker;
  tc.sampling.tr = tc.trunc.tr;
  const Intrinsics &k = seq.intrinsics;
  const int w = k.width, h = k.height;

  MapperState st{FieldParams::create(cfg.grid, cfg.decoder, cfg.field_seed, cfg.sdf_bias), Adam(), {}};
  st.field_adam = Adam(st.field.w.data.size(), tc.field_opt);

  SlamResult out;
  std::vector<Keyframe> kfs;
  std::vector<int> kf_ids;
  std::vector<PoseSE3> poses(seq.frames.size());
  std::vector<std::pair<size_t, PoseSE3>> relative(seq.frames.size()); // (keyframe slot, T_kf^-1 T_i)
  MaskBuildLog mlog;

  for (size_t idx = 0; idx < seq.frames.size(); ++idx)
  {
    const auto t0 = std::chrono::steady_clock::now();
    const Frame &f = seq.frames[idx];
    if (!f.color.same_size(w, h) || !f.depth.same_size(w, h))
      throw data_error("frame " + std::to_string(f.id) + " does not match the intrinsics' image size");
    const bool is_kf = idx % static_cast<size_t>(tc.kf_interval) == 0;
    FrameReport rep;
    rep.frame_id = f.id;
    rep.keyframe = is_kf;
    PoseSE3 pose = idx == 0 ? PoseSE3() : poses[idx - 1];

    BinaryMask mask(w, h, 1, 0);
    if (is_kf)
    {
      kf_ids.push_back(f.id);
      std::vector<int> ids = kf_ids;
      if (idx == 0 && static_cast<size_t>(tc.kf_interval) < seq.frames.size())
        ids.push_back(seq.frames[static_cast<size_t>(tc.kf_interval)].id); // look-ahead for the first mask
      if (tc.use_masks)
        mask = build_keyframe_mask(ids, kf_ids.size() - 1, w, h, flows, segs, tc.mask, &mlog).mask;
    }
    else
      mask = kfs.back().mask;

    if (idx == 0)
    {
      rep.method = "init";
      kfs.push_back(insert_keyframe(f, static_cast<int>(idx), pose, mask, k, tc));
      const GbaStats g = map_frame(st, f, kfs.back().mask, pose, k, tc, tc.init_iters);
      out.dynamic_reads += g.dynamic_reads;
      rep.map_loss = g.last_loss;
      rep.terms = g.last_terms;
    }
    else
    {
      const Keyframe &ref = kfs.back();
      const bool use_edges = tc.mode != TrackerMode::render_only;
      const bool use_render = tc.mode == TrackerMode::render_only || (is_kf && tc.mode == TrackerMode::edge_render);
      if (use_edges)
      {
        const EdgeSet e = canny_edges(to_gray(f.color), tc.canny, f.id);
        const EdgeTrackResult er = track_edges(e.pixels, f.depth, ref.dt, ref.mask, mask, ref.pose.inverse() * pose, k,
                                               tc.edge, tc.edge_opt, tc.edge_iters, tc.threads);
        rep.edge_loss = er.loss;
        rep.edge_used = er.used;
        rep.edge_degraded = er.degraded;
        pose = ref.pose * er.t_ji;
      }
      if (use_render)
      {
        const RenderTrackResult rr = track_render(st.field, f, mask, pose, k, tc);
        out.dynamic_reads += rr.dynamic_reads;
        rep.render_loss = rr.loss;
        rep.terms = rr.terms;
        rep.render_degraded = rr.degraded;
        pose = rr.pose;
      }
      rep.method = use_edges && use_render ? "edge+render" : use_edges ? "edge" : "render";
      if (is_kf)
      {
        kfs.push_back(insert_keyframe(f, static_cast<int>(idx), pose, mask, k, tc));
        const GbaStats g = global_ba(st, kfs, tc, tc.gba_iters, kfs.size());
        out.dynamic_reads += g.dynamic_reads;
        rep.map_loss = g.last_loss;
        pose = kfs.back().pose;
      }
    }
    poses[idx] = pose;
    relative[idx] = {kfs.size() - 1, kfs.back().pose.inverse() * pose};
    // GBA may have moved earlier keyframes; refresh the latest estimate chain.
    for (size_t j = 0; j <= idx; ++j)
      poses[j] = kfs[relative[j].first].pose * relative[j].second;
    rep.millis = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    out.report.push_back(rep);
    out.is_keyframe.push_back(is_kf);
  }

  for (size_t i = 0; i < seq.frames.size(); ++i)
    out.trajectory.push_back({seq.frames[i].timestamp, poses[i]});
  for (const auto &kf : kfs)
    out.masks[kf.frame_id] = kf.mask;
  out.field = std::move(st.field);
  out.mask_log = std::move(mlog.lines);
  return out;
}

} // namespace dynslam
