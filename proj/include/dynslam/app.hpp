#pragma once

#include <filesystem>
#include <fstream>
#include <memory>

#include "dynslam/config.hpp"
#include "dynslam/dataio.hpp"
#include "dynslam/eval.hpp"
#include "dynslam/field.hpp"
#include "dynslam/keyvalue.hpp"
#include "dynslam/motionmask.hpp"
#include "dynslam/slam.hpp"

namespace dynslam
{

/// A loaded sequence plus on-demand access to flows and segmentation priors.
struct Dataset
{
  Sequence seq;
  FlowProvider flows;
  SegProvider segs;
  std::vector<BinaryMask> gt_masks; // synthetic only
  std::shared_ptr<const SyntheticScene> scene;
};

inline FlowProvider disk_flow_provider(const Sequence &seq)
{
  auto paths = seq.flow_paths;
  return [paths](int src, int dst) -> std::optional<FlowField> {
    auto it = paths.find({src, dst});
    if (it == paths.end())
      return std::nullopt;
    return load_flow(it->second);
  };
}

inline SegProvider disk_seg_provider(const Sequence &seq)
{
  auto paths = seq.seg_paths;
  const int w = seq.intrinsics.width, h = seq.intrinsics.height;
  return [paths, w, h](int id) -> std::optional<BinaryMask> {
    auto it = paths.find(id);
    if (it == paths.end())
      return std::nullopt;
    return load_seg_mask(it->second, w, h);
  };
}

inline SyntheticSceneSpec load_synthetic_spec(const fs::path &path)
{
  if (!fs::exists(path))
    throw usage_error("synthetic spec not found: " + path.string());
  SyntheticSceneSpec s = SyntheticSceneSpec::from_keyvalue(KeyValueFile::load(path));
  s.validate();
  return s;
}

/// Synthetic data in memory; flows come from the scene model, no segmentation prior.
inline Dataset synthetic_dataset(const SyntheticSceneSpec &spec)
{
  Dataset d;
  SyntheticSequence syn = generate_synthetic_sequence(spec);
  d.seq = std::move(syn.sequence);
  d.gt_masks = std::move(syn.gt_dynamic_masks);
  d.scene = std::make_shared<const SyntheticScene>(spec);
  auto scene = d.scene;
  d.flows = [scene](int src, int dst) -> std::optional<FlowField> { return synthetic_flow(*scene, src, dst); };
  return d;
}

inline Dataset load_dataset(const RunConfig &cfg)
{
  if (cfg.dataset_type == "synthetic")
  {
    if (cfg.synthetic_spec.empty())
      throw usage_error("dataset.synthetic_spec is required for dataset.type = synthetic");
    return synthetic_dataset(load_synthetic_spec(cfg.synthetic_spec));
  }
  if (cfg.dataset_root.empty())
    throw usage_error("dataset.root is required for dataset.type = tum");
  if (!fs::is_directory(cfg.dataset_root))
    throw usage_error("dataset path does not exist: " + cfg.dataset_root.string());
  Dataset d;
  d.seq = load_tum_sequence(cfg.dataset_root, cfg.intrinsics, {cfg.max_dt, cfg.flow_dir, cfg.seg_dir});
  d.flows = disk_flow_provider(d.seq);
  d.segs = disk_seg_provider(d.seq);
  return d;
}

inline fs::path mask_filename(int id)
{
  char buf[64];
  std::snprintf(buf, sizeof buf, "mask_%06d.png", id);
  return buf;
}

/// Writes trajectory, checkpoint, masks, report and the resolved config into `out`.
inline void write_run_outputs(const fs::path &out, const SlamResult &r, const Dataset &d, RunConfig cfg)
{
  fs::create_directories(out / "masks");
  write_tum_trajectory(out / "trajectory.txt", r.trajectory);
  save_checkpoint(out / "checkpoint.bin", r.field);
  for (const auto &[id, m] : r.masks)
    save_mask_png(out / "masks" / mask_filename(id), m);
  {
    std::ofstream f(out / "config_resolved.txt");
    f << "# fully resolved configuration\n" << cfg.to_keyvalue().to_string();
  }
  std::ofstream rep(out / "report.txt");
  for (const auto &fr : r.report)
    rep << fr.line() << "\n";
  for (const auto &l : r.mask_log)
    rep << "mask_note " << l << "\n";
  rep << "dynamic_pixel_reads " << r.dynamic_reads << "\n";
  if (!d.seq.gt_trajectory.empty() && r.trajectory.size() >= 3)
  {
    try
    {
      const AlignedATE a = ate(r.trajectory, d.seq.gt_trajectory, cfg.max_dt);
      rep << "ate_rmse " << format_double(a.rmse) << "\nate_std " << format_double(a.std) << "\nate_pairs " << a.pairs << "\n";
    }
    catch (const Error &e)
    {
      rep << "ate_unavailable " << e.what() << "\n";
    }
  }
}

} // namespace dynslam
