#pragma once

#include <filesystem>
#include <set>
#include <string>

#include "dynslam/core.hpp"
#include "dynslam/keyvalue.hpp"
#include "dynslam/slam.hpp"

namespace dynslam
{

inline std::string to_string(SdfTarget t) { return t == SdfTarget::standard_tsdf ? "standard_tsdf" : "paper_literal"; }

inline SdfTarget sdf_target_from_string(const std::string &s)
{
  if (s == "standard_tsdf")
    return SdfTarget::standard_tsdf;
  if (s == "paper_literal")
    return SdfTarget::paper_literal;
  throw usage_error("unknown sdf_target '" + s + "' (expected standard_tsdf or paper_literal)");
}

/// Everything a run needs. Every field has a default; `visit` enumerates the config keys.
struct RunConfig
{
  std::string dataset_type = "tum"; // tum | synthetic
  fs::path dataset_root;            // tum layout (also used for synthetic datasets written to disk)
  fs::path synthetic_spec;          // synthetic scene description
  double max_dt = 0.02;
  std::string flow_dir = "flows";
  std::string seg_dir = "seg";
  Intrinsics intrinsics{525.0, 525.0, 319.5, 239.5, 640, 480, 5000.0};
  fs::path output_dir = "out";
  double mesh_voxel = 0.02;
  double cull_margin = 0.05;
  SlamConfig slam;

  template <typename Fn>
  void visit(Fn &&f)
  {
    auto &t = slam.tracker;
    f("dataset.type", dataset_type);
    f("dataset.root", dataset_root);
    f("dataset.synthetic_spec", synthetic_spec);
    f("dataset.max_dt", max_dt);
    f("dataset.flow_dir", flow_dir);
    f("dataset.seg_dir", seg_dir);
    f("camera.fx", intrinsics.fx);
    f("camera.fy", intrinsics.fy);
    f("camera.cx", intrinsics.cx);
    f("camera.cy", intrinsics.cy);
    f("camera.width", intrinsics.width);
    f("camera.height", intrinsics.height);
    f("camera.depth_scale", intrinsics.depth_scale);
    f("output.dir", output_dir);
    f("mesh.voxel", mesh_voxel);
    f("mesh.cull_margin", cull_margin);

    f("grid.levels", slam.grid.levels);
    f("grid.r_min", slam.grid.r_min);
    f("grid.r_max", slam.grid.r_max);
    f("grid.log2_table", slam.grid.log2_table);
    f("grid.feat_dim", slam.grid.feat_dim);
    f("grid.bounds_min", slam.grid.bounds_min);
    f("grid.bounds_max", slam.grid.bounds_max);
    f("decoder.hidden", slam.decoder.hidden);
    f("decoder.feature_dim", slam.decoder.feature_dim);
    f("decoder.blob_bins", slam.decoder.blob_bins);
    f("field.sdf_bias", slam.sdf_bias);
    f("field.seed", slam.field_seed);

    f("tracker.mode", t.mode);
    f("tracker.use_masks", t.use_masks);
    f("tracker.seed", t.seed);
    f("tracker.threads", t.threads);
    f("tracker.n_rays", t.n_rays);
    f("tracker.n_samples", t.sampling.n_samples);
    f("tracker.surface_fraction", t.sampling.surface_fraction);
    f("tracker.near", t.sampling.near);
    f("tracker.far", t.sampling.far);
    f("tracker.weight_tr", t.weight_tr);
    f("tracker.track_iters", t.track_iters);
    f("tracker.edge_iters", t.edge_iters);
    f("tracker.init_iters", t.init_iters);
    f("tracker.gba_iters", t.gba_iters);
    f("tracker.gba_rays", t.gba_rays);
    f("tracker.kf_interval", t.kf_interval);
    f("tracker.reservoir", t.reservoir);

    f("optim.field_lr", t.field_opt.lr);
    f("optim.pose_lr", t.pose_opt.lr);
    f("optim.edge_lr", t.edge_opt.lr);
    f("optim.gba_pose_lr", t.gba_pose_opt.lr);
    f("optim.beta1", t.field_opt.beta1);
    f("optim.beta2", t.field_opt.beta2);
    f("optim.eps", t.field_opt.eps);

    f("loss.rgb", t.weights.rgb);
    f("loss.depth", t.weights.depth);
    f("loss.fs", t.weights.fs);
    f("loss.sdf_middle", t.weights.sdf_middle);
    f("loss.sdf_tail", t.weights.sdf_tail);
    f("loss.edge", t.weights.edge);

    f("trunc.tr", t.trunc.tr);
    f("trunc.middle_ratio", t.trunc.middle_ratio);
    f("trunc.track_middle_w", t.trunc.track_middle_w);
    f("trunc.track_tail_w", t.trunc.track_tail_w);
    f("trunc.map_middle_w", t.trunc.map_middle_w);
    f("trunc.map_tail_w", t.trunc.map_tail_w);
    f("trunc.sdf_target", t.trunc.target);

    f("edge.huber_delta", t.edge.huber_delta);
    f("edge.outlier_px", t.edge.outlier_px);
    f("edge.skip_source_dynamic", t.edge.skip_source_dynamic);
    f("canny.sigma", t.canny.sigma);
    f("canny.kernel", t.canny.kernel);
    f("canny.low", t.canny.low);
    f("canny.high", t.canny.high);

    f("mask.e_th", t.mask.e_th);
    f("mask.o_th", t.mask.o_th);
    f("mask.window", t.mask.window);
    f("mask.dilate", t.mask.dilate);
    f("mask.match_stride", t.mask.match_stride);
    f("mask.bootstrap_forward", t.mask.bootstrap_forward);
    f("mask.ransac_iters", t.mask.ransac.iters);
    f("mask.ransac_thresh", t.mask.ransac.inlier_thresh_px);
    f("mask.ransac_seed", t.mask.ransac.seed);
  }

  /// Copies the shared Adam moments settings to every optimizer and checks ranges.
  void finalize()
  {
    auto &t = slam.tracker;
    for (AdamConfig *a : {&t.pose_opt, &t.edge_opt, &t.gba_pose_opt})
    {
      a->beta1 = t.field_opt.beta1;
      a->beta2 = t.field_opt.beta2;
      a->eps = t.field_opt.eps;
    }
    t.sampling.tr = t.trunc.tr;
    if (dataset_type != "tum" && dataset_type != "synthetic")
      throw usage_error("dataset.type must be `tum` or `synthetic`, got `" + dataset_type + "`");
    if (!(mesh_voxel > 0) || !(cull_margin >= 0))
      throw usage_error("mesh.voxel must be positive and mesh.cull_margin non-negative");
    if (!(max_dt > 0))
      throw usage_error("dataset.max_dt must be positive");
    if (dataset_type == "tum")
      intrinsics.validate();
    slam.validate();
  }

  /// Applies `key = value` entries. Relative paths resolve against `base`. Unknown keys are rejected.
  void apply(const KeyValueFile &kv, const fs::path &base = {})
  {
    std::set<std::string> known;
    visit([&](const char *key, auto &field) {
      known.insert(key);
      const std::string *v = kv.find(key);
      if (!v)
        return;
      using T = std::decay_t<decltype(field)>;
      if constexpr (std::is_same_v<T, Eigen::Vector3d>)
        field = KeyValueFile::vec3(key, *v);
      else if constexpr (std::is_same_v<T, TrackerMode>)
        field = tracker_mode_from_string(*v);
      else if constexpr (std::is_same_v<T, SdfTarget>)
        field = sdf_target_from_string(*v);
      else if constexpr (std::is_same_v<T, fs::path>)
        field = v->empty() || base.empty() || fs::path(*v).is_absolute() ? fs::path(*v) : base / *v;
      else
        field = KeyValueFile::convert<T>(key, *v);
    });
    for (const auto &[k, v] : kv.entries())
      if (!known.count(k))
        throw usage_error("unknown config key `" + k + "`");
  }

  /// Fully resolved configuration; loading it back reproduces this object.
  KeyValueFile to_keyvalue()
  {
    KeyValueFile kv;
    visit([&](const char *key, auto &field) {
      using T = std::decay_t<decltype(field)>;
      if constexpr (std::is_same_v<T, Eigen::Vector3d>)
        kv.add(key, format_vec3(field));
      else if constexpr (std::is_same_v<T, TrackerMode> || std::is_same_v<T, SdfTarget>)
        kv.add(key, to_string(field));
      else if constexpr (std::is_same_v<T, fs::path>)
        kv.add(key, field.empty() ? std::string() : fs::absolute(field).lexically_normal().string());
      else if constexpr (std::is_same_v<T, std::string>)
        kv.add(key, field);
      else if constexpr (std::is_same_v<T, bool>)
        kv.add(key, field ? "true" : "false");
      else if constexpr (std::is_floating_point_v<T>)
        kv.add(key, format_double(field));
      else
        kv.add(key, std::to_string(field));
    });
    return kv;
  }

  static RunConfig load(const fs::path &path)
  {
    RunConfig c;
    c.apply(KeyValueFile::load(path), path.parent_path());
    c.finalize();
    return c;
  }
};

} // namespace dynslam
