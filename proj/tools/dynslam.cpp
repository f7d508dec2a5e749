#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dynslam/app.hpp"

using namespace dynslam;

namespace
{

RunConfig load_run_config(const std::string &path, const std::vector<std::string> &overrides, int threads)
{
  RunConfig cfg;
  if (!path.empty())
  {
    if (!fs::exists(path))
      throw usage_error("config file not found: " + path);
    cfg.apply(KeyValueFile::load(path), fs::path(path).parent_path());
  }
  KeyValueFile extra;
  for (const auto &o : overrides)
  {
    const auto eq = o.find('=');
    if (eq == std::string::npos)
      throw usage_error("--set expects key=value, got `" + o + "`");
    extra.set(o.substr(0, eq), o.substr(eq + 1));
  }
  cfg.apply(extra);
  if (threads > 0)
    cfg.slam.tracker.threads = threads;
  cfg.finalize();
  return cfg;
}

std::string defaults_help()
{
  RunConfig c;
  return "Config keys and defaults:\n" + c.to_keyvalue().to_string();
}

int cmd_run(const std::string &config, const std::vector<std::string> &sets, int threads)
{
  RunConfig cfg = load_run_config(config, sets, threads);
  Dataset d = load_dataset(cfg);
  std::fprintf(stderr, "running on %zu frames (%dx%d)\n", d.seq.size(), d.seq.intrinsics.width, d.seq.intrinsics.height);
  const SlamResult r = run_system(d.seq, d.flows, d.segs, cfg.slam);
  write_run_outputs(cfg.output_dir, r, d, cfg);
  std::printf("wrote %s\n", cfg.output_dir.string().c_str());
  return 0;
}

int cmd_synth(const std::string &spec_path, const std::string &out, int stride, int window)
{
  const SyntheticSceneSpec spec = load_synthetic_spec(spec_path);
  const SyntheticSequence syn = generate_synthetic_sequence(spec);
  write_synthetic_dataset(out, spec, syn, stride, window);
  write_ply_points(fs::path(out) / "gt_cloud.ply", synthetic_room_cloud(spec));
  std::printf("frames %zu\n", syn.sequence.size());
  return 0;
}

int cmd_eval_ate(const std::string &est, const std::string &gt, double max_dt)
{
  for (const auto &p : {est, gt})
    if (!fs::exists(p))
      throw usage_error("trajectory file not found: " + p);
  const AlignedATE a = ate(read_tum_trajectory(est), read_tum_trajectory(gt), max_dt);
  std::printf("rmse %.9f\nstd %.9f\nmean %.9f\npairs %zu\n", a.rmse, a.std, a.mean, a.pairs);
  return 0;
}

int cmd_mesh(const std::string &ckpt, const std::string &out, double voxel, const std::vector<double> &bmin,
             const std::vector<double> &bmax, int threads)
{
  if (!fs::exists(ckpt))
    throw usage_error("checkpoint not found: " + ckpt);
  const FieldParams p = load_checkpoint(ckpt);
  Eigen::Vector3d lo = p.grid.bounds_min, hi = p.grid.bounds_max;
  if (bmin.size() == 3)
    lo = {bmin[0], bmin[1], bmin[2]};
  if (bmax.size() == 3)
    hi = {bmax[0], bmax[1], bmax[2]};
  const Mesh m = extract_field_mesh(p, MeshGrid::make(lo, hi, voxel), threads);
  write_ply(out, m);
  std::printf("vertices %zu\ntriangles %zu\nempty %d\n", m.vertices.size(), m.triangles.size(), m.empty_surface ? 1 : 0);
  return 0;
}

int cmd_eval_recon(const std::string &mesh_path, const std::string &gt_path, size_t samples, double thresh, uint64_t seed,
                   int threads)
{
  const Mesh mesh = read_ply(mesh_path);
  const Mesh gt = read_ply(gt_path);
  const ReconMetrics m = recon_metrics(mesh, gt.vertices, samples, thresh, seed, threads);
  std::printf("accuracy_cm %.6f\ncompletion_cm %.6f\ncompletion_ratio_pct %.4f\n", 100 * m.accuracy, 100 * m.completion,
              m.completion_ratio);
  return 0;
}

int cmd_mask(const std::string &config, const std::vector<std::string> &sets, const std::string &out_dir)
{
  RunConfig cfg = load_run_config(config, sets, 0);
  const Dataset d = load_dataset(cfg);
  const auto &t = cfg.slam.tracker;
  std::vector<int> kfs;
  for (const auto &f : d.seq.frames)
    if (f.id % t.kf_interval == 0)
      kfs.push_back(f.id);
  MaskBuildLog log;
  const auto masks = build_masks_for_keyframes(kfs, d.seq.intrinsics.width, d.seq.intrinsics.height, d.flows, d.segs, t.mask, &log);
  const fs::path out = out_dir.empty() ? cfg.output_dir / "masks" : fs::path(out_dir);
  fs::create_directories(out);
  for (const auto &[id, m] : masks)
    save_mask_png(out / mask_filename(id), m.mask);
  for (const auto &l : log.lines)
    std::fprintf(stderr, "%s\n", l.c_str());
  std::printf("masks %zu\n", masks.size());
  return 0;
}

} // namespace

int main(int argc, char **argv)
{
  CLI::App app{"Dense RGB-D SLAM with motion masks on a neural implicit map"};
  app.require_subcommand(1);

  std::string config, out, spec, est, gt, ckpt, mesh_path;
  std::vector<std::string> sets;
  int threads = 0, stride = 5, window = 4;
  double max_dt = 0.02, voxel = 0.02, thresh = 0.05;
  size_t samples = 200000;
  uint64_t seed = 0;
  std::vector<double> bmin, bmax;

  auto *run = app.add_subcommand("run", "Track and map a sequence; writes trajectory, checkpoint, masks, report and resolved config");
  run->add_option("-c,--config", config, "Run configuration (key = value)")->required();
  run->add_option("--set", sets, "Override a config key: key=value (repeatable)");
  run->add_option("--threads", threads, "Worker threads (1 = reference mode)");
  run->footer(defaults_help());

  auto *synth = app.add_subcommand("synth", "Render a synthetic dataset in TUM layout");
  synth->add_option("-s,--spec", spec, "Scene description")->required();
  synth->add_option("-o,--out", out, "Output directory")->required();
  synth->add_option("--flow-stride", stride, "Keyframe stride for flow pairs")->capture_default_str();
  synth->add_option("--flow-window", window, "Prior keyframes per flow source")->capture_default_str();

  auto *eate = app.add_subcommand("eval-ate", "Aligned absolute trajectory error");
  eate->add_option("--est", est, "Estimated trajectory (TUM)")->required();
  eate->add_option("--gt", gt, "Ground-truth trajectory (TUM)")->required();
  eate->add_option("--max-dt", max_dt, "Timestamp association tolerance (s)")->capture_default_str();

  auto *mesh = app.add_subcommand("mesh", "Extract a mesh from a field checkpoint");
  mesh->add_option("--checkpoint", ckpt, "Field checkpoint")->required();
  mesh->add_option("-o,--out", out, "Output PLY")->required();
  mesh->add_option("--voxel", voxel, "Grid spacing (m)")->capture_default_str();
  mesh->add_option("--bounds-min", bmin, "Grid lower corner (defaults to the field bounds)")->expected(3);
  mesh->add_option("--bounds-max", bmax, "Grid upper corner (defaults to the field bounds)")->expected(3);
  mesh->add_option("--threads", threads, "Worker threads");

  auto *erec = app.add_subcommand("eval-recon", "Accuracy / completion / completion ratio of a mesh");
  erec->add_option("--mesh", mesh_path, "Reconstructed mesh (ASCII PLY)")->required()->check(CLI::ExistingFile);
  erec->add_option("--gt", gt, "Ground-truth point cloud (ASCII PLY)")->required()->check(CLI::ExistingFile);
  erec->add_option("--samples", samples, "Samples per side")->capture_default_str();
  erec->add_option("--thresh", thresh, "Completion-ratio threshold (m)")->capture_default_str();
  erec->add_option("--seed", seed, "Sampling seed")->capture_default_str();
  erec->add_option("--threads", threads, "Worker threads");

  auto *mask = app.add_subcommand("mask", "Compute keyframe motion masks for a dataset");
  mask->add_option("-c,--config", config, "Run configuration")->required();
  mask->add_option("--set", sets, "Override a config key: key=value (repeatable)");
  mask->add_option("-o,--out", out, "Output directory (default: <output.dir>/masks)");

  try
  {
    app.parse(argc, argv);
  }
  catch (const CLI::ParseError &e)
  {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try
  {
    if (*run)
      return cmd_run(config, sets, threads);
    if (*synth)
      return cmd_synth(spec, out, stride, window);
    if (*eate)
      return cmd_eval_ate(est, gt, max_dt);
    if (*mesh)
      return cmd_mesh(ckpt, out, voxel, bmin, bmax, std::max(threads, 1));
    if (*erec)
      return cmd_eval_recon(mesh_path, gt, samples, thresh, seed, std::max(threads, 1));
    if (*mask)
      return cmd_mask(config, sets, out);
  }
  catch (const Error &e)
  {
    std::fprintf(stderr, "error: %s\n", e.what());
    return static_cast<int>(e.kind());
  }
  catch (const std::exception &e)
  {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  }
  return 2;
}
