#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "dynslam/app.hpp"
#include "helpers.hpp"

using namespace dynslam;
namespace fs = std::filesystem;

namespace
{

struct CliResult
{
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path &p)
{
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

CliResult cli(const std::string &args, const fs::path &scratch)
{
  const fs::path o = scratch / "stdout.txt", e = scratch / "stderr.txt";
  const std::string cmd = std::string("'") + DYNSLAM_CLI + "' " + args + " > '" + o.string() + "' 2> '" + e.string() + "'";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(o);
  r.err = slurp(e);
  return r;
}

void write_text(const fs::path &p, const std::string &text)
{
  std::ofstream(p) << text;
}

/// Tiny dynamic scene plus a fast run configuration, written into a scratch directory.
class CliFixture : public ::testing::Test
{
protected:
  void SetUp() override
  {
    dir_ = testutil::temp_dir(std::string("cli_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    write_text(dir_ / "scene.txt", "room.half_extents = 2.0 1.5 2.0\n"
                                   "camera.fx = 52\ncamera.fy = 52\ncamera.cx = 31.5\ncamera.cy = 23.5\n"
                                   "camera.width = 64\ncamera.height = 48\nsupersample = 1\n"
                                   "trajectory.frames = 3\n"
                                   "trajectory.waypoint = -0.3 0.0 -0.8 -0.2 0.65 0.0\n"
                                   "trajectory.waypoint = -0.26 0.0 -0.78 -0.2 0.66 0.0\n"
                                   "sphere.radius = 0.3\n"
                                   "sphere.waypoint = 0.5 -0.15 0.85\nsphere.waypoint = 0.6 -0.1 0.8\n");
    write_text(dir_ / "run.txt", "dataset.type = synthetic\ndataset.synthetic_spec = scene.txt\noutput.dir = out\n"
                                 "grid.bounds_min = -3.2 -2.2 -2.3\ngrid.bounds_max = 2.7 1.9 3.9\n"
                                 "grid.levels = 4\ngrid.r_min = 4\ngrid.r_max = 32\ngrid.log2_table = 12\n"
                                 "decoder.hidden = 16\n"
                                 "tracker.n_rays = 64\ntracker.n_samples = 16\ntracker.track_iters = 5\n"
                                 "tracker.edge_iters = 20\ntracker.init_iters = 10\ntracker.gba_iters = 3\n"
                                 "tracker.gba_rays = 64\ntracker.kf_interval = 2\ntracker.reservoir = 256\n");
  }

  fs::path dir_;
};

} // namespace

TEST_F(CliFixture, RunWritesAllArtifacts)
{
  const CliResult r = cli("run -c '" + (dir_ / "run.txt").string() + "'", dir_);
  ASSERT_EQ(r.code, 0) << r.err;
  const fs::path out = dir_ / "out";
  for (const char *f : {"trajectory.txt", "checkpoint.bin", "report.txt", "config_resolved.txt"})
    EXPECT_TRUE(fs::is_regular_file(out / f)) << f;
  ASSERT_TRUE(fs::is_directory(out / "masks"));
  EXPECT_TRUE(fs::is_regular_file(out / "masks" / "mask_000000.png"));
  EXPECT_TRUE(fs::is_regular_file(out / "masks" / "mask_000002.png"));
  EXPECT_EQ(read_tum_trajectory(out / "trajectory.txt").size(), 3u);
  EXPECT_NE(slurp(out / "report.txt").find("ate_rmse"), std::string::npos);
  EXPECT_NO_THROW(load_checkpoint(out / "checkpoint.bin"));
}

TEST_F(CliFixture, RepeatedRunsAndResolvedConfigReproduceOutputs)
{
  const std::string cfg = (dir_ / "run.txt").string();
  ASSERT_EQ(cli("run -c '" + cfg + "' --set output.dir=" + (dir_ / "a").string(), dir_).code, 0);
  ASSERT_EQ(cli("run -c '" + cfg + "' --set output.dir=" + (dir_ / "b").string(), dir_).code, 0);
  ASSERT_EQ(cli("run -c '" + (dir_ / "a" / "config_resolved.txt").string() + "' --set output.dir=" + (dir_ / "c").string(), dir_).code, 0);
  ASSERT_EQ(cli("run -c '" + cfg + "' --threads 3 --set output.dir=" + (dir_ / "d").string(), dir_).code, 0);
  const std::string a = slurp(dir_ / "a" / "trajectory.txt");
  ASSERT_FALSE(a.empty());
  for (const char *other : {"b", "c", "d"})
  {
    EXPECT_EQ(slurp(dir_ / other / "trajectory.txt"), a) << other;
    EXPECT_EQ(slurp(dir_ / other / "checkpoint.bin"), slurp(dir_ / "a" / "checkpoint.bin")) << other;
    EXPECT_EQ(slurp(dir_ / other / "masks" / "mask_000002.png"), slurp(dir_ / "a" / "masks" / "mask_000002.png")) << other;
  }
}

TEST_F(CliFixture, MissingDatasetExitsWithUsageCode)
{
  const std::string missing = (dir_ / "no_such_sequence").string();
  write_text(dir_ / "tum.txt", "dataset.type = tum\ndataset.root = " + missing + "\n");
  const CliResult r = cli("run -c '" + (dir_ / "tum.txt").string() + "'", dir_);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find(missing), std::string::npos) << r.err;

  const CliResult c = cli("run -c '" + (dir_ / "absent.txt").string() + "'", dir_);
  EXPECT_EQ(c.code, 2);
  EXPECT_NE(c.err.find("absent.txt"), std::string::npos);

  EXPECT_EQ(cli("run -c '" + (dir_ / "run.txt").string() + "' --set tracker.bogus=1", dir_).code, 2);
  EXPECT_EQ(cli("frobnicate", dir_).code, 2);
}

TEST_F(CliFixture, SynthWritesReloadableDataset)
{
  const CliResult r =
      cli("synth --flow-stride 1 -s '" + (dir_ / "scene.txt").string() + "' -o '" + (dir_ / "ds").string() + "'", dir_);
  ASSERT_EQ(r.code, 0) << r.err;
  const Intrinsics k{52, 52, 31.5, 23.5, 64, 48, 5000};
  const Sequence seq = load_tum_sequence(dir_ / "ds", k);
  EXPECT_EQ(seq.size(), 3u);
  EXPECT_EQ(seq.gt_trajectory.size(), 3u);
  EXPECT_FALSE(seq.flow_paths.empty());
  size_t masks = 0;
  for (const auto &e : fs::directory_iterator(dir_ / "ds" / "gt_masks"))
    masks += e.path().extension() == ".png";
  EXPECT_EQ(masks, seq.size());
  EXPECT_TRUE(fs::is_regular_file(dir_ / "ds" / "gt_cloud.ply"));

  ASSERT_EQ(cli("synth --flow-stride 1 -s '" + (dir_ / "scene.txt").string() + "' -o '" + (dir_ / "ds2").string() + "'", dir_).code,
            0);
  size_t files = 0;
  for (const auto &e : fs::recursive_directory_iterator(dir_ / "ds"))
  {
    if (!e.is_regular_file())
      continue;
    ++files;
    const fs::path twin = dir_ / "ds2" / fs::relative(e.path(), dir_ / "ds");
    ASSERT_EQ(slurp(e.path()), slurp(twin)) << e.path();
  }
  EXPECT_GT(files, 10u);
}

TEST_F(CliFixture, SynthRejectsInvalidSpec)
{
  write_text(dir_ / "bad.txt", "room.half_extents = 1 1 1\ntrajectory.waypoint = 5 0 0 0 0 0\n");
  const CliResult r = cli("synth -s '" + (dir_ / "bad.txt").string() + "' -o '" + (dir_ / "x").string() + "'", dir_);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("outside the room"), std::string::npos);
}

TEST_F(CliFixture, EvalAteOnIdenticalFilesPrintsZero)
{
  std::vector<TimedPose> traj;
  for (int i = 0; i < 5; ++i)
    traj.push_back({0.1 * i, PoseSE3::from_rt(Eigen::Matrix3d::Identity(), {0.1 * i, 0.02 * i * i, 0})});
  write_tum_trajectory(dir_ / "t.txt", traj);
  const std::string t = (dir_ / "t.txt").string();
  const CliResult r = cli("eval-ate --est '" + t + "' --gt '" + t + "'", dir_);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("rmse 0.000000000\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("pairs 5"), std::string::npos);
  EXPECT_EQ(cli("eval-ate --est '" + t + "' --gt '" + (dir_ / "none.txt").string() + "'", dir_).code, 2);
}

TEST_F(CliFixture, MeshOnSphereCheckpointIsNonempty)
{
  save_checkpoint(dir_ / "sphere.bin", testutil::sphere_field(0.6));
  const CliResult r =
      cli("mesh --checkpoint '" + (dir_ / "sphere.bin").string() + "' -o '" + (dir_ / "s.ply").string() + "' --voxel 0.05", dir_);
  ASSERT_EQ(r.code, 0) << r.err;
  const Mesh m = read_ply(dir_ / "s.ply");
  ASSERT_GT(m.triangles.size(), 100u);
  for (const auto &v : m.vertices)
    ASSERT_NEAR(v.norm(), 0.6, 0.025);
  EXPECT_NE(r.out.find("empty 0"), std::string::npos);

  const CliResult e = cli("eval-recon --mesh '" + (dir_ / "s.ply").string() + "' --gt '" + (dir_ / "s.ply").string() +
                              "' --samples 2000",
                          dir_);
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_NE(e.out.find("completion_ratio_pct"), std::string::npos);
}

TEST_F(CliFixture, MaskWithoutFlowsEqualsSegmentation)
{
  ASSERT_EQ(cli("synth -s '" + (dir_ / "scene.txt").string() + "' -o '" + (dir_ / "ds").string() + "'", dir_).code, 0);
  fs::remove_all(dir_ / "ds" / "flows");
  fs::copy(dir_ / "ds" / "gt_masks", dir_ / "ds" / "seg");
  write_text(dir_ / "mask.txt", "dataset.type = tum\ndataset.root = ds\n"
                                "camera.fx = 52\ncamera.fy = 52\ncamera.cx = 31.5\ncamera.cy = 23.5\n"
                                "camera.width = 64\ncamera.height = 48\ntracker.kf_interval = 1\n");
  const CliResult r = cli("mask -c '" + (dir_ / "mask.txt").string() + "' -o '" + (dir_ / "m").string() + "'", dir_);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("masks 3"), std::string::npos) << r.out;
  size_t nonempty = 0;
  for (int id = 0; id < 3; ++id)
  {
    const BinaryMask seg = load_seg_mask(dir_ / "ds" / "seg" / seg_filename(id), 64, 48);
    const BinaryMask got = load_seg_mask(dir_ / "m" / mask_filename(id), 64, 48);
    EXPECT_EQ(got.data(), seg.data()) << "frame " << id;
    nonempty += std::count(seg.data().begin(), seg.data().end(), 1) > 0;
  }
  EXPECT_GT(nonempty, 0u);
}
