#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ncde/config.hpp"
#include "ncde/experiments.hpp"
#include "ncde/stats.hpp"

using namespace ncde;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ncde_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig small_teacher_student(const fs::path& out) {
  auto c = ExperimentConfig::defaults(ExperimentKind::teacher_student);
  c.out = out.string();
  c.seed = 3;
  c.runs = 3;
  c.data.n_train = 8;
  c.data.grid_points = 12;
  c.train.iterations = 15;
  c.snapshot_iterations = {0, 10, 100};
  c.snapshot_paths = 2;
  return c;
}

ExperimentConfig small_rough_smooth(const fs::path& out) {
  auto c = ExperimentConfig::defaults(ExperimentKind::rough_smooth);
  c.out = out.string();
  c.runs = 5;
  c.data.n_train = 6;
  c.data.n_test = 6;
  c.data.grid_points = 30;
  c.train.iterations = 5;
  return c;
}

ExperimentConfig small_sweep(const fs::path& out) {
  auto c = ExperimentConfig::defaults(ExperimentKind::discretization_sweep);
  c.out = out.string();
  c.fine_intervals = 256;
  c.ladder = {4, 8, 16, 32, 64, 128};
  c.n_paths = 5;
  return c;
}

}  // namespace

TEST(Sha1, GitBlobHashes) {
  EXPECT_EQ(git_blob_sha1(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  EXPECT_EQ(git_blob_sha1("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST(Spearman, ScipyReferenceValues) {
  const auto r = spearman({1, 2, 3, 4, 5}, {2, 1, 4, 3, 5});
  ASSERT_TRUE(r.applicable);
  EXPECT_NEAR(r.rho, 0.8, 1e-15);
  EXPECT_NEAR(r.p_one_sided, 0.05204401933091389, 1e-12);
  const auto t = spearman({1, 2, 2, 3, 7, 1.5}, {0.3, 0.1, 0.2, 0.9, 0.5, 0.5});
  EXPECT_NEAR(t.rho, 0.35294117647058826, 1e-14);
  EXPECT_NEAR(t.p_one_sided, 0.49257073071443097 / 2.0, 1e-12);
  EXPECT_EQ(average_ranks({1, 2, 2, 3}), (std::vector<double>{1, 2.5, 2.5, 4}));
}

TEST(Spearman, EdgeCases) {
  EXPECT_FALSE(spearman({1, 1, 1, 1}, {1, 2, 3, 4}).applicable);
  EXPECT_FALSE(spearman({1, 2}, {2, 1}).applicable);
  const auto perfect = spearman({1, 2, 3, 4}, {10, 20, 30, 40});
  EXPECT_EQ(perfect.rho, 1.0);
  EXPECT_EQ(perfect.p_one_sided, 0.0);
  EXPECT_EQ(spearman({1, 2, 3, 4}, {4, 3, 2, 1}).p_one_sided, 1.0);
  EXPECT_THROW((void)spearman({1, 2, 3}, {1, 2}), ValidationError);
}

TEST(Config, KindsAndDefaults) {
  for (auto k : {ExperimentKind::teacher_student, ExperimentKind::rough_smooth, ExperimentKind::flow_interpolation,
                 ExperimentKind::discretization_sweep}) {
    EXPECT_EQ(kind_from_name(kind_name(k)), k);
    const auto c = ExperimentConfig::defaults(k);
    EXPECT_NO_THROW(c.validate());
    const auto back = config_from_json(nlohmann::json::parse(config_to_json(c).dump()));
    EXPECT_EQ(config_to_json(back).dump(), config_to_json(c).dump());
  }
  const auto rs = ExperimentConfig::defaults(ExperimentKind::rough_smooth);
  EXPECT_EQ(rs.runs, 50u);
  EXPECT_EQ(rs.data.k_points, 5u);
  EXPECT_EQ(rs.train.iterations, 600);
  EXPECT_TRUE(rs.train.freeze_phi && rs.train.freeze_init);
  const auto ts = ExperimentConfig::defaults(ExperimentKind::teacher_student);
  EXPECT_EQ(ts.data.n_train, 100u);
  EXPECT_EQ(ts.train.iterations, 2000);
  EXPECT_EQ(ts.train.lr, 5e-3);
  EXPECT_THROW((void)kind_from_name("nope"), ValidationError);
}

TEST(Config, StrictParsing) {
  EXPECT_THROW((void)config_from_json(nlohmann::json::parse(R"({"seed": 1})")), ValidationError);
  EXPECT_THROW((void)config_from_json(nlohmann::json::parse(R"({"kind": "flow_interpolation", "bogus": 1})")),
               ValidationError);
  EXPECT_THROW(
      (void)config_from_json(nlohmann::json::parse(R"({"kind": "teacher_student", "data": {"n_trian": 3}})")),
      ValidationError);
  EXPECT_THROW((void)config_from_json(nlohmann::json::parse(R"({"kind": "teacher_student", "seed": "x"})")),
               ValidationError);
  EXPECT_THROW(
      (void)config_from_json(nlohmann::json::parse(R"({"kind": "teacher_student", "model": {"activation": "gelu"}})")),
      ValidationError);
  const auto c = config_from_json(nlohmann::json::parse(R"({"kind": "rough_smooth", "seed": 9, "train": {"lr": 0.01}})"));
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.train.lr, 0.01);
  EXPECT_EQ(c.train.iterations, 600);
  auto bad = c;
  bad.data.k_points = 1;
  EXPECT_THROW(bad.validate(), ValidationError);
  auto sweep = ExperimentConfig::defaults(ExperimentKind::discretization_sweep);
  sweep.ladder = {3};
  EXPECT_THROW(sweep.validate(), ValidationError);
}

TEST(BoundRequestJson, ParsesAndRejects) {
  const auto req = bound_request_from_json(nlohmann::json::parse(
      R"({"space": {"q": 2, "B_A": 0.5}, "grid": {"K": 10}, "n": 5000, "teacher": {"lipschitz_Gstar": 1, "gstar_at_zero_opnorm": 0, "B_phistar": 1, "noise_bound": 0}})"));
  EXPECT_EQ(req.space.q, 2);
  EXPECT_EQ(req.space.B_A, 0.5);
  EXPECT_EQ(req.grid.n_intervals, 10);
  EXPECT_DOUBLE_EQ(req.grid.mesh, 0.1);
  EXPECT_TRUE(req.teacher.has_value());
  EXPECT_THROW((void)bound_request_from_json(nlohmann::json::parse(R"({"space": {"B_Q": 1}})")), ValidationError);
  EXPECT_THROW((void)bound_request_from_json(nlohmann::json::parse(R"({"grid": {"K": 10, "mesh": 0.01}})")),
               ValidationError);
}

TEST(Manifest, JsonRoundTrip) {
  RunManifest m;
  m.config = config_to_json(ExperimentConfig::defaults(ExperimentKind::flow_interpolation));
  m.artifacts = {{"a.csv", git_blob_sha1("x"), 1}};
  m.wall_clock_seconds = 1.5;
  m.input_hash = git_blob_sha1(m.config.dump());
  const auto back = manifest_from_json(nlohmann::json::parse(manifest_to_json(m).dump()));
  EXPECT_EQ(nlohmann::json(back.config), nlohmann::json(m.config));
  ASSERT_EQ(back.artifacts.size(), 1u);
  EXPECT_EQ(back.artifacts[0].sha1, m.artifacts[0].sha1);
  EXPECT_EQ(back.input_hash, m.input_hash);
  EXPECT_EQ(back.library_version, kLibraryVersion);
}

TEST(TeacherStudent, ArtifactsAndReplayAreByteIdentical) {
  const auto dir = scratch_dir("ts");
  const auto c = small_teacher_student(dir / "a");
  const auto r1 = run_experiment(c);
  for (const char* name : {"teacher.json", "curves.csv", "final_norms.csv", "latent_snapshots.csv",
                           "train_log_run0.csv", "train_log_run0_normalized.csv", "summary.json", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(dir / "a" / name)) << name;
  }
  const std::string curves = slurp(dir / "a" / "curves.csv");
  EXPECT_EQ(curves.substr(0, curves.find('\n')),
            "seed,run,iter,loss,norm_phi,norm_A1,norm_b1,norm_U,norm_v");
  EXPECT_EQ(std::count(curves.begin(), curves.end(), '\n'), 1 + 3 * 15);
  const std::string snaps = slurp(dir / "a" / "latent_snapshots.csv");
  EXPECT_EQ(snaps.find(",100,"), std::string::npos);  // snapshot past the last iteration is skipped

  auto replay = config_from_json(nlohmann::json::parse(slurp(dir / "a" / "manifest.json")));
  replay.out = (dir / "b").string();
  replay.threads = 3;
  const auto r2 = run_experiment(replay);
  ASSERT_EQ(r1.manifest.artifacts.size(), r2.manifest.artifacts.size());
  for (std::size_t i = 0; i < r1.manifest.artifacts.size(); ++i) {
    const auto& a = r1.manifest.artifacts[i];
    EXPECT_EQ(a.sha1, r2.manifest.artifacts[i].sha1) << a.path;
    EXPECT_EQ(slurp(dir / "a" / a.path), slurp(dir / "b" / a.path)) << a.path;
    EXPECT_EQ(git_blob_sha1(slurp(dir / "a" / a.path)), a.sha1);
  }
  fs::remove_all(dir);
}

TEST(TeacherStudent, WrongKindIsRejected) {
  auto c = small_sweep(scratch_dir("wk"));
  EXPECT_THROW((void)run_teacher_student(c), ValidationError);
}

TEST(RoughSmooth, RowsAndCorrelations) {
  const auto dir = scratch_dir("rs");
  const auto c = small_rough_smooth(dir);
  const auto pool = rough_smooth_pool(c, 12);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    EXPECT_EQ(pool[i].y, static_cast<double>(i % 2));
  }
  Rng rng = make_rng(c.seed, 0);
  const auto init = init_uniform_fan_in(Dims{c.model.q, c.model.p, c.data.d + 1}, c.model.activation, rng);
  const auto row = rough_smooth_run(c, init, pool, 0);
  EXPECT_GT(row.mesh, 0.0);
  EXPECT_GT(row.avg_max_variation, 0.0);
  EXPECT_NEAR(row.gap, std::abs(row.test_loss - row.train_loss), 0.0);

  const auto r = run_experiment(c);
  const std::string runs = slurp(dir / "runs.csv");
  EXPECT_EQ(std::count(runs.begin(), runs.end(), '\n'), 1 + 5);
  EXPECT_TRUE(r.summary.contains("spearman_gap_mesh"));
  EXPECT_TRUE(r.summary.contains("spearman_gap_avg_max_variation"));
  EXPECT_TRUE(fs::exists(dir / "correlations.csv"));
  fs::remove_all(dir);
}

TEST(Flow, EndpointsAndNoViolations) {
  Rng rng(2);
  const auto a = init_uniform_fan_in(Dims{2, 3, 2}, Activation::tanh, rng);
  const auto b = init_uniform_fan_in(Dims{2, 3, 2}, Activation::tanh, rng);
  const auto one = lerp_field(a.vf, b.vf, 1.0);
  const auto zero = lerp_field(a.vf, b.vf, 0.0);
  EXPECT_EQ(one.layers[1].A, a.vf.layers[1].A);
  EXPECT_EQ(zero.layers[0].b, b.vf.layers[0].b);
  const auto x = sample_fbm(1, 2, SamplingGrid::uniform(30), 0.5, 1).front();
  const auto z = integrate_from(a.vf, a.activation, init_state(a, x.values.row(0).transpose()), x);
  EXPECT_LT((z - forward(a, x).states).cwiseAbs().maxCoeff(), 1e-14);

  const auto dir = scratch_dir("flow");
  auto c = ExperimentConfig::defaults(ExperimentKind::flow_interpolation);
  c.out = dir.string();
  c.n_deltas = 6;
  const auto r = run_experiment(c);
  EXPECT_EQ(r.summary["violations"], 0);
  const std::string gaps = slurp(dir / "endpoint_gaps.csv");
  EXPECT_EQ(std::count(gaps.begin(), gaps.end(), '\n'), 1 + 3 * 5);
  const std::string traj = slurp(dir / "trajectories.csv");
  EXPECT_EQ(std::count(traj.begin(), traj.end(), '\n'), 1 + 3 * 6 * 100);
  fs::remove_all(dir);
}

TEST(Sweep, BoundsHoldAndOutputBoundConverges) {
  const auto dir = scratch_dir("sweep");
  const auto c = small_sweep(dir);
  const auto r = run_experiment(c);
  EXPECT_EQ(r.summary["violations"], 0);
  EXPECT_GT(r.summary["loglog_slope"].get<double>(), 0.8);
  EXPECT_LT(r.summary["max_ratio"].get<double>(), 1.0);
  const std::string rem = slurp(dir / "output_bound_convergence.csv");
  EXPECT_EQ(rem.substr(0, rem.find('\n')), "seed,K,mesh,M_D,M,rel_gap");
  EXPECT_EQ(std::count(rem.begin(), rem.end(), '\n'), 5);
  fs::remove_all(dir);
}
