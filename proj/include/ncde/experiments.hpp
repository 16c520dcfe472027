#pragma once

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ncde/bounds.hpp"
#include "ncde/config.hpp"
#include "ncde/errors.hpp"
#include "ncde/io.hpp"
#include "ncde/model.hpp"
#include "ncde/parallel.hpp"
#include "ncde/paths.hpp"
#include "ncde/random.hpp"
#include "ncde/stats.hpp"
#include "ncde/training.hpp"
#include "ncde/verify.hpp"

namespace ncde {

inline constexpr const char* kLibraryVersion = "1.0.0";
inline constexpr const char* kManifestFormat = "ncde-run-manifest";

/// Git blob hash: sha1("blob <size>\0" + content), lowercase hex.
[[nodiscard]] inline std::string git_blob_sha1(const std::string& content) {
  const std::string header = "blob " + std::to_string(content.size());
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr) {
    throw std::runtime_error("EVP_MD_CTX_new failed");
  }
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.c_str(), header.size() + 1) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 && EVP_DigestFinal_ex(ctx, md, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) {
    throw std::runtime_error("sha1 digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 0xF];
  }
  return out;
}

struct Artifact {
  std::string path;  // relative to the run directory
  std::string sha1;
  std::size_t bytes = 0;
};

struct RunManifest {
  nlohmann::ordered_json config;
  std::vector<Artifact> artifacts;
  double wall_clock_seconds = 0.0;
  std::string library_version = kLibraryVersion;
  std::string input_hash;  // git blob hash of the canonical config dump
};

[[nodiscard]] inline nlohmann::ordered_json manifest_to_json(const RunManifest& m) {
  nlohmann::ordered_json arts = nlohmann::ordered_json::array();
  for (const auto& a : m.artifacts) {
    arts.push_back({{"path", a.path}, {"sha1", a.sha1}, {"bytes", a.bytes}});
  }
  return {{"format", kManifestFormat},     {"library_version", m.library_version}, {"input_hash", m.input_hash},
          {"config", m.config},            {"artifacts", arts},                   {"wall_clock_seconds", m.wall_clock_seconds}};
}

[[nodiscard]] inline RunManifest manifest_from_json(const nlohmann::json& j) {
  detail::require(j.is_object() && j.value("format", "") == kManifestFormat, "not a run manifest");
  RunManifest m;
  m.config = nlohmann::ordered_json::parse(j.at("config").dump());
  m.library_version = j.value("library_version", "");
  m.input_hash = j.value("input_hash", "");
  m.wall_clock_seconds = j.value("wall_clock_seconds", 0.0);
  for (const auto& a : j.at("artifacts")) {
    m.artifacts.push_back({a.at("path").get<std::string>(), a.at("sha1").get<std::string>(),
                           a.at("bytes").get<std::size_t>()});
  }
  return m;
}

struct RunResult {
  RunManifest manifest;
  nlohmann::ordered_json summary;
};

namespace detail {

/// Writes artifacts into the run directory and records their hashes.
class ArtifactSink {
 public:
  explicit ArtifactSink(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

  void write(const std::string& name, const std::string& content) {
    io::write_text(dir_ / name, content);
    artifacts_.push_back({name, git_blob_sha1(content), content.size()});
  }

  [[nodiscard]] const std::vector<Artifact>& artifacts() const noexcept { return artifacts_; }
  [[nodiscard]] const std::filesystem::path& dir() const noexcept { return dir_; }

 private:
  std::filesystem::path dir_;
  std::vector<Artifact> artifacts_;
};

inline std::string seed_str(std::uint64_t seed) { return std::to_string(seed); }

inline std::string f(double x) { return io::format_double(x); }

/// Writes summary.json and manifest.json.
inline RunResult finish_run(const ExperimentConfig& c, ArtifactSink& sink, nlohmann::ordered_json summary,
                            std::chrono::steady_clock::time_point t0) {
  summary["seed"] = c.seed;
  sink.write("summary.json", summary.dump(2) + "\n");
  RunResult r;
  r.manifest.config = config_to_json(c);
  r.manifest.input_hash = git_blob_sha1(r.manifest.config.dump());
  r.manifest.artifacts = sink.artifacts();
  r.manifest.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.summary = std::move(summary);
  io::write_text(sink.dir() / "manifest.json", manifest_to_json(r.manifest).dump(2) + "\n");
  return r;
}

inline std::vector<SampledPath> maybe_augment(std::vector<SampledPath> paths, bool time_channel) {
  if (time_channel) {
    for (auto& p : paths) {
      p = augment_time_channel(p);
    }
  }
  return paths;
}

inline TrainConfig make_train_config(const ExperimentConfig& c, unsigned threads) {
  TrainConfig tc;
  tc.adam = AdamConfig{c.train.lr, c.train.beta1, c.train.beta2, c.train.eps};
  tc.iterations = c.train.iterations;
  tc.freeze = FreezeSet{c.train.freeze_phi, c.train.freeze_init};
  tc.seed = c.seed;
  tc.threads = threads;
  return tc;
}

inline void require_kind(const ExperimentConfig& c, ExperimentKind k) {
  if (c.kind != k) {
    throw ValidationError("config kind is '" + kind_name(c.kind) + "', expected '" + kind_name(k) + "'");
  }
}

/// Phi^T z_k along the recursion.
inline std::vector<double> readout_trajectory(const ModelParams& m, const SampledPath& x) {
  const LatentTrajectory tr = forward(m, x);
  std::vector<double> out(static_cast<std::size_t>(tr.states.rows()));
  for (Eigen::Index k = 0; k < tr.states.rows(); ++k) {
    out[static_cast<std::size_t>(k)] = tr.states.row(k).dot(m.phi);
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Teacher-student

/// Shallow teacher on fBM paths with a time channel; `runs` students from
/// independent inits on the same dataset. Run 0 also emits latent snapshots.
[[nodiscard]] inline RunResult run_teacher_student(const ExperimentConfig& c) {
  detail::require_kind(c, ExperimentKind::teacher_student);
  c.validate();
  const auto t0 = std::chrono::steady_clock::now();
  detail::ArtifactSink sink(c.out);

  const SamplingGrid grid = SamplingGrid::uniform(c.data.grid_points);
  const auto paths = detail::maybe_augment(
      sample_fbm(c.data.n_train, c.data.d, grid, c.data.hurst, sub_seed(c.seed, 1), c.threads), c.data.time_channel);
  const Dims dims{c.model.q, c.model.p, paths.front().dim()};
  Rng trng = make_rng(c.seed, 2);
  TeacherModel teacher{init_uniform_fan_in(dims, c.model.activation, trng), c.noise_bound, sub_seed(c.seed, 3)};
  const Dataset data = teacher_generate(teacher, paths);
  const LossSpec loss{LossKind::squared_error, 1.0, 1.0};

  std::vector<int> snaps;
  for (int s : c.snapshot_iterations) {
    if (s <= c.train.iterations) {
      snaps.push_back(s);
    }
  }
  const unsigned inner = c.runs == 1 ? c.threads : 1;
  std::vector<ModelParams> finals(c.runs);
  std::vector<TrainLog> logs(c.runs);
  detail::parallel_for(c.runs, c.runs == 1 ? 1 : c.threads, [&](std::size_t r) {
    Rng srng = make_rng(c.seed, 1000 + r);
    const ModelParams init = init_uniform_fan_in(dims, c.model.activation, srng);
    TrainConfig tc = detail::make_train_config(c, inner);
    if (r == 0) {
      tc.snapshot_iterations = snaps;
    }
    auto [m, log] = train_erm(data, init, loss, tc);
    finals[r] = std::move(m);
    logs[r] = std::move(log);
  });

  const std::string seed = detail::seed_str(c.seed);
  sink.write("teacher.json", model_to_json(teacher.params).dump(2) + "\n");
  sink.write("student_run0.json", model_to_json(finals[0]).dump(2) + "\n");
  sink.write("train_log_run0.csv", train_log_to_csv(logs[0], false));
  sink.write("train_log_run0_normalized.csv", train_log_to_csv(logs[0], true));

  std::string header_norms;
  for (const auto& l : logs[0].group_labels) {
    header_norms += ",norm_" + l;
  }
  std::string curves = "seed,run,iter,loss" + header_norms + "\n";
  std::string finals_csv = "seed,run,initial_loss,final_loss,loss_ratio" + header_norms + "\n";
  std::size_t reached = 0;
  std::vector<double> ratios;
  for (std::size_t r = 0; r < c.runs; ++r) {
    const auto& log = logs[r];
    const auto& base = log.records.front().norms;
    for (const auto& rec : log.records) {
      curves += seed + "," + std::to_string(r) + "," + std::to_string(rec.iter) + "," + detail::f(rec.loss);
      for (std::size_t g = 0; g < rec.norms.size(); ++g) {
        curves += "," + detail::f(rec.norms[g] / base[g]);
      }
      curves += "\n";
    }
    const double initial = log.records.front().loss;
    const double ratio = log.final_loss / initial;
    ratios.push_back(ratio);
    reached += ratio <= 1e-2 ? 1 : 0;
    finals_csv += seed + "," + std::to_string(r) + "," + detail::f(initial) + "," + detail::f(log.final_loss) + "," +
                  detail::f(ratio);
    for (std::size_t g = 0; g < log.final_norms.size(); ++g) {
      finals_csv += "," + detail::f(log.final_norms[g] / base[g]);
    }
    finals_csv += "\n";
  }
  sink.write("curves.csv", curves);
  sink.write("final_norms.csv", finals_csv);

  std::string latent = "seed,path,iteration,k,t,student,teacher\n";
  const std::size_t n_show = std::min(c.snapshot_paths, paths.size());
  for (std::size_t i = 0; i < n_show; ++i) {
    const auto ref = detail::readout_trajectory(teacher.params, paths[i]);
    for (const auto& [iter, params] : logs[0].snapshots) {
      const auto stu = detail::readout_trajectory(params, paths[i]);
      for (std::size_t k = 0; k < stu.size(); ++k) {
        latent += seed + "," + std::to_string(i) + "," + std::to_string(iter) + "," + std::to_string(k) + "," +
                  detail::f(paths[i].grid[k]) + "," + detail::f(stu[k]) + "," + detail::f(ref[k]);
        latent += "\n";
      }
    }
  }
  sink.write("latent_snapshots.csv", latent);

  std::sort(ratios.begin(), ratios.end());
  nlohmann::ordered_json summary{{"kind", kind_name(c.kind)},
                                 {"runs", c.runs},
                                 {"runs_reaching_1e-2", reached},
                                 {"median_loss_ratio", ratios[ratios.size() / 2]},
                                 {"max_loss_ratio", ratios.back()}};
  return detail::finish_run(c, sink, std::move(summary), t0);
}

// ---------------------------------------------------------------------------
// Rough vs smooth classification

struct RoughSmoothRow {
  double mesh = 0.0;
  double avg_max_variation = 0.0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  double gap = 0.0;
};

/// Labelled source paths on the full grid: even index H = hurst (y = 0),
/// odd index H = hurst_alt (y = 1). Shared by every run of the sweep.
[[nodiscard]] inline std::vector<Sample> rough_smooth_pool(const ExperimentConfig& c, std::size_t count) {
  const SamplingGrid grid = SamplingGrid::uniform(c.data.grid_points);
  const FbmGenerator gen0(grid, c.data.hurst);
  const FbmGenerator gen1(grid, c.data.hurst_alt);
  const std::uint64_t pool_seed = sub_seed(c.seed, 1);
  std::vector<Sample> out(count);
  detail::parallel_for(count, c.threads, [&](std::size_t i) {
    const int label = static_cast<int>(i % 2);
    Rng prng = make_rng(pool_seed, i);
    out[i] = {(label == 0 ? gen0 : gen1).sample(c.data.d, prng), static_cast<double>(label)};
  });
  return out;
}

/// One run of the sweep: a random K-point grid (always holding 0 and 1)
/// applied to every pool path, then BCE training from the shared init.
[[nodiscard]] inline RoughSmoothRow rough_smooth_run(const ExperimentConfig& c, const ModelParams& init,
                                                     const std::vector<Sample>& pool, std::size_t r) {
  const std::uint64_t grid_seed = sub_seed(c.seed, 1000 + r);
  Dataset train;
  Dataset test;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    SampledPath x = downsample_random(pool[i].path, c.data.k_points, grid_seed);
    if (c.data.time_channel) {
      x = augment_time_channel(x);
    }
    (i < c.data.n_train ? train : test).push_back({std::move(x), pool[i].y});
  }
  const LossSpec loss{LossKind::bce_with_logit, 1.0, 1.0};
  auto [m, log] = train_erm(train, init, loss, detail::make_train_config(c, 1));
  RoughSmoothRow row;
  row.mesh = train.front().path.grid.mesh();
  for (const auto& s : train) {
    row.avg_max_variation += path_stats(s.path).max_increment;
  }
  row.avg_max_variation /= static_cast<double>(train.size());
  row.train_loss = log.final_loss;
  row.test_loss = empirical_risk(m, test, loss);
  row.gap = std::abs(row.test_loss - row.train_loss);
  return row;
}

[[nodiscard]] inline RunResult run_rough_smooth(const ExperimentConfig& c) {
  detail::require_kind(c, ExperimentKind::rough_smooth);
  c.validate();
  const auto t0 = std::chrono::steady_clock::now();
  detail::ArtifactSink sink(c.out);

  const auto pool = rough_smooth_pool(c, c.data.n_train + c.data.n_test);
  const Dims dims{c.model.q, c.model.p, c.data.d + (c.data.time_channel ? 1 : 0)};
  Rng irng = make_rng(c.seed, 0);
  const ModelParams init = init_uniform_fan_in(dims, c.model.activation, irng);

  std::vector<RoughSmoothRow> rows(c.runs);
  detail::parallel_for(c.runs, c.threads, [&](std::size_t r) { rows[r] = rough_smooth_run(c, init, pool, r); });

  const std::string seed = detail::seed_str(c.seed);
  std::string csv = "seed,run,mesh,avg_max_variation,train_loss,test_loss,gap\n";
  std::vector<double> gaps;
  std::vector<double> meshes;
  std::vector<double> vars;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& x = rows[r];
    csv += seed + "," + std::to_string(r) + "," + detail::f(x.mesh) + "," + detail::f(x.avg_max_variation) + "," +
           detail::f(x.train_loss) + "," + detail::f(x.test_loss) + "," + detail::f(x.gap) + "\n";
    gaps.push_back(x.gap);
    meshes.push_back(x.mesh);
    vars.push_back(x.avg_max_variation);
  }
  sink.write("runs.csv", csv);
  sink.write("init.json", model_to_json(init).dump(2) + "\n");

  const SpearmanResult s_mesh = spearman(gaps, meshes);
  const SpearmanResult s_var = spearman(gaps, vars);
  auto corr_json = [](const SpearmanResult& s) {
    nlohmann::ordered_json j{{"applicable", s.applicable}};
    if (s.applicable) {
      j["rho"] = s.rho;
      j["p_one_sided"] = s.p_one_sided;
    }
    return j;
  };
  std::string corr = "seed,variable,n,applicable,rho,p_one_sided\n";
  for (const auto& [name, s] : {std::pair<std::string, SpearmanResult>{"mesh", s_mesh}, {"avg_max_variation", s_var}}) {
    corr += seed + "," + name + "," + std::to_string(gaps.size()) + "," + (s.applicable ? "1" : "0") + "," +
            (s.applicable ? detail::f(s.rho) : std::string("NA")) + "," +
            (s.applicable ? detail::f(s.p_one_sided) : std::string("NA")) + "\n";
  }
  sink.write("correlations.csv", corr);

  nlohmann::ordered_json summary{{"kind", kind_name(c.kind)},
                                 {"runs", c.runs},
                                 {"spearman_gap_mesh", corr_json(s_mesh)},
                                 {"spearman_gap_avg_max_variation", corr_json(s_var)}};
  return detail::finish_run(c, sink, std::move(summary), t0);
}

// ---------------------------------------------------------------------------
// Flow interpolation

/// Recursion from an explicit initial state.
[[nodiscard]] inline RowMatrix integrate_from(const VectorFieldParams& vf, Activation act, const Eigen::VectorXd& z0,
                                              const SampledPath& x) {
  const Eigen::Index K = static_cast<Eigen::Index>(x.n_intervals());
  RowMatrix z(K + 1, z0.size());
  z.row(0) = z0.transpose();
  Eigen::VectorXd cur = z0;
  for (Eigen::Index k = 1; k <= K; ++k) {
    const Eigen::VectorXd dx = (x.values.row(k) - x.values.row(k - 1)).transpose();
    cur += vector_field_eval(vf, cur, act, x.dim()) * dx;
    z.row(k) = cur.transpose();
  }
  return z;
}

[[nodiscard]] inline VectorFieldParams lerp_field(const VectorFieldParams& a, const VectorFieldParams& b, double t) {
  VectorFieldParams out = a;
  for (std::size_t h = 0; h < out.layers.size(); ++h) {
    out.layers[h].A = t * a.layers[h].A + (1.0 - t) * b.layers[h].A;
    out.layers[h].b = t * a.layers[h].b + (1.0 - t) * b.layers[h].b;
  }
  return out;
}

[[nodiscard]] inline double field_lipschitz_of(const VectorFieldParams& vf, Activation act) {
  double L = 1.0;
  for (const auto& layer : vf.layers) {
    L *= activation_lipschitz(act) * operator_norm(layer.A);
  }
  return L;
}

/// Trajectories for delta in {0, 1/(n-1), ..., 1} across the field, initial
/// condition and driving-path families, plus the flow-continuity bound
/// between adjacent deltas.
[[nodiscard]] inline RunResult run_flow_interpolation(const ExperimentConfig& c) {
  detail::require_kind(c, ExperimentKind::flow_interpolation);
  c.validate();
  const auto t0 = std::chrono::steady_clock::now();
  detail::ArtifactSink sink(c.out);

  const SamplingGrid grid = SamplingGrid::uniform(c.data.grid_points);
  const auto xs = detail::maybe_augment(sample_fbm(2, c.data.d, grid, c.data.hurst, sub_seed(c.seed, 1), c.threads),
                                        c.data.time_channel);
  const int d = xs[0].dim();
  const Dims dims{c.model.q, c.model.p, d};
  Rng r1 = make_rng(c.seed, 2);
  Rng r2 = make_rng(c.seed, 3);
  const ModelParams m1 = init_uniform_fan_in(dims, c.model.activation, r1);
  const ModelParams m2 = init_uniform_fan_in(dims, c.model.activation, r2);
  const Activation act = c.model.activation;
  const Eigen::VectorXd z01 = init_state(m1, xs[0].values.row(0).transpose());
  const Eigen::VectorXd z02 = init_state(m2, xs[0].values.row(0).transpose());

  struct Member {
    VectorFieldParams vf;
    Eigen::VectorXd z0;
    SampledPath x;
    RowMatrix z;
  };
  const char* families[3] = {"field", "init", "path"};
  std::vector<std::vector<Member>> runs(3);
  for (int fam = 0; fam < 3; ++fam) {
    for (std::size_t i = 0; i < c.n_deltas; ++i) {
      const double delta = static_cast<double>(i) / static_cast<double>(c.n_deltas - 1);
      Member mem{m1.vf, z01, xs[0], {}};
      if (fam == 0) {
        mem.vf = lerp_field(m1.vf, m2.vf, delta);
      } else if (fam == 1) {
        mem.z0 = delta * z01 + (1.0 - delta) * z02;
      } else {
        RowMatrix v = delta * xs[0].values + (1.0 - delta) * xs[1].values;
        mem.x = SampledPath(grid, std::move(v));
        mem.z0 = init_state(m1, mem.x.values.row(0).transpose());
      }
      mem.z = integrate_from(mem.vf, act, mem.z0, mem.x);
      runs[static_cast<std::size_t>(fam)].push_back(std::move(mem));
    }
  }

  // Norm bounds covering every member, for the field-gap upper bound.
  ParamSpace cover;
  cover.q = c.model.q;
  cover.p = c.model.p;
  cover.d = d;
  cover.B_A = 0.0;
  cover.B_b = 0.0;
  for (const auto* m : {&m1, &m2}) {
    for (const auto& layer : m->vf.layers) {
      cover.B_A = std::max(cover.B_A, layer.A.norm());
      cover.B_b = std::max(cover.B_b, layer.b.norm());
    }
  }

  const std::string seed = detail::seed_str(c.seed);
  std::string traj = "seed,family,delta,k,t";
  for (int j = 0; j < c.model.p; ++j) {
    traj += ",z" + std::to_string(j);
  }
  traj += "\n";
  std::string gaps = "seed,family,delta_lo,delta_hi,endpoint_gap,bound,within\n";
  std::size_t violations = 0;
  for (int fam = 0; fam < 3; ++fam) {
    const auto& members = runs[static_cast<std::size_t>(fam)];
    for (std::size_t i = 0; i < members.size(); ++i) {
      const double delta = static_cast<double>(i) / static_cast<double>(c.n_deltas - 1);
      const auto& mem = members[i];
      for (Eigen::Index k = 0; k < mem.z.rows(); ++k) {
        traj += seed + "," + families[fam] + "," + detail::f(delta) + "," + std::to_string(k) + "," +
                detail::f(grid[static_cast<std::size_t>(k)]);
        for (Eigen::Index j = 0; j < mem.z.cols(); ++j) {
          traj += "," + detail::f(mem.z(k, j));
        }
        traj += "\n";
      }
      if (i == 0) {
        continue;
      }
      const auto& a = members[i - 1];
      const auto& b = mem;
      const Eigen::Index K = a.z.rows() - 1;
      double radius = 0.0;
      for (Eigen::Index k = 0; k <= K; ++k) {
        radius = std::max({radius, a.z.row(k).norm(), b.z.row(k).norm()});
      }
      FlowInputs in;
      in.L_F = field_lipschitz_of(a.vf, act);
      in.L_G = field_lipschitz_of(b.vf, act);
      in.L_x = path_stats(a.x).total_variation;
      in.L_r = path_stats(b.x).total_variation;
      in.init_gap = (a.z0 - b.z0).norm();
      in.path_start_gap = (a.x.values.row(0) - b.x.values.row(0)).norm();
      in.path_sup_gap = sup_distance(a.x, b.x);
      in.field_gap = field_gap_upper_bound(cover, a.vf, b.vf, radius);
      in.w0_norm = a.z0.norm();
      in.v0_norm = b.z0.norm();
      in.F0_norm = vector_field_eval(a.vf, Eigen::VectorXd::Zero(c.model.p), act, d).norm();
      in.G0_norm = vector_field_eval(b.vf, Eigen::VectorXd::Zero(c.model.p), act, d).norm();
      const double bound = flow_continuity_bound(in).value;
      const double gap = (a.z.row(K) - b.z.row(K)).norm();
      const bool within = gap <= bound + kCheckSlack;
      violations += within ? 0 : 1;
      gaps += seed + "," + families[fam] + "," + detail::f(static_cast<double>(i - 1) / (c.n_deltas - 1)) + "," +
              detail::f(delta) + "," + detail::f(gap) + "," + detail::f(bound) + "," + (within ? "1" : "0") + "\n";
    }
  }
  sink.write("trajectories.csv", traj);
  sink.write("endpoint_gaps.csv", gaps);
  sink.write("model_a.json", model_to_json(m1).dump(2) + "\n");
  sink.write("model_b.json", model_to_json(m2).dump(2) + "\n");

  nlohmann::ordered_json summary{{"kind", kind_name(c.kind)}, {"n_deltas", c.n_deltas}, {"violations", violations}};
  return detail::finish_run(c, sink, std::move(summary), t0);
}

// ---------------------------------------------------------------------------
// Discretization sweep

[[nodiscard]] inline RunResult run_discretization_sweep(const ExperimentConfig& c) {
  detail::require_kind(c, ExperimentKind::discretization_sweep);
  c.validate();
  const auto t0 = std::chrono::steady_clock::now();
  detail::ArtifactSink sink(c.out);

  const ParamSpace& s = c.space;
  Rng mrng = make_rng(c.seed, 0);
  const ModelParams model = sample_params_in(s, c.model.activation, mrng);
  const SamplingGrid fine = SamplingGrid::uniform(c.fine_intervals + 1);
  std::vector<SampledPath> paths(c.n_paths);
  detail::parallel_for(c.n_paths, c.threads, [&](std::size_t i) {
    Rng prng = make_rng(c.seed, 1 + i);
    paths[i] = sample_lipschitz_path(fine, s.d, s.L_x, s.B_x, c.path_segments, prng);
  });
  const DiscretizationTable table = check_discretization_scaling(s, model, paths, c.ladder);

  const std::string seed = detail::seed_str(c.seed);
  std::string csv = "seed,K,mesh,mean_gap,max_gap,bound\n";
  for (const auto& r : table.rows) {
    csv += seed + "," + std::to_string(r.K) + "," + detail::f(r.mesh) + "," + detail::f(r.mean_gap) + "," +
           detail::f(r.max_gap) + "," + detail::f(r.bound) + "\n";
  }
  sink.write("discretization.csv", csv);

  const double M = m_theta(s);
  std::string rem = "seed,K,mesh,M_D,M,rel_gap\n";
  for (long long K : c.output_bound_K) {
    const double MD = m_theta_d(s, GridSpec::uniform(K));
    rem += seed + "," + std::to_string(K) + "," + detail::f(1.0 / static_cast<double>(K)) + "," + detail::f(MD) + "," +
           detail::f(M) + "," + detail::f(M > 0.0 ? std::abs(MD - M) / M : 0.0) + "\n";
  }
  sink.write("output_bound_convergence.csv", rem);
  sink.write("model.json", model_to_json(model).dump(2) + "\n");

  nlohmann::ordered_json summary{{"kind", kind_name(c.kind)},
                                 {"violations", table.check.violations},
                                 {"max_ratio", table.check.max_ratio},
                                 {"loglog_slope", table.loglog_slope}};
  return detail::finish_run(c, sink, std::move(summary), t0);
}

[[nodiscard]] inline RunResult run_experiment(const ExperimentConfig& c) {
  switch (c.kind) {
    case ExperimentKind::teacher_student:
      return run_teacher_student(c);
    case ExperimentKind::rough_smooth:
      return run_rough_smooth(c);
    case ExperimentKind::flow_interpolation:
      return run_flow_interpolation(c);
    case ExperimentKind::discretization_sweep:
      return run_discretization_sweep(c);
  }
  throw ValidationError("unknown experiment kind");
}

}  // namespace ncde
