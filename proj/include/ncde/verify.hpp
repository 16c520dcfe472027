#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "ncde/bounds.hpp"
#include "ncde/errors.hpp"
#include "ncde/model.hpp"
#include "ncde/parallel.hpp"
#include "ncde/param_space.hpp"
#include "ncde/paths.hpp"
#include "ncde/random.hpp"
#include "ncde/training.hpp"

namespace ncde {

inline constexpr double kCheckSlack = 1e-9;

// ---------------------------------------------------------------------------
// Teachers

/// Ground-truth NCDE with bounded additive noise.
struct TeacherModel {
  ModelParams params;
  double noise_bound = 0.0;
  std::uint64_t noise_seed = 0;
};

/// y_i = teacher prediction + eps_i, eps_i ~ U[-M_eps, M_eps] from sub-stream i.
[[nodiscard]] inline Dataset teacher_generate(const TeacherModel& t, const std::vector<SampledPath>& paths) {
  detail::require(t.noise_bound >= 0.0, "teacher_generate: noise bound must be >= 0");
  t.params.validate();
  Dataset out;
  out.reserve(paths.size());
  Tape scratch;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    double y = predict(t.params, paths[i], scratch);
    if (t.noise_bound > 0.0) {
      Rng rng = make_rng(t.noise_seed, i);
      y += std::uniform_real_distribution<double>(-t.noise_bound, t.noise_bound)(rng);
    }
    out.push_back({paths[i], y});
  }
  return out;
}

[[nodiscard]] inline double operator_norm(const Eigen::MatrixXd& M) {
  if (M.size() == 0) {
    return 0.0;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
  return svd.singularValues()(0);
}

/// Constants of the teacher field for inputs with ||x0|| <= B_x.
/// L_G* is the product of L_sigma ||A_h||_op; B_phi* = L_sigma (||U||_op B_x + ||v||).
[[nodiscard]] inline TeacherSpec teacher_spec(const TeacherModel& t, double B_x) {
  const ModelParams& m = t.params;
  const double Ls = activation_lipschitz(m.activation);
  TeacherSpec s;
  s.lipschitz_Gstar = 1.0;
  for (const auto& L : m.vf.layers) {
    s.lipschitz_Gstar *= Ls * operator_norm(L.A);
  }
  s.gstar_at_zero_opnorm = operator_norm(vector_field_eval(m, Eigen::VectorXd::Zero(m.dims.p)));
  s.B_phistar = Ls * (operator_norm(m.U) * B_x + m.v.norm());
  s.noise_bound = t.noise_bound;
  return s;
}

// ---------------------------------------------------------------------------
// Samplers

/// Each group: iid normal entries rescaled to a uniform-random fraction of
/// its Frobenius bound.
[[nodiscard]] inline ModelParams sample_params_in(const ParamSpace& s, Activation act, Rng& rng) {
  ModelParams m = ModelParams::zeros(Dims{s.q, s.p, s.d}, act);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (auto& g : param_groups(m)) {
    Eigen::Map<Eigen::VectorXd> x(g.data, g.size);
    for (Eigen::Index i = 0; i < g.size; ++i) {
      x[i] = normal(rng);
    }
    const double n = x.norm();
    const double target = unif(rng) * group_bound(s, g.kind);
    x *= n > 0.0 ? target / n : 0.0;
  }
  return project_params(m, s);
}

/// Uniform point in the closed ball of radius r in R^n.
[[nodiscard]] inline Eigen::VectorXd sample_in_ball(Eigen::Index n, double r, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::VectorXd x(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x[i] = normal(rng);
  }
  const double norm = x.norm();
  if (norm == 0.0) {
    return Eigen::VectorXd::Zero(n);
  }
  const double radius = r * std::pow(unif(rng), 1.0 / static_cast<double>(n));
  return x * (radius / norm);
}

/// Grid with K intervals: 0, 1 and K-1 distinct uniform interior points.
[[nodiscard]] inline SamplingGrid sample_grid(std::size_t K, Rng& rng) {
  detail::require(K >= 1, "sample_grid: K must be >= 1");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> t{0.0, 1.0};
  while (t.size() < K + 1) {
    const double u = unif(rng);
    if (u > 0.0 && std::find(t.begin(), t.end(), u) == t.end()) {
      t.push_back(u);
    }
  }
  std::sort(t.begin(), t.end());
  return SamplingGrid(std::move(t));
}

/// Piecewise-linear path with n_segments equal-length pieces, evaluated on
/// `grid`. Each piece has speed <= L_x and ||x0|| <= B_x, so the path is
/// L_x-Lipschitz and its total variation is at most L_x.
[[nodiscard]] inline SampledPath sample_lipschitz_path(const SamplingGrid& grid, int d, double L_x, double B_x,
                                                       std::size_t n_segments, Rng& rng) {
  detail::require(n_segments >= 1, "sample_lipschitz_path: need at least one segment");
  const Eigen::VectorXd x0 = sample_in_ball(d, B_x, rng);
  std::vector<Eigen::VectorXd> vel;
  std::vector<Eigen::VectorXd> knots{x0};
  const double seg = 1.0 / static_cast<double>(n_segments);
  for (std::size_t s = 0; s < n_segments; ++s) {
    Eigen::VectorXd v = sample_in_ball(d, L_x, rng);
    // Push speeds towards L_x half of the time so the bounds are exercised near their limit.
    if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < 0.5 && v.norm() > 0.0) {
      v *= L_x / v.norm();
    }
    knots.push_back(knots.back() + v * seg);
    vel.push_back(std::move(v));
  }
  RowMatrix values(static_cast<Eigen::Index>(grid.size()), d);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double t = grid[k];
    std::size_t s = std::min(static_cast<std::size_t>(t * static_cast<double>(n_segments)), n_segments - 1);
    const double start = static_cast<double>(s) * seg;
    values.row(static_cast<Eigen::Index>(k)) = (knots[s] + vel[s] * (t - start)).transpose();
  }
  return SampledPath(grid, std::move(values));
}

// ---------------------------------------------------------------------------
// Sup-gap estimation

/// Largest Frobenius gap between two fields over the origin, the 2p axis
/// points at distance `radius`, and n_probe uniform points of the ball. A
/// lower estimate of the true sup; nested in n_probe for a fixed seed.
[[nodiscard]] inline double estimate_sup_field_gap(const VectorFieldParams& student, const VectorFieldParams& teacher,
                                                   Activation act, int d, double radius, std::size_t n_probe,
                                                   std::uint64_t seed) {
  detail::require(n_probe >= 1, "estimate_sup_field_gap: n_probe must be >= 1");
  detail::require(radius >= 0.0, "estimate_sup_field_gap: radius must be >= 0");
  const Eigen::Index p = student.layers.front().A.cols();
  auto gap = [&](const Eigen::VectorXd& u) {
    return (vector_field_eval(student, u, act, d) - vector_field_eval(teacher, u, act, d)).norm();
  };
  double best = gap(Eigen::VectorXd::Zero(p));
  for (Eigen::Index i = 0; i < p; ++i) {
    for (double sign : {1.0, -1.0}) {
      Eigen::VectorXd u = Eigen::VectorXd::Zero(p);
      u[i] = sign * radius;
      best = std::max(best, gap(u));
    }
  }
  Rng rng(seed);
  for (std::size_t i = 0; i < n_probe; ++i) {
    best = std::max(best, gap(sample_in_ball(p, radius, rng)));
  }
  return best;
}

/// Analytic upper bound on max over the ball of ||G_1 - G_2||, from the
/// per-layer constants: sum_j C^j_b ||db_j|| + C^j_A(radius) ||dA_j||.
[[nodiscard]] inline double field_gap_upper_bound(const ParamSpace& s, const VectorFieldParams& a,
                                                  const VectorFieldParams& b, double radius) {
  const double la = s.L_sigma * s.B_A;
  double total = 0.0;
  for (int j = 1; j <= s.q; ++j) {
    const double alpha = detail::ipow(la, j - 1);
    double beta_sum = 0.0;
    for (int i = 0; i < j - 1; ++i) {
      beta_sum += detail::ipow(la, i);
    }
    const double beta = s.L_sigma * s.B_b * beta_sum;
    const double outer = detail::ipow(la, s.q - j) * s.L_sigma;
    const auto& La = a.layers[static_cast<std::size_t>(j - 1)];
    const auto& Lb = b.layers[static_cast<std::size_t>(j - 1)];
    total += outer * (Lb.b - La.b).norm() + outer * (alpha * radius + beta) * (Lb.A - La.A).norm();
  }
  return total;
}

// ---------------------------------------------------------------------------
// Check results

struct CheckResult {
  std::string name;
  std::size_t trials = 0;
  std::size_t violations = 0;
  double max_ratio = 0.0;  // empirical / bound
  std::string worst_case;  // JSON description of the max-ratio trial
  std::vector<CheckResult> strata;

  [[nodiscard]] bool passed() const noexcept { return violations == 0; }

  /// Records one trial of `empirical <= bound`.
  void record(double empirical, double bound, const nlohmann::json& instance) {
    trials += 1;
    const bool violated = !(empirical <= bound + kCheckSlack);
    double ratio = 0.0;
    if (bound > 0.0) {
      ratio = empirical / bound;
    } else if (empirical > kCheckSlack) {
      ratio = std::numeric_limits<double>::infinity();
    }
    if (violated) {
      violations += 1;
    }
    if (worst_case.empty() || ratio > max_ratio) {
      max_ratio = std::max(max_ratio, ratio);
      nlohmann::json w = instance;
      w["empirical"] = empirical;
      w["bound"] = bound;
      w["ratio"] = ratio;
      worst_case = w.dump();
    }
  }

  /// Associative merge: sums counts, keeps the larger ratio's witness.
  void merge(const CheckResult& o) {
    trials += o.trials;
    violations += o.violations;
    if (worst_case.empty() || (!o.worst_case.empty() && o.max_ratio > max_ratio)) {
      max_ratio = std::max(max_ratio, o.max_ratio);
      worst_case = o.worst_case;
    }
  }
};

[[nodiscard]] inline nlohmann::json check_to_json(const CheckResult& r) {
  nlohmann::json j{{"name", r.name},
                   {"trials", r.trials},
                   {"violations", r.violations},
                   {"max_ratio", r.max_ratio},
                   {"passed", r.passed()},
                   {"worst_case", r.worst_case.empty() ? nlohmann::json(nullptr) : nlohmann::json::parse(r.worst_case)}};
  if (!r.strata.empty()) {
    nlohmann::json s = nlohmann::json::array();
    for (const auto& x : r.strata) {
      s.push_back(check_to_json(x));
    }
    j["strata"] = s;
  }
  return j;
}

namespace detail {

/// Runs trial(i, result_i) for every trial on `threads` workers and merges
/// the per-trial results in index order.
template <class Trial>
CheckResult run_trials(const std::string& name, std::size_t trials, unsigned threads, Trial&& trial) {
  std::vector<CheckResult> parts(trials);
  parallel_for(trials, threads, [&](std::size_t i) { trial(i, parts[i]); });
  CheckResult out;
  out.name = name;
  for (const auto& p : parts) {
    out.merge(p);
  }
  return out;
}

inline constexpr Activation kActivations[3] = {Activation::tanh, Activation::identity, Activation::relu};

inline GridSpec grid_spec_of(const SamplingGrid& g) {
  return GridSpec{g.mesh(), static_cast<long long>(g.n_intervals())};
}

}  // namespace detail

/// |f_theta(x^D)| <= M_Theta^D over random theta in the space, random grids
/// and random paths with the declared L_x and B_x.
[[nodiscard]] inline CheckResult check_output_bound(const ParamSpace& s, std::size_t trials, std::uint64_t seed,
                                                    unsigned threads = 1) {
  s.validate();
  return detail::run_trials("output_bound", trials, threads, [&](std::size_t i, CheckResult& r) {
    Rng rng = make_rng(seed, i);
    const Activation act = detail::kActivations[i % 3];
    const ModelParams m = sample_params_in(s, act, rng);
    const std::size_t K = 1 + rng() % 32;
    const SamplingGrid grid = sample_grid(K, rng);
    const SampledPath path = sample_lipschitz_path(grid, s.d, s.L_x, s.B_x, 1 + rng() % 8, rng);
    const double pred = predict(m, path);
    const double bound = m_theta_d(s, detail::grid_spec_of(grid));
    r.record(std::abs(pred), bound, {{"trial", i}, {"seed", seed}, {"K", K}, {"activation", activation_name(act)}});
  });
}

/// ||G(z) - G(w)||_F <= (L_sigma B_A)^q ||z - w||, plus ||G(0)||_F <= kappa0
/// as a second stratum.
[[nodiscard]] inline CheckResult check_field_lipschitz(const ParamSpace& s, std::size_t trials, std::uint64_t seed,
                                                       unsigned threads = 1) {
  s.validate();
  const double L = field_lipschitz(s);
  const double k0 = kappa0(s);
  std::vector<CheckResult> lip(trials);
  std::vector<CheckResult> zero(trials);
  detail::parallel_for(trials, threads, [&](std::size_t i) {
    Rng rng = make_rng(seed, i);
    const Activation act = detail::kActivations[i % 3];
    const ModelParams m = sample_params_in(s, act, rng);
    const double scale = std::uniform_real_distribution<double>(0.0, 4.0)(rng);
    const Eigen::VectorXd z = sample_in_ball(s.p, scale, rng);
    Eigen::VectorXd w = sample_in_ball(s.p, scale, rng);
    if (i % 4 == 0) {
      w = z + sample_in_ball(s.p, 1e-3, rng);  // short pairs probe the local slope
    }
    const double gap = (vector_field_eval(m, z) - vector_field_eval(m, w)).norm();
    lip[i].record(gap, L * (z - w).norm(), {{"trial", i}, {"seed", seed}, {"activation", activation_name(act)}});
    const double at0 = vector_field_eval(m, Eigen::VectorXd::Zero(s.p)).norm();
    zero[i].record(at0, k0, {{"trial", i}, {"seed", seed}});
  });
  CheckResult out;
  out.name = "field_lipschitz";
  CheckResult a;
  a.name = "lipschitz";
  CheckResult b;
  b.name = "field_at_zero";
  for (std::size_t i = 0; i < trials; ++i) {
    a.merge(lip[i]);
    b.merge(zero[i]);
  }
  out.merge(a);
  out.merge(b);
  out.trials = trials;
  out.strata = {a, b};
  return out;
}

/// Endpoint gap of two recursions vs the flow-continuity bound. Strata:
/// field-only, init-only, path-only and all-different pairs. Lipschitz and
/// latent-ball constants are the space-level ones; the field gap is the
/// analytic per-layer upper bound over the latent ball.
[[nodiscard]] inline CheckResult check_flow_continuity(const ParamSpace& s, std::size_t trials, std::uint64_t seed,
                                                       unsigned threads = 1) {
  s.validate();
  static const char* kStrata[4] = {"field", "init", "path", "mixed"};
  const double L = field_lipschitz(s);
  const double radius = latent_radius(s);
  std::vector<CheckResult> parts(trials);
  detail::parallel_for(trials, threads, [&](std::size_t i) {
    Rng rng = make_rng(seed, i);
    const int stratum = static_cast<int>(i % 4);
    const Activation act = detail::kActivations[(i / 4) % 3];
    const ModelParams m1 = sample_params_in(s, act, rng);
    ModelParams m2 = m1;
    const ModelParams other = sample_params_in(s, act, rng);
    if (stratum == 0 || stratum == 3) {
      m2.vf = other.vf;
    }
    if (stratum == 1 || stratum == 3) {
      m2.U = other.U;
      m2.v = other.v;
    }
    const SamplingGrid grid = sample_grid(1 + rng() % 24, rng);
    const SampledPath x = sample_lipschitz_path(grid, s.d, s.L_x, s.B_x, 1 + rng() % 6, rng);
    SampledPath r = x;
    if (stratum == 2 || stratum == 3) {
      r = sample_lipschitz_path(grid, s.d, s.L_x, s.B_x, 1 + rng() % 6, rng);
    }
    const LatentTrajectory w = forward(m1, x);
    const LatentTrajectory v = forward(m2, r);
    const Eigen::Index K = static_cast<Eigen::Index>(grid.n_intervals());
    const double gap = (w.states.row(K) - v.states.row(K)).norm();

    FlowInputs in;
    in.L_F = L;
    in.L_G = L;
    in.L_x = s.L_x;
    in.L_r = s.L_x;
    in.init_gap = (w.states.row(0) - v.states.row(0)).norm();
    in.path_start_gap = (x.values.row(0) - r.values.row(0)).norm();
    in.path_sup_gap = sup_distance(x, r);
    in.field_gap = field_gap_upper_bound(s, m1.vf, m2.vf, radius);
    in.w0_norm = w.states.row(0).norm();
    in.v0_norm = v.states.row(0).norm();
    in.F0_norm = vector_field_eval(m1, Eigen::VectorXd::Zero(s.p)).norm();
    in.G0_norm = vector_field_eval(m2, Eigen::VectorXd::Zero(s.p)).norm();
    const FlowBound b = flow_continuity_bound(in);
    parts[i].name = kStrata[stratum];
    parts[i].record(gap, b.value,
                    {{"trial", i}, {"seed", seed}, {"stratum", kStrata[stratum]}, {"K", K},
                     {"activation", activation_name(act)}});
  });
  CheckResult out;
  out.name = "flow_continuity";
  std::vector<CheckResult> strata(4);
  for (int k = 0; k < 4; ++k) {
    strata[static_cast<std::size_t>(k)].name = kStrata[k];
  }
  for (std::size_t i = 0; i < trials; ++i) {
    strata[i % 4].merge(parts[i]);
    out.merge(parts[i]);
  }
  out.strata = strata;
  return out;
}

/// |f_1 - f_2| <= M ||dPhi|| + C_A ||dA|| + C_b ||db|| + C_U ||dU|| + C_v ||dv||
/// for depth-one fields. Half of the pairs perturb Phi only.
[[nodiscard]] inline CheckResult check_param_lipschitz(const ParamSpace& s, std::size_t trials, std::uint64_t seed,
                                                       unsigned threads = 1) {
  s.validate();
  detail::require(s.q == 1, "check_param_lipschitz: the check is defined for q = 1");
  const ParamLipschitzConstants c = param_lipschitz_constants(s);
  auto res = detail::run_trials("param_lipschitz", trials, threads, [&](std::size_t i, CheckResult& r) {
    Rng rng = make_rng(seed, i);
    const Activation act = detail::kActivations[i % 3];
    const ModelParams m1 = sample_params_in(s, act, rng);
    ModelParams m2 = sample_params_in(s, act, rng);
    const bool phi_only = (i / 3) % 2 == 1;
    if (phi_only) {
      const Eigen::VectorXd phi = m2.phi;
      m2 = m1;
      m2.phi = phi;
    }
    const SamplingGrid grid = sample_grid(1 + rng() % 24, rng);
    const SampledPath x = sample_lipschitz_path(grid, s.d, s.L_x, s.B_x, 1 + rng() % 6, rng);
    const double gap = std::abs(predict(m1, x) - predict(m2, x));
    double dA = 0.0;
    double db = 0.0;
    for (std::size_t h = 0; h < m1.vf.layers.size(); ++h) {
      dA += (m1.vf.layers[h].A - m2.vf.layers[h].A).norm();
      db += (m1.vf.layers[h].b - m2.vf.layers[h].b).norm();
    }
    const double bound = c.M * (m1.phi - m2.phi).norm() + c.C_A * dA + c.C_b * db + c.C_U * (m1.U - m2.U).norm() +
                         c.C_v * (m1.v - m2.v).norm();
    r.record(gap, bound, {{"trial", i}, {"seed", seed}, {"phi_only", phi_only}, {"activation", activation_name(act)}});
  });
  return res;
}

/// |y| <= outcome_bound for random teachers and paths. Teachers are drawn
/// from the space; the bound uses the teacher's own constants.
[[nodiscard]] inline CheckResult check_outcome_bound(const ParamSpace& s, std::size_t trials, std::uint64_t seed,
                                                     unsigned threads = 1) {
  s.validate();
  return detail::run_trials("outcome_bound", trials, threads, [&](std::size_t i, CheckResult& r) {
    Rng rng = make_rng(seed, i);
    TeacherModel t;
    t.params = sample_params_in(s, detail::kActivations[i % 3], rng);
    t.noise_bound = std::uniform_real_distribution<double>(0.0, 0.5)(rng);
    t.noise_seed = rng();
    const SamplingGrid grid = sample_grid(1 + rng() % 32, rng);
    const SampledPath x = sample_lipschitz_path(grid, s.d, s.L_x, s.B_x, 1 + rng() % 8, rng);
    const Dataset data = teacher_generate(t, {x});
    const TeacherSpec spec = teacher_spec(t, s.B_x);
    r.record(std::abs(data[0].y), outcome_bound(spec, t.params.phi.norm(), s.L_x), {{"trial", i}, {"seed", seed}});
  });
}

// ---------------------------------------------------------------------------
// Gradient check

struct GradientConfig {
  Dims dims;
  Activation activation = Activation::tanh;
  LossKind loss = LossKind::squared_error;
  std::size_t K = 3;
};

/// Central differences of the loss wrt every parameter coordinate, h = 1e-5.
/// A coordinate passes if |a - f| <= 1e-6 max(|a|, |f|) or |a - f| <= 1e-8;
/// max_ratio is the largest error relative to that tolerance.
[[nodiscard]] inline CheckResult check_gradients(std::size_t trials, std::uint64_t seed, unsigned threads = 1) {
  constexpr double h = 1e-5;
  constexpr double rel_tol = 1e-6;
  constexpr double abs_tol = 1e-8;
  return detail::run_trials("gradients", trials, threads, [&](std::size_t i, CheckResult& r) {
    Rng rng = make_rng(seed, i);
    GradientConfig cfg;
    cfg.dims = Dims{1 + static_cast<int>(rng() % 3), 2 + static_cast<int>(rng() % 3), 1 + static_cast<int>(rng() % 3)};
    cfg.activation = i % 4 == 3 ? Activation::identity : Activation::tanh;
    cfg.loss = i % 2 == 0 ? LossKind::squared_error : LossKind::bce_with_logit;
    cfg.K = rng() % 2 == 0 ? 3 : 10;

    ModelParams m = ModelParams::zeros(cfg.dims, cfg.activation);
    std::normal_distribution<double> normal(0.0, 0.6);
    for (auto& g : param_groups(m)) {
      for (Eigen::Index c = 0; c < g.size; ++c) {
        g.data[c] = normal(rng);
      }
    }
    const SamplingGrid grid = sample_grid(cfg.K, rng);
    RowMatrix values(static_cast<Eigen::Index>(cfg.K + 1), cfg.dims.d);
    std::normal_distribution<double> step(0.0, 0.4);
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      values(0, c) = step(rng);
    }
    for (Eigen::Index k = 1; k < values.rows(); ++k) {
      for (Eigen::Index c = 0; c < values.cols(); ++c) {
        values(k, c) = values(k - 1, c) + step(rng);
      }
    }
    const SampledPath path(grid, values);
    const LossSpec spec{cfg.loss, 1.0, 1.0};
    const double y = cfg.loss == LossKind::squared_error ? normal(rng) : static_cast<double>(rng() % 2);

    const GradientBundle grad = backward(m, path, spec, y);
    const auto G = param_groups(grad);
    auto P = param_groups(m);
    Tape scratch;
    CheckResult local;
    for (std::size_t gi = 0; gi < P.size(); ++gi) {
      for (Eigen::Index c = 0; c < P[gi].size; ++c) {
        const double saved = P[gi].data[c];
        P[gi].data[c] = saved + h;
        const double lp = loss_eval(spec, y, predict(m, path, scratch));
        P[gi].data[c] = saved - h;
        const double lm = loss_eval(spec, y, predict(m, path, scratch));
        P[gi].data[c] = saved;
        const double fd = (lp - lm) / (2.0 * h);
        const double an = G[gi].data[c];
        const double err = std::abs(an - fd);
        const double tol = std::max(rel_tol * std::max(std::abs(an), std::abs(fd)), abs_tol);
        // Recorded as err/tol <= 1, so violations match the pass rule exactly.
        local.record(err / tol, 1.0 - kCheckSlack,
                     {{"trial", i},
                      {"seed", seed},
                      {"coordinate", group_label(P[gi].kind, P[gi].layer) + "[" + std::to_string(c) + "]"},
                      {"q", cfg.dims.q},
                      {"p", cfg.dims.p},
                      {"d", cfg.dims.d},
                      {"K", cfg.K},
                      {"activation", activation_name(cfg.activation)},
                      {"loss", loss_name(cfg.loss)},
                      {"analytic", an},
                      {"finite_difference", fd}});
      }
    }
    // One trial per configuration; coordinates are folded into the witness.
    r.trials = 1;
    r.violations = local.violations > 0 ? 1 : 0;
    r.max_ratio = local.max_ratio;
    r.worst_case = local.worst_case;
  });
}

// ---------------------------------------------------------------------------
// Discretization scaling

struct DiscretizationRow {
  std::size_t K = 0;
  double mesh = 0.0;
  double mean_gap = 0.0;
  double max_gap = 0.0;
  double bound = 0.0;  // C^1_Theta |D| / L_l
};

struct DiscretizationTable {
  std::vector<DiscretizationRow> rows;
  double loglog_slope = 0.0;  // least-squares slope of log mean gap vs log mesh
  CheckResult check;
};

/// Fine paths (uniform grid) are the ground truth. Each rung restricts them
/// to a coarse uniform grid with K intervals, which must divide the fine K.
/// The bound uses the continuous output bound so that it is exactly linear
/// in the mesh.
[[nodiscard]] inline DiscretizationTable check_discretization_scaling(const ParamSpace& s, const ModelParams& model,
                                                                      const std::vector<SampledPath>& fine_paths,
                                                                      const std::vector<std::size_t>& ladder) {
  s.validate();
  detail::require(!fine_paths.empty(), "check_discretization_scaling: no fine paths");
  const std::size_t K_fine = fine_paths.front().n_intervals();
  const LossSpec unit{LossKind::squared_error, 1.0, 1.0};
  std::vector<double> fine_pred;
  Tape scratch;
  for (const auto& p : fine_paths) {
    detail::require(p.n_intervals() == K_fine, "check_discretization_scaling: fine paths must share a grid");
    fine_pred.push_back(predict(model, p, scratch));
  }
  DiscretizationTable table;
  table.check.name = "discretization_scaling";
  for (std::size_t K : ladder) {
    detail::require(K >= 1 && K_fine % K == 0, "check_discretization_scaling: K must divide the fine grid size");
    const SamplingGrid coarse = SamplingGrid::uniform(K + 1);
    DiscretizationRow row;
    row.K = K;
    row.mesh = coarse.mesh();
    row.bound = discretization_bias_bound(s, unit, GridSpec{row.mesh, static_cast<long long>(K)}, WhichM::continuous);
    double sum = 0.0;
    for (std::size_t i = 0; i < fine_paths.size(); ++i) {
      const double g = std::abs(predict(model, restrict_to(fine_paths[i], coarse), scratch) - fine_pred[i]);
      sum += g;
      row.max_gap = std::max(row.max_gap, g);
      table.check.record(g, row.bound, {{"K", K}, {"path", i}});
    }
    row.mean_gap = sum / static_cast<double>(fine_paths.size());
    table.rows.push_back(row);
  }
  double sx = 0.0;
  double sy = 0.0;
  double sxx = 0.0;
  double sxy = 0.0;
  double n = 0.0;
  for (const auto& r : table.rows) {
    if (r.mean_gap > 0.0) {
      const double lx = std::log(r.mesh);
      const double ly = std::log(r.mean_gap);
      sx += lx;
      sy += ly;
      sxx += lx * lx;
      sxy += lx * ly;
      n += 1.0;
    }
  }
  const double denom = n * sxx - sx * sx;
  table.loglog_slope = n >= 2.0 && denom != 0.0 ? (n * sxy - sx * sy) / denom : 0.0;
  return table;
}

[[nodiscard]] inline std::string discretization_table_to_csv(const DiscretizationTable& t) {
  std::string out = "K,mesh,mean_gap,max_gap,bound\n";
  for (const auto& r : t.rows) {
    out += std::to_string(r.K) + "," + io::format_double(r.mesh) + "," + io::format_double(r.mean_gap) + "," +
           io::format_double(r.max_gap) + "," + io::format_double(r.bound) + "\n";
  }
  return out;
}

}  // namespace ncde
