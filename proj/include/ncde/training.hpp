#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ncde/errors.hpp"
#include "ncde/io.hpp"
#include "ncde/model.hpp"
#include "ncde/parallel.hpp"
#include "ncde/param_space.hpp"
#include "ncde/paths.hpp"

namespace ncde {

// ---------------------------------------------------------------------------
// Losses

enum class LossKind { squared_error, bce_with_logit };

struct LossSpec {
  LossKind kind = LossKind::squared_error;
  double lipschitz_const = 1.0;  // L_l on the relevant prediction range
  double sup_bound = 1.0;        // M_l

  void validate() const {
    detail::require(std::isfinite(lipschitz_const) && lipschitz_const > 0.0, "LossSpec: lipschitz_const must be > 0");
    detail::require(sup_bound >= 0.0, "LossSpec: sup_bound must be >= 0");
  }
};

[[nodiscard]] inline double softplus(double x) noexcept {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

[[nodiscard]] inline double sigmoid(double x) noexcept {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Constants for predictions bounded by M and outcomes bounded by B_y.
/// Squared error: L_l = 2(M + B_y), M_l = (M + B_y)^2. Logistic: L_l = 1,
/// M_l = softplus(M).
[[nodiscard]] inline LossSpec make_loss_spec(LossKind kind, double M, double B_y = 0.0) {
  detail::require(M >= 0.0 && B_y >= 0.0, "make_loss_spec: M and B_y must be >= 0");
  LossSpec s;
  s.kind = kind;
  if (kind == LossKind::squared_error) {
    s.lipschitz_const = 2.0 * (M + B_y);
    s.sup_bound = (M + B_y) * (M + B_y);
  } else {
    s.lipschitz_const = 1.0;
    s.sup_bound = softplus(M);
  }
  return s;
}

[[nodiscard]] inline std::string loss_name(LossKind k) {
  return k == LossKind::squared_error ? "squared_error" : "bce_with_logit";
}

[[nodiscard]] inline LossKind loss_from_name(const std::string& s) {
  if (s == "squared_error") {
    return LossKind::squared_error;
  }
  if (s == "bce_with_logit") {
    return LossKind::bce_with_logit;
  }
  throw ValidationError("unknown loss '" + s + "'");
}

namespace detail {

inline double signed_label(double y) {
  if (y != 0.0 && y != 1.0) {
    throw ValidationError("bce_with_logit: label must be 0 or 1");
  }
  return 2.0 * y - 1.0;
}

}  // namespace detail

[[nodiscard]] inline double loss_eval(const LossSpec& spec, double y, double pred) {
  if (spec.kind == LossKind::squared_error) {
    return (y - pred) * (y - pred);
  }
  return softplus(-detail::signed_label(y) * pred);
}

/// d loss / d pred.
[[nodiscard]] inline double loss_derivative(const LossSpec& spec, double y, double pred) {
  if (spec.kind == LossKind::squared_error) {
    return 2.0 * (pred - y);
  }
  const double s = detail::signed_label(y);
  return -s * sigmoid(-s * pred);
}

// ---------------------------------------------------------------------------
// Reverse-mode gradient

/// Reusable buffers for one backward pass.
struct BackwardScratch {
  Tape tape;
  std::vector<double> lambda;
  std::vector<double> ga;
  std::vector<double> gb;
};

/// Adds weight * d loss / d theta into `grad` and returns the loss. `grad`
/// must already have the parameter shapes.
inline double accumulate_gradient(const ModelParams& m, const SampledPath& path, const LossSpec& spec, double y,
                                  BackwardScratch& s, GradientBundle& grad, double weight = 1.0) {
  forward_tape(m, path, s.tape);
  const Tape& t = s.tape;
  const std::size_t p = static_cast<std::size_t>(m.dims.p);
  const std::size_t d = static_cast<std::size_t>(m.dims.d);
  const std::size_t q = static_cast<std::size_t>(m.dims.q);
  const std::size_t K = t.K;
  const double loss = loss_eval(spec, y, t.prediction);
  const double dl = weight * loss_derivative(spec, y, t.prediction);

  s.lambda.resize(p);
  s.ga.resize(p * d);
  s.gb.resize(p * d);
  const double* zK = t.z.data() + K * p;
  for (std::size_t i = 0; i < p; ++i) {
    grad.phi[static_cast<Eigen::Index>(i)] += dl * zK[i];
    s.lambda[i] = dl * m.phi[static_cast<Eigen::Index>(i)];
  }

  const double* x = path.values.data();
  for (std::size_t k = K; k >= 1; --k) {
    const double* x0 = x + (k - 1) * d;
    const double* x1 = x + k * d;
    const double* zprev = t.z.data() + (k - 1) * p;
    const double* act = t.acts.data() + (k - 1) * t.stride;
    double* g = s.ga.data();
    double* gnext = s.gb.data();
    for (std::size_t i = 0; i < p; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        g[i * d + j] = s.lambda[i] * (x1[j] - x0[j]);
      }
    }
    for (std::size_t hh = q; hh-- > 0;) {
      const auto& L = m.vf.layers[hh];
      auto& dL = grad.vf.layers[hh];
      const std::size_t rows = static_cast<std::size_t>(L.A.rows());
      const double* out = act + hh * p;
      const double* in = hh == 0 ? zprev : act + (hh - 1) * p;
      detail::scale_by_derivative(m.activation, out, g, rows);
      const double* A = L.A.data();
      double* dA = dL.A.data();
      double* db = dL.b.data();
      for (std::size_t i = 0; i < rows; ++i) {
        db[i] += g[i];
      }
      for (std::size_t j = 0; j < p; ++j) {
        const double xin = in[j];
        const double* col = A + j * rows;
        double* dcol = dA + j * rows;
        double acc = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
          dcol[i] += g[i] * xin;
          acc += col[i] * g[i];
        }
        gnext[j] = acc;
      }
      std::swap(g, gnext);
    }
    bool finite = true;
    for (std::size_t i = 0; i < p; ++i) {
      s.lambda[i] += g[i];
      finite = finite && std::isfinite(s.lambda[i]);
    }
    if (!finite) {
      throw NumericError("backward: non-finite adjoint at step " + std::to_string(k));
    }
  }

  const double* z0 = t.z.data();
  double* g = s.ga.data();
  for (std::size_t i = 0; i < p; ++i) {
    g[i] = s.lambda[i];
  }
  detail::scale_by_derivative(m.activation, z0, g, p);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < p; ++i) {
      grad.U(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) += g[i] * x[j];
    }
  }
  for (std::size_t i = 0; i < p; ++i) {
    grad.v[static_cast<Eigen::Index>(i)] += g[i];
  }
  return loss;
}

/// Exact gradient of loss_eval(spec, y, forward(m, path).prediction).
[[nodiscard]] inline GradientBundle backward(const ModelParams& m, const SampledPath& path, const LossSpec& spec,
                                             double y) {
  m.validate();
  GradientBundle grad = ModelParams::zeros(m.dims, m.activation);
  BackwardScratch s;
  (void)accumulate_gradient(m, path, spec, y, s, grad);
  return grad;
}

// ---------------------------------------------------------------------------
// Optimizer and projection

/// Groups the optimizer leaves untouched.
struct FreezeSet {
  bool phi = false;
  bool init = false;

  [[nodiscard]] bool frozen(GroupKind k) const noexcept {
    return (phi && k == GroupKind::readout) ||
           (init && (k == GroupKind::init_weight || k == GroupKind::init_bias));
  }
};

struct AdamConfig {
  double learning_rate = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  ModelParams m1;
  ModelParams m2;
  long long step = 0;

  [[nodiscard]] static AdamState zeros(const ModelParams& like) {
    return {ModelParams::zeros(like.dims, like.activation), ModelParams::zeros(like.dims, like.activation), 0};
  }
};

/// One bias-corrected Adam update.
inline void adam_step(ModelParams& params, AdamState& state, const GradientBundle& grads, const AdamConfig& cfg,
                      const FreezeSet& freeze = {}) {
  state.step += 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  auto P = param_groups(params);
  auto G = param_groups(grads);
  auto M1 = param_groups(state.m1);
  auto M2 = param_groups(state.m2);
  for (std::size_t gi = 0; gi < P.size(); ++gi) {
    if (freeze.frozen(P[gi].kind)) {
      continue;
    }
    for (Eigen::Index i = 0; i < P[gi].size; ++i) {
      const double g = G[gi].data[i];
      double& a = M1[gi].data[i];
      double& b = M2[gi].data[i];
      a = cfg.beta1 * a + (1.0 - cfg.beta1) * g;
      b = cfg.beta2 * b + (1.0 - cfg.beta2) * g * g;
      P[gi].data[i] -= cfg.learning_rate * (a / c1) / (std::sqrt(b / c2) + cfg.eps);
    }
  }
}

[[nodiscard]] inline double group_bound(const ParamSpace& s, GroupKind k) noexcept {
  switch (k) {
    case GroupKind::readout:
      return s.B_phi;
    case GroupKind::field_weight:
      return s.B_A;
    case GroupKind::field_bias:
      return s.B_b;
    case GroupKind::init_weight:
      return s.B_U;
    case GroupKind::init_bias:
      return s.B_v;
  }
  return 0.0;
}

/// Radially rescales every group whose Frobenius norm exceeds its bound.
/// The scale is nudged down until the rounded norm is <= the bound, so a
/// second projection is the identity.
[[nodiscard]] inline ModelParams project_params(const ModelParams& params, const ParamSpace& space) {
  ModelParams out = params;
  for (auto& g : param_groups(out)) {
    const double bound = group_bound(space, g.kind);
    Eigen::Map<Eigen::VectorXd> x(g.data, g.size);
    const double n = x.norm();
    if (n <= bound) {
      continue;
    }
    const Eigen::VectorXd orig = x;
    double scale = bound / n;
    x = orig * scale;
    while (x.norm() > bound) {
      scale = std::nextafter(scale, 0.0);
      x = orig * scale;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

struct Sample {
  SampledPath path;
  double y = 0.0;
};

using Dataset = std::vector<Sample>;

struct TrainConfig {
  AdamConfig adam;
  int iterations = 2000;
  std::optional<ParamSpace> project_to;
  FreezeSet freeze;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::vector<int> snapshot_iterations;  // parameters kept at the start of these iterations

  void validate() const {
    detail::require(std::isfinite(adam.learning_rate) && adam.learning_rate > 0.0, "TrainConfig: learning_rate must be > 0");
    detail::require(iterations >= 1, "TrainConfig: iterations must be >= 1");
    detail::require(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0,
                    "TrainConfig: Adam betas must lie in [0, 1)");
    detail::require(adam.eps > 0.0, "TrainConfig: Adam eps must be > 0");
    for (int s : snapshot_iterations) {
      detail::require(s >= 0 && s <= iterations, "TrainConfig: snapshot iteration out of range");
    }
  }
};

struct TrainRecord {
  int iter = 0;
  double loss = 0.0;
  std::vector<double> norms;  // param_groups order
};

struct TrainLog {
  std::vector<std::string> group_labels;
  std::vector<TrainRecord> records;  // record i: state at the start of iteration i
  double final_loss = 0.0;
  std::vector<double> final_norms;
  std::vector<std::pair<int, ModelParams>> snapshots;
};

[[nodiscard]] inline double empirical_risk(const ModelParams& m, const Dataset& data, const LossSpec& spec) {
  detail::require(!data.empty(), "empirical_risk: empty dataset");
  Tape scratch;
  double sum = 0.0;
  for (const auto& s : data) {
    sum += loss_eval(spec, s.y, predict(m, s.path, scratch));
  }
  return sum / static_cast<double>(data.size());
}

/// |train risk - test risk|, the test mean standing in for the expectation.
[[nodiscard]] inline double generalization_gap(const ModelParams& m, const Dataset& train, const Dataset& test,
                                               const LossSpec& spec) {
  return std::abs(empirical_risk(m, train, spec) - empirical_risk(m, test, spec));
}

namespace detail {

inline void zero_params(ModelParams& m) {
  for (auto& g : param_groups(m)) {
    std::fill(g.data, g.data + g.size, 0.0);
  }
}

}  // namespace detail

/// Full-batch Adam on the mean loss. Per-sample gradients may be computed
/// on several threads; they are summed in sample order, so the result does
/// not depend on the thread count.
[[nodiscard]] inline std::pair<ModelParams, TrainLog> train_erm(const Dataset& data, const ModelParams& params0,
                                                               const LossSpec& spec, const TrainConfig& cfg) {
  detail::require(!data.empty(), "train_erm: empty dataset");
  cfg.validate();
  params0.validate();
  for (const auto& s : data) {
    detail::require(s.path.dim() == params0.dims.d, "train_erm: path dimension does not match the model");
  }

  ModelParams params = cfg.project_to ? project_params(params0, *cfg.project_to) : params0;
  const std::size_t n = data.size();
  const unsigned workers = std::max(1U, std::min<unsigned>(cfg.threads, static_cast<unsigned>(n)));
  std::vector<BackwardScratch> scratch(n);
  std::vector<GradientBundle> per_sample(n, ModelParams::zeros(params.dims, params.activation));
  std::vector<double> losses(n);
  GradientBundle total = ModelParams::zeros(params.dims, params.activation);
  AdamState adam = AdamState::zeros(params);

  TrainLog log;
  for (const auto& g : param_groups(params)) {
    log.group_labels.push_back(group_label(g.kind, g.layer));
  }
  log.records.reserve(static_cast<std::size_t>(cfg.iterations));
  const double inv_n = 1.0 / static_cast<double>(n);

  auto evaluate = [&](int iter) {
    try {
      detail::parallel_for(n, workers, [&](std::size_t i) {
        detail::zero_params(per_sample[i]);
        losses[i] = accumulate_gradient(params, data[i].path, spec, data[i].y, scratch[i], per_sample[i], inv_n);
      });
    } catch (const NumericError& e) {
      throw NumericError("iteration " + std::to_string(iter) + ": " + e.what());
    }
    detail::zero_params(total);
    auto T = param_groups(total);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      loss += losses[i];
      auto S = param_groups(std::as_const(per_sample[i]));
      for (std::size_t gi = 0; gi < T.size(); ++gi) {
        for (Eigen::Index c = 0; c < T[gi].size; ++c) {
          T[gi].data[c] += S[gi].data[c];
        }
      }
    }
    return loss * inv_n;
  };

  auto maybe_snapshot = [&](int iter) {
    for (int s : cfg.snapshot_iterations) {
      if (s == iter) {
        log.snapshots.emplace_back(iter, params);
        break;
      }
    }
  };

  for (int it = 0; it < cfg.iterations; ++it) {
    maybe_snapshot(it);
    const double loss = evaluate(it);
    log.records.push_back({it, loss, group_norms(params)});
    adam_step(params, adam, total, cfg.adam, cfg.freeze);
    if (cfg.project_to) {
      params = project_params(params, *cfg.project_to);
    }
  }
  maybe_snapshot(cfg.iterations);
  log.final_loss = empirical_risk(params, data, spec);
  log.final_norms = group_norms(params);
  return {std::move(params), std::move(log)};
}

/// `iter,loss,norm_phi,norm_A1..,norm_b1..,norm_U,norm_v`. With `normalized`
/// each norm is divided by its iteration-0 value.
[[nodiscard]] inline std::string train_log_to_csv(const TrainLog& log, bool normalized = false) {
  std::string out = "iter,loss";
  for (const auto& l : log.group_labels) {
    out += ",norm_" + l;
  }
  out += '\n';
  if (log.records.empty()) {
    return out;
  }
  const auto& base = log.records.front().norms;
  for (const auto& r : log.records) {
    out += std::to_string(r.iter);
    out += ',';
    out += io::format_double(r.loss);
    for (std::size_t g = 0; g < r.norms.size(); ++g) {
      out += ',';
      out += io::format_double(normalized ? r.norms[g] / base[g] : r.norms[g]);
    }
    out += '\n';
  }
  return out;
}

}  // namespace ncde
