#pragma once

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ncde/errors.hpp"
#include "ncde/io.hpp"
#include "ncde/param_space.hpp"
#include "ncde/training.hpp"

namespace ncde {

namespace detail {

/// Product of nonnegative factors. Any zero factor gives 0, so an infinite
/// exponential next to a vanishing bound does not produce NaN.
inline double safe_product(std::initializer_list<double> factors) {
  double out = 1.0;
  for (double f : factors) {
    if (f == 0.0) {
      return 0.0;
    }
  }
  for (double f : factors) {
    out *= f;
  }
  return out;
}

inline double ipow(double base, int e) {
  double out = 1.0;
  for (int i = 0; i < e; ++i) {
    out *= base;
  }
  return out;
}

}  // namespace detail

/// (L_sigma B_A)^q, the Lipschitz constant of every field in the space.
[[nodiscard]] inline double field_lipschitz(const ParamSpace& s) {
  return detail::ipow(s.L_sigma * s.B_A, s.q);
}

/// L_sigma B_b sum_{j<q} (L_sigma B_A)^j, a bound on ||G(0)||.
[[nodiscard]] inline double kappa0(const ParamSpace& s) {
  s.validate();
  const double a = s.L_sigma * s.B_A;
  double sum = 0.0;
  double term = 1.0;
  for (int j = 0; j < s.q; ++j) {
    sum += term;
    term *= a;
  }
  return detail::safe_product({s.L_sigma, s.B_b, sum});
}

namespace detail {

inline double bracket(const ParamSpace& s) { return s.B_U * s.B_x + s.B_v + kappa0(s) * s.L_x; }

}  // namespace detail

/// Radius of the ball holding every latent state, continuous inputs: M_Theta / B_phi.
[[nodiscard]] inline double latent_radius(const ParamSpace& s) {
  s.validate();
  return detail::safe_product({s.L_sigma, std::exp(field_lipschitz(s) * s.L_x), detail::bracket(s)});
}

/// Same for inputs sampled on `g`: M_Theta^D / B_phi.
[[nodiscard]] inline double latent_radius_d(const ParamSpace& s, const GridSpec& g) {
  s.validate();
  g.validate();
  const double growth = std::exp(static_cast<double>(g.n_intervals) * std::log1p(field_lipschitz(s) * s.L_x * g.mesh));
  return detail::safe_product({s.L_sigma, growth, detail::bracket(s)});
}

/// Output bound for continuous inputs.
[[nodiscard]] inline double m_theta(const ParamSpace& s) { return detail::safe_product({s.B_phi, latent_radius(s)}); }

/// Output bound for inputs sampled on `g`.
[[nodiscard]] inline double m_theta_d(const ParamSpace& s, const GridSpec& g) {
  return detail::safe_product({s.B_phi, latent_radius_d(s, g)});
}

/// Constants of the parameter-Lipschitz bound
/// |f_1 - f_2| <= M ||dPhi|| + C_A sum ||dA_j|| + C_b sum ||db_j|| + C_U ||dU|| + C_v ||dv||.
struct ParamLipschitzConstants {
  double M = 0.0;
  double C_A = 0.0;
  double C_b = 0.0;
  double C_U = 0.0;
  double C_v = 0.0;
  double radius = 0.0;  // Omega radius used for the max over z
};

namespace detail {

/// max_j C^j_A(r) and max_j C^j_b, with
/// C^j_A(z) = (L B_A)^{q-j} L (alpha_{j-1} ||z|| + beta_{j-1}), C^j_b = (L B_A)^{q-j} L.
inline std::pair<double, double> layer_constants(const ParamSpace& s, double r) {
  const double a = s.L_sigma * s.B_A;
  double ca = 0.0;
  double cb = 0.0;
  for (int j = 1; j <= s.q; ++j) {
    const double alpha = ipow(a, j - 1);
    double beta_sum = 0.0;
    for (int i = 0; i < j - 1; ++i) {
      beta_sum += ipow(a, i);
    }
    const double beta = s.L_sigma * s.B_b * beta_sum;
    const double outer = ipow(a, s.q - j) * s.L_sigma;
    ca = std::max(ca, safe_product({outer, alpha * r + beta}));
    cb = std::max(cb, outer);
  }
  return {ca, cb};
}

inline ParamLipschitzConstants param_constants_with_radius(const ParamSpace& s, double M, double r) {
  const auto [ca, cb] = layer_constants(s, r);
  const double growth = std::exp(field_lipschitz(s) * s.L_x);
  const double growth_uv = std::exp(s.L_sigma * s.B_A * s.L_x);
  ParamLipschitzConstants c;
  c.M = M;
  c.radius = r;
  c.C_A = safe_product({s.B_phi, s.L_x, growth, ca});
  c.C_b = safe_product({s.B_phi, s.L_x, growth, cb});
  c.C_U = safe_product({s.B_phi, s.B_x, growth_uv, s.L_sigma});
  c.C_v = safe_product({s.B_phi, growth_uv, s.L_sigma});
  return c;
}

}  // namespace detail

[[nodiscard]] inline ParamLipschitzConstants param_lipschitz_constants(const ParamSpace& s) {
  return detail::param_constants_with_radius(s, m_theta(s), latent_radius(s));
}

/// Sampled-input variant: M^D and radius M^D / B_phi. C_U and C_v are shared.
[[nodiscard]] inline ParamLipschitzConstants param_lipschitz_constants(const ParamSpace& s, const GridSpec& g) {
  return detail::param_constants_with_radius(s, m_theta_d(s, g), latent_radius_d(s, g));
}

/// K_1 = max{B_phi M, B_v C_v}, K_2 = max{B_b C_b, B_A C_A, B_U C_U}.
[[nodiscard]] inline std::pair<double, double> complexity_constants(const ParamSpace& s,
                                                                    const std::optional<GridSpec>& g) {
  const ParamLipschitzConstants c = g ? param_lipschitz_constants(s, *g) : param_lipschitz_constants(s);
  const double k1 = std::max(detail::safe_product({s.B_phi, c.M}), detail::safe_product({s.B_v, c.C_v}));
  const double k2 = std::max({detail::safe_product({s.B_b, c.C_b}), detail::safe_product({s.B_A, c.C_A}),
                              detail::safe_product({s.B_U, c.C_U})});
  return {k1, k2};
}

/// log of the covering-number bound at scale eta:
/// 2p log(1 + C K1/eta) + (q-1)p(p+1) log(1 + C K2 sqrt(p)/eta)
///   + dp(2+p) log(1 + C K2 sqrt(dp)/eta), C = 4q + 6.
[[nodiscard]] inline double covering_number_log(const ParamSpace& s, const std::optional<GridSpec>& g, double eta) {
  s.validate();
  detail::require(eta > 0.0, "covering_number_log: eta must be > 0");
  const auto [k1, k2] = complexity_constants(s, g);
  const double C = 4.0 * s.q + 6.0;
  const double p = s.p;
  const double d = s.d;
  const double q = s.q;
  return 2.0 * p * std::log1p(C * k1 / eta) + (q - 1.0) * p * (p + 1.0) * std::log1p(C * k2 * std::sqrt(p) / eta) +
         d * p * (2.0 + p) * std::log1p(C * k2 * std::sqrt(d * p) / eta);
}

/// Exponent grouping inside the complexity square root.
enum class ComplexityGrouping {
  per_layer,  // 2p U1 + (q-1)p(p+1) U2 + dp(2+p) U3
  lumped,     // (q+1)p(p+1) U1 + 2dp U2 + dp^2 U3
};

namespace detail {

/// sum_i c_i log(arg_i) with U1 = log(C sqrt(n) K1), U2 = log(C sqrt(np) K2),
/// U3 = log(C sqrt(ndp) K2), C = 8q + 12.
inline double complexity_sum(const ParamSpace& s, const std::optional<GridSpec>& g, double n,
                             ComplexityGrouping grouping) {
  const auto [k1, k2] = complexity_constants(s, g);
  const double C = 8.0 * s.q + 12.0;
  const double p = s.p;
  const double d = s.d;
  const double q = s.q;
  const double args[3] = {C * std::sqrt(n) * k1, C * std::sqrt(n * p) * k2, C * std::sqrt(n * d * p) * k2};
  double coeff[3];
  if (grouping == ComplexityGrouping::per_layer) {
    coeff[0] = 2.0 * p;
    coeff[1] = (q - 1.0) * p * (p + 1.0);
    coeff[2] = d * p * (2.0 + p);
  } else {
    coeff[0] = (q + 1.0) * p * (p + 1.0);
    coeff[1] = 2.0 * d * p;
    coeff[2] = d * p * p;
  }
  double sum = 0.0;
  for (int i = 0; i < 3; ++i) {
    if (coeff[i] == 0.0) {
      continue;
    }
    if (!(args[i] > 1.0)) {
      throw DomainError("complexity term U" + std::to_string(i + 1) + " has log argument " +
                        io::format_double(args[i]) + " <= 1; increase n");
    }
    sum += coeff[i] * std::log(args[i]);
  }
  return sum;
}

}  // namespace detail

/// 4/n + (24 M / sqrt(n)) sqrt(complexity sum). M is M_Theta without a grid
/// and M_Theta^D with one.
[[nodiscard]] inline double rademacher_bound(const ParamSpace& s, const std::optional<GridSpec>& g, double n,
                                             ComplexityGrouping grouping = ComplexityGrouping::per_layer) {
  s.validate();
  detail::require(n >= 1.0, "rademacher_bound: n must be >= 1");
  const double M = g ? m_theta_d(s, *g) : m_theta(s);
  const double root = std::sqrt(detail::complexity_sum(s, g, n, grouping));
  return 4.0 / n + detail::safe_product({24.0, M, root}) / std::sqrt(n);
}

/// (24 M^D L_l / sqrt(n)) sqrt(complexity sum) + M_l sqrt(log(1/delta) / (2n)).
[[nodiscard]] inline double generalization_bound(const ParamSpace& s, const GridSpec& g, double n, double delta,
                                                 const LossSpec& loss,
                                                 ComplexityGrouping grouping = ComplexityGrouping::per_layer) {
  s.validate();
  loss.validate();
  detail::require(delta > 0.0 && delta < 1.0, "generalization_bound: delta must lie in (0, 1)");
  detail::require(n >= 1.0, "generalization_bound: n must be >= 1");
  const double M = m_theta_d(s, g);
  const double root = std::sqrt(detail::complexity_sum(s, g, n, grouping));
  const double complexity = detail::safe_product({24.0, M, loss.lipschitz_const, root}) / std::sqrt(n);
  const double confidence = loss.sup_bound * std::sqrt(std::log(1.0 / delta) / (2.0 * n));
  return complexity + confidence;
}

/// Total-variation constant of a CDE solution:
/// [L_F (||z0|| + ||F(0)|| L) e^{L_F L} + ||F(0)||] e^{L_F L}.
[[nodiscard]] inline double c1_constant(double L_F, double F0_norm, double z0_norm, double L_path) {
  detail::require(L_F >= 0.0 && F0_norm >= 0.0 && z0_norm >= 0.0 && L_path >= 0.0,
                  "c1_constant: inputs must be >= 0");
  const double e = std::exp(L_F * L_path);
  return (detail::safe_product({L_F, z0_norm + F0_norm * L_path, e}) + F0_norm) * e;
}

/// Inputs of the flow-continuity bound between dw = F(w) dx and dv = G(v) dr.
struct FlowInputs {
  double L_F = 0.0;
  double L_G = 0.0;
  double L_x = 0.0;  // total variation bound of x
  double L_r = 0.0;  // total variation bound of r
  double init_gap = 0.0;        // ||w0 - v0||
  double path_start_gap = 0.0;  // ||x0 - r0||
  double path_sup_gap = 0.0;    // ||x - r||_inf
  double field_gap = 0.0;       // max over the latent ball of ||F - G||
  double w0_norm = 0.0;
  double v0_norm = 0.0;
  double F0_norm = 0.0;  // ||F(0)||
  double G0_norm = 0.0;  // ||G(0)||
};

struct FlowBound {
  double primary = 0.0;    // Gronwall on the F-driven equation
  double symmetric = 0.0;  // roles of the two equations exchanged
  double value = 0.0;      // min of the two
};

[[nodiscard]] inline FlowBound flow_continuity_bound(const FlowInputs& in) {
  const double c1F = c1_constant(in.L_F, in.F0_norm, in.w0_norm, in.L_x);
  const double c1G = c1_constant(in.L_G, in.G0_norm, in.v0_norm, in.L_r);
  FlowBound b;
  b.primary = (in.init_gap + in.path_start_gap +
               in.path_sup_gap * (1.0 + detail::safe_product({in.L_F, in.L_r, c1F})) + in.field_gap * in.L_r) *
              std::exp(in.L_F * in.L_x);
  b.symmetric = (in.init_gap + in.path_start_gap +
                 in.path_sup_gap * (1.0 + detail::safe_product({in.L_G, in.L_x, c1G})) + in.field_gap * in.L_x) *
                std::exp(in.L_G * in.L_r);
  b.value = std::min(b.primary, b.symmetric);
  return b;
}

/// Which output bound enters the discretization constant.
enum class WhichM { continuous, discretized, minimum };

/// C^1_Theta = L_l B_phi e^{a L_x} L_x [1 + a (a M / B_phi + kappa0) L_x], a = (L_sigma B_A)^q.
[[nodiscard]] inline double discretization_constant(const ParamSpace& s, const LossSpec& loss, const GridSpec& g,
                                                    WhichM which = WhichM::minimum) {
  s.validate();
  g.validate();
  const double a = field_lipschitz(s);
  double r = 0.0;
  switch (which) {
    case WhichM::continuous:
      r = latent_radius(s);
      break;
    case WhichM::discretized:
      r = latent_radius_d(s, g);
      break;
    case WhichM::minimum:
      r = std::min(latent_radius(s), latent_radius_d(s, g));
      break;
  }
  const double inner = 1.0 + detail::safe_product({a, a * r + kappa0(s), s.L_x});
  return detail::safe_product({loss.lipschitz_const, s.B_phi, std::exp(a * s.L_x), s.L_x, inner});
}

[[nodiscard]] inline double discretization_bias_bound(const ParamSpace& s, const LossSpec& loss, const GridSpec& g,
                                                      WhichM which = WhichM::minimum) {
  return detail::safe_product({discretization_constant(s, loss, g, which), g.mesh});
}

/// Constants of a ground-truth CDE dz = G*(z) dx, z0 = phi*(x0).
struct TeacherSpec {
  double lipschitz_Gstar = 0.0;
  double gstar_at_zero_opnorm = 0.0;
  double B_phistar = 0.0;
  double noise_bound = 0.0;

  void validate() const {
    detail::require(lipschitz_Gstar >= 0.0 && gstar_at_zero_opnorm >= 0.0 && B_phistar >= 0.0 && noise_bound >= 0.0,
                    "TeacherSpec: all fields must be >= 0");
  }
};

/// L_l B_phi e^{L_G* L_x} [L_x field_gap + init_gap] + L_l (M_Theta / B_phi) phi_gap.
[[nodiscard]] inline double approximation_bias_bound(const ParamSpace& s, const LossSpec& loss, const TeacherSpec& t,
                                                     double field_gap, double init_gap, double phi_gap) {
  s.validate();
  t.validate();
  detail::require(field_gap >= 0.0 && init_gap >= 0.0 && phi_gap >= 0.0, "approximation_bias_bound: gaps must be >= 0");
  const double flow = detail::safe_product(
      {loss.lipschitz_const, s.B_phi, std::exp(t.lipschitz_Gstar * s.L_x), s.L_x * field_gap + init_gap});
  const double readout = detail::safe_product({loss.lipschitz_const, latent_radius(s), phi_gap});
  return flow + readout;
}

/// |y| <= B_phi (B_phi* + ||G*(0)|| L_x) e^{L_G* L_x} + M_eps.
[[nodiscard]] inline double outcome_bound(const TeacherSpec& t, double B_phi, double L_x) {
  t.validate();
  detail::require(B_phi >= 0.0 && L_x >= 0.0, "outcome_bound: B_phi and L_x must be >= 0");
  return detail::safe_product({B_phi, t.B_phistar + t.gstar_at_zero_opnorm * L_x, std::exp(t.lipschitz_Gstar * L_x)}) +
         t.noise_bound;
}

struct ApproximationGaps {
  double field = 0.0;
  double init = 0.0;
  double phi = 0.0;
};

struct TotalRiskReport {
  double rademacher = 0.0;
  double rademacher_d = 0.0;
  double worst_case = 0.0;      // 4 max{Rad, Rad^D}
  double discretization = 0.0;  // C^1 |D|
  double approximation = 0.0;
  double total = 0.0;
};

[[nodiscard]] inline TotalRiskReport total_risk_bound(const ParamSpace& s, const GridSpec& g, double n,
                                                      const LossSpec& loss, const TeacherSpec& t,
                                                      const ApproximationGaps& gaps) {
  TotalRiskReport r;
  r.rademacher = rademacher_bound(s, std::nullopt, n);
  r.rademacher_d = rademacher_bound(s, g, n);
  r.worst_case = 4.0 * std::max(r.rademacher, r.rademacher_d);
  r.discretization = discretization_bias_bound(s, loss, g);
  r.approximation = approximation_bias_bound(s, loss, t, gaps.field, gaps.init, gaps.phi);
  r.total = r.worst_case + r.discretization + r.approximation;
  return r;
}

// ---------------------------------------------------------------------------
// Reports

struct BoundReport {
  std::string name;
  double value = 0.0;
  std::vector<std::pair<std::string, double>> inputs;
  std::string formula_ref;
  bool overflow = false;
};

[[nodiscard]] inline BoundReport make_report(std::string name, double value,
                                             std::vector<std::pair<std::string, double>> inputs,
                                             std::string formula_ref) {
  BoundReport r{std::move(name), value, std::move(inputs), std::move(formula_ref), false};
  r.overflow = std::isinf(value);
  return r;
}

namespace detail {

inline std::vector<std::pair<std::string, double>> space_inputs(const ParamSpace& s) {
  return {{"B_A", s.B_A},     {"B_b", s.B_b}, {"B_U", s.B_U},         {"B_v", s.B_v},
          {"B_phi", s.B_phi}, {"q", s.q},     {"p", s.p},             {"d", s.d},
          {"L_sigma", s.L_sigma}, {"L_x", s.L_x}, {"B_x", s.B_x}};
}

inline std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') {
      out += "\"\"";
    } else {
      out += c;
    }
  }
  out += '"';
  return out;
}

}  // namespace detail

struct BoundRequest {
  ParamSpace space;
  GridSpec grid;
  double n = 1000.0;
  double delta = 0.05;
  LossKind loss = LossKind::squared_error;
  double B_y = 1.0;
  std::optional<TeacherSpec> teacher;
  ApproximationGaps gaps;
  double eta = 1.0;
};

/// Every constant and bound for one configuration. Terms whose domain
/// condition fails are omitted and the error is recorded under `skipped`.
[[nodiscard]] inline std::vector<BoundReport> bound_table(const BoundRequest& req,
                                                          std::vector<std::string>* skipped = nullptr) {
  const ParamSpace& s = req.space;
  s.validate();
  req.grid.validate();
  auto base = detail::space_inputs(s);
  auto with_grid = base;
  with_grid.emplace_back("mesh", req.grid.mesh);
  with_grid.emplace_back("K", static_cast<double>(req.grid.n_intervals));

  std::vector<BoundReport> out;
  out.push_back(make_report("kappa0", kappa0(s), base, "bound on ||G(0)||: geometric sum over depth"));
  out.push_back(make_report("M_theta", m_theta(s), base, "output bound, continuous inputs"));
  out.push_back(make_report("M_theta_D", m_theta_d(s, req.grid), with_grid, "output bound, sampled inputs"));
  const auto c = param_lipschitz_constants(s);
  const auto cd = param_lipschitz_constants(s, req.grid);
  out.push_back(make_report("omega_radius", c.radius, base, "latent ball radius M_theta / B_phi"));
  out.push_back(make_report("C_A", c.C_A, base, "parameter-Lipschitz constant for field weights"));
  out.push_back(make_report("C_b", c.C_b, base, "parameter-Lipschitz constant for field biases"));
  out.push_back(make_report("C_U", c.C_U, base, "parameter-Lipschitz constant for U"));
  out.push_back(make_report("C_v", c.C_v, base, "parameter-Lipschitz constant for v"));
  out.push_back(make_report("C_A_D", cd.C_A, with_grid, "field-weight constant over the sampled-input latent ball"));
  out.push_back(make_report("C_b_D", cd.C_b, with_grid, "field-bias constant, sampled inputs"));
  const auto [k1, k2] = complexity_constants(s, std::nullopt);
  const auto [k1d, k2d] = complexity_constants(s, req.grid);
  out.push_back(make_report("K_1", k1, base, "max{B_phi M_theta, B_v C_v}"));
  out.push_back(make_report("K_2", k2, base, "max{B_b C_b, B_A C_A, B_U C_U}"));
  out.push_back(make_report("K_1_D", k1d, with_grid, "K_1 with sampled-input constants"));
  out.push_back(make_report("K_2_D", k2d, with_grid, "K_2 with sampled-input constants"));

  auto with_eta = base;
  with_eta.emplace_back("eta", req.eta);
  out.push_back(make_report("log_covering_number", covering_number_log(s, std::nullopt, req.eta), with_eta,
                            "log covering number at scale eta, C = 4q+6"));

  const double M_for_loss = std::min(m_theta(s), m_theta_d(s, req.grid));
  LossSpec loss = make_loss_spec(req.loss, M_for_loss, req.B_y);
  // Overflowed output bound: every loss-dependent term is reported as +inf.
  const bool loss_overflow = !std::isfinite(loss.lipschitz_const) || !std::isfinite(loss.sup_bound);
  if (loss_overflow) {
    loss.lipschitz_const = 1.0;
    loss.sup_bound = 1.0;
  }
  const double inf = std::numeric_limits<double>::infinity();
  auto loss_value = [&](double v) { return loss_overflow ? inf : v; };
  auto with_n = with_grid;
  with_n.emplace_back("n", req.n);
  auto try_push = [&](const std::string& name, auto&& fn, std::vector<std::pair<std::string, double>> inputs,
                      const std::string& ref) {
    try {
      out.push_back(make_report(name, fn(), std::move(inputs), ref));
    } catch (const DomainError& e) {
      if (skipped != nullptr) {
        skipped->push_back(name + ": " + e.what());
      }
    }
  };
  try_push("rademacher", [&] { return rademacher_bound(s, std::nullopt, req.n); }, with_n,
           "Rademacher complexity bound, continuous inputs, eta = 1/sqrt(n)");
  try_push("rademacher_D", [&] { return rademacher_bound(s, req.grid, req.n); }, with_n,
           "Rademacher complexity bound, sampled inputs");
  auto gen_inputs = with_n;
  gen_inputs.emplace_back("delta", req.delta);
  gen_inputs.emplace_back("L_loss", loss.lipschitz_const);
  gen_inputs.emplace_back("M_loss", loss.sup_bound);
  try_push("generalization", [&] { return loss_value(generalization_bound(s, req.grid, req.n, req.delta, loss)); }, gen_inputs,
           "high-probability generalization bound, sampled inputs");
  auto disc_inputs = with_grid;
  disc_inputs.emplace_back("L_loss", loss.lipschitz_const);
  out.push_back(make_report("C1_theta", loss_value(discretization_constant(s, loss, req.grid)), disc_inputs,
                            "discretization constant with the Gronwall exponential"));
  out.push_back(make_report("discretization_bias", loss_value(discretization_bias_bound(s, loss, req.grid)), disc_inputs,
                            "C1_theta times the mesh"));
  if (req.teacher) {
    const TeacherSpec& t = *req.teacher;
    auto t_inputs = base;
    t_inputs.emplace_back("L_Gstar", t.lipschitz_Gstar);
    t_inputs.emplace_back("Gstar0", t.gstar_at_zero_opnorm);
    t_inputs.emplace_back("B_phistar", t.B_phistar);
    t_inputs.emplace_back("M_eps", t.noise_bound);
    out.push_back(make_report("outcome_bound", outcome_bound(t, s.B_phi, s.L_x), t_inputs,
                              "bound on teacher outcomes"));
    auto a_inputs = t_inputs;
    a_inputs.emplace_back("field_gap", req.gaps.field);
    a_inputs.emplace_back("init_gap", req.gaps.init);
    a_inputs.emplace_back("phi_gap", req.gaps.phi);
    a_inputs.emplace_back("L_loss", loss.lipschitz_const);
    out.push_back(make_report("approximation_bias",
                              loss_value(approximation_bias_bound(s, loss, t, req.gaps.field, req.gaps.init, req.gaps.phi)),
                              a_inputs, "flow continuity against the teacher plus readout gap"));
    try {
      const auto tr = total_risk_bound(s, req.grid, req.n, loss, t, req.gaps);
      a_inputs.emplace_back("n", req.n);
      a_inputs.emplace_back("mesh", req.grid.mesh);
      out.push_back(make_report("total_risk_worst_case", tr.worst_case, a_inputs, "4 max{Rad, Rad_D}"));
      out.push_back(make_report("total_risk", loss_value(tr.total), a_inputs, "worst case + discretization + approximation"));
    } catch (const DomainError& e) {
      if (skipped != nullptr) {
        skipped->push_back(std::string("total_risk: ") + e.what());
      }
    }
  }
  return out;
}

/// `name,value,inputs_json,formula_ref`.
[[nodiscard]] inline std::string bound_table_to_csv(const std::vector<BoundReport>& rows) {
  std::string out = "name,value,inputs_json,formula_ref\n";
  for (const auto& r : rows) {
    nlohmann::ordered_json inputs = nlohmann::ordered_json::object();
    for (const auto& [k, v] : r.inputs) {
      inputs[k] = v;
    }
    out += r.name + "," + io::format_double(r.value) + "," + detail::csv_quote(inputs.dump()) + "," +
           detail::csv_quote(r.formula_ref) + "\n";
  }
  return out;
}

}  // namespace ncde
