#pragma once

#include <cmath>
#include <string>

#include "ncde/errors.hpp"

namespace ncde {

/// Frobenius-norm bounds on every parameter group plus the path constants
/// that feed the bound formulas.
struct ParamSpace {
  double B_A = 1.0;
  double B_b = 1.0;
  double B_U = 1.0;
  double B_v = 1.0;
  double B_phi = 1.0;
  int q = 1;
  int p = 3;
  int d = 2;
  double L_sigma = 1.0;
  double L_x = 1.0;
  double B_x = 1.0;

  void validate() const {
    auto nonneg = [](double v, const char* name) {
      detail::require(std::isfinite(v) && v >= 0.0, std::string(name) + " must be finite and >= 0");
    };
    nonneg(B_A, "B_A");
    nonneg(B_b, "B_b");
    nonneg(B_U, "B_U");
    nonneg(B_v, "B_v");
    nonneg(B_phi, "B_phi");
    nonneg(L_x, "L_x");
    nonneg(B_x, "B_x");
    detail::require(q >= 1 && p >= 1 && d >= 1, "q, p, d must be >= 1");
    detail::require(std::isfinite(L_sigma) && L_sigma > 0.0, "L_sigma must be > 0");
  }
};

/// Reference space used across checks: q=1, p=3, d=2, unit bounds.
[[nodiscard]] inline ParamSpace reference_space() { return ParamSpace{}; }

/// Mesh |D| and number of intervals K of a sampling grid.
struct GridSpec {
  double mesh = 1.0;
  long long n_intervals = 1;

  void validate() const {
    detail::require(n_intervals >= 1, "GridSpec: K must be >= 1");
    detail::require(std::isfinite(mesh) && mesh > 0.0 && mesh <= 1.0, "GridSpec: mesh must be in (0, 1]");
    // K intervals covering [0,1] force mesh >= 1/K.
    detail::require(mesh * static_cast<double>(n_intervals) >= 1.0 - 1e-12, "GridSpec: mesh must be >= 1/K");
  }

  [[nodiscard]] static GridSpec uniform(long long k) {
    GridSpec g{1.0 / static_cast<double>(k), k};
    g.validate();
    return g;
  }
};

}  // namespace ncde
