#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "ncde/errors.hpp"

namespace ncde {

/// 1-based ranks; ties get the average of the ranks they span.
[[nodiscard]] inline std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) {
      ++j;
    }
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      r[idx[k]] = avg;
    }
    i = j + 1;
  }
  return r;
}

[[nodiscard]] inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

struct SpearmanResult {
  bool applicable = false;  // false when either sample is constant or n < 3
  double rho = 0.0;
  double p_one_sided = 1.0;  // H1: rho > 0, t approximation with n-2 dof
};

[[nodiscard]] inline SpearmanResult spearman(const std::vector<double>& x, const std::vector<double>& y) {
  detail::require(x.size() == y.size(), "spearman: samples differ in length");
  SpearmanResult out;
  if (x.size() < 3) {
    return out;
  }
  auto constant = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [&](double a) { return a == v.front(); });
  };
  if (constant(x) || constant(y)) {
    return out;
  }
  out.applicable = true;
  out.rho = pearson(average_ranks(x), average_ranks(y));
  const double dof = static_cast<double>(x.size()) - 2.0;
  if (out.rho >= 1.0) {
    out.p_one_sided = 0.0;
  } else if (out.rho <= -1.0) {
    out.p_one_sided = 1.0;
  } else {
    const double t = out.rho * std::sqrt(dof / (1.0 - out.rho * out.rho));
    boost::math::students_t dist(dof);
    out.p_one_sided = boost::math::cdf(boost::math::complement(dist, t));
  }
  return out;
}

}  // namespace ncde
