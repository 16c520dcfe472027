#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ncde/errors.hpp"
#include "ncde/io.hpp"
#include "ncde/parallel.hpp"
#include "ncde/random.hpp"

namespace ncde {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Strictly increasing timestamps t_0 = 0 < ... < t_K = 1.
class SamplingGrid {
 public:
  SamplingGrid() : times_{0.0, 1.0} {}

  explicit SamplingGrid(std::vector<double> times) : times_(std::move(times)) {
    detail::require(times_.size() >= 2, "SamplingGrid: need at least 2 points");
    detail::require(times_.front() == 0.0, "SamplingGrid: first time must be 0");
    detail::require(times_.back() == 1.0, "SamplingGrid: last time must be 1");
    for (std::size_t i = 1; i < times_.size(); ++i) {
      detail::require(times_[i] > times_[i - 1], "SamplingGrid: times must be strictly increasing");
    }
  }

  /// n_points equidistant points; t_i = i / (n_points - 1).
  [[nodiscard]] static SamplingGrid uniform(std::size_t n_points) {
    detail::require(n_points >= 2, "SamplingGrid::uniform: need at least 2 points");
    std::vector<double> t(n_points);
    const double k = static_cast<double>(n_points - 1);
    for (std::size_t i = 0; i < n_points; ++i) {
      t[i] = static_cast<double>(i) / k;
    }
    t.back() = 1.0;
    return SamplingGrid(std::move(t));
  }

  [[nodiscard]] const std::vector<double>& times() const noexcept { return times_; }
  [[nodiscard]] std::size_t size() const noexcept { return times_.size(); }
  [[nodiscard]] std::size_t n_intervals() const noexcept { return times_.size() - 1; }
  [[nodiscard]] double operator[](std::size_t i) const { return times_[i]; }

  [[nodiscard]] double mesh() const noexcept {
    double m = 0.0;
    for (std::size_t i = 1; i < times_.size(); ++i) {
      m = std::max(m, times_[i] - times_[i - 1]);
    }
    return m;
  }

  friend bool operator==(const SamplingGrid&, const SamplingGrid&) = default;

 private:
  std::vector<double> times_;
};

/// A d-channel time series sampled on a grid. Row k holds x_{t_k}.
struct SampledPath {
  SamplingGrid grid;
  RowMatrix values;

  SampledPath() = default;
  SampledPath(SamplingGrid g, RowMatrix v) : grid(std::move(g)), values(std::move(v)) { validate(); }

  void validate() const {
    detail::require(static_cast<std::size_t>(values.rows()) == grid.size(),
                    "SampledPath: row count must equal grid length");
    detail::require(values.cols() >= 1, "SampledPath: need at least one channel");
  }

  [[nodiscard]] int dim() const noexcept { return static_cast<int>(values.cols()); }
  [[nodiscard]] std::size_t n_intervals() const noexcept { return grid.n_intervals(); }
};

struct PathStats {
  double mesh = 0.0;
  double total_variation = 0.0;
  double max_increment = 0.0;
  double lipschitz_estimate = 0.0;
  double initial_norm = 0.0;
};

[[nodiscard]] inline PathStats path_stats(const SampledPath& path) {
  PathStats s;
  s.mesh = path.grid.mesh();
  s.initial_norm = path.values.row(0).norm();
  for (Eigen::Index k = 1; k < path.values.rows(); ++k) {
    const double inc = (path.values.row(k) - path.values.row(k - 1)).norm();
    const double dt = path.grid[static_cast<std::size_t>(k)] - path.grid[static_cast<std::size_t>(k - 1)];
    s.total_variation += inc;
    s.max_increment = std::max(s.max_increment, inc);
    s.lipschitz_estimate = std::max(s.lipschitz_estimate, inc / dt);
  }
  return s;
}

/// Cached Cholesky factor of the fBM covariance on a fixed grid.
class FbmGenerator {
 public:
  FbmGenerator(SamplingGrid grid, double hurst) : grid_(std::move(grid)), hurst_(hurst) {
    detail::require(std::isfinite(hurst) && hurst > 0.0 && hurst < 1.0, "fBM: hurst must lie in (0, 1)");
    const auto n = static_cast<Eigen::Index>(grid_.n_intervals());
    Eigen::MatrixXd cov(n, n);
    const double h2 = 2.0 * hurst_;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double s = grid_[static_cast<std::size_t>(i + 1)];
      for (Eigen::Index j = 0; j <= i; ++j) {
        const double t = grid_[static_cast<std::size_t>(j + 1)];
        const double c = 0.5 * (std::pow(s, h2) + std::pow(t, h2) - std::pow(std::abs(t - s), h2));
        cov(i, j) = c;
        cov(j, i) = c;
      }
    }
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) {
      cov.diagonal().array() += 1e-12;
      llt.compute(cov);
      if (llt.info() != Eigen::Success) {
        throw SynthesisError("fBM covariance is not positive definite after jitter");
      }
    }
    factor_ = llt.matrixL();
  }

  [[nodiscard]] const SamplingGrid& grid() const noexcept { return grid_; }
  [[nodiscard]] double hurst() const noexcept { return hurst_; }

  /// One path with d independent fBM channels, B_0 = 0.
  [[nodiscard]] SampledPath sample(int d, Rng& rng) const {
    detail::require(d >= 1, "fBM: d must be >= 1");
    const Eigen::Index n = factor_.rows();
    std::normal_distribution<double> normal(0.0, 1.0);
    RowMatrix values = RowMatrix::Zero(n + 1, d);
    Eigen::VectorXd z(n);
    for (int c = 0; c < d; ++c) {
      for (Eigen::Index i = 0; i < n; ++i) {
        z[i] = normal(rng);
      }
      values.col(c).tail(n) = factor_.triangularView<Eigen::Lower>() * z;
    }
    return SampledPath(grid_, std::move(values));
  }

 private:
  SamplingGrid grid_;
  double hurst_;
  Eigen::MatrixXd factor_;
};

/// n_paths fBM sample paths. Path i uses sub-stream i of `seed`, so the
/// output does not depend on `threads`.
[[nodiscard]] inline std::vector<SampledPath> sample_fbm(std::size_t n_paths, int d, const SamplingGrid& grid,
                                                         double hurst, std::uint64_t seed, unsigned threads = 1) {
  detail::require(n_paths >= 1, "sample_fbm: n_paths must be >= 1");
  detail::require(d >= 1, "sample_fbm: d must be >= 1");
  const FbmGenerator gen(grid, hurst);
  std::vector<SampledPath> out(n_paths);
  detail::parallel_for(n_paths, threads, [&](std::size_t i) {
    Rng rng = make_rng(seed, i);
    out[i] = gen.sample(d, rng);
  });
  return out;
}

/// Prepends the timestamps as channel 0.
[[nodiscard]] inline SampledPath augment_time_channel(const SampledPath& path) {
  RowMatrix v(path.values.rows(), path.values.cols() + 1);
  for (Eigen::Index k = 0; k < v.rows(); ++k) {
    v(k, 0) = path.grid[static_cast<std::size_t>(k)];
  }
  v.rightCols(path.values.cols()) = path.values;
  return SampledPath(path.grid, std::move(v));
}

/// Piecewise-constant embedding evaluated on query_grid: each query time
/// takes the value at the largest source time <= t. Time 1 maps to the
/// final source value.
[[nodiscard]] inline SampledPath fill_forward(const SampledPath& path, const SamplingGrid& query_grid) {
  const auto& src = path.grid.times();
  RowMatrix v(static_cast<Eigen::Index>(query_grid.size()), path.values.cols());
  for (std::size_t i = 0; i < query_grid.size(); ++i) {
    const double t = query_grid[i];
    std::size_t idx = 0;
    if (t >= 1.0) {
      idx = src.size() - 1;
    } else {
      const auto it = std::upper_bound(src.begin(), src.end(), t);
      idx = static_cast<std::size_t>(std::distance(src.begin(), it)) - 1;
    }
    v.row(static_cast<Eigen::Index>(i)) = path.values.row(static_cast<Eigen::Index>(idx));
  }
  return SampledPath(query_grid, std::move(v));
}

/// Keeps k_points source samples: 0 and 1 always, plus k_points - 2 interior
/// points drawn uniformly without replacement.
[[nodiscard]] inline SampledPath downsample_random(const SampledPath& path, std::size_t k_points, std::uint64_t seed) {
  const std::size_t n = path.grid.size();
  detail::require(k_points >= 2, "downsample_random: k_points must be >= 2");
  detail::require(k_points <= n, "downsample_random: k_points exceeds source length");
  std::vector<std::size_t> interior(n - 2);
  for (std::size_t i = 0; i < interior.size(); ++i) {
    interior[i] = i + 1;
  }
  std::vector<std::size_t> keep;
  keep.reserve(k_points);
  keep.push_back(0);
  Rng rng(seed);
  std::sample(interior.begin(), interior.end(), std::back_inserter(keep), k_points - 2, rng);
  keep.push_back(n - 1);
  std::sort(keep.begin(), keep.end());

  std::vector<double> t(k_points);
  RowMatrix v(static_cast<Eigen::Index>(k_points), path.values.cols());
  for (std::size_t i = 0; i < k_points; ++i) {
    t[i] = path.grid[keep[i]];
    v.row(static_cast<Eigen::Index>(i)) = path.values.row(static_cast<Eigen::Index>(keep[i]));
  }
  return SampledPath(SamplingGrid(std::move(t)), std::move(v));
}

/// Samples of `path` at the times of `sub`, which must all be source times.
[[nodiscard]] inline SampledPath restrict_to(const SampledPath& path, const SamplingGrid& sub) {
  const auto& src = path.grid.times();
  RowMatrix v(static_cast<Eigen::Index>(sub.size()), path.values.cols());
  for (std::size_t i = 0; i < sub.size(); ++i) {
    const auto it = std::lower_bound(src.begin(), src.end(), sub[i]);
    detail::require(it != src.end() && *it == sub[i], "restrict_to: time not present in source grid");
    v.row(static_cast<Eigen::Index>(i)) = path.values.row(std::distance(src.begin(), it));
  }
  return SampledPath(sub, std::move(v));
}

/// Max over shared timestamps of the Euclidean row distance.
[[nodiscard]] inline double sup_distance(const SampledPath& fine, const SampledPath& embedded) {
  detail::require(fine.grid == embedded.grid, "sup_distance: grids differ");
  detail::require(fine.values.cols() == embedded.values.cols(), "sup_distance: channel counts differ");
  double m = 0.0;
  for (Eigen::Index k = 0; k < fine.values.rows(); ++k) {
    m = std::max(m, (fine.values.row(k) - embedded.values.row(k)).norm());
  }
  return m;
}

// ---------------------------------------------------------------------------
// CSV and manifest I/O

namespace detail {

inline std::string csv_channel_header(Eigen::Index d) {
  std::string h;
  for (Eigen::Index c = 0; c < d; ++c) {
    h += ",ch" + std::to_string(c);
  }
  return h;
}

}  // namespace detail

/// Single path: header `t,ch0,...`.
[[nodiscard]] inline std::string path_to_csv(const SampledPath& path) {
  std::string out = "t" + detail::csv_channel_header(path.values.cols()) + "\n";
  for (Eigen::Index k = 0; k < path.values.rows(); ++k) {
    out += io::format_double(path.grid[static_cast<std::size_t>(k)]);
    for (Eigen::Index c = 0; c < path.values.cols(); ++c) {
      out += ',';
      out += io::format_double(path.values(k, c));
    }
    out += '\n';
  }
  return out;
}

/// Long format: header `path_id,t,ch0,...`.
[[nodiscard]] inline std::string paths_to_csv(const std::vector<SampledPath>& paths) {
  detail::require(!paths.empty(), "paths_to_csv: empty path list");
  const Eigen::Index d = paths.front().values.cols();
  std::string out = "path_id,t" + detail::csv_channel_header(d) + "\n";
  for (std::size_t i = 0; i < paths.size(); ++i) {
    detail::require(paths[i].values.cols() == d, "paths_to_csv: inconsistent channel counts");
    for (Eigen::Index k = 0; k < paths[i].values.rows(); ++k) {
      out += std::to_string(i);
      out += ',';
      out += io::format_double(paths[i].grid[static_cast<std::size_t>(k)]);
      for (Eigen::Index c = 0; c < d; ++c) {
        out += ',';
        out += io::format_double(paths[i].values(k, c));
      }
      out += '\n';
    }
  }
  return out;
}

namespace detail {

inline std::vector<std::vector<double>> parse_csv_rows(const std::string& text, std::size_t skip_cols,
                                                       std::vector<std::string>* first_col) {
  std::istringstream in(text);
  std::string line;
  detail::require(static_cast<bool>(std::getline(in, line)), "csv: missing header");
  const std::size_t n_cols = io::split_csv_line(line).size();
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") {
      continue;
    }
    const auto cells = io::split_csv_line(line);
    detail::require(cells.size() == n_cols, "csv: ragged row");
    if (first_col != nullptr) {
      first_col->emplace_back(cells[0]);
    }
    std::vector<double> row;
    for (std::size_t c = skip_cols; c < cells.size(); ++c) {
      row.push_back(io::parse_double(cells[c]));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline SampledPath path_from_rows(const std::vector<std::vector<double>>& rows, std::size_t begin, std::size_t end) {
  detail::require(end > begin, "csv: empty path");
  const auto d = static_cast<Eigen::Index>(rows[begin].size()) - 1;
  detail::require(d >= 1, "csv: need at least one channel");
  std::vector<double> t;
  RowMatrix v(static_cast<Eigen::Index>(end - begin), d);
  for (std::size_t r = begin; r < end; ++r) {
    t.push_back(rows[r][0]);
    for (Eigen::Index c = 0; c < d; ++c) {
      v(static_cast<Eigen::Index>(r - begin), c) = rows[r][static_cast<std::size_t>(c) + 1];
    }
  }
  return SampledPath(SamplingGrid(std::move(t)), std::move(v));
}

}  // namespace detail

[[nodiscard]] inline SampledPath path_from_csv(const std::string& text) {
  const auto rows = detail::parse_csv_rows(text, 0, nullptr);
  return detail::path_from_rows(rows, 0, rows.size());
}

[[nodiscard]] inline std::vector<SampledPath> paths_from_csv(const std::string& text) {
  std::vector<std::string> ids;
  const auto rows = detail::parse_csv_rows(text, 1, &ids);
  std::vector<SampledPath> out;
  std::size_t begin = 0;
  for (std::size_t r = 1; r <= rows.size(); ++r) {
    if (r == rows.size() || ids[r] != ids[begin]) {
      out.push_back(detail::path_from_rows(rows, begin, r));
      begin = r;
    }
  }
  return out;
}

struct DatasetManifest {
  std::uint64_t seed = 0;
  double hurst = 0.5;
  int d = 1;
  std::size_t grid_points = 2;
  std::size_t n_paths = 1;
};

inline void to_json(nlohmann::json& j, const DatasetManifest& m) {
  j = nlohmann::json{{"seed", m.seed},
                     {"hurst", m.hurst},
                     {"d", m.d},
                     {"grid", {{"kind", "uniform"}, {"n_points", m.grid_points}}},
                     {"n_paths", m.n_paths}};
}

inline void from_json(const nlohmann::json& j, DatasetManifest& m) {
  m.seed = j.at("seed").get<std::uint64_t>();
  m.hurst = j.at("hurst").get<double>();
  m.d = j.at("d").get<int>();
  m.grid_points = j.at("grid").at("n_points").get<std::size_t>();
  m.n_paths = j.at("n_paths").get<std::size_t>();
}

}  // namespace ncde
