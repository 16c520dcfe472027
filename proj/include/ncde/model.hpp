#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "ncde/errors.hpp"
#include "ncde/parallel.hpp"
#include "ncde/paths.hpp"
#include "ncde/random.hpp"

namespace ncde {

/// Scalar nonlinearity with sigma(0) = 0 and a known Lipschitz constant.
enum class Activation { tanh, identity, relu };

[[nodiscard]] inline double activation_lipschitz(Activation) noexcept { return 1.0; }

[[nodiscard]] inline std::string activation_name(Activation a) {
  switch (a) {
    case Activation::tanh:
      return "tanh";
    case Activation::identity:
      return "identity";
    case Activation::relu:
      return "relu";
  }
  return "tanh";
}

[[nodiscard]] inline Activation activation_from_name(const std::string& name) {
  if (name == "tanh") {
    return Activation::tanh;
  }
  if (name == "identity") {
    return Activation::identity;
  }
  if (name == "relu") {
    return Activation::relu;
  }
  throw ValidationError("unknown activation '" + name + "'");
}

namespace detail {

inline void activate(Activation act, double* x, std::size_t n) noexcept {
  switch (act) {
    case Activation::tanh:
      for (std::size_t i = 0; i < n; ++i) {
        x[i] = std::tanh(x[i]);
      }
      break;
    case Activation::relu:
      for (std::size_t i = 0; i < n; ++i) {
        x[i] = x[i] > 0.0 ? x[i] : 0.0;
      }
      break;
    case Activation::identity:
      break;
  }
}

/// g *= sigma'(pre) expressed through the post-activation a = sigma(pre).
inline void scale_by_derivative(Activation act, const double* a, double* g, std::size_t n) noexcept {
  switch (act) {
    case Activation::tanh:
      for (std::size_t i = 0; i < n; ++i) {
        g[i] *= 1.0 - a[i] * a[i];
      }
      break;
    case Activation::relu:
      for (std::size_t i = 0; i < n; ++i) {
        g[i] = a[i] > 0.0 ? g[i] : 0.0;
      }
      break;
    case Activation::identity:
      break;
  }
}

/// out = A * in + b for a column-major A.
inline void affine(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const double* in, double* out) noexcept {
  const Eigen::Index rows = A.rows();
  const Eigen::Index cols = A.cols();
  const double* a = A.data();
  for (Eigen::Index i = 0; i < rows; ++i) {
    out[i] = b[i];
  }
  for (Eigen::Index j = 0; j < cols; ++j) {
    const double x = in[j];
    const double* col = a + j * rows;
    for (Eigen::Index i = 0; i < rows; ++i) {
      out[i] += col[i] * x;
    }
  }
}

}  // namespace detail

struct Dims {
  int q = 1;
  int p = 3;
  int d = 2;

  void validate() const { detail::require(q >= 1 && p >= 1 && d >= 1, "Dims: q, p, d must be >= 1"); }
  friend bool operator==(const Dims&, const Dims&) = default;
};

struct Layer {
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
};

/// Layers 1..q-1 map R^p to R^p; layer q maps R^p to R^{p*d}. The last
/// output is read as a p x d matrix in row-major order: G(i, j) = out[i*d + j].
struct VectorFieldParams {
  std::vector<Layer> layers;

  [[nodiscard]] int depth() const noexcept { return static_cast<int>(layers.size()); }
};

struct ModelParams {
  Dims dims;
  Activation activation = Activation::tanh;
  Eigen::VectorXd phi;
  VectorFieldParams vf;
  Eigen::MatrixXd U;
  Eigen::VectorXd v;

  [[nodiscard]] static ModelParams zeros(Dims dims, Activation act = Activation::tanh) {
    dims.validate();
    ModelParams m;
    m.dims = dims;
    m.activation = act;
    m.phi = Eigen::VectorXd::Zero(dims.p);
    for (int h = 0; h < dims.q; ++h) {
      const int rows = h + 1 < dims.q ? dims.p : dims.p * dims.d;
      m.vf.layers.push_back({Eigen::MatrixXd::Zero(rows, dims.p), Eigen::VectorXd::Zero(rows)});
    }
    m.U = Eigen::MatrixXd::Zero(dims.p, dims.d);
    m.v = Eigen::VectorXd::Zero(dims.p);
    return m;
  }

  void validate() const {
    dims.validate();
    const Eigen::Index p = dims.p;
    const Eigen::Index d = dims.d;
    detail::require(phi.size() == p, "ModelParams: phi must have length p");
    detail::require(vf.depth() == dims.q, "ModelParams: vector field must have q layers");
    for (int h = 0; h < dims.q; ++h) {
      const Eigen::Index rows = h + 1 < dims.q ? p : p * d;
      const auto& L = vf.layers[static_cast<std::size_t>(h)];
      detail::require(L.A.rows() == rows && L.A.cols() == p,
                      "ModelParams: layer " + std::to_string(h + 1) + " weight has wrong shape");
      detail::require(L.b.size() == rows, "ModelParams: layer " + std::to_string(h + 1) + " bias has wrong shape");
    }
    detail::require(U.rows() == p && U.cols() == d, "ModelParams: U must be p x d");
    detail::require(v.size() == p, "ModelParams: v must have length p");
  }
};

/// Gradients share the parameter layout.
using GradientBundle = ModelParams;

// ---------------------------------------------------------------------------
// Parameter groups, in the fixed order phi, A_1..A_q, b_1..b_q, U, v.

enum class GroupKind { readout, field_weight, field_bias, init_weight, init_bias };

template <class Scalar>
struct GroupView {
  GroupKind kind;
  int layer;  // 1-based for field groups, 0 otherwise
  Scalar* data;
  Eigen::Index size;

  [[nodiscard]] double norm() const {
    return Eigen::Map<const Eigen::VectorXd>(data, size).norm();
  }
};

template <class Params, class Scalar = std::conditional_t<std::is_const_v<Params>, const double, double>>
[[nodiscard]] std::vector<GroupView<Scalar>> param_groups(Params& m) {
  std::vector<GroupView<Scalar>> g;
  g.push_back({GroupKind::readout, 0, m.phi.data(), m.phi.size()});
  for (std::size_t h = 0; h < m.vf.layers.size(); ++h) {
    auto& A = m.vf.layers[h].A;
    g.push_back({GroupKind::field_weight, static_cast<int>(h + 1), A.data(), A.size()});
  }
  for (std::size_t h = 0; h < m.vf.layers.size(); ++h) {
    auto& b = m.vf.layers[h].b;
    g.push_back({GroupKind::field_bias, static_cast<int>(h + 1), b.data(), b.size()});
  }
  g.push_back({GroupKind::init_weight, 0, m.U.data(), m.U.size()});
  g.push_back({GroupKind::init_bias, 0, m.v.data(), m.v.size()});
  return g;
}

[[nodiscard]] inline std::string group_label(GroupKind kind, int layer) {
  switch (kind) {
    case GroupKind::readout:
      return "phi";
    case GroupKind::field_weight:
      return "A" + std::to_string(layer);
    case GroupKind::field_bias:
      return "b" + std::to_string(layer);
    case GroupKind::init_weight:
      return "U";
    case GroupKind::init_bias:
      return "v";
  }
  return "";
}

/// Frobenius norms of all groups, in param_groups order.
[[nodiscard]] inline std::vector<double> group_norms(const ModelParams& m) {
  std::vector<double> out;
  for (const auto& g : param_groups(m)) {
    out.push_back(g.norm());
  }
  return out;
}

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias, drawn in
/// param_groups order.
[[nodiscard]] inline ModelParams init_uniform_fan_in(Dims dims, Activation act, Rng& rng) {
  ModelParams m = ModelParams::zeros(dims, act);
  for (auto& g : param_groups(m)) {
    const int fan_in = g.kind == GroupKind::init_weight || g.kind == GroupKind::init_bias ? dims.d : dims.p;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index i = 0; i < g.size; ++i) {
      g.data[i] = u(rng);
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Evaluation

/// G_psi(z) as a p x d matrix.
[[nodiscard]] inline Eigen::MatrixXd vector_field_eval(const VectorFieldParams& vf, const Eigen::VectorXd& z,
                                                       Activation act, int d) {
  detail::require(vf.depth() >= 1, "vector_field_eval: q must be >= 1");
  const Eigen::Index p = vf.layers.front().A.cols();
  detail::require(z.size() == p, "vector_field_eval: z must have length p");
  detail::require(vf.layers.back().A.rows() == p * d, "vector_field_eval: last layer must output p*d values");
  Eigen::VectorXd cur = z;
  for (const auto& L : vf.layers) {
    detail::require(L.A.cols() == cur.size() && L.b.size() == L.A.rows(), "vector_field_eval: layer shape mismatch");
    Eigen::VectorXd next(L.A.rows());
    detail::affine(L.A, L.b, cur.data(), next.data());
    detail::activate(act, next.data(), static_cast<std::size_t>(next.size()));
    cur = std::move(next);
  }
  Eigen::MatrixXd G(p, d);
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      G(i, j) = cur[i * d + j];
    }
  }
  return G;
}

[[nodiscard]] inline Eigen::MatrixXd vector_field_eval(const ModelParams& m, const Eigen::VectorXd& z) {
  return vector_field_eval(m.vf, z, m.activation, m.dims.d);
}

/// z_0 = sigma(U x0 + v).
[[nodiscard]] inline Eigen::VectorXd init_state(const ModelParams& m, const Eigen::VectorXd& x0) {
  detail::require(x0.size() == m.dims.d, "init_state: x0 must have length d");
  detail::require(m.U.rows() == m.dims.p && m.U.cols() == m.dims.d && m.v.size() == m.dims.p,
                  "init_state: U or v has wrong shape");
  Eigen::VectorXd z(m.dims.p);
  detail::affine(m.U, m.v, x0.data(), z.data());
  detail::activate(m.activation, z.data(), static_cast<std::size_t>(z.size()));
  return z;
}

/// Every intermediate of one forward pass, kept for the backward pass.
struct Tape {
  std::size_t K = 0;
  std::size_t stride = 0;    // activations stored per step
  std::vector<double> z;     // (K+1) x p latent states
  std::vector<double> acts;  // K x stride layer outputs
  double prediction = 0.0;
};

/// Runs the recursion z_k = z_{k-1} + G(z_{k-1}) dx_k, filling `tape`.
inline void forward_tape(const ModelParams& m, const SampledPath& path, Tape& tape) {
  const std::size_t p = static_cast<std::size_t>(m.dims.p);
  const std::size_t d = static_cast<std::size_t>(m.dims.d);
  const std::size_t q = static_cast<std::size_t>(m.dims.q);
  if (path.dim() != m.dims.d) {
    throw ValidationError("forward: path has " + std::to_string(path.dim()) + " channels but the model expects d = " +
                          std::to_string(m.dims.d));
  }
  const std::size_t K = path.n_intervals();
  tape.K = K;
  tape.stride = (q - 1) * p + p * d;
  tape.z.resize((K + 1) * p);
  tape.acts.resize(K * tape.stride);

  const double* x = path.values.data();
  double* z = tape.z.data();
  detail::affine(m.U, m.v, x, z);
  detail::activate(m.activation, z, p);
  for (std::size_t i = 0; i < p; ++i) {
    if (!std::isfinite(z[i])) {
      throw NumericError("forward: non-finite initial state");
    }
  }

  for (std::size_t k = 1; k <= K; ++k) {
    const double* zprev = z + (k - 1) * p;
    double* znext = z + k * p;
    double* act = tape.acts.data() + (k - 1) * tape.stride;
    const double* in = zprev;
    for (std::size_t h = 0; h < q; ++h) {
      const auto& L = m.vf.layers[h];
      detail::affine(L.A, L.b, in, act);
      detail::activate(m.activation, act, static_cast<std::size_t>(L.A.rows()));
      in = act;
      act += L.A.rows();
    }
    const double* G = in;
    const double* x0 = x + (k - 1) * d;
    const double* x1 = x + k * d;
    bool finite = true;
    for (std::size_t i = 0; i < p; ++i) {
      double s = zprev[i];
      for (std::size_t j = 0; j < d; ++j) {
        s += G[i * d + j] * (x1[j] - x0[j]);
      }
      znext[i] = s;
      finite = finite && std::isfinite(s);
    }
    if (!finite) {
      throw NumericError("forward: non-finite latent state at step " + std::to_string(k));
    }
  }
  const double* zK = z + K * p;
  double pred = 0.0;
  for (std::size_t i = 0; i < p; ++i) {
    pred += m.phi[static_cast<Eigen::Index>(i)] * zK[i];
  }
  tape.prediction = pred;
}

struct LatentTrajectory {
  SamplingGrid grid;
  RowMatrix states;  // (K+1) x p
  double prediction = 0.0;
};

[[nodiscard]] inline LatentTrajectory forward(const ModelParams& m, const SampledPath& path) {
  Tape tape;
  forward_tape(m, path, tape);
  LatentTrajectory out;
  out.grid = path.grid;
  out.states = Eigen::Map<const RowMatrix>(tape.z.data(), static_cast<Eigen::Index>(tape.K + 1), m.dims.p);
  out.prediction = tape.prediction;
  return out;
}

/// Prediction only.
[[nodiscard]] inline double predict(const ModelParams& m, const SampledPath& path, Tape& scratch) {
  forward_tape(m, path, scratch);
  return scratch.prediction;
}

[[nodiscard]] inline double predict(const ModelParams& m, const SampledPath& path) {
  Tape scratch;
  return predict(m, path, scratch);
}

/// Elementwise forward; errors are rethrown with the offending index.
[[nodiscard]] inline std::vector<LatentTrajectory> forward_batch(const ModelParams& m,
                                                                 const std::vector<SampledPath>& paths,
                                                                 unsigned threads = 1) {
  std::vector<LatentTrajectory> out(paths.size());
  detail::parallel_for(paths.size(), threads, [&](std::size_t i) {
    try {
      out[i] = forward(m, paths[i]);
    } catch (const ValidationError& e) {
      throw ValidationError("path " + std::to_string(i) + ": " + e.what());
    } catch (const NumericError& e) {
      throw NumericError("path " + std::to_string(i) + ": " + e.what());
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& M) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    nlohmann::json r = nlohmann::json::array();
    for (Eigen::Index j = 0; j < M.cols(); ++j) {
      r.push_back(M(i, j));
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols,
                                        const std::string& what) {
  detail::require(j.is_array() && static_cast<Eigen::Index>(j.size()) == rows, what + ": wrong row count");
  Eigen::MatrixXd M(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& r = j[static_cast<std::size_t>(i)];
    detail::require(r.is_array() && static_cast<Eigen::Index>(r.size()) == cols, what + ": wrong column count");
    for (Eigen::Index c = 0; c < cols; ++c) {
      M(i, c) = r[static_cast<std::size_t>(c)].get<double>();
    }
  }
  return M;
}

inline nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j, Eigen::Index n, const std::string& what) {
  detail::require(j.is_array() && static_cast<Eigen::Index>(j.size()) == n, what + ": wrong length");
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    v[i] = j[static_cast<std::size_t>(i)].get<double>();
  }
  return v;
}

}  // namespace detail

inline constexpr int kModelFormatVersion = 1;
inline constexpr const char* kFlatteningTag = "row_major_p_by_d";

[[nodiscard]] inline nlohmann::json model_to_json(const ModelParams& m) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& L : m.vf.layers) {
    layers.push_back({{"A", detail::matrix_to_json(L.A)}, {"b", detail::vector_to_json(L.b)}});
  }
  return {{"format", "ncde-model-params"},
          {"version", kModelFormatVersion},
          {"dims", {{"q", m.dims.q}, {"p", m.dims.p}, {"d", m.dims.d}}},
          {"activation", activation_name(m.activation)},
          {"flattening", kFlatteningTag},
          {"phi", detail::vector_to_json(m.phi)},
          {"layers", layers},
          {"U", detail::matrix_to_json(m.U)},
          {"v", detail::vector_to_json(m.v)}};
}

[[nodiscard]] inline ModelParams model_from_json(const nlohmann::json& j) {
  try {
    detail::require(j.at("version").get<int>() == kModelFormatVersion, "model json: unsupported version");
    detail::require(j.at("flattening").get<std::string>() == kFlatteningTag, "model json: unknown flattening");
    Dims dims{j.at("dims").at("q").get<int>(), j.at("dims").at("p").get<int>(), j.at("dims").at("d").get<int>()};
    ModelParams m = ModelParams::zeros(dims, activation_from_name(j.at("activation").get<std::string>()));
    m.phi = detail::vector_from_json(j.at("phi"), dims.p, "phi");
    const auto& layers = j.at("layers");
    detail::require(layers.is_array() && static_cast<int>(layers.size()) == dims.q, "model json: expected q layers");
    for (int h = 0; h < dims.q; ++h) {
      auto& L = m.vf.layers[static_cast<std::size_t>(h)];
      const auto& jl = layers[static_cast<std::size_t>(h)];
      L.A = detail::matrix_from_json(jl.at("A"), L.A.rows(), L.A.cols(), "A" + std::to_string(h + 1));
      L.b = detail::vector_from_json(jl.at("b"), L.b.size(), "b" + std::to_string(h + 1));
    }
    m.U = detail::matrix_from_json(j.at("U"), dims.p, dims.d, "U");
    m.v = detail::vector_from_json(j.at("v"), dims.p, "v");
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model json: ") + e.what());
  }
}

}  // namespace ncde
