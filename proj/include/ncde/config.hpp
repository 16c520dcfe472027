#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ncde/bounds.hpp"
#include "ncde/errors.hpp"
#include "ncde/model.hpp"
#include "ncde/param_space.hpp"
#include "ncde/training.hpp"

namespace ncde {

namespace detail {

/// Reads keys from a JSON object and rejects any key that was not read.
class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string ctx) : j_(j), ctx_(std::move(ctx)) {
    if (!j_.is_object()) {
      throw ValidationError(ctx_ + ": expected a JSON object");
    }
  }

  template <class T>
  void get(const std::string& key, T& out) {
    if (!j_.contains(key)) {
      return;
    }
    seen_.insert(key);
    try {
      out = j_.at(key).template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(ctx_ + "." + key + ": " + e.what());
    }
  }

  template <class T>
  void require(const std::string& key, T& out) {
    if (!j_.contains(key)) {
      throw ValidationError(ctx_ + ": missing required key '" + key + "'");
    }
    get(key, out);
  }

  [[nodiscard]] const nlohmann::json* sub(const std::string& key) {
    if (!j_.contains(key)) {
      return nullptr;
    }
    seen_.insert(key);
    return &j_.at(key);
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (seen_.count(item.key()) == 0) {
        throw ValidationError(ctx_ + ": unknown key '" + item.key() + "'");
      }
    }
  }

 private:
  const nlohmann::json& j_;
  std::string ctx_;
  std::set<std::string> seen_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Bounds inputs

[[nodiscard]] inline nlohmann::ordered_json space_to_json(const ParamSpace& s) {
  return {{"B_A", s.B_A},   {"B_b", s.B_b}, {"B_U", s.B_U},         {"B_v", s.B_v},
          {"B_phi", s.B_phi}, {"q", s.q},     {"p", s.p},             {"d", s.d},
          {"L_sigma", s.L_sigma}, {"L_x", s.L_x}, {"B_x", s.B_x}};
}

/// Missing keys keep the reference-space values.
[[nodiscard]] inline ParamSpace space_from_json(const nlohmann::json& j, const std::string& ctx = "space") {
  ParamSpace s;
  detail::StrictObject r(j, ctx);
  r.get("B_A", s.B_A);
  r.get("B_b", s.B_b);
  r.get("B_U", s.B_U);
  r.get("B_v", s.B_v);
  r.get("B_phi", s.B_phi);
  r.get("q", s.q);
  r.get("p", s.p);
  r.get("d", s.d);
  r.get("L_sigma", s.L_sigma);
  r.get("L_x", s.L_x);
  r.get("B_x", s.B_x);
  r.finish();
  s.validate();
  return s;
}

/// {"K": k} for a uniform grid or {"mesh": m, "K": k}.
[[nodiscard]] inline GridSpec grid_from_json(const nlohmann::json& j, const std::string& ctx = "grid") {
  detail::StrictObject r(j, ctx);
  long long K = 0;
  r.require("K", K);
  std::optional<double> mesh;
  if (const auto* m = r.sub("mesh")) {
    if (!m->is_number()) {
      throw ValidationError(ctx + ".mesh: expected a number");
    }
    mesh = m->get<double>();
  }
  r.finish();
  detail::require(K >= 1, ctx + ".K must be >= 1");
  GridSpec g{mesh.value_or(1.0 / static_cast<double>(K)), K};
  g.validate();
  return g;
}

[[nodiscard]] inline TeacherSpec teacher_spec_from_json(const nlohmann::json& j, const std::string& ctx = "teacher") {
  TeacherSpec t;
  detail::StrictObject r(j, ctx);
  r.require("lipschitz_Gstar", t.lipschitz_Gstar);
  r.require("gstar_at_zero_opnorm", t.gstar_at_zero_opnorm);
  r.require("B_phistar", t.B_phistar);
  r.get("noise_bound", t.noise_bound);
  r.finish();
  return t;
}

/// Document read by the `bounds` subcommand.
[[nodiscard]] inline BoundRequest bound_request_from_json(const nlohmann::json& j) {
  BoundRequest req;
  detail::StrictObject r(j, "bounds");
  if (const auto* s = r.sub("space")) {
    req.space = space_from_json(*s);
  }
  if (const auto* g = r.sub("grid")) {
    req.grid = grid_from_json(*g);
  }
  r.get("n", req.n);
  r.get("delta", req.delta);
  std::string loss = loss_name(req.loss);
  r.get("loss", loss);
  r.get("B_y", req.B_y);
  r.get("eta", req.eta);
  if (const auto* t = r.sub("teacher")) {
    req.teacher = teacher_spec_from_json(*t);
  }
  if (const auto* g = r.sub("gaps")) {
    detail::StrictObject gr(*g, "gaps");
    gr.get("field", req.gaps.field);
    gr.get("init", req.gaps.init);
    gr.get("phi", req.gaps.phi);
    gr.finish();
  }
  r.finish();
  try {
    req.loss = loss_from_name(loss);
  } catch (const std::exception& e) {
    throw ValidationError(std::string("bounds.loss: ") + e.what());
  }
  detail::require(req.n >= 1.0, "bounds.n must be >= 1");
  detail::require(req.delta > 0.0 && req.delta < 1.0, "bounds.delta must lie in (0, 1)");
  detail::require(req.eta > 0.0, "bounds.eta must be > 0");
  return req;
}

// ---------------------------------------------------------------------------
// Experiment configuration

enum class ExperimentKind { teacher_student, rough_smooth, flow_interpolation, discretization_sweep };

[[nodiscard]] inline std::string kind_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::teacher_student:
      return "teacher_student";
    case ExperimentKind::rough_smooth:
      return "rough_smooth";
    case ExperimentKind::flow_interpolation:
      return "flow_interpolation";
    case ExperimentKind::discretization_sweep:
      return "discretization_sweep";
  }
  return "unknown";
}

[[nodiscard]] inline ExperimentKind kind_from_name(const std::string& s) {
  for (auto k : {ExperimentKind::teacher_student, ExperimentKind::rough_smooth, ExperimentKind::flow_interpolation,
                 ExperimentKind::discretization_sweep}) {
    if (kind_name(k) == s) {
      return k;
    }
  }
  throw ValidationError("unknown experiment kind '" + s + "'");
}

struct DataSpec {
  std::size_t n_train = 100;
  std::size_t n_test = 0;
  int d = 4;                     // fBM channels, before the time channel
  double hurst = 0.7;            // label 0 in the classification task
  double hurst_alt = 0.6;        // label 1 in the classification task
  std::size_t grid_points = 100; // uniform source grid
  std::size_t k_points = 0;      // random downsampling size, 0 = none
  bool time_channel = true;
};

struct ModelSpec {
  int q = 1;
  int p = 3;
  Activation activation = Activation::tanh;
};

struct TrainSpec {
  int iterations = 2000;
  double lr = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool freeze_phi = false;
  bool freeze_init = false;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::teacher_student;
  std::uint64_t seed = 0;
  std::string out = "out";
  unsigned threads = 1;
  DataSpec data;
  ModelSpec model;
  TrainSpec train;
  std::size_t runs = 25;

  // teacher_student
  double noise_bound = 0.0;
  std::vector<int> snapshot_iterations{0, 10, 100, 2000};
  std::size_t snapshot_paths = 5;

  // flow_interpolation
  std::size_t n_deltas = 11;

  // discretization_sweep
  ParamSpace space;
  std::size_t fine_intervals = 8192;
  std::vector<std::size_t> ladder{4, 8, 16, 32, 64, 128, 256, 512};
  std::size_t n_paths = 20;
  std::size_t path_segments = 4;
  std::vector<long long> output_bound_K{100, 1000, 10000, 100000};

  /// Defaults for each kind follow the experimental settings of the two
  /// experiments, scaled to desk size where noted in the README.
  [[nodiscard]] static ExperimentConfig defaults(ExperimentKind kind) {
    ExperimentConfig c;
    c.kind = kind;
    switch (kind) {
      case ExperimentKind::teacher_student:
        c.out = "out/teacher_student";
        break;
      case ExperimentKind::rough_smooth:
        c.out = "out/rough_smooth";
        c.data = DataSpec{50, 50, 2, 0.4, 0.6, 200, 5, true};
        c.train.iterations = 600;
        c.train.lr = 1e-4;
        c.train.freeze_phi = true;
        c.train.freeze_init = true;
        c.runs = 50;
        c.snapshot_iterations.clear();
        break;
      case ExperimentKind::flow_interpolation:
        c.out = "out/flow";
        c.data = DataSpec{0, 0, 2, 0.5, 0.5, 100, 0, false};
        c.model = ModelSpec{1, 2, Activation::tanh};
        c.runs = 1;
        c.snapshot_iterations.clear();
        break;
      case ExperimentKind::discretization_sweep:
        c.out = "out/disc_sweep";
        c.data = DataSpec{0, 0, 2, 0.5, 0.5, 0, 0, false};
        c.runs = 1;
        c.snapshot_iterations.clear();
        break;
    }
    return c;
  }

  void validate() const {
    detail::require(threads >= 1, "threads must be >= 1");
    detail::require(model.q >= 1 && model.p >= 1, "model: q and p must be >= 1");
    detail::require(runs >= 1, "runs must be >= 1");
    switch (kind) {
      case ExperimentKind::teacher_student:
        detail::require(data.n_train >= 1, "data.n_train must be >= 1");
        detail::require(data.d >= 1, "data.d must be >= 1");
        detail::require(data.hurst > 0.0 && data.hurst < 1.0, "data.hurst must lie in (0, 1)");
        detail::require(data.grid_points >= 2, "data.grid_points must be >= 2");
        detail::require(noise_bound >= 0.0, "noise_bound must be >= 0");
        // Snapshots past the last iteration are skipped by the runner.
        for (int s : snapshot_iterations) {
          detail::require(s >= 0, "snapshot_iterations must be >= 0");
        }
        break;
      case ExperimentKind::rough_smooth:
        detail::require(data.n_train >= 2 && data.n_test >= 2, "data.n_train and data.n_test must be >= 2");
        detail::require(data.d >= 1, "data.d must be >= 1");
        detail::require(data.hurst > 0.0 && data.hurst < 1.0 && data.hurst_alt > 0.0 && data.hurst_alt < 1.0,
                        "data.hurst and data.hurst_alt must lie in (0, 1)");
        detail::require(data.grid_points >= 2, "data.grid_points must be >= 2");
        detail::require(data.k_points >= 2 && data.k_points <= data.grid_points,
                        "data.k_points must lie in [2, grid_points]");
        break;
      case ExperimentKind::flow_interpolation:
        detail::require(data.d >= 1, "data.d must be >= 1");
        detail::require(data.hurst > 0.0 && data.hurst < 1.0, "data.hurst must lie in (0, 1)");
        detail::require(data.grid_points >= 2, "data.grid_points must be >= 2");
        detail::require(n_deltas >= 2, "n_deltas must be >= 2");
        break;
      case ExperimentKind::discretization_sweep:
        space.validate();
        detail::require(fine_intervals >= 1, "fine_intervals must be >= 1");
        detail::require(n_paths >= 1, "n_paths must be >= 1");
        detail::require(path_segments >= 1, "path_segments must be >= 1");
        for (auto K : ladder) {
          detail::require(K >= 1 && fine_intervals % K == 0, "every ladder K must divide fine_intervals");
        }
        for (auto K : output_bound_K) {
          detail::require(K >= 1, "output_bound_K entries must be >= 1");
        }
        break;
    }
    TrainConfig tc;
    tc.adam = AdamConfig{train.lr, train.beta1, train.beta2, train.eps};
    tc.iterations = train.iterations;
    tc.validate();
  }
};

[[nodiscard]] inline nlohmann::ordered_json config_to_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  j["kind"] = kind_name(c.kind);
  j["seed"] = c.seed;
  j["out"] = c.out;
  j["threads"] = c.threads;
  j["data"] = {{"n_train", c.data.n_train},         {"n_test", c.data.n_test},
               {"d", c.data.d},                     {"hurst", c.data.hurst},
               {"hurst_alt", c.data.hurst_alt},     {"grid_points", c.data.grid_points},
               {"k_points", c.data.k_points},       {"time_channel", c.data.time_channel}};
  j["model"] = {{"q", c.model.q}, {"p", c.model.p}, {"activation", activation_name(c.model.activation)}};
  j["train"] = {{"iterations", c.train.iterations}, {"lr", c.train.lr},
                {"beta1", c.train.beta1},           {"beta2", c.train.beta2},
                {"eps", c.train.eps},               {"freeze_phi", c.train.freeze_phi},
                {"freeze_init", c.train.freeze_init}};
  j["runs"] = c.runs;
  j["noise_bound"] = c.noise_bound;
  j["snapshot_iterations"] = c.snapshot_iterations;
  j["snapshot_paths"] = c.snapshot_paths;
  j["n_deltas"] = c.n_deltas;
  j["space"] = space_to_json(c.space);
  j["fine_intervals"] = c.fine_intervals;
  j["ladder"] = c.ladder;
  j["n_paths"] = c.n_paths;
  j["path_segments"] = c.path_segments;
  j["output_bound_K"] = c.output_bound_K;
  return j;
}

/// Parses a config document or a run manifest (its "config" member). Keys
/// absent from the document take the defaults of its kind; unknown keys are
/// rejected.
[[nodiscard]] inline ExperimentConfig config_from_json(const nlohmann::json& doc) {
  const nlohmann::json& j =
      doc.is_object() && doc.contains("format") && doc.contains("config") ? doc.at("config") : doc;
  detail::StrictObject r(j, "config");
  std::string kind;
  r.require("kind", kind);
  ExperimentConfig c = ExperimentConfig::defaults(kind_from_name(kind));
  r.get("seed", c.seed);
  r.get("out", c.out);
  r.get("threads", c.threads);
  if (const auto* d = r.sub("data")) {
    detail::StrictObject dr(*d, "config.data");
    dr.get("n_train", c.data.n_train);
    dr.get("n_test", c.data.n_test);
    dr.get("d", c.data.d);
    dr.get("hurst", c.data.hurst);
    dr.get("hurst_alt", c.data.hurst_alt);
    dr.get("grid_points", c.data.grid_points);
    dr.get("k_points", c.data.k_points);
    dr.get("time_channel", c.data.time_channel);
    dr.finish();
  }
  if (const auto* m = r.sub("model")) {
    detail::StrictObject mr(*m, "config.model");
    mr.get("q", c.model.q);
    mr.get("p", c.model.p);
    std::string act = activation_name(c.model.activation);
    mr.get("activation", act);
    mr.finish();
    try {
      c.model.activation = activation_from_name(act);
    } catch (const std::exception& e) {
      throw ValidationError(std::string("config.model.activation: ") + e.what());
    }
  }
  if (const auto* t = r.sub("train")) {
    detail::StrictObject tr(*t, "config.train");
    tr.get("iterations", c.train.iterations);
    tr.get("lr", c.train.lr);
    tr.get("beta1", c.train.beta1);
    tr.get("beta2", c.train.beta2);
    tr.get("eps", c.train.eps);
    tr.get("freeze_phi", c.train.freeze_phi);
    tr.get("freeze_init", c.train.freeze_init);
    tr.finish();
  }
  r.get("runs", c.runs);
  r.get("noise_bound", c.noise_bound);
  r.get("snapshot_iterations", c.snapshot_iterations);
  r.get("snapshot_paths", c.snapshot_paths);
  r.get("n_deltas", c.n_deltas);
  if (const auto* s = r.sub("space")) {
    c.space = space_from_json(*s, "config.space");
  }
  r.get("fine_intervals", c.fine_intervals);
  r.get("ladder", c.ladder);
  r.get("n_paths", c.n_paths);
  r.get("path_segments", c.path_segments);
  r.get("output_bound_K", c.output_bound_K);
  r.finish();
  c.validate();
  return c;
}

}  // namespace ncde
