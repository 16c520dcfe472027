// ncde: command-line driver for data generation, training, bound tables,
// verification checks and the experiment runners.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ncde/bounds.hpp"
#include "ncde/config.hpp"
#include "ncde/errors.hpp"
#include "ncde/experiments.hpp"
#include "ncde/io.hpp"
#include "ncde/model.hpp"
#include "ncde/paths.hpp"
#include "ncde/training.hpp"
#include "ncde/verify.hpp"

namespace fs = std::filesystem;
using namespace ncde;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitViolation = 4;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<unsigned> threads;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON config file");
  app->add_option("--seed", c.seed, "master seed");
  app->add_option("--out", c.out, "output directory");
  app->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
}

nlohmann::json read_json(const std::string& file) {
  try {
    return nlohmann::json::parse(io::read_text(file));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(file + ": " + e.what());
  }
}

// generate ------------------------------------------------------------------

struct GenerateOpts {
  Common common;
  std::size_t n = 100;
  int d = 2;
  double hurst = 0.5;
  std::size_t points = 100;
  bool time_channel = false;
  bool teacher = false;
  int p = 3;
  double noise = 0.0;
};

int run_generate(GenerateOpts& o, const CLI::App& app) {
  DatasetManifest m{0, o.hurst, o.d, o.points, o.n};
  if (!o.common.config.empty()) {
    m = read_json(o.common.config).get<DatasetManifest>();
  }
  if (app.count("--n") > 0 || o.common.config.empty()) m.n_paths = o.n;
  if (app.count("--d") > 0 || o.common.config.empty()) m.d = o.d;
  if (app.count("--hurst") > 0 || o.common.config.empty()) m.hurst = o.hurst;
  if (app.count("--points") > 0 || o.common.config.empty()) m.grid_points = o.points;
  if (o.common.seed) m.seed = *o.common.seed;
  detail::require(m.hurst > 0.0 && m.hurst < 1.0, "hurst must lie in (0, 1)");
  detail::require(m.grid_points >= 2, "points must be >= 2");
  const fs::path out = o.common.out.empty() ? fs::path("data") : fs::path(o.common.out);

  const SamplingGrid grid = SamplingGrid::uniform(m.grid_points);
  auto paths = sample_fbm(m.n_paths, m.d, grid, m.hurst, m.seed, o.common.threads.value_or(1));
  if (o.time_channel) {
    for (auto& p : paths) p = augment_time_channel(p);
  }
  io::write_text(out / "paths.csv", paths_to_csv(paths));
  nlohmann::json man = m;
  man["time_channel"] = o.time_channel;
  if (o.teacher) {
    Rng rng = make_rng(m.seed, 0x7eac);
    TeacherModel t{init_uniform_fan_in(Dims{1, o.p, paths.front().dim()}, Activation::tanh, rng), o.noise,
                   sub_seed(m.seed, 0x7eac + 1)};
    const Dataset data = teacher_generate(t, paths);
    std::string labels = "path_id,y\n";
    for (std::size_t i = 0; i < data.size(); ++i) {
      labels += std::to_string(i) + "," + io::format_double(data[i].y) + "\n";
    }
    io::write_text(out / "labels.csv", labels);
    io::write_text(out / "teacher.json", model_to_json(t.params).dump(2) + "\n");
    man["teacher"] = {{"p", o.p}, {"noise_bound", o.noise}};
  }
  io::write_text(out / "manifest.json", man.dump(2) + "\n");
  std::cout << "wrote " << m.n_paths << " paths to " << (out / "paths.csv").string() << "\n";
  return kExitOk;
}

// train ---------------------------------------------------------------------

struct TrainOpts {
  Common common;
  std::string paths;
  std::string labels;
  std::string loss = "squared_error";
  int q = 1;
  int p = 3;
  std::string activation = "tanh";
  int iterations = 2000;
  double lr = 5e-3;
  bool freeze_phi = false;
  bool freeze_init = false;
  std::vector<int> snapshots;
};

std::vector<double> read_labels(const std::string& file, std::size_t n) {
  std::istringstream in(io::read_text(file));
  std::string line;
  std::getline(in, line);
  std::vector<double> y(n, 0.0);
  std::vector<bool> seen(n, false);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = io::split_csv_line(line);
    detail::require(cells.size() == 2, file + ": expected path_id,y rows");
    const auto id = static_cast<std::size_t>(io::parse_double(cells[0]));
    detail::require(id < n, file + ": path_id out of range");
    y[id] = io::parse_double(cells[1]);
    seen[id] = true;
  }
  for (std::size_t i = 0; i < n; ++i) {
    detail::require(seen[i], file + ": missing label for path " + std::to_string(i));
  }
  return y;
}

int run_train(TrainOpts& o) {
  if (!o.common.config.empty()) {
    const auto j = read_json(o.common.config);
    detail::StrictObject r(j, "train_config");
    r.get("paths", o.paths);
    r.get("labels", o.labels);
    r.get("loss", o.loss);
    r.get("q", o.q);
    r.get("p", o.p);
    r.get("activation", o.activation);
    r.get("iterations", o.iterations);
    r.get("lr", o.lr);
    r.get("freeze_phi", o.freeze_phi);
    r.get("freeze_init", o.freeze_init);
    r.get("snapshots", o.snapshots);
    r.finish();
  }
  detail::require(!o.paths.empty() && !o.labels.empty(), "train: --paths and --labels are required");
  const auto paths = paths_from_csv(io::read_text(o.paths));
  detail::require(!paths.empty(), "train: no paths");
  const auto y = read_labels(o.labels, paths.size());
  Dataset data;
  for (std::size_t i = 0; i < paths.size(); ++i) data.push_back({paths[i], y[i]});

  const std::uint64_t seed = o.common.seed.value_or(0);
  Rng rng = make_rng(seed, 0);
  const ModelParams init = init_uniform_fan_in(Dims{o.q, o.p, paths.front().dim()}, activation_from_name(o.activation), rng);
  TrainConfig tc;
  tc.adam.learning_rate = o.lr;
  tc.iterations = o.iterations;
  tc.freeze = FreezeSet{o.freeze_phi, o.freeze_init};
  tc.seed = seed;
  tc.threads = o.common.threads.value_or(1);
  tc.snapshot_iterations = o.snapshots;
  const LossSpec loss{loss_from_name(o.loss), 1.0, 1.0};
  auto [m, log] = train_erm(data, init, loss, tc);

  const fs::path out = o.common.out.empty() ? fs::path("train_out") : fs::path(o.common.out);
  io::write_text(out / "model.json", model_to_json(m).dump(2) + "\n");
  io::write_text(out / "train_log.csv", train_log_to_csv(log, false));
  io::write_text(out / "train_log_normalized.csv", train_log_to_csv(log, true));
  for (const auto& [iter, params] : log.snapshots) {
    io::write_text(out / ("checkpoint_" + std::to_string(iter) + ".json"), model_to_json(params).dump(2) + "\n");
  }
  std::cout << "initial loss " << io::format_double(log.records.front().loss) << ", final loss "
            << io::format_double(log.final_loss) << "\n";
  return kExitOk;
}

// bounds --------------------------------------------------------------------

int run_bounds(const Common& c) {
  BoundRequest req;
  if (!c.config.empty()) {
    req = bound_request_from_json(read_json(c.config));
  }
  std::vector<std::string> skipped;
  const auto table = bound_table(req, &skipped);
  const std::string csv = bound_table_to_csv(table);
  if (c.out.empty()) {
    std::cout << csv;
  } else {
    io::write_text(fs::path(c.out) / "bounds.csv", csv);
    std::cout << "wrote " << table.size() << " bounds to " << (fs::path(c.out) / "bounds.csv").string() << "\n";
  }
  for (const auto& s : skipped) {
    std::cerr << "skipped: " << s << "\n";
  }
  return kExitOk;
}

// verify --------------------------------------------------------------------

struct VerifyOpts {
  Common common;
  std::vector<std::string> checks{"gradients", "output", "field", "flow", "param", "outcome", "disc"};
  std::optional<std::size_t> trials;
};

int run_verify(const VerifyOpts& o) {
  ParamSpace space = reference_space();
  if (!o.common.config.empty()) {
    space = space_from_json(read_json(o.common.config));
  }
  const std::uint64_t seed = o.common.seed.value_or(0);
  const unsigned threads = o.common.threads.value_or(1);
  std::vector<CheckResult> results;
  for (const auto& name : o.checks) {
    if (name == "gradients") {
      results.push_back(check_gradients(o.trials.value_or(100), seed, threads));
    } else if (name == "output") {
      results.push_back(check_output_bound(space, o.trials.value_or(10000), seed, threads));
    } else if (name == "field") {
      results.push_back(check_field_lipschitz(space, o.trials.value_or(10000), seed, threads));
    } else if (name == "flow") {
      results.push_back(check_flow_continuity(space, o.trials.value_or(1000), seed, threads));
    } else if (name == "param") {
      ParamSpace s1 = space;
      s1.q = 1;
      results.push_back(check_param_lipschitz(s1, o.trials.value_or(1000), seed, threads));
    } else if (name == "outcome") {
      results.push_back(check_outcome_bound(space, o.trials.value_or(10000), seed, threads));
    } else if (name == "disc") {
      Rng mrng = make_rng(seed, 0);
      const ModelParams model = sample_params_in(space, Activation::tanh, mrng);
      const SamplingGrid fine = SamplingGrid::uniform(8193);
      std::vector<SampledPath> paths;
      for (std::size_t i = 0; i < o.trials.value_or(20); ++i) {
        Rng prng = make_rng(seed, 1 + i);
        paths.push_back(sample_lipschitz_path(fine, space.d, space.L_x, space.B_x, 4, prng));
      }
      results.push_back(check_discretization_scaling(space, model, paths, {4, 8, 16, 32, 64, 128, 256, 512}).check);
    } else {
      throw ValidationError("unknown check '" + name + "'");
    }
  }
  nlohmann::json j = nlohmann::json::array();
  std::string csv = "seed,name,trials,violations,max_ratio,passed\n";
  bool violated = false;
  for (const auto& r : results) {
    j.push_back(check_to_json(r));
    csv += std::to_string(seed) + "," + r.name + "," + std::to_string(r.trials) + "," + std::to_string(r.violations) +
           "," + io::format_double(r.max_ratio) + "," + (r.passed() ? "1" : "0") + "\n";
    violated = violated || !r.passed();
    std::cout << (r.passed() ? "ok   " : "FAIL ") << r.name << ": " << r.violations << "/" << r.trials
              << " violations, max ratio " << io::format_double(r.max_ratio) << "\n";
  }
  std::cout << "note: sup-gap estimates are sampled lower estimates of the true sup\n";
  if (!o.common.out.empty()) {
    io::write_text(fs::path(o.common.out) / "verify.json", j.dump(2) + "\n");
    io::write_text(fs::path(o.common.out) / "verify.csv", csv);
  }
  return violated ? kExitViolation : kExitOk;
}

// exp -----------------------------------------------------------------------

int run_exp(ExperimentKind kind, const Common& c) {
  ExperimentConfig cfg = ExperimentConfig::defaults(kind);
  if (!c.config.empty()) {
    cfg = config_from_json(read_json(c.config));
    detail::require(cfg.kind == kind, "config kind '" + kind_name(cfg.kind) + "' does not match the subcommand");
  }
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.out = c.out;
  if (c.threads) cfg.threads = *c.threads;
  cfg.validate();
  const RunResult r = run_experiment(cfg);
  std::cout << r.summary.dump(2) << "\n";
  std::cout << "manifest: " << (fs::path(cfg.out) / "manifest.json").string() << "\n";
  if (r.summary.contains("violations") && r.summary["violations"].get<std::size_t>() > 0) {
    return kExitViolation;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural CDE numerical lab"};
  app.require_subcommand(1);

  GenerateOpts gen;
  auto* g = app.add_subcommand("generate", "sample fBM paths (optionally with teacher labels)");
  add_common(g, gen.common);
  g->add_option("--n", gen.n, "number of paths");
  g->add_option("--d", gen.d, "channels");
  g->add_option("--hurst", gen.hurst, "Hurst exponent");
  g->add_option("--points", gen.points, "uniform grid points");
  g->add_flag("--time-channel", gen.time_channel, "prepend time as channel 0");
  g->add_flag("--teacher", gen.teacher, "also write labels from a random shallow teacher");
  g->add_option("--teacher-p", gen.p, "teacher latent size");
  g->add_option("--noise", gen.noise, "teacher noise bound");

  TrainOpts tr;
  auto* t = app.add_subcommand("train", "full-batch Adam on a labelled path set");
  add_common(t, tr.common);
  t->add_option("--paths", tr.paths, "long-format paths CSV");
  t->add_option("--labels", tr.labels, "labels CSV (path_id,y)");
  t->add_option("--loss", tr.loss, "squared_error | bce_with_logit");
  t->add_option("--q", tr.q, "field depth");
  t->add_option("--p", tr.p, "latent size");
  t->add_option("--activation", tr.activation, "tanh | identity | relu");
  t->add_option("--iterations", tr.iterations, "Adam iterations");
  t->add_option("--lr", tr.lr, "learning rate");
  t->add_flag("--freeze-phi", tr.freeze_phi, "keep the readout fixed");
  t->add_flag("--freeze-init", tr.freeze_init, "keep U and v fixed");
  t->add_option("--snapshots", tr.snapshots, "iterations to checkpoint");

  Common bc;
  auto* b = app.add_subcommand("bounds", "evaluate every bound for a parameter space");
  add_common(b, bc);

  VerifyOpts vo;
  auto* v = app.add_subcommand("verify", "Monte-Carlo checks of the bound inequalities");
  add_common(v, vo.common);
  v->add_option("--checks", vo.checks, "gradients,output,field,flow,param,outcome,disc")->delimiter(',');
  v->add_option("--trials", vo.trials, "trials per check (paths for disc)");

  auto* e = app.add_subcommand("exp", "experiment runners");
  e->require_subcommand(1);
  std::map<std::string, std::pair<ExperimentKind, Common>> exps{
      {"teacher-student", {ExperimentKind::teacher_student, {}}},
      {"rough-smooth", {ExperimentKind::rough_smooth, {}}},
      {"flow", {ExperimentKind::flow_interpolation, {}}},
      {"disc-sweep", {ExperimentKind::discretization_sweep, {}}}};
  std::map<std::string, CLI::App*> exp_apps;
  for (auto& [name, entry] : exps) {
    auto* sub = e->add_subcommand(name, "run the " + kind_name(entry.first) + " experiment");
    add_common(sub, entry.second);
    exp_apps[name] = sub;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (g->parsed()) return run_generate(gen, *g);
    if (t->parsed()) return run_train(tr);
    if (b->parsed()) return run_bounds(bc);
    if (v->parsed()) return run_verify(vo);
    for (auto& [name, sub] : exp_apps) {
      if (sub->parsed()) return run_exp(exps.at(name).first, exps.at(name).second);
    }
  } catch (const ValidationError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& err) {
    std::cerr << "numeric failure: " << err.what() << "\n";
    return kExitNumeric;
  } catch (const SynthesisError& err) {
    std::cerr << "synthesis failure: " << err.what() << "\n";
    return kExitNumeric;
  } catch (const DomainError& err) {
    std::cerr << "domain error: " << err.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return kExitOk;
}
