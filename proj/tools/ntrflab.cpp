// ntrflab command-line front end.
//
//   ntrflab [--seed S] [--out DIR] [--config FILE] [--workers K] <subcommand> [options]
//
// Exit codes: 0 success, 2 invalid input, 3 budget exhausted or divergence,
// 4 I/O failure.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ntrflab/dataset.hpp"
#include "ntrflab/error.hpp"
#include "ntrflab/experiments.hpp"
#include "ntrflab/io.hpp"
#include "ntrflab/losses.hpp"
#include "ntrflab/network.hpp"
#include "ntrflab/ntrf.hpp"
#include "ntrflab/probes.hpp"
#include "ntrflab/rng.hpp"
#include "ntrflab/separability.hpp"
#include "ntrflab/trainer.hpp"

namespace fs = std::filesystem;
using namespace ntrflab;
using json = nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kDataTag = 0xDA7A;
constexpr std::uint64_t kInitTag = 0x1417;

struct Global {
  std::uint64_t seed = 0;
  std::string out = ".";
  std::string config;
  std::size_t workers = default_workers();
};

fs::path out_file(const Global& g, const std::string& name) {
  fs::create_directories(g.out);
  return fs::path(g.out) / name;
}

void emit(const Global& g, const std::string& name, const std::string& text) {
  const auto path = out_file(g, name);
  write_text_file(path, text);
  std::cerr << "wrote " << path.string() << '\n';
}

void emit_json(const Global& g, const std::string& name, const json& j) { emit(g, name, j.dump(2) + '\n'); }

// Flat key=value file: one pair per line, '#' starts a comment.
std::vector<std::pair<std::string, std::string>> read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t lineno = 0;
  const auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return std::string{};
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InvalidInput(path + ":" + std::to_string(lineno) + ": expected key=value");
    }
    std::string key = trim(line.substr(0, eq));
    if (key.rfind("--", 0) == 0) key.erase(0, 2);
    for (auto& c : key) {
      if (c == '_') c = '-';
    }
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    out.emplace_back(key, value);
  }
  return out;
}

// Options given on the command line win; the rest take their config value.
void apply_config(CLI::App& app, CLI::App& sub, const std::string& path) {
  for (const auto& [key, value] : read_config(path)) {
    if (key == "config") continue;
    CLI::Option* opt = sub.get_option_no_throw("--" + key);
    if (opt == nullptr) opt = app.get_option_no_throw("--" + key);
    if (opt == nullptr) throw InvalidInput("unknown config key '" + key + "' for " + sub.get_name());
    if (opt->count() > 0) continue;
    if (opt->get_type_size() == 0) {
      // flag
      if (value != "true" && value != "1" && value != "false" && value != "0") {
        throw InvalidInput("config key '" + key + "' expects true or false");
      }
      if (value == "false" || value == "0") continue;
    }
    if (opt->get_items_expected_max() > 1) {
      // list options take whitespace-separated items
      std::istringstream items(value);
      for (std::string item; items >> item;) opt->add_result(item);
    } else {
      opt->add_result(value);
    }
    opt->run_callback();
  }
}

// ---------------------------------------------------------------------------
// shared option groups

struct DataOpts {
  std::string path;
  std::size_t n = 200;
  std::size_t d = 20;
  double gamma = 0.1;

  void add(CLI::App* sub) {
    sub->add_option("--data", path, "Dataset (.csv, projected to unit norm, or binary container)");
    sub->add_option("--n", n, "Examples to generate when --data is absent")->capture_default_str();
    sub->add_option("--d", d, "Input dimension when --data is absent")->capture_default_str();
    sub->add_option("--gamma", gamma, "Margin of generated data")->capture_default_str();
  }

  LabeledDataset load(std::uint64_t seed) const {
    if (path.empty()) return gen_margin_dataset(n, d, gamma, derive_seed(seed, kDataTag));
    if (fs::path(path).extension() == ".csv") return project_unit(load_csv(path));
    return load_dataset(path);
  }
};

struct NetOpts {
  std::size_t m = 256;
  std::size_t L = 3;
  std::string init;

  void add(CLI::App* sub) {
    sub->add_option("--m", m, "Hidden width")->capture_default_str();
    sub->add_option("--L", L, "Depth (number of weight layers)")->capture_default_str();
    sub->add_option("--init", init, "Initial weights file (default: fresh init from --seed)");
  }

  WeightStack weights(std::size_t d, std::uint64_t seed) const {
    if (!init.empty()) {
      auto w = load_weights(init).weights;
      if (w.shape().d != d) throw InvalidInput("--init weights do not match the data dimension");
      return w;
    }
    return init_weights(NetworkShape(d, m, L), derive_seed(seed, kInitTag));
  }
};

json shape_json(const NetworkShape& s) { return {{"d", s.d}, {"m", s.m}, {"L", s.L}}; }

json final_record_json(const StepRecord& r) {
  return {{"step", r.step}, {"loss", r.loss}, {"err01", r.err01}, {"surrogate", r.surrogate}};
}

// ---------------------------------------------------------------------------

struct GenCmd {
  std::string kind = "margin";
  std::size_t n = 200, d = 20;
  double gamma = 0.1, phi = 0.5, rho = 0.0;
  std::string name = "data.csv";

  void add(CLI::App* sub) {
    sub->add_option("--kind", kind, "margin or phi")->check(CLI::IsMember({"margin", "phi"}))->capture_default_str();
    sub->add_option("--n", n)->capture_default_str();
    sub->add_option("--d", d)->capture_default_str();
    sub->add_option("--gamma", gamma, "Teacher margin (margin data)")->capture_default_str();
    sub->add_option("--phi", phi, "Cross-class distance (phi data)")->capture_default_str();
    sub->add_option("--rho", rho, "Fraction of labels to flip")->capture_default_str();
    sub->add_option("--name", name, "Output file; .csv for text, anything else for the binary container")
        ->capture_default_str();
  }

  void run(const Global& g) const {
    const auto seed = derive_seed(g.seed, kDataTag);
    auto data = kind == "margin" ? gen_margin_dataset(n, d, gamma, seed) : gen_phi_dataset(n, d, phi, seed);
    if (rho > 0.0) data = flip_labels(data, rho, derive_seed(g.seed, 0xF11B));
    const auto path = out_file(g, name);
    if (path.extension() == ".csv") {
      save_csv(data, path);
    } else {
      save_dataset(data, path);
    }
    std::cerr << "wrote " << path.string() << '\n';
  }
};

struct TrainCmd {
  bool sgd = false;
  DataOpts data;
  NetOpts net;
  double eta = 0.0;
  double c_eta = kDefaultStepConstant;
  double R = 5.0;
  std::size_t T = 1000;
  std::size_t snapshot_every = 0;
  double target_loss = 0.0;
  bool stop_on_zero_error = false;

  void add(CLI::App* sub) {
    data.add(sub);
    net.add(sub);
    sub->add_option("--eta", eta, "Step size (0: default c / (L m), SGD: 1/L branch)")->capture_default_str();
    sub->add_option("--c-eta", c_eta, "Constant of the default step size")->capture_default_str();
    if (sgd) return;
    sub->add_option("--T", T, "Step budget")->capture_default_str();
    sub->add_option("--snapshot-every", snapshot_every, "Weight snapshot spacing (0: first and last only)");
    sub->add_option("--target-loss", target_loss, "Stop once the training loss is at most this")
        ->capture_default_str();
    sub->add_flag("--stop-on-zero-error", stop_on_zero_error, "Also require zero training error before stopping");
  }

  void run(const Global& g) const {
    const auto d = data.load(g.seed);
    const auto w0 = net.weights(d.d(), g.seed);
    TrainConfig tc;
    tc.eta = eta > 0.0 ? eta
                       : default_step_size(w0.shape(), sgd ? StepMode::SGD : StepMode::GD, {R, d.n(), 0.0}, c_eta);
    tc.T = T;
    tc.seed = derive_seed(g.seed, 0x56D);
    tc.snapshot_every = snapshot_every;
    tc.target_loss = target_loss;
    tc.stop_on_zero_error = stop_on_zero_error;

    json summary;
    summary["shape"] = shape_json(w0.shape());
    summary["n"] = d.n();
    summary["eta"] = tc.eta;
    if (sgd) {
      const auto res = sgd_train(w0, d, tc);
      write_metrics_jsonl(res.trajectory, out_file(g, "metrics.jsonl"));
      save_weights(res.chosen, g.seed, out_file(g, "weights.bin"));
      summary["chosen_index"] = res.chosen_index;
      const auto m = dataset_metrics(res.chosen, d);
      summary["chosen"] = {{"loss", m.loss}, {"err01", m.err01}};
    } else {
      const auto traj = gd_train(w0, d, tc);
      write_metrics_jsonl(traj, out_file(g, "metrics.jsonl"));
      save_weights(traj.final, g.seed, out_file(g, "weights.bin"));
      summary["final"] = final_record_json(traj.records.back());
      summary["best_loss"] = traj.best_loss;
      summary["best_step"] = traj.best_step;
      summary["stopped_early"] = traj.stopped_early;
    }
    emit_json(g, "summary.json", summary);
  }
};

struct NtrfCmd {
  DataOpts data;
  NetOpts net;
  std::string mode = "ce";
  double R = 5.0;
  std::size_t steps = 1000;
  double lr = 0.0;
  double lambda = std::log(1e3) + 1.0;
  double dt = 0.0;
  double stop_below = 0.0;
  std::string save;

  void add(CLI::App* sub) {
    data.add(sub);
    net.add(sub);
    sub->add_option("--mode", mode, "ce: projected GD on cross-entropy; hinge: squared-hinge flow on layer L-1")
        ->check(CLI::IsMember({"ce", "hinge"}))
        ->capture_default_str();
    sub->add_option("--R", R, "Ball radius (layers move by at most R / sqrt(m))")->capture_default_str();
    sub->add_option("--steps", steps)->capture_default_str();
    sub->add_option("--lr", lr, "Fit step (0: safe step from the feature spectrum)")->capture_default_str();
    sub->add_option("--lambda", lambda, "Hinge level")->capture_default_str();
    sub->add_option("--dt", dt, "Euler step (0: n^3 / (8 m phi))")->capture_default_str();
    sub->add_option("--stop-below", stop_below, "End the hinge flow once every example's loss is at most this");
    sub->add_option("--save-features", save, "Also write the feature matrix to this file name");
  }

  void run(const Global& g) const {
    const auto d = data.load(g.seed);
    const auto w0 = net.weights(d.d(), g.seed);
    const auto f = extract_features(w0, d, g.seed);
    if (!save.empty()) save_features(f, out_file(g, save));
    json j;
    j["shape"] = shape_json(w0.shape());
    j["n"] = d.n();
    j["mode"] = mode;
    if (mode == "ce") {
      const double step = lr > 0.0 ? lr : safe_fit_step(f);
      const auto fit = fit_projected_gd(f, d.labels(), R, steps, step);
      j["R"] = R;
      j["lr"] = step;
      j["eps_ntrf"] = fit.eps_ntrf;
      j["delta_layer_norms"] = fit.model.delta.layer_norms();
      j["loss_curve"] = fit.loss_curve;
    } else {
      const double step = dt > 0.0 ? dt : default_hinge_dt(d.n(), w0.shape().m, class_distance(d).phi);
      const auto flow = hinge_flow_auto(f, d.labels(), lambda, step, steps, stop_below);
      const auto delta = hinge_delta(w0.shape(), flow.delta_block);
      j["lambda"] = lambda;
      j["dt"] = flow.dt;
      j["steps"] = flow.steps;
      j["ntrf_cross_entropy"] = ntrf_loss(f, d.labels(), delta);
      j["delta_norm"] = flow.delta_block.norm();
      j["hinge_losses"] = flow.losses;
    }
    emit_json(g, "ntrf.json", j);
  }
};

struct ProbeCmd {
  DataOpts data;
  NetOpts net;
  double R = 5.0;
  double tau = 0.0;
  std::size_t random_budget = 8;
  std::size_t flip_budget = 8;
  std::vector<std::string> candidates;
  std::string audit_metrics;

  void add(CLI::App* sub) {
    data.add(sub);
    net.add(sub);
    sub->add_option("--R", R)->capture_default_str();
    sub->add_option("--tau", tau, "Ball radius (0: sqrt(L) R / sqrt(m))");
    sub->add_option("--random-budget", random_budget, "Random pairs")->capture_default_str();
    sub->add_option("--flip-budget", flip_budget, "Flip points, one per leading example")->capture_default_str();
    sub->add_option("--candidate", candidates, "Weights files added to the candidate set");
  }

  void run(const Global& g) const {
    const auto d = data.load(g.seed);
    const auto w0 = net.weights(d.d(), g.seed);
    const auto& s = w0.shape();
    BallSpec ball{w0, tau > 0.0 ? tau : std::sqrt(static_cast<double>(s.L)) * R / std::sqrt(static_cast<double>(s.m))};
    std::vector<WeightStack> cands;
    for (const auto& c : candidates) cands.push_back(load_weights(c).weights);
    for (std::size_t i = 0; i < std::min(flip_budget, d.n()); ++i) cands.push_back(flip_ball_point(ball, d.x(i)));
    json j = to_json(run_probes(ball, d, cands, random_budget, derive_seed(g.seed, 0x9B0E)));
    j["tau"] = ball.tau;
    j["shape"] = shape_json(s);
    emit_json(g, "probe.json", j);
  }
};

struct SepCmd {
  DataOpts data;
  std::size_t m = 0;
  std::size_t L = 3;
  std::size_t iterations = 2000;
  std::size_t k = 0;
  bool witness = false;

  void add(CLI::App* sub) {
    data.add(sub);
    sub->add_option("--m", m, "Width for the NTRF margin (0 skips it)");
    sub->add_option("--L", L)->capture_default_str();
    sub->add_option("--iterations", iterations, "Ascent iterations for the margin searches")->capture_default_str();
    sub->add_option("--k", k, "Gaussian samples for the shallow NTK margin (0 skips it)");
    sub->add_flag("--witness", witness, "Build the two-layer witness at width --m from the rows of W1");
  }

  void run(const Global& g) const {
    const auto d = data.load(g.seed);
    json j;
    j["class_distance"] = to_json(class_distance(d));
    if (m > 0) {
      const auto w0 = init_weights(NetworkShape(d.d(), m, L), derive_seed(g.seed, kInitTag));
      j["ntrf_margin"] = to_json(ntrf_margin(extract_features(w0, d, g.seed), d.labels(), iterations));
    }
    if (k > 0) {
      const auto rep = shallow_ntk_margin(d, k, derive_seed(g.seed, 0x5A11), iterations);
      save_umap(rep, out_file(g, "umap.bin"));
      j["shallow_margin"] = to_json(rep);
    }
    if (witness) {
      if (m == 0) throw InvalidInput("--witness needs --m");
      const auto w0 = init_weights(NetworkShape(d.d(), m, 2), derive_seed(g.seed, kInitTag));
      const auto rep = shallow_ntk_margin_at(d, w0[0], iterations);
      j["witness_gamma_hat"] = rep.gamma_hat;
      j["witness"] = to_json(shallow_witness(w0, rep.umap, d));
    }
    emit_json(g, "sep.json", j);
  }
};

struct MinWidthCmd {
  MinWidthConfig cfg;
  void add(CLI::App* sub) {
    sub->add_option("--n-grid", cfg.n_grid)->delimiter(',')->capture_default_str();
    sub->add_option("--seeds", cfg.seeds)->delimiter(',')->capture_default_str();
    sub->add_option("--d", cfg.d)->capture_default_str();
    sub->add_option("--gamma", cfg.gamma)->capture_default_str();
    sub->add_option("--L", cfg.L)->capture_default_str();
    sub->add_option("--budget", cfg.budget, "GD steps per cell")->capture_default_str();
    sub->add_option("--m-start", cfg.m_start)->capture_default_str();
    sub->add_option("--m-max", cfg.m_max)->capture_default_str();
    sub->add_option("--refine-from", cfg.refine_from, "Bisect gaps at least this wide")->capture_default_str();
    sub->add_option("--c-eta", cfg.c_eta)->capture_default_str();
  }
  void run(const Global& g) {
    cfg.master_seed = g.seed;
    cfg.workers = g.workers;
    const auto rows = run_minwidth(cfg);
    emit(g, "minwidth.csv", minwidth_csv(rows));
    emit(g, "minwidth_trace.csv", minwidth_trace_csv(rows));
  }
};

struct ScalingCmd {
  ScalingConfig cfg;
  void add(CLI::App* sub) {
    sub->add_option("--m-grid", cfg.m_grid)->delimiter(',')->capture_default_str();
    sub->add_option("--seeds", cfg.seeds)->delimiter(',')->capture_default_str();
    sub->add_option("--R", cfg.R)->capture_default_str();
    sub->add_option("--L", cfg.L)->capture_default_str();
    sub->add_option("--n", cfg.n)->capture_default_str();
    sub->add_option("--d", cfg.d)->capture_default_str();
    sub->add_option("--gamma", cfg.gamma)->capture_default_str();
    sub->add_option("--gd-steps", cfg.gd_steps)->capture_default_str();
    sub->add_option("--snapshots", cfg.snapshots)->capture_default_str();
    sub->add_option("--random-budget", cfg.random_budget)->capture_default_str();
    sub->add_option("--flip-budget", cfg.flip_budget)->capture_default_str();
    sub->add_option("--c-eta", cfg.c_eta)->capture_default_str();
  }
  void run(const Global& g) {
    cfg.master_seed = g.seed;
    cfg.workers = g.workers;
    const auto r = run_scaling(cfg);
    emit(g, "scaling.csv", scaling_csv(r));
    emit_json(g, "scaling.json", to_json(r));
  }
};

struct CompeteCmd {
  CompeteConfig cfg;
  std::string kind = "margin";
  void add(CLI::App* sub) {
    sub->add_option("--data-kind", kind, "margin or phi (random labels)")
        ->check(CLI::IsMember({"margin", "phi"}))
        ->capture_default_str();
    sub->add_option("--n", cfg.n)->capture_default_str();
    sub->add_option("--d", cfg.d)->capture_default_str();
    sub->add_option("--gamma", cfg.gamma)->capture_default_str();
    sub->add_option("--phi", cfg.phi)->capture_default_str();
    sub->add_option("--L", cfg.L)->capture_default_str();
    sub->add_option("--m", cfg.m)->capture_default_str();
    sub->add_option("--R", cfg.R)->capture_default_str();
    sub->add_option("--c-T", cfg.c_T, "Budget constant: T = ceil(c_T L^2 R^2 / eps_ntrf)")->capture_default_str();
    sub->add_option("--fit-steps", cfg.fit_steps)->capture_default_str();
    sub->add_option("--random-budget", cfg.random_budget)->capture_default_str();
    sub->add_option("--flip-budget", cfg.flip_budget)->capture_default_str();
    sub->add_option("--seeds", cfg.seeds)->delimiter(',')->capture_default_str();
    sub->add_option("--c-eta", cfg.c_eta)->capture_default_str();
  }
  void run(const Global& g) {
    cfg.data = kind == "margin" ? CompeteData::Margin : CompeteData::RandomPhi;
    cfg.master_seed = g.seed;
    cfg.workers = g.workers;
    const auto runs = run_compete(cfg);
    emit(g, "compete.csv", compete_csv(runs));
    json audits = json::array();
    for (const auto& r : runs) {
      emit(g, "compete_seed" + std::to_string(r.seed) + ".jsonl", format_metrics_jsonl(r.trajectory));
      json a;
      a["seed"] = r.seed;
      a["eps_app_hat"] = r.eps_app_hat;
      a["tau"] = r.tau;
      a["audit"] = r.audit ? to_json(*r.audit) : json(nullptr);
      a["strict_audit"] = to_json(r.strict_audit);
      audits.push_back(std::move(a));
    }
    emit_json(g, "compete_audit.json", audits);
  }
};

struct SgdCurveCmd {
  SgdCurveConfig cfg;
  void add(CLI::App* sub) {
    sub->add_option("--n-grid", cfg.n_grid)->delimiter(',')->capture_default_str();
    sub->add_option("--seeds", cfg.seeds)->delimiter(',')->capture_default_str();
    sub->add_option("--d", cfg.d)->capture_default_str();
    sub->add_option("--gamma", cfg.gamma)->capture_default_str();
    sub->add_option("--L", cfg.L)->capture_default_str();
    sub->add_option("--m", cfg.m)->capture_default_str();
    sub->add_option("--test-n", cfg.test_n)->capture_default_str();
    sub->add_option("--R", cfg.R)->capture_default_str();
    sub->add_option("--c-eta", cfg.c_eta)->capture_default_str();
  }
  void run(const Global& g) {
    cfg.master_seed = g.seed;
    cfg.workers = g.workers;
    const auto r = run_sgd_sample_complexity(cfg);
    emit(g, "sgd_curve.csv", sgd_curve_csv(r, cfg.seeds));
    emit_json(g, "sgd_curve_fit.json", json{{"a", r.fit_a}, {"b", r.fit_b}});
  }
};

struct BoundsCmd {
  std::vector<double> m{1e4};
  std::vector<double> n{1e4};
  double L = 2, R = 1, delta = 0.01;
  void add(CLI::App* sub) {
    sub->add_option("--m", m, "Widths")->delimiter(',')->capture_default_str();
    sub->add_option("--n", n, "Sample sizes")->delimiter(',')->capture_default_str();
    sub->add_option("--L", L)->capture_default_str();
    sub->add_option("--R", R)->capture_default_str();
    sub->add_option("--delta", delta)->capture_default_str();
  }
  void run(const Global& g) const {
    std::cerr << "note: all hidden constants are set to 1. These curves are shape references, not certified "
                 "bounds.\n";
    std::string csv = "m,n,L,R,delta,term_a,term_b,confidence,statistical_error\n";
    for (double mm : m) {
      for (double nn : n) {
        const auto c = bound_curves(mm, nn, L, R, delta);
        csv += format_double(mm) + ',' + format_double(nn) + ',' + format_double(L) + ',' + format_double(R) + ',' +
               format_double(delta) + ',' + format_double(c.term_a) + ',' + format_double(c.term_b) + ',' +
               format_double(c.confidence) + ',' + format_double(c.statistical_error) + '\n';
      }
    }
    std::cout << csv;
    emit(g, "bounds.csv", csv);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Experiments on the neural tangent random feature view of deep ReLU networks"};
  app.require_subcommand(1);
  app.fallthrough();
  Global g;
  app.add_option("--seed", g.seed, "Master seed")->capture_default_str();
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_option("--config", g.config, "Flat key=value file; command-line flags take precedence");
  app.add_option("--workers", g.workers, "Worker threads for grid experiments")->capture_default_str();

  GenCmd gen;
  TrainCmd gd, sgd;
  sgd.sgd = true;
  NtrfCmd ntrf;
  ProbeCmd probe;
  SepCmd sep;
  MinWidthCmd minwidth;
  ScalingCmd scaling;
  CompeteCmd compete;
  SgdCurveCmd curve;
  BoundsCmd bounds;

  gen.add(app.add_subcommand("gen", "Generate a dataset"));
  gd.add(app.add_subcommand("train-gd", "Full-batch gradient descent"));
  sgd.add(app.add_subcommand("train-sgd", "One-pass SGD over the dataset as a stream"));
  ntrf.add(app.add_subcommand("ntrf-fit", "Fit the NTRF model at initialization"));
  probe.add(app.add_subcommand("probe", "Linearization error and gradient bound probes"));
  sep.add(app.add_subcommand("sep", "Separability measures"));
  minwidth.add(app.add_subcommand("minwidth", "Minimum width for zero training error"));
  scaling.add(app.add_subcommand("scaling", "Width scaling of the probes"));
  compete.add(app.add_subcommand("compete", "GD against the 3 eps_ntrf target"));
  curve.add(app.add_subcommand("sgd-curve", "SGD test error against sample size"));
  bounds.add(app.add_subcommand("bounds", "Unit-constant reference curves"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    if (!g.config.empty()) apply_config(app, *sub, g.config);
    const std::string name = sub->get_name();
    if (name == "gen") gen.run(g);
    else if (name == "train-gd") gd.run(g);
    else if (name == "train-sgd") sgd.run(g);
    else if (name == "ntrf-fit") ntrf.run(g);
    else if (name == "probe") probe.run(g);
    else if (name == "sep") sep.run(g);
    else if (name == "minwidth") minwidth.run(g);
    else if (name == "scaling") scaling.run(g);
    else if (name == "compete") compete.run(g);
    else if (name == "sgd-curve") curve.run(g);
    else if (name == "bounds") bounds.run(g);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
  return 0;
}
