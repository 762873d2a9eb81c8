#pragma once

// Experiment drivers: minimum width for zero training error, width scaling of
// the probes, GD against the 3 eps_ntrf target, the SGD sample-complexity
// curve and the unit-constant statistical-error reference curve.
//
// Every grid cell derives its randomness from (master seed, cell
// coordinates) and results are collected in grid order, so outputs do not
// depend on the worker count.

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ntrflab/dataset.hpp"
#include "ntrflab/network.hpp"
#include "ntrflab/probes.hpp"
#include "ntrflab/trainer.hpp"

namespace ntrflab {

/// max(1, hardware threads).
std::size_t default_workers();

/// Runs job(i) for i in [0, count) on up to `workers` threads and returns the
/// results in index order. If jobs throw, the exception of the lowest index
/// is rethrown after all threads finish.
template <class F>
auto parallel_map(std::size_t count, std::size_t workers, F&& job) -> std::vector<decltype(job(std::size_t{}))> {
  using T = decltype(job(std::size_t{}));
  std::vector<std::optional<T>> slots(count);
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  const auto work = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        slots[i].emplace(job(i));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min(std::max<std::size_t>(workers, 1), std::max<std::size_t>(count, 1));
  if (threads == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<T> out;
  out.reserve(count);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

/// Least-squares slope of y against x.
double fit_slope(const std::vector<double>& x, const std::vector<double>& y);

// ---------------------------------------------------------------------------
// Minimum width

struct MinWidthConfig {
  std::vector<std::size_t> n_grid{100, 200, 500, 1000, 2000};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::size_t d = 20;
  double gamma = 0.1;
  std::size_t L = 5;
  std::size_t budget = 20000;  // GD steps per (n, m, seed) cell
  std::size_t m_start = 4;
  std::size_t m_max = 4096;
  std::size_t refine_from = 8;  // binary search only gaps at least this wide
  double c_eta = kDefaultStepConstant;
  std::uint64_t master_seed = 0;
  std::size_t workers = 1;

  void validate() const;
};

struct WidthProbe {
  std::size_t m = 0;
  bool success = false;
  std::size_t steps = 0;  // steps run; the budget for failures
  bool diverged = false;
  bool refine = false;  // probed during the binary-search phase
};

struct MinWidthSeed {
  std::uint64_t seed = 0;
  std::size_t min_m = 0;  // 0 when saturated
  bool saturated = false;
  std::vector<WidthProbe> trace;
};

struct MinWidthRow {
  std::size_t n = 0;
  std::size_t min_m = 0;  // median over seeds, saturated seeds counted as infinite
  bool saturated = false;
  std::vector<MinWidthSeed> seeds;
  // Reference curves c log n, c log^2 n, c log^3 n, c n through the first row.
  double ref_log = 0.0, ref_log2 = 0.0, ref_log3 = 0.0, ref_lin = 0.0;
};

/// Smallest width at which GD reaches zero training error on margin data:
/// doubling from m_start until success, then bisection of (m/2, m] down to
/// width resolution 1 when the gap is at least refine_from.
MinWidthSeed search_min_width(const LabeledDataset& data, const MinWidthConfig& cfg, std::uint64_t init_seed);

std::vector<MinWidthRow> run_minwidth(const MinWidthConfig& cfg);

/// Columns n, min_m, saturated, ref_log, ref_log2, ref_log3, ref_lin.
std::string minwidth_csv(const std::vector<MinWidthRow>& rows);
/// Columns n, seed, m, phase, success, diverged, steps.
std::string minwidth_trace_csv(const std::vector<MinWidthRow>& rows);

// ---------------------------------------------------------------------------
// Width scaling

struct ScalingConfig {
  std::vector<std::size_t> m_grid{64, 128, 256, 512, 1024};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  double R = 5.0;
  std::size_t L = 3;
  std::size_t n = 64;
  std::size_t d = 20;
  double gamma = 0.1;
  std::size_t gd_steps = 100;
  std::size_t snapshots = 10;
  std::size_t random_budget = 8;
  std::size_t flip_budget = 8;  // flip points for examples 0..flip_budget-1
  double c_eta = kDefaultStepConstant;
  std::uint64_t master_seed = 0;
  std::size_t workers = 1;

  void validate() const;
};

struct ScalingCell {
  double eps_app_hat = 0.0;
  double M_hat = 0.0;
  double dist_from_init = 0.0;  // max-layer distance after the GD run
  double init_out_max = 0.0;
};

struct ScalingRow {
  std::size_t m = 0;
  double tau = 0.0;  // sqrt(L) R / sqrt(m)
  ScalingCell median;
  std::vector<ScalingCell> cells;  // one per seed
};

struct ScalingResult {
  std::vector<ScalingRow> rows;
  // log-log slopes of the medians against m
  double slope_eps_app = 0.0;
  double slope_M = 0.0;
  double slope_dist = 0.0;
  double slope_init_out = 0.0;
};

/// Per width and seed: fresh init, a short GD run whose snapshots are the
/// probe candidates together with flip points for the first examples, then
/// the probes on the ball of radius sqrt(L) R / sqrt(m).
ScalingResult run_scaling(const ScalingConfig& cfg);

/// Columns m, tau, eps_app_hat, M_hat, dist_from_init, init_out_max (medians).
std::string scaling_csv(const ScalingResult& result);
nlohmann::ordered_json to_json(const ScalingResult& result);

// ---------------------------------------------------------------------------
// GD against 3 eps_ntrf

enum class CompeteData { Margin, RandomPhi };

struct CompeteConfig {
  CompeteData data = CompeteData::Margin;
  std::size_t n = 200;
  std::size_t d = 20;
  double gamma = 0.1;  // margin data
  double phi = 0.5;    // random-label phi data
  std::size_t L = 3;
  std::size_t m = 256;
  double R = 5.0;
  double c_T = 10.0;
  std::size_t fit_steps = 1000;
  std::size_t random_budget = 8;  // random pairs for eps_app_hat
  std::size_t flip_budget = 8;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  double c_eta = kDefaultStepConstant;
  std::uint64_t master_seed = 0;
  std::size_t workers = 1;

  void validate() const;
};

struct CompeteRun {
  std::uint64_t seed = 0;
  double eps_ntrf = 0.0;
  double init_loss = 0.0;
  double target = 0.0;  // 3 eps_ntrf
  std::size_t T_budget = 0;
  double eta = 0.0;
  double best_loss = 0.0;
  std::size_t best_step = 0;
  std::size_t steps_run = 0;
  bool zero_error = false;  // some iterate had err01 = 0
  bool pass = false;        // best_loss <= target
  double tau = 0.0;         // sqrt(L) R / sqrt(m)
  double eps_app_hat = 0.0;
  std::optional<AuditReport> audit;  // empty when eps_app_hat > 3/8
  AuditReport strict_audit;          // audit with eps_app = 0
  Trajectory trajectory;
};

/// Fits the NTRF model (eps_ntrf), then runs GD with the default step for
/// T = ceil(c_T L^2 R^2 / eps_ntrf) steps, stopping once an iterate has
/// loss <= 3 eps_ntrf and zero training error. eps_app_hat covers the GD
/// snapshots, W0 + delta*, flip points and random pairs in the ball of radius
/// sqrt(L) R / sqrt(m).
std::vector<CompeteRun> run_compete(const CompeteConfig& cfg);

/// Columns seed, eps_ntrf, init_loss, target, T_budget, eta, best_loss,
/// best_step, steps_run, zero_error, pass, eps_app_hat, audit_margin,
/// audit_pass, strict_margin, strict_pass.
std::string compete_csv(const std::vector<CompeteRun>& runs);

// ---------------------------------------------------------------------------
// SGD sample complexity

struct SgdCurveConfig {
  std::vector<std::size_t> n_grid{500, 1000, 2000, 4000};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::size_t d = 20;
  double gamma = 0.1;
  std::size_t L = 3;
  std::size_t m = 256;
  std::size_t test_n = 10000;
  double R = 5.0;
  double c_eta = kDefaultStepConstant;
  std::uint64_t master_seed = 0;
  std::size_t workers = 1;

  void validate() const;
};

struct SgdCurveRow {
  std::size_t n = 0;
  double eta = 0.0;
  double median_err01 = 0.0;
  std::vector<double> err01;  // per seed
};

struct SgdCurveResult {
  std::vector<SgdCurveRow> rows;
  double fit_a = 0.0;  // median_err01 ~ a + b / n
  double fit_b = 0.0;
};

/// Per seed one margin distribution: the first test_n draws form the test
/// set and the training stream for size n is the next n draws. SGD uses the
/// 1/L branch of the default step size.
SgdCurveResult run_sgd_sample_complexity(const SgdCurveConfig& cfg);

/// Columns n, eta, median_err01, then err01_seed<k> per seed.
std::string sgd_curve_csv(const SgdCurveResult& result, const std::vector<std::uint64_t>& seeds);

// ---------------------------------------------------------------------------
// Reference curve

struct BoundCurves {
  double term_a = 0.0;  // 4^L L^2 R sqrt(m / n)
  double term_b = 0.0;  // L^{3/2} R / sqrt(n) + L^{11/3} R^{4/3} / m^{1/6}
  double confidence = 0.0;  // sqrt(log(1/delta) / n)
  double statistical_error = 0.0;  // min(term_a, term_b) + confidence
};

/// All hidden constants set to 1; a shape reference, not a bound.
BoundCurves bound_curves(double m, double n, double L, double R, double delta);

nlohmann::ordered_json to_json(const BoundCurves& curves);

}  // namespace ntrflab
