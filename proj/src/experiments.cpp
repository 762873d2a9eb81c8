#include "ntrflab/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "ntrflab/error.hpp"
#include "ntrflab/io.hpp"
#include "ntrflab/losses.hpp"
#include "ntrflab/ntrf.hpp"
#include "ntrflab/rng.hpp"

namespace ntrflab {
namespace {

// Cell-coordinate tags for derive_seed.
constexpr std::uint64_t kDataTag = 0xDA7A;
constexpr std::uint64_t kInitTag = 0x1417;

std::string fmt(double v) { return format_double(v); }

template <class T>
void require_grid(const std::vector<T>& grid, const char* name) {
  if (grid.empty()) throw InvalidInput(std::string(name) + " must not be empty");
}

void require_distinct(const std::vector<std::uint64_t>& seeds) {
  require_grid(seeds, "seed list");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw InvalidInput("seeds must be distinct");
  }
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t k = v.size();
  return k % 2 == 1 ? v[k / 2] : 0.5 * (v[k / 2 - 1] + v[k / 2]);
}

double log_or_nan(double v) { return v > 0.0 ? std::log(v) : std::numeric_limits<double>::quiet_NaN(); }

}  // namespace

std::size_t default_workers() { return std::max(1u, std::thread::hardware_concurrency()); }

double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidInput("slope fit needs two or more paired points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (!(sxx > 0.0)) throw InvalidInput("slope fit needs distinct x values");
  return sxy / sxx;
}

// ---------------------------------------------------------------------------
// Minimum width

void MinWidthConfig::validate() const {
  require_grid(n_grid, "n grid");
  require_distinct(seeds);
  for (auto n : n_grid) {
    if (n < 2) throw InvalidInput("minwidth needs n >= 2");
  }
  if (L < 2) throw InvalidInput("minwidth needs L >= 2");
  if (budget < 1) throw InvalidInput("minwidth needs a positive step budget");
  if (m_start < 1 || m_max < m_start) throw InvalidInput("minwidth needs 1 <= m_start <= m_max");
}

MinWidthSeed search_min_width(const LabeledDataset& data, const MinWidthConfig& cfg, std::uint64_t init_seed) {
  MinWidthSeed out;
  const auto probe = [&](std::size_t m, bool refine) {
    const NetworkShape shape(data.d(), m, cfg.L);
    TrainConfig tc;
    tc.eta = default_step_size(shape, StepMode::GD, {}, cfg.c_eta);
    tc.T = cfg.budget;
    tc.snapshot_every = 0;
    tc.stop_on_zero_error = true;
    WidthProbe p;
    p.m = m;
    p.refine = refine;
    try {
      const auto traj = gd_train(init_weights(shape, derive_seed(init_seed, m)), data, tc);
      p.success = traj.records.back().err01 == 0.0;
      p.steps = traj.records.back().step;
    } catch (const Divergence& e) {
      p.diverged = true;
      p.steps = static_cast<std::size_t>(std::max(0L, e.last_valid_step()));
    }
    out.trace.push_back(p);
    return p.success;
  };

  std::size_t hi = 0, lo = 0;
  for (std::size_t m = cfg.m_start; m <= cfg.m_max; m *= 2) {
    if (probe(m, false)) {
      hi = m;
      break;
    }
    lo = m;
  }
  if (hi == 0) {
    out.saturated = true;
    return out;
  }
  if (lo > 0 && hi - lo >= cfg.refine_from) {
    while (hi - lo > 1) {
      const std::size_t mid = lo + (hi - lo) / 2;
      if (probe(mid, true)) {
        hi = mid;
      } else {
        lo = mid;
      }
    }
  }
  out.min_m = hi;
  return out;
}

std::vector<MinWidthRow> run_minwidth(const MinWidthConfig& cfg) {
  cfg.validate();
  const std::size_t S = cfg.seeds.size();
  const auto cells = parallel_map(cfg.n_grid.size() * S, cfg.workers, [&](std::size_t c) {
    const std::size_t n = cfg.n_grid[c / S];
    const std::uint64_t seed = cfg.seeds[c % S];
    const auto data = gen_margin_dataset(n, cfg.d, cfg.gamma, derive_seed(cfg.master_seed, kDataTag, n, seed));
    auto result = search_min_width(data, cfg, derive_seed(cfg.master_seed, kInitTag, n, seed));
    result.seed = seed;
    return result;
  });

  std::vector<MinWidthRow> rows;
  for (std::size_t k = 0; k < cfg.n_grid.size(); ++k) {
    MinWidthRow row;
    row.n = cfg.n_grid[k];
    std::vector<double> widths;
    for (std::size_t s = 0; s < S; ++s) {
      const auto& cell = cells[k * S + s];
      widths.push_back(cell.saturated ? std::numeric_limits<double>::infinity() : static_cast<double>(cell.min_m));
      row.seeds.push_back(cell);
    }
    // Upper median for even seed counts, so the width is always one that was searched.
    std::sort(widths.begin(), widths.end());
    const double med = widths[S / 2];
    row.saturated = !std::isfinite(med);
    row.min_m = row.saturated ? 0 : static_cast<std::size_t>(med);
    rows.push_back(std::move(row));
  }

  const auto& first = rows.front();
  if (!first.saturated) {
    const double n0 = static_cast<double>(first.n);
    const double m0 = static_cast<double>(first.min_m);
    const double l0 = std::log(n0);
    for (auto& row : rows) {
      const double l = std::log(static_cast<double>(row.n));
      row.ref_log = m0 * l / l0;
      row.ref_log2 = m0 * (l * l) / (l0 * l0);
      row.ref_log3 = m0 * (l * l * l) / (l0 * l0 * l0);
      row.ref_lin = m0 * static_cast<double>(row.n) / n0;
    }
  }
  return rows;
}

std::string minwidth_csv(const std::vector<MinWidthRow>& rows) {
  std::string out = "n,min_m,saturated,ref_log,ref_log2,ref_log3,ref_lin\n";
  for (const auto& r : rows) {
    out += std::to_string(r.n) + ',' + std::to_string(r.min_m) + ',' + (r.saturated ? "1" : "0") + ',' +
           fmt(r.ref_log) + ',' + fmt(r.ref_log2) + ',' + fmt(r.ref_log3) + ',' + fmt(r.ref_lin) + '\n';
  }
  return out;
}

std::string minwidth_trace_csv(const std::vector<MinWidthRow>& rows) {
  std::string out = "n,seed,m,phase,success,diverged,steps\n";
  for (const auto& r : rows) {
    for (const auto& s : r.seeds) {
      for (const auto& p : s.trace) {
        out += std::to_string(r.n) + ',' + std::to_string(s.seed) + ',' + std::to_string(p.m) + ',' +
               (p.refine ? "bisect" : "double") + ',' + (p.success ? "1" : "0") + ',' + (p.diverged ? "1" : "0") +
               ',' + std::to_string(p.steps) + '\n';
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Width scaling

void ScalingConfig::validate() const {
  require_grid(m_grid, "m grid");
  require_distinct(seeds);
  if (m_grid.size() < 2) throw InvalidInput("scaling needs at least two widths");
  if (!(R > 0.0)) throw InvalidInput("scaling needs R > 0");
  if (L < 2 || n < 1) throw InvalidInput("scaling needs L >= 2 and n >= 1");
  if (gd_steps < 1 || snapshots < 1) throw InvalidInput("scaling needs gd_steps, snapshots >= 1");
}

ScalingResult run_scaling(const ScalingConfig& cfg) {
  cfg.validate();
  const std::size_t S = cfg.seeds.size();
  const auto tau_of = [&](std::size_t m) {
    return std::sqrt(static_cast<double>(cfg.L)) * cfg.R / std::sqrt(static_cast<double>(m));
  };
  const auto cells = parallel_map(cfg.m_grid.size() * S, cfg.workers, [&](std::size_t c) {
    const std::size_t m = cfg.m_grid[c / S];
    const std::uint64_t seed = cfg.seeds[c % S];
    const auto data = gen_margin_dataset(cfg.n, cfg.d, cfg.gamma, derive_seed(cfg.master_seed, kDataTag, seed));
    const NetworkShape shape(cfg.d, m, cfg.L);
    const auto w0 = init_weights(shape, derive_seed(cfg.master_seed, kInitTag, m, seed));

    TrainConfig tc;
    tc.eta = default_step_size(shape, StepMode::GD, {}, cfg.c_eta);
    tc.T = cfg.gd_steps;
    tc.snapshot_every = std::max<std::size_t>(1, cfg.gd_steps / cfg.snapshots);
    const auto traj = gd_train(w0, data, tc);
    std::vector<WeightStack> candidates;
    for (const auto& snap : traj.snapshots) {
      if (snap.step > 0) candidates.push_back(snap.weights);
    }

    const BallSpec ball{w0, tau_of(m)};
    for (std::size_t i = 0; i < std::min(cfg.flip_budget, data.n()); ++i) {
      candidates.push_back(flip_ball_point(ball, data.x(i)));
    }
    const auto probe_seed = derive_seed(cfg.master_seed, m, seed);
    ScalingCell cell;
    cell.eps_app_hat = approx_error_probe(ball, data, candidates, cfg.random_budget, probe_seed).eps_app_hat;
    cell.M_hat = grad_bound_probe(ball, data, candidates, cfg.random_budget, probe_seed).M_hat;
    cell.init_out_max = init_output_probe(w0, data);
    const auto& dist = traj.records.back().dist;
    cell.dist_from_init = *std::max_element(dist.begin(), dist.end());
    return cell;
  });

  ScalingResult out;
  std::vector<double> lm, le, lM, ld, li;
  for (std::size_t k = 0; k < cfg.m_grid.size(); ++k) {
    ScalingRow row;
    row.m = cfg.m_grid[k];
    row.tau = tau_of(row.m);
    std::vector<double> e, M, dist, init;
    for (std::size_t s = 0; s < S; ++s) {
      const auto& c = cells[k * S + s];
      row.cells.push_back(c);
      e.push_back(c.eps_app_hat);
      M.push_back(c.M_hat);
      dist.push_back(c.dist_from_init);
      init.push_back(c.init_out_max);
    }
    row.median = {median_of(e), median_of(M), median_of(dist), median_of(init)};
    lm.push_back(std::log(static_cast<double>(row.m)));
    le.push_back(log_or_nan(row.median.eps_app_hat));
    lM.push_back(log_or_nan(row.median.M_hat));
    ld.push_back(log_or_nan(row.median.dist_from_init));
    li.push_back(log_or_nan(row.median.init_out_max));
    out.rows.push_back(std::move(row));
  }
  out.slope_eps_app = fit_slope(lm, le);
  out.slope_M = fit_slope(lm, lM);
  out.slope_dist = fit_slope(lm, ld);
  out.slope_init_out = fit_slope(lm, li);
  return out;
}

std::string scaling_csv(const ScalingResult& result) {
  std::string out = "m,tau,eps_app_hat,M_hat,dist_from_init,init_out_max\n";
  for (const auto& r : result.rows) {
    out += std::to_string(r.m) + ',' + fmt(r.tau) + ',' + fmt(r.median.eps_app_hat) + ',' + fmt(r.median.M_hat) +
           ',' + fmt(r.median.dist_from_init) + ',' + fmt(r.median.init_out_max) + '\n';
  }
  return out;
}

nlohmann::ordered_json to_json(const ScalingResult& result) {
  nlohmann::ordered_json j;
  j["slope_eps_app"] = result.slope_eps_app;
  j["slope_M"] = result.slope_M;
  j["slope_dist"] = result.slope_dist;
  j["slope_init_out"] = result.slope_init_out;
  auto& rows = j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : result.rows) {
    rows.push_back({{"m", r.m},
                    {"tau", r.tau},
                    {"eps_app_hat", r.median.eps_app_hat},
                    {"M_hat", r.median.M_hat},
                    {"dist_from_init", r.median.dist_from_init},
                    {"init_out_max", r.median.init_out_max}});
  }
  return j;
}

// ---------------------------------------------------------------------------
// GD against 3 eps_ntrf

void CompeteConfig::validate() const {
  require_distinct(seeds);
  if (n < 1 || L < 2 || m < 1) throw InvalidInput("compete needs n >= 1, L >= 2, m >= 1");
  if (!(R >= 0.0)) throw InvalidInput("compete needs R >= 0");
  if (!(c_T > 0.0)) throw InvalidInput("compete needs c_T > 0");
}

std::vector<CompeteRun> run_compete(const CompeteConfig& cfg) {
  cfg.validate();
  return parallel_map(cfg.seeds.size(), cfg.workers, [&](std::size_t k) {
    const std::uint64_t seed = cfg.seeds[k];
    const auto data_seed = derive_seed(cfg.master_seed, kDataTag, seed);
    const auto data = cfg.data == CompeteData::Margin ? gen_margin_dataset(cfg.n, cfg.d, cfg.gamma, data_seed)
                                                      : gen_phi_dataset(cfg.n, cfg.d, cfg.phi, data_seed);
    const NetworkShape shape(cfg.d, cfg.m, cfg.L);
    const auto w0 = init_weights(shape, derive_seed(cfg.master_seed, kInitTag, seed));

    CompeteRun run;
    run.seed = seed;
    const auto features = extract_features(w0, data);
    const auto fit = fit_projected_gd(features, data.labels(), cfg.R, cfg.fit_steps, safe_fit_step(features));
    run.eps_ntrf = fit.eps_ntrf;
    run.init_loss = fit.loss_curve.front();
    run.target = 3.0 * run.eps_ntrf;
    const double L = static_cast<double>(cfg.L);
    run.T_budget = static_cast<std::size_t>(std::ceil(cfg.c_T * L * L * cfg.R * cfg.R / run.eps_ntrf));
    run.T_budget = std::max<std::size_t>(run.T_budget, 1);

    TrainConfig tc;
    tc.eta = default_step_size(shape, StepMode::GD, {}, cfg.c_eta);
    tc.T = run.T_budget;
    tc.snapshot_every = default_snapshot_every(tc.T);
    tc.target_loss = run.target;
    tc.stop_on_zero_error = true;
    run.eta = tc.eta;
    run.trajectory = gd_train(w0, data, tc);
    const auto& traj = run.trajectory;
    run.best_loss = traj.best_loss;
    run.best_step = traj.best_step;
    run.steps_run = traj.records.back().step;
    run.zero_error = std::any_of(traj.records.begin(), traj.records.end(),
                                 [](const StepRecord& r) { return r.err01 == 0.0; });
    run.pass = run.best_loss <= run.target;

    const WeightStack wstar = w0 + fit.model.delta;
    run.tau = std::sqrt(L) * cfg.R / std::sqrt(static_cast<double>(cfg.m));
    std::vector<WeightStack> candidates;
    for (const auto& snap : traj.snapshots) {
      if (snap.step > 0) candidates.push_back(snap.weights);
    }
    candidates.push_back(wstar);
    const BallSpec ball{w0, run.tau};
    for (std::size_t i = 0; i < std::min(cfg.flip_budget, data.n()); ++i) {
      candidates.push_back(flip_ball_point(ball, data.x(i)));
    }
    run.eps_app_hat =
        approx_error_probe(ball, data, candidates, cfg.random_budget, derive_seed(cfg.master_seed, seed, 0xA0D1))
            .eps_app_hat;
    if (run.eps_app_hat <= 0.375) run.audit = lemma51_audit(traj, wstar, run.eta, run.eps_app_hat, run.eps_ntrf);
    run.strict_audit = lemma51_audit(traj, wstar, run.eta, 0.0, run.eps_ntrf);
    return run;
  });
}

std::string compete_csv(const std::vector<CompeteRun>& runs) {
  std::string out =
      "seed,eps_ntrf,init_loss,target,T_budget,eta,best_loss,best_step,steps_run,zero_error,pass,eps_app_hat,"
      "audit_margin,audit_pass,strict_margin,strict_pass\n";
  for (const auto& r : runs) {
    out += std::to_string(r.seed) + ',' + fmt(r.eps_ntrf) + ',' + fmt(r.init_loss) + ',' + fmt(r.target) + ',' +
           std::to_string(r.T_budget) + ',' + fmt(r.eta) + ',' + fmt(r.best_loss) + ',' +
           std::to_string(r.best_step) + ',' + std::to_string(r.steps_run) + ',' + (r.zero_error ? "1" : "0") + ',' +
           (r.pass ? "1" : "0") + ',' + fmt(r.eps_app_hat) + ',' + (r.audit ? fmt(r.audit->margin) : "") + ',' +
           (r.audit ? (r.audit->pass ? "1" : "0") : "") + ',' + fmt(r.strict_audit.margin) + ',' +
           (r.strict_audit.pass ? "1" : "0") + '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// SGD sample complexity

void SgdCurveConfig::validate() const {
  require_grid(n_grid, "n grid");
  require_distinct(seeds);
  for (auto n : n_grid) {
    if (n < 1) throw InvalidInput("sgd curve needs n >= 1");
  }
  if (test_n < 1 || L < 2 || m < 1) throw InvalidInput("sgd curve needs test_n >= 1, L >= 2, m >= 1");
}

SgdCurveResult run_sgd_sample_complexity(const SgdCurveConfig& cfg) {
  cfg.validate();
  const std::size_t S = cfg.seeds.size();
  const std::size_t n_max = *std::max_element(cfg.n_grid.begin(), cfg.n_grid.end());
  const NetworkShape shape(cfg.d, cfg.m, cfg.L);

  // One draw per seed; every cell reads a prefix of it.
  const auto pools = parallel_map(S, cfg.workers, [&](std::size_t s) {
    return gen_margin_dataset(cfg.test_n + n_max, cfg.d, cfg.gamma,
                              derive_seed(cfg.master_seed, kDataTag, cfg.seeds[s]));
  });
  const auto slice = [](const LabeledDataset& pool, std::size_t from, std::size_t count) {
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), from);
    return pool.subset(idx);
  };

  const auto errors = parallel_map(cfg.n_grid.size() * S, cfg.workers, [&](std::size_t c) {
    const std::size_t n = cfg.n_grid[c / S];
    const std::uint64_t seed = cfg.seeds[c % S];
    const auto& pool = pools[c % S];
    TrainConfig tc;
    tc.eta = default_step_size(shape, StepMode::SGD, {cfg.R, n, 0.0}, cfg.c_eta);
    tc.seed = derive_seed(cfg.master_seed, seed, n);
    tc.snapshot_every = 0;
    const auto w0 = init_weights(shape, derive_seed(cfg.master_seed, kInitTag, seed));
    const auto out = sgd_train(w0, slice(pool, cfg.test_n, n), tc);
    return dataset_metrics(out.chosen, slice(pool, 0, cfg.test_n)).err01;
  });

  SgdCurveResult out;
  std::vector<double> inv_n, med;
  for (std::size_t k = 0; k < cfg.n_grid.size(); ++k) {
    SgdCurveRow row;
    row.n = cfg.n_grid[k];
    row.eta = default_step_size(shape, StepMode::SGD, {cfg.R, row.n, 0.0}, cfg.c_eta);
    row.err01.assign(errors.begin() + static_cast<long>(k * S), errors.begin() + static_cast<long>((k + 1) * S));
    row.median_err01 = median_of(row.err01);
    inv_n.push_back(1.0 / static_cast<double>(row.n));
    med.push_back(row.median_err01);
    out.rows.push_back(std::move(row));
  }
  if (cfg.n_grid.size() >= 2) {
    out.fit_b = fit_slope(inv_n, med);
    out.fit_a = std::accumulate(med.begin(), med.end(), 0.0) / static_cast<double>(med.size()) -
                out.fit_b * std::accumulate(inv_n.begin(), inv_n.end(), 0.0) / static_cast<double>(inv_n.size());
  }
  return out;
}

std::string sgd_curve_csv(const SgdCurveResult& result, const std::vector<std::uint64_t>& seeds) {
  std::string out = "n,eta,median_err01";
  for (auto s : seeds) out += ",err01_seed" + std::to_string(s);
  out += '\n';
  for (const auto& r : result.rows) {
    out += std::to_string(r.n) + ',' + fmt(r.eta) + ',' + fmt(r.median_err01);
    for (double e : r.err01) out += ',' + fmt(e);
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reference curve

BoundCurves bound_curves(double m, double n, double L, double R, double delta) {
  if (!(m > 0.0) || !(n > 0.0) || !(L > 0.0) || !(R > 0.0)) throw InvalidInput("bound curves need m, n, L, R > 0");
  if (!(delta > 0.0 && delta < 1.0)) throw InvalidInput("bound curves need delta in (0, 1)");
  BoundCurves out;
  out.term_a = std::pow(4.0, L) * L * L * R * std::sqrt(m / n);
  out.term_b = std::pow(L, 1.5) * R / std::sqrt(n) + std::pow(L, 11.0 / 3.0) * std::pow(R, 4.0 / 3.0) / std::pow(m, 1.0 / 6.0);
  out.confidence = std::sqrt(std::log(1.0 / delta) / n);
  out.statistical_error = std::min(out.term_a, out.term_b) + out.confidence;
  return out;
}

nlohmann::ordered_json to_json(const BoundCurves& curves) {
  nlohmann::ordered_json j;
  j["term_a"] = curves.term_a;
  j["term_b"] = curves.term_b;
  j["confidence"] = curves.confidence;
  j["statistical_error"] = curves.statistical_error;
  return j;
}

}  // namespace ntrflab
