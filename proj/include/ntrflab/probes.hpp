#pragma once

// Empirical lower estimates of the linearization error eps_app(tau) and the
// gradient bound M(tau) over the ball B(W0, tau), the initial output
// magnitude, and a per-interval audit of the one-step descent inequality
//
//   ||W(t) - W*||^2 - ||W(t+1) - W*||^2 >= (3/2 - 4 eps_app) eta L_S(W(t)) - 2 eta eps_ntrf.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "ntrflab/dataset.hpp"
#include "ntrflab/network.hpp"
#include "ntrflab/trainer.hpp"

namespace ntrflab {

struct BallSpec {
  WeightStack center;
  double tau = 0.0;  // per-layer Frobenius radius

  void validate() const;
  bool contains(const WeightStack& w) const;
};

struct ProbePoints {
  std::vector<WeightStack> points;  // center first, then candidates
  std::size_t clipped = 0;          // candidates moved onto the ball surface
};

/// Center plus candidates, each layer of a candidate outside the ball rescaled
/// onto its surface.
ProbePoints ball_points(const BallSpec& ball, std::span<const WeightStack> candidates);

/// Random point for pair `pair`, side 0 or 1: every layer moves from the
/// center along an i.i.d. Gaussian direction scaled to Frobenius norm r, with
/// r drawn from {tau/2, tau}. Uses its own substream, so the points for a
/// budget B are a prefix of those for any larger budget.
WeightStack random_ball_point(const BallSpec& ball, std::uint64_t seed, std::size_t pair, int side);

/// Moves layer 1 of the center by at most tau (Frobenius) so that hidden units
/// of the first layer cross zero on input x with all their contributions to
/// f(x) of one sign. Random directions flip units incoherently; this point
/// targets the defect directly. Deterministic; other layers are unchanged.
WeightStack flip_ball_point(const BallSpec& ball, std::span<const double> x);

struct ApproxErrorResult {
  double eps_app_hat = 0.0;
  std::size_t pairs_evaluated = 0;  // ordered pairs
  std::size_t clipped = 0;
};

/// max_i |f_{W'}(x_i) - f_W(x_i) - <grad f_W(x_i), W' - W>| over every ordered
/// pair of {center} + candidates and both orderings of `random_budget` random
/// pairs. A lower estimate of eps_app(tau).
ApproxErrorResult approx_error_probe(const BallSpec& ball, const LabeledDataset& data,
                                     std::span<const WeightStack> candidates, std::size_t random_budget,
                                     std::uint64_t seed);

struct GradBoundResult {
  double M_hat = 0.0;
  std::size_t points_evaluated = 0;
  std::size_t clipped = 0;
};

/// max_{i, l} ||grad_{W_l} f_W(x_i)||_F over the same point set as the
/// linearization probe. A lower estimate of M(tau).
GradBoundResult grad_bound_probe(const BallSpec& ball, const LabeledDataset& data,
                                 std::span<const WeightStack> candidates, std::size_t random_budget,
                                 std::uint64_t seed);

/// max_i |f_{W0}(x_i)|.
double init_output_probe(const WeightStack& w0, const LabeledDataset& data);

struct ProbeReport {
  double eps_app_hat = 0.0;
  double M_hat = 0.0;
  double init_out_max = 0.0;
  std::size_t candidates_evaluated = 0;
  std::size_t clipped = 0;
};

ProbeReport run_probes(const BallSpec& ball, const LabeledDataset& data, std::span<const WeightStack> candidates,
                       std::size_t random_budget, std::uint64_t seed);

struct AuditInterval {
  std::size_t from = 0;  // snapshot steps
  std::size_t to = 0;
  double lhs = 0.0;  // ||W(from) - W*||^2 - ||W(to) - W*||^2
  double rhs = 0.0;  // sum over t in [from, to) of the per-step right side
  double residual = 0.0;
};

struct AuditReport {
  std::vector<AuditInterval> intervals;
  double factor = 0.0;  // 3/2 - 4 eps_app_hat
  double lhs_total = 0.0;
  double rhs_total = 0.0;
  double margin = 0.0;  // sum of residuals
  bool pass = false;
  bool degenerate_factor = false;
};

/// Audits the inequality between consecutive snapshots of `traj`, using the
/// per-step losses recorded in traj.records. Requires at least two snapshots
/// and eps_app_hat <= 3/8 (at 3/8 the factor vanishes and the report is
/// flagged degenerate). Passing uses an under-estimate of eps_app, so it is
/// evidence rather than proof.
AuditReport lemma51_audit(const Trajectory& traj, const WeightStack& wstar, double eta, double eps_app_hat,
                          double eps_ntrf);

nlohmann::ordered_json to_json(const ProbeReport& report);
nlohmann::ordered_json to_json(const AuditReport& report);

}  // namespace ntrflab
