#include "ntrflab/probes.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ntrflab/error.hpp"
#include "ntrflab/rng.hpp"

namespace ntrflab {
namespace {

void require_data(const LabeledDataset& data, const BallSpec& ball) {
  if (data.empty()) throw InvalidInput("probes need a nonempty dataset");
  if (data.d() != ball.center.shape().d) throw InvalidInput("dataset dimension does not match the ball center");
}

double pair_defect(const WeightStack& from, const Vector& from_scores, const WeightStack& to,
                   const Vector& to_scores, const Matrix& x) {
  const Vector lin = directional_derivative(from, to - from, x);
  return (to_scores - from_scores - lin).cwiseAbs().maxCoeff();
}

double max_gradient_norm(const WeightStack& w, const Matrix& x) {
  return gradient_norms(w, x, forward_batch(w, x)).maxCoeff();
}

}  // namespace

void BallSpec::validate() const {
  if (!(tau >= 0.0) || !std::isfinite(tau)) throw InvalidInput("ball radius tau must be finite and >= 0");
  if (center.size() == 0) throw InvalidInput("ball center is empty");
}

bool BallSpec::contains(const WeightStack& w) const {
  return w.shape() == center.shape() && (w - center).max_layer_norm() <= tau * (1.0 + 1e-12);
}

ProbePoints ball_points(const BallSpec& ball, std::span<const WeightStack> candidates) {
  ball.validate();
  ProbePoints out;
  out.points.reserve(candidates.size() + 1);
  out.points.push_back(ball.center);
  for (const auto& c : candidates) {
    if (!(c.shape() == ball.center.shape())) throw InvalidInput("candidate shape does not match the ball center");
    WeightStack w = c;
    bool moved = false;
    for (std::size_t l = 0; l < w.size(); ++l) {
      Matrix diff = w[l] - ball.center[l];
      const double norm = diff.norm();
      if (norm > ball.tau) {
        diff *= ball.tau > 0.0 ? ball.tau / norm : 0.0;
        w[l] = ball.center[l] + diff;
        moved = true;
      }
    }
    if (moved) ++out.clipped;
    out.points.push_back(std::move(w));
  }
  return out;
}

WeightStack random_ball_point(const BallSpec& ball, std::uint64_t seed, std::size_t pair, int side) {
  Rng rng(derive_seed(seed, pair, static_cast<std::uint64_t>(side)), 0);
  const double r = rng.below(2) == 0 ? ball.tau / 2.0 : ball.tau;
  WeightStack w = ball.center;
  for (std::size_t l = 0; l < w.size(); ++l) {
    Matrix dir(w[l].rows(), w[l].cols());
    for (Eigen::Index k = 0; k < dir.size(); ++k) dir.data()[k] = rng.normal();
    const double norm = dir.norm();
    if (norm > 0.0) w[l] += (r / norm) * dir;
  }
  return w;
}

WeightStack flip_ball_point(const BallSpec& ball, std::span<const double> x) {
  ball.validate();
  const auto& c0 = ball.center;
  if (x.size() != c0.shape().d) throw InvalidInput("flip_ball_point: input dimension does not match the ball center");
  const auto cache = forward(c0, x);
  const std::size_t L = c0.size();
  const double sqrt_m = std::sqrt(static_cast<double>(c0.shape().m));

  // g = df / d(post-activation of layer 1)
  Vector g = sqrt_m * c0[L - 1].row(0).transpose();
  for (std::size_t l = L - 2; l >= 1; --l) {
    const Vector masked = (cache.pre[l].array() > 0.0).select(g, 0.0);
    g = c0[l].transpose() * masked;
  }
  const Vector& p = cache.pre[0];
  double xx = 0.0;
  for (const double v : x) xx += v * v;
  if (xx == 0.0) return c0;
  const double reach = ball.tau * std::sqrt(xx);  // largest pre-activation shift

  // Flipping unit j with a pre-activation shift of t_j > |p_j| changes the
  // defect by g_j (t_j - |p_j|) regardless of direction, so take the units of
  // one sign of g, cheapest |p_j| / |g_j| first, t_j proportional to |g_j|.
  WeightStack best = c0;
  double best_gain = 0.0;
  for (const double sign : {1.0, -1.0}) {
    std::vector<Eigen::Index> units;
    for (Eigen::Index j = 0; j < g.size(); ++j) {
      if (sign * g[j] > 0.0) units.push_back(j);
    }
    std::sort(units.begin(), units.end(), [&](Eigen::Index a, Eigen::Index b) {
      return std::abs(p[a]) * std::abs(g[b]) < std::abs(p[b]) * std::abs(g[a]);
    });
    double g2 = 0.0, gp = 0.0, gain = 0.0;
    std::size_t k = 0;
    for (std::size_t i = 0; i < units.size(); ++i) {
      g2 += g[units[i]] * g[units[i]];
      gp += std::abs(g[units[i]] * p[units[i]]);
      const double v = reach * std::sqrt(g2) - gp;
      if (v > gain) {
        gain = v;
        k = i + 1;
      }
    }
    if (k == 0 || gain <= best_gain) continue;
    double norm = 0.0;
    for (std::size_t i = 0; i < k; ++i) norm += g[units[i]] * g[units[i]];
    const double mu = reach / std::sqrt(norm);
    WeightStack w = c0;
    for (std::size_t i = 0; i < k; ++i) {
      const Eigen::Index j = units[i];
      const double t = mu * std::abs(g[j]) * (p[j] > 0.0 ? -1.0 : 1.0);
      for (std::size_t q = 0; q < x.size(); ++q) w[0](j, static_cast<Eigen::Index>(q)) += t * x[q] / xx;
    }
    best = std::move(w);
    best_gain = gain;
  }
  return best;
}

ApproxErrorResult approx_error_probe(const BallSpec& ball, const LabeledDataset& data,
                                     std::span<const WeightStack> candidates, std::size_t random_budget,
                                     std::uint64_t seed) {
  require_data(data, ball);
  const auto pts = ball_points(ball, candidates);
  const Matrix& x = data.features();
  ApproxErrorResult out;
  out.clipped = pts.clipped;

  std::vector<Vector> s;
  s.reserve(pts.points.size());
  for (const auto& p : pts.points) s.push_back(scores(p, x));
  for (std::size_t a = 0; a < pts.points.size(); ++a) {
    for (std::size_t b = 0; b < pts.points.size(); ++b) {
      if (a == b) continue;
      out.eps_app_hat = std::max(out.eps_app_hat, pair_defect(pts.points[a], s[a], pts.points[b], s[b], x));
      ++out.pairs_evaluated;
    }
  }
  for (std::size_t p = 0; p < random_budget; ++p) {
    const WeightStack w0 = random_ball_point(ball, seed, p, 0);
    const WeightStack w1 = random_ball_point(ball, seed, p, 1);
    const Vector s0 = scores(w0, x);
    const Vector s1 = scores(w1, x);
    out.eps_app_hat = std::max(out.eps_app_hat, pair_defect(w0, s0, w1, s1, x));
    out.eps_app_hat = std::max(out.eps_app_hat, pair_defect(w1, s1, w0, s0, x));
    out.pairs_evaluated += 2;
  }
  return out;
}

GradBoundResult grad_bound_probe(const BallSpec& ball, const LabeledDataset& data,
                                 std::span<const WeightStack> candidates, std::size_t random_budget,
                                 std::uint64_t seed) {
  require_data(data, ball);
  const auto pts = ball_points(ball, candidates);
  const Matrix& x = data.features();
  GradBoundResult out;
  out.clipped = pts.clipped;
  for (const auto& p : pts.points) {
    out.M_hat = std::max(out.M_hat, max_gradient_norm(p, x));
    ++out.points_evaluated;
  }
  for (std::size_t p = 0; p < random_budget; ++p) {
    for (int side = 0; side < 2; ++side) {
      out.M_hat = std::max(out.M_hat, max_gradient_norm(random_ball_point(ball, seed, p, side), x));
      ++out.points_evaluated;
    }
  }
  return out;
}

double init_output_probe(const WeightStack& w0, const LabeledDataset& data) {
  if (data.empty()) throw InvalidInput("init_output_probe needs a nonempty dataset");
  return scores(w0, data.features()).cwiseAbs().maxCoeff();
}

ProbeReport run_probes(const BallSpec& ball, const LabeledDataset& data, std::span<const WeightStack> candidates,
                       std::size_t random_budget, std::uint64_t seed) {
  const auto app = approx_error_probe(ball, data, candidates, random_budget, seed);
  const auto grad = grad_bound_probe(ball, data, candidates, random_budget, seed);
  ProbeReport out;
  out.eps_app_hat = app.eps_app_hat;
  out.M_hat = grad.M_hat;
  out.init_out_max = init_output_probe(ball.center, data);
  out.candidates_evaluated = candidates.size();
  out.clipped = app.clipped;
  return out;
}

AuditReport lemma51_audit(const Trajectory& traj, const WeightStack& wstar, double eta, double eps_app_hat,
                          double eps_ntrf) {
  if (traj.snapshots.size() < 2) throw InvalidInput("audit needs at least two weight snapshots");
  if (!(eta >= 0.0)) throw InvalidInput("audit needs eta >= 0");
  if (!(eps_ntrf >= 0.0)) throw InvalidInput("audit needs eps_ntrf >= 0");
  if (!(eps_app_hat >= 0.0) || eps_app_hat > 0.375) {
    throw InvalidInput("audit needs 0 <= eps_app_hat <= 3/8, got " + std::to_string(eps_app_hat));
  }
  AuditReport out;
  out.factor = 1.5 - 4.0 * eps_app_hat;
  out.degenerate_factor = out.factor == 0.0;

  // records[k] normally holds step k; fall back to a search otherwise.
  const auto loss_at = [&](std::size_t step) {
    if (step < traj.records.size() && traj.records[step].step == step) return traj.records[step].loss;
    const auto it = std::lower_bound(traj.records.begin(), traj.records.end(), step,
                                     [](const StepRecord& r, std::size_t v) { return r.step < v; });
    if (it == traj.records.end() || it->step != step) {
      throw InvalidInput("audit needs the loss at step " + std::to_string(step));
    }
    return it->loss;
  };

  double prev_dist = (traj.snapshots.front().weights - wstar).squared_norm();
  for (std::size_t k = 0; k + 1 < traj.snapshots.size(); ++k) {
    const auto& a = traj.snapshots[k];
    const auto& b = traj.snapshots[k + 1];
    if (b.step <= a.step) throw InvalidInput("snapshot steps must be strictly increasing");
    AuditInterval iv;
    iv.from = a.step;
    iv.to = b.step;
    const double next_dist = (b.weights - wstar).squared_norm();
    iv.lhs = prev_dist - next_dist;
    for (std::size_t t = a.step; t < b.step; ++t) iv.rhs += out.factor * eta * loss_at(t) - 2.0 * eta * eps_ntrf;
    iv.residual = iv.lhs - iv.rhs;
    out.lhs_total += iv.lhs;
    out.rhs_total += iv.rhs;
    out.margin += iv.residual;
    out.intervals.push_back(iv);
    prev_dist = next_dist;
  }
  out.pass = out.lhs_total >= out.rhs_total;
  return out;
}

nlohmann::ordered_json to_json(const ProbeReport& report) {
  nlohmann::ordered_json j;
  j["eps_app_hat"] = report.eps_app_hat;
  j["M_hat"] = report.M_hat;
  j["init_out_max"] = report.init_out_max;
  j["candidates_evaluated"] = report.candidates_evaluated;
  j["clipped"] = report.clipped;
  return j;
}

nlohmann::ordered_json to_json(const AuditReport& report) {
  nlohmann::ordered_json j;
  j["pass"] = report.pass;
  j["factor"] = report.factor;
  j["degenerate_factor"] = report.degenerate_factor;
  j["lhs_total"] = report.lhs_total;
  j["rhs_total"] = report.rhs_total;
  j["margin"] = report.margin;
  auto& rows = j["intervals"] = nlohmann::ordered_json::array();
  for (const auto& iv : report.intervals) {
    rows.push_back({{"from", iv.from}, {"to", iv.to}, {"lhs", iv.lhs}, {"rhs", iv.rhs}, {"residual", iv.residual}});
  }
  return j;
}

}  // namespace ntrflab
