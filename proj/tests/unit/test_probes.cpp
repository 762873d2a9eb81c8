#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "ntrflab/dataset.hpp"
#include "ntrflab/error.hpp"
#include "ntrflab/ntrf.hpp"
#include "ntrflab/probes.hpp"
#include "ntrflab/rng.hpp"
#include "oracles.hpp"

using namespace ntrflab;

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

WeightStack gaussian_offset(const WeightStack& center, double scale, std::uint64_t seed) {
  Rng rng(seed, 77);
  WeightStack w = center;
  for (std::size_t l = 0; l < w.size(); ++l) {
    for (Eigen::Index k = 0; k < w[l].size(); ++k) w[l].data()[k] += scale * rng.normal();
  }
  return w;
}

// Linearization defect of one ordered pair, with the directional derivative
// taken by central differences on the loop-based score.
double oracle_defect(const WeightStack& from, const WeightStack& to, const LabeledDataset& data) {
  const LayerStack dir = to - from;
  double worst = 0.0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    const std::vector<double> x(data.x(i).begin(), data.x(i).end());
    const double h = 1e-7;
    const double jvp = (oracle::score(from + h * dir, x) - oracle::score(from - h * dir, x)) / (2 * h);
    worst = std::max(worst, std::abs(oracle::score(to, x) - oracle::score(from, x) - jvp));
  }
  return worst;
}

}  // namespace

TEST_CASE("degenerate ball gives zero linearization defect") {
  const auto data = gen_margin_dataset(20, 5, 0.1, 1);
  const BallSpec ball{init_weights(NetworkShape(5, 16, 3), 2), 0.0};
  const auto cands = std::vector<WeightStack>{gaussian_offset(ball.center, 0.5, 3)};
  const auto r = approx_error_probe(ball, data, cands, 5, 4);
  CHECK(r.eps_app_hat == 0.0);
  CHECK(r.clipped == 1);
  CHECK(r.pairs_evaluated == 2 + 10);
}

TEST_CASE("defect vanishes inside one activation region") {
  const auto data = gen_margin_dataset(30, 6, 0.1, 5);
  const NetworkShape s(6, 32, 3);
  const BallSpec ball{init_weights(s, 6), 1.0};
  std::vector<WeightStack> cands;
  for (std::uint64_t k = 0; k < 4; ++k) cands.push_back(gaussian_offset(ball.center, 1e-8 * ball.tau, 10 + k));
  // Tiny moves keep every preactivation sign for this draw.
  for (std::size_t i = 0; i < data.n(); ++i) {
    const std::vector<double> x(data.x(i).begin(), data.x(i).end());
    REQUIRE(oracle::min_abs_preactivation(ball.center, x) > 1e-5);
  }
  const auto r = approx_error_probe(ball, data, cands, 0, 0);
  CHECK(r.eps_app_hat <= 1e-10);
  CHECK(r.pairs_evaluated == 5 * 4);
}

TEST_CASE("linearization defect matches a finite-difference oracle") {
  const auto data = gen_margin_dataset(8, 4, 0.1, 7);
  const NetworkShape s(4, 6, 3);
  const BallSpec ball{init_weights(s, 8), 0.8};
  for (std::uint64_t k = 0; k < 5; ++k) {
    const auto c = gaussian_offset(ball.center, 0.1, 20 + k);
    REQUIRE(ball.contains(c));
    const auto r = approx_error_probe(ball, data, std::vector<WeightStack>{c}, 0, 0);
    const double expected = std::max(oracle_defect(ball.center, c, data), oracle_defect(c, ball.center, data));
    CHECK(r.eps_app_hat == doctest::Approx(expected).epsilon(1e-6));
  }
  // Random pairs are evaluated in both orderings.
  const auto r = approx_error_probe(ball, data, {}, 3, 9);
  double expected = 0.0;
  for (std::size_t p = 0; p < 3; ++p) {
    const auto a = random_ball_point(ball, 9, p, 0);
    const auto b = random_ball_point(ball, 9, p, 1);
    expected = std::max({expected, oracle_defect(a, b, data), oracle_defect(b, a, data)});
  }
  CHECK(r.eps_app_hat == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("flip point on a one-unit network") {
  // f = a relu(w x) with w = -0.1, a = 1: the unit is off, so the whole move
  // of the pre-activation past zero is defect.
  const NetworkShape s(1, 1, 2);
  const WeightStack w0(s, {Matrix{{-0.1}}, Matrix{{1.0}}});
  const BallSpec ball{w0, 0.5};
  const std::vector<double> x{1.0};
  const auto w = flip_ball_point(ball, x);
  CHECK(w[0](0, 0) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(w[1](0, 0) == 1.0);
  const LabeledDataset data(Matrix{{1.0}}, {1});
  CHECK(approx_error_probe(ball, data, std::vector<WeightStack>{w}, 0, 0).eps_app_hat ==
        doctest::Approx(0.4).epsilon(1e-12));
  // A negative output weight flips the sign of the defect, not its size.
  const WeightStack w1(s, {Matrix{{-0.1}}, Matrix{{-1.0}}});
  CHECK(flip_ball_point(BallSpec{w1, 0.5}, x)[0](0, 0) == doctest::Approx(0.4).epsilon(1e-15));
  // An active unit is pushed off: pre-activation 0.3 - 0.5.
  const WeightStack w2(s, {Matrix{{0.3}}, Matrix{{1.0}}});
  CHECK(flip_ball_point(BallSpec{w2, 0.5}, x)[0](0, 0) == doctest::Approx(-0.2).epsilon(1e-15));
  // Out of reach: |p| >= tau leaves the center unchanged.
  CHECK(flip_ball_point(BallSpec{w0, 0.05}, x) == w0);
}

TEST_CASE("flip points beat random points at the same radius") {
  const auto data = gen_margin_dataset(12, 10, 0.1, 40);
  const NetworkShape s(10, 128, 3);
  const BallSpec ball{init_weights(s, 41), 0.4};
  for (std::size_t i = 0; i < 4; ++i) {
    const auto w = flip_ball_point(ball, data.x(i));
    REQUIRE(ball.contains(w));
    const auto moved = (w - ball.center).layer_norms();
    CHECK(moved[0] == doctest::Approx(ball.tau).epsilon(1e-12));
    CHECK(moved[1] == 0.0);
    CHECK(moved[2] == 0.0);
    const LabeledDataset one = data.subset(std::vector<std::size_t>{i});
    const double flip = oracle_defect(ball.center, w, one);
    double random = 0.0;
    for (std::size_t p = 0; p < 20; ++p) random = std::max(random, oracle_defect(ball.center, random_ball_point(ball, 42, p, 0), one));
    CHECK(flip > 2.0 * random);
  }
}

TEST_CASE("probes stay inside the ball") {
  const NetworkShape s(5, 16, 4);
  const BallSpec ball{init_weights(s, 11), 0.3};
  for (std::size_t p = 0; p < 50; ++p) {
    for (int side = 0; side < 2; ++side) {
      const auto w = random_ball_point(ball, 12, p, side);
      CHECK(ball.contains(w));
      const double r = (w - ball.center).max_layer_norm();
      const bool at_half = std::abs(r - 0.15) <= 1e-12;
      const bool at_full = std::abs(r - 0.3) <= 1e-12;
      CHECK((at_half || at_full));
    }
  }
  std::vector<WeightStack> cands;
  for (std::uint64_t k = 0; k < 6; ++k) cands.push_back(gaussian_offset(ball.center, 0.05 * static_cast<double>(k), k));
  const auto pts = ball_points(ball, cands);
  CHECK(pts.points.size() == 7);
  CHECK(pts.points.front() == ball.center);
  for (const auto& w : pts.points) CHECK(ball.contains(w));
  std::size_t outside = 0;
  for (const auto& c : cands) outside += !ball.contains(c);
  CHECK(pts.clipped == outside);
  CHECK(outside > 0);
}

TEST_CASE("estimators are monotone in candidates and budget") {
  const auto data = gen_margin_dataset(25, 5, 0.1, 13);
  const BallSpec ball{init_weights(NetworkShape(5, 24, 3), 14), 0.7};
  std::vector<WeightStack> cands;
  double prev_eps = 0.0, prev_m = 0.0;
  for (std::uint64_t k = 0; k < 4; ++k) {
    cands.push_back(gaussian_offset(ball.center, 0.05, 30 + k));
    const auto e = approx_error_probe(ball, data, cands, 2, 15).eps_app_hat;
    const auto m = grad_bound_probe(ball, data, cands, 2, 15).M_hat;
    CHECK(e >= prev_eps);
    CHECK(m >= prev_m);
    prev_eps = e;
    prev_m = m;
  }
  prev_eps = prev_m = 0.0;
  for (std::size_t budget : {0, 1, 3, 8}) {
    const auto e = approx_error_probe(ball, data, cands, budget, 15).eps_app_hat;
    const auto m = grad_bound_probe(ball, data, cands, budget, 15).M_hat;
    CHECK(e >= prev_eps);
    CHECK(m >= prev_m);
    prev_eps = e;
    prev_m = m;
  }
}

TEST_CASE("gradient bound at the zero network") {
  const auto data = gen_margin_dataset(1, 4, 0.1, 16);
  const NetworkShape s(4, 8, 3);
  const BallSpec ball{LayerStack(s), 0.0};
  const auto r = grad_bound_probe(ball, data, {}, 3, 17);
  CHECK(r.M_hat == 0.0);
  CHECK(r.points_evaluated == 7);
}

TEST_CASE("gradient bound equals the largest per-layer gradient norm") {
  const auto data = gen_margin_dataset(6, 4, 0.1, 18);
  const BallSpec ball{init_weights(NetworkShape(4, 8, 3), 19), 0.0};
  double expected = 0.0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    const std::vector<double> x(data.x(i).begin(), data.x(i).end());
    const auto g = oracle::central_difference(ball.center, [&](const LayerStack& w) { return oracle::score(w, x); },
                                              1e-6);
    for (std::size_t l = 0; l < g.size(); ++l) expected = std::max(expected, g[l].norm());
  }
  CHECK(grad_bound_probe(ball, data, {}, 0, 0).M_hat == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("linearization defect shrinks with width") {
  const auto data = gen_margin_dataset(64, 20, 0.1, 20);
  std::vector<double> med;
  for (std::size_t m : {64, 1024}) {
    std::vector<double> eps;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const BallSpec ball{init_weights(NetworkShape(20, m, 3), 400 + seed), 5.0 / std::sqrt(static_cast<double>(m))};
      eps.push_back(approx_error_probe(ball, data, {}, 8, seed).eps_app_hat);
    }
    med.push_back(median(eps));
  }
  MESSAGE("eps_app_hat m=64 " << med[0] << ", m=1024 " << med[1]);
  CHECK(med[1] < med[0]);
}

TEST_CASE("gradient bound grows like sqrt(m)") {
  const auto data = gen_margin_dataset(64, 20, 0.1, 21);
  std::vector<double> scaled;
  for (std::size_t m : {64, 256, 1024}) {
    std::vector<double> vals;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const BallSpec ball{init_weights(NetworkShape(20, m, 3), 500 + seed), 5.0 / std::sqrt(static_cast<double>(m))};
      vals.push_back(grad_bound_probe(ball, data, {}, 4, seed).M_hat / std::sqrt(static_cast<double>(m)));
    }
    scaled.push_back(median(vals));
  }
  MESSAGE("M_hat / sqrt(m): " << scaled[0] << ", " << scaled[1] << ", " << scaled[2]);
  const auto [lo, hi] = std::minmax_element(scaled.begin(), scaled.end());
  CHECK(*hi <= 3.0 * *lo);
}

TEST_CASE("initial output magnitude") {
  const auto data = gen_margin_dataset(30, 6, 0.1, 22);
  CHECK(init_output_probe(LayerStack(NetworkShape(6, 8, 3)), data) == 0.0);
  const auto w0 = init_weights(NetworkShape(6, 16, 3), 23);
  double expected = 0.0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    expected = std::max(expected, std::abs(oracle::score(w0, {data.x(i).begin(), data.x(i).end()})));
  }
  CHECK(init_output_probe(w0, data) == doctest::Approx(expected).epsilon(1e-12));
  std::vector<std::size_t> twice(2 * data.n());
  for (std::size_t i = 0; i < twice.size(); ++i) twice[i] = i % data.n();
  CHECK(init_output_probe(w0, data.subset(twice)) == init_output_probe(w0, data));
  CHECK_THROWS_AS(init_output_probe(w0, LabeledDataset()), InvalidInput);
}

TEST_CASE("initial output magnitude is width-stable") {
  const auto data = gen_margin_dataset(256, 20, 0.1, 24);
  std::vector<double> med;
  for (std::size_t m : {64, 1024}) {
    std::vector<double> vals;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      vals.push_back(init_output_probe(init_weights(NetworkShape(20, m, 3), 600 + seed), data));
    }
    med.push_back(median(vals));
  }
  MESSAGE("median max |f0|: m=64 " << med[0] << ", m=1024 " << med[1]);
  CHECK(med[1] <= 2.0 * med[0]);
  CHECK(med[0] <= 2.0 * med[1]);
}

TEST_CASE("audit of a frozen trajectory") {
  const auto data = gen_margin_dataset(20, 5, 0.1, 25);
  const auto w0 = init_weights(NetworkShape(5, 16, 3), 26);
  TrainConfig cfg;
  cfg.eta = 0.0;
  cfg.T = 12;
  cfg.snapshot_every = 4;
  const auto traj = gd_train(w0, data, cfg);
  const auto report = lemma51_audit(traj, gaussian_offset(w0, 0.1, 27), 0.0, 0.1, 0.2);
  CHECK(report.intervals.size() == 3);
  for (const auto& iv : report.intervals) {
    CHECK(iv.lhs == 0.0);
    CHECK(iv.rhs == 0.0);
    CHECK(iv.residual == 0.0);
  }
  CHECK(report.pass);
  CHECK_FALSE(report.degenerate_factor);
}

TEST_CASE("audit arithmetic and argument checks") {
  const auto data = gen_margin_dataset(30, 5, 0.1, 28);
  const auto w0 = init_weights(NetworkShape(5, 32, 3), 29);
  TrainConfig cfg;
  cfg.eta = 0.02;
  cfg.T = 40;
  cfg.snapshot_every = 7;
  const auto traj = gd_train(w0, data, cfg);
  const auto wstar = gaussian_offset(w0, 0.05, 30);
  const double eta = cfg.eta, eps_app = 0.05, eps_ntrf = 0.1;
  const auto report = lemma51_audit(traj, wstar, eta, eps_app, eps_ntrf);
  REQUIRE(report.intervals.size() == traj.snapshots.size() - 1);

  double sum_res = 0.0, lhs = 0.0;
  for (std::size_t k = 0; k < report.intervals.size(); ++k) {
    const auto& iv = report.intervals[k];
    const auto& a = traj.snapshots[k];
    const auto& b = traj.snapshots[k + 1];
    CHECK(iv.from == a.step);
    CHECK(iv.to == b.step);
    const double expected_lhs = (a.weights - wstar).squared_norm() - (b.weights - wstar).squared_norm();
    CHECK(iv.lhs == doctest::Approx(expected_lhs).epsilon(1e-12));
    double rhs = 0.0;
    for (std::size_t t = a.step; t < b.step; ++t) rhs += (1.5 - 4 * eps_app) * eta * traj.records[t].loss - 2 * eta * eps_ntrf;
    CHECK(iv.rhs == doctest::Approx(rhs).epsilon(1e-12));
    sum_res += iv.residual;
    lhs += iv.lhs;
  }
  CHECK(oracle::relative_error(report.margin, sum_res, 1e-300) <= 1e-9);
  CHECK(oracle::relative_error(report.margin, report.lhs_total - report.rhs_total, 1e-300) <= 1e-9);
  CHECK(report.pass == (report.lhs_total >= report.rhs_total));

  const auto degenerate = lemma51_audit(traj, wstar, eta, 0.375, eps_ntrf);
  CHECK(degenerate.factor == 0.0);
  CHECK(degenerate.degenerate_factor);
  for (const auto& iv : degenerate.intervals) {
    CHECK(iv.rhs == doctest::Approx(-2.0 * eta * eps_ntrf * static_cast<double>(iv.to - iv.from)));
  }
  CHECK_THROWS_AS(lemma51_audit(traj, wstar, eta, 0.4, eps_ntrf), InvalidInput);
  Trajectory lone;
  lone.snapshots.push_back({0, w0});
  CHECK_THROWS_AS(lemma51_audit(lone, wstar, eta, 0.1, eps_ntrf), InvalidInput);
}

TEST_CASE("audit passes on a GD run toward the NTRF reference point") {
  const auto data = gen_margin_dataset(200, 20, 0.1, 31);
  const NetworkShape s(20, 256, 3);
  const auto w0 = init_weights(s, 32);
  const auto features = extract_features(w0, data);
  const double R = 5.0;
  const auto fit = fit_projected_gd(features, data.labels(), R, 300, safe_fit_step(features));
  const WeightStack wstar = w0 + fit.model.delta;

  TrainConfig cfg;
  cfg.eta = default_step_size(s, StepMode::GD);
  cfg.T = 1000;
  cfg.snapshot_every = default_snapshot_every(cfg.T);
  const auto traj = gd_train(w0, data, cfg);

  // Pairs that include trained iterates or W* reach defects above 3/8 at this
  // width, so the factor comes from the random-pair estimate. The audit at
  // eps_app = 0 has the largest right side and is checked as well.
  const BallSpec ball{w0, R / std::sqrt(256.0)};
  const double eps_app = approx_error_probe(ball, data, {}, 4, 33).eps_app_hat;
  REQUIRE(eps_app < 0.375);
  const auto report = lemma51_audit(traj, wstar, cfg.eta, eps_app, fit.eps_ntrf);
  MESSAGE("eps_ntrf " << fit.eps_ntrf << ", eps_app_hat " << eps_app << ", margin " << report.margin);
  CHECK(report.pass);
  CHECK(report.margin > 0.0);
  const auto strict = lemma51_audit(traj, wstar, cfg.eta, 0.0, fit.eps_ntrf);
  CHECK(strict.pass);
  CHECK(strict.margin > 0.0);
}

TEST_CASE("probe reports serialize with a stable key order") {
  const auto data = gen_margin_dataset(10, 4, 0.1, 34);
  const BallSpec ball{init_weights(NetworkShape(4, 8, 3), 35), 0.2};
  const auto report = run_probes(ball, data, {}, 2, 36);
  const auto j = to_json(report);
  std::vector<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
  CHECK(keys == std::vector<std::string>{"eps_app_hat", "M_hat", "init_out_max", "candidates_evaluated", "clipped"});
  CHECK(j.dump() == to_json(run_probes(ball, data, {}, 2, 36)).dump());
  CHECK(report.eps_app_hat >= 0.0);
  CHECK(report.M_hat > 0.0);
  CHECK(report.init_out_max == init_output_probe(ball.center, data));
}
