#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "ntrflab/dataset.hpp"
#include "ntrflab/error.hpp"
#include "ntrflab/losses.hpp"
#include "ntrflab/network.hpp"
#include "ntrflab/rng.hpp"
#include "oracles.hpp"

using namespace ntrflab;

namespace {

LayerStack hand_net(double w1_first) {
  NetworkShape s(2, 1, 2);
  Matrix w1(1, 2);
  w1 << w1_first, 0.0;
  Matrix w2(1, 1);
  w2 << 2.0;
  return LayerStack(s, {w1, w2});
}

std::vector<double> unit_vector(std::size_t d, Rng& rng) {
  std::vector<double> x(d);
  double norm = 0.0;
  for (auto& v : x) {
    v = rng.normal();
    norm += v * v;
  }
  for (auto& v : x) v /= std::sqrt(norm);
  return x;
}

LabeledDataset random_dataset(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed, 99);
  Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  std::vector<std::int8_t> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = unit_vector(d, rng);
    for (std::size_t c = 0; c < d; ++c) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = v[c];
    y[i] = rng.uniform() < 0.5 ? -1 : 1;
  }
  return LabeledDataset(x, y);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

}  // namespace

TEST_CASE("shape validation and parameter layout") {
  CHECK_THROWS_AS(NetworkShape(0, 4, 3), InvalidInput);
  CHECK_THROWS_AS(NetworkShape(2, 0, 3), InvalidInput);
  CHECK_THROWS_AS(NetworkShape(2, 4, 1), InvalidInput);
  NetworkShape s(3, 5, 4);
  CHECK(s.parameter_count() == 5 * 3 + 2 * 25 + 5);
  CHECK(s.layer_offset(0) == 0);
  CHECK(s.layer_offset(1) == 15);
  CHECK(s.layer_offset(3) == 65);
}

TEST_CASE("init_weights shapes and determinism") {
  const NetworkShape s(2, 4, 3);
  const auto w = init_weights(s, 7);
  REQUIRE(w.size() == 3);
  CHECK(w[0].rows() == 4);
  CHECK(w[0].cols() == 2);
  CHECK(w[1].rows() == 4);
  CHECK(w[1].cols() == 4);
  CHECK(w[2].rows() == 1);
  CHECK(w[2].cols() == 4);
  CHECK(init_weights(s, 7) == w);
  CHECK_FALSE(init_weights(s, 8) == w);
}

TEST_CASE("init_weights variances match 2/m and 1/m") {
  const NetworkShape s(1, 512, 2);
  double hidden = 0.0, output = 0.0;
  std::size_t count = 0;
  for (std::uint64_t seed = 0; seed < 2000; ++seed) {
    const auto w = init_weights(s, seed);
    hidden += w[0].squaredNorm();
    output += w[1].squaredNorm();
    count += 512;
  }
  CHECK(count >= 1000000);
  const double m = 512.0;
  CHECK(std::abs(hidden / count / (2.0 / m) - 1.0) < 0.01);
  CHECK(std::abs(output / count / (1.0 / m) - 1.0) < 0.01);
}

TEST_CASE("forward on hand networks") {
  const std::vector<double> x{1.0, 0.0};
  CHECK(forward(hand_net(1.0), x).score == 2.0);
  CHECK(forward(hand_net(-1.0), x).score == 0.0);
  const auto zero = LayerStack(NetworkShape(3, 4, 3));
  CHECK(forward(zero, std::vector<double>{0.6, 0.8, 0.0}).score == 0.0);
  CHECK_THROWS_AS(forward(hand_net(1.0), std::vector<double>{1.0, 0.0, 0.0}), InvalidInput);

  const auto cache = forward(init_weights(NetworkShape(3, 6, 4), 3), std::vector<double>{0.0, 0.6, 0.8});
  REQUIRE(cache.pre.size() == 3);
  for (std::size_t l = 0; l < 3; ++l) CHECK(cache.post[l] == cache.pre[l].cwiseMax(0.0));
}

TEST_CASE("forward agrees with the loop oracle and batch evaluation") {
  Rng rng(11);
  for (std::size_t L : {2, 3, 5}) {
    const NetworkShape s(4, 7, L);
    const auto w = init_weights(s, 100 + L);
    const auto data = random_dataset(9, 4, L);
    const auto batch = scores(w, data.features());
    for (std::size_t i = 0; i < data.n(); ++i) {
      const auto x = oracle::row(data.features(), static_cast<Eigen::Index>(i));
      const double expect = oracle::score(w, x);
      CHECK(forward(w, x).score == doctest::Approx(expect).epsilon(1e-13));
      CHECK(batch[static_cast<Eigen::Index>(i)] == doctest::Approx(expect).epsilon(1e-13));
    }
  }
}

TEST_CASE("network_gradient on the hand network") {
  const auto w = hand_net(1.0);
  const auto g = network_gradient(w, forward(w, std::vector<double>{1.0, 0.0}));
  CHECK(g[1](0, 0) == 1.0);
  CHECK(g[0](0, 0) == 2.0);
  CHECK(g[0](0, 1) == 0.0);

  const auto dead = hand_net(-1.0);
  const auto gd = network_gradient(dead, forward(dead, std::vector<double>{1.0, 0.0}));
  CHECK(gd[0].isZero(0.0));
}

TEST_CASE("network_gradient matches central finite differences") {
  Rng rng(2024);
  int checked = 0;
  for (int trial = 0; checked < 100; ++trial) {
    const std::size_t L = std::vector<std::size_t>{2, 3, 5}[trial % 3];
    const std::size_t m = trial % 2 == 0 ? 2 : 4;
    const NetworkShape s(3, m, L);
    const auto w = init_weights(s, 500 + trial);
    const auto x = unit_vector(3, rng);
    // Finite differences across a ReLU kink are meaningless.
    if (oracle::min_abs_preactivation(w, x) < 1e-3) continue;
    const auto analytic = network_gradient(w, forward(w, x));
    const auto numeric = oracle::central_difference(w, [&](const LayerStack& p) { return oracle::score(p, x); });
    CHECK(oracle::max_relative_error(analytic, numeric) <= 1e-5);
    ++checked;
  }
}

TEST_CASE("network_gradient rejects a mismatched cache") {
  const auto w = init_weights(NetworkShape(3, 4, 3), 1);
  const auto other = init_weights(NetworkShape(3, 4, 4), 1);
  CHECK_THROWS_AS(network_gradient(w, forward(other, std::vector<double>{1.0, 0.0, 0.0})), InvalidInput);
}

TEST_CASE("positive homogeneity in the output layer") {
  const auto w = init_weights(NetworkShape(5, 8, 3), 4);
  const std::vector<double> x{0.2, 0.4, 0.4, 0.8, 0.0};
  const double base = forward(w, x).score;
  for (double c : {2.0, 0.5, 8.0}) {
    auto scaled = w;
    scaled[2] *= c;
    CHECK(forward(scaled, x).score == c * base);
  }
  auto scaled = w;
  scaled[2] *= 3.0;
  CHECK(forward(scaled, x).score == doctest::Approx(3.0 * base).epsilon(1e-15));
}

TEST_CASE("batched gradients agree with per-example backprop") {
  const NetworkShape s(4, 6, 4);
  const auto w = init_weights(s, 9);
  const auto data = random_dataset(7, 4, 3);
  const auto acts = forward_batch(w, data.features());
  Vector coeff(7);
  for (int i = 0; i < 7; ++i) coeff[i] = 0.1 * (i + 1) * (i % 2 ? -1 : 1);
  const auto batched = weighted_gradient_sum(w, data.features(), acts, coeff);
  LayerStack loop(s);
  const auto norms = gradient_norms(w, data.features(), acts);
  for (std::size_t i = 0; i < 7; ++i) {
    const auto g = network_gradient(w, forward(w, data.x(i)));
    loop.axpy(coeff[static_cast<Eigen::Index>(i)], g);
    for (std::size_t l = 0; l < s.L; ++l) {
      CHECK(norms(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l)) ==
            doctest::Approx(g[l].norm()).epsilon(1e-12));
    }
  }
  CHECK(oracle::max_relative_error(batched, loop, 1e-12) < 1e-12);
}

TEST_CASE("directional derivative matches the gradient inner product and finite differences") {
  const NetworkShape s(3, 5, 3);
  const auto w = init_weights(s, 21);
  const auto dir = init_weights(s, 22);
  const auto data = random_dataset(6, 3, 8);
  const auto jvp = directional_derivative(w, dir, data.features());
  for (std::size_t i = 0; i < data.n(); ++i) {
    const auto g = network_gradient(w, forward(w, data.x(i)));
    CHECK(jvp[static_cast<Eigen::Index>(i)] == doctest::Approx(g.dot(dir)).epsilon(1e-12));
    const auto x = oracle::row(data.features(), static_cast<Eigen::Index>(i));
    if (oracle::min_abs_preactivation(w, x) < 1e-3) continue;
    const double t = 1e-6;
    const double fd = (oracle::score(w + t * dir, x) - oracle::score(w - t * dir, x)) / (2 * t);
    CHECK(oracle::relative_error(jvp[static_cast<Eigen::Index>(i)], fd) < 1e-6);
  }
}

TEST_CASE("loss_and_gradient matches finite differences of the loss") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const NetworkShape s(3, 4, 3);
    const auto w = init_weights(s, 40 + seed);
    const auto data = random_dataset(5, 3, seed);
    bool smooth = true;
    for (std::size_t i = 0; i < data.n(); ++i) {
      smooth = smooth && oracle::min_abs_preactivation(w, oracle::row(data.features(), static_cast<Eigen::Index>(i))) > 1e-3;
    }
    if (!smooth) continue;
    const auto lg = loss_and_gradient(w, data);
    const auto loss = [&](const LayerStack& p) {
      double acc = 0.0;
      for (std::size_t i = 0; i < data.n(); ++i) {
        acc += oracle::softplus_neg(data.label(i) * oracle::score(p, oracle::row(data.features(), static_cast<Eigen::Index>(i))));
      }
      return acc / static_cast<double>(data.n());
    };
    CHECK(lg.loss == doctest::Approx(loss(w)).epsilon(1e-13));
    CHECK(oracle::max_relative_error(lg.gradient, oracle::central_difference(w, loss)) <= 1e-5);
  }
}

TEST_CASE("saturated loss tail") {
  const NetworkShape s(2, 1, 2);
  Matrix w1(1, 2), w2(1, 1);
  w1 << 1.0, 0.0;
  w2 << 50.0;
  const LayerStack w(s, {w1, w2});
  const LabeledDataset data(Matrix{{1.0, 0.0}}, {1});
  const auto lg = loss_and_gradient(w, data);
  CHECK(lg.scores[0] == 50.0);
  CHECK(lg.loss <= 1e-21);
  const double feature_norm = network_gradient(w, forward(w, data.x(0))).squared_norm();
  CHECK(std::sqrt(lg.gradient.squared_norm()) <= 1e-20 * std::sqrt(feature_norm));
}

TEST_CASE("duplicating every example leaves loss and gradient unchanged") {
  const auto w = init_weights(NetworkShape(3, 6, 3), 77);
  const auto data = random_dataset(8, 3, 5);
  const auto twice = LabeledDataset::concat(data, data);
  const auto a = loss_and_gradient(w, data);
  const auto b = loss_and_gradient(w, twice);
  CHECK(b.loss == doctest::Approx(a.loss).epsilon(1e-14));
  CHECK(oracle::max_relative_error(a.gradient, b.gradient, 1e-12) < 1e-13);
  CHECK_THROWS_AS(loss_and_gradient(w, LabeledDataset()), InvalidInput);
}

TEST_CASE("gradient norm per sqrt(m) is width-stable at initialization") {
  const auto data = random_dataset(1, 10, 3);
  std::vector<double> medians;
  for (std::size_t m : {64, 256, 1024}) {
    const NetworkShape s(10, m, 3);
    std::vector<double> values;
    for (std::uint64_t seed = 0; seed < 9; ++seed) {
      const auto w = init_weights(s, seed);
      const auto g = network_gradient(w, forward(w, data.x(0)));
      double worst = 0.0;
      for (double v : g.layer_norms()) worst = std::max(worst, v);
      values.push_back(worst / std::sqrt(static_cast<double>(m)));
    }
    medians.push_back(median(values));
  }
  const auto [lo, hi] = std::minmax_element(medians.begin(), medians.end());
  CHECK(*hi <= 3.0 * *lo);
}

TEST_CASE("layer stack algebra and flattening") {
  const NetworkShape s(2, 3, 3);
  const auto a = init_weights(s, 1);
  const auto b = init_weights(s, 2);
  CHECK((a + b) == (b + a));
  CHECK((a - a).squared_norm() == 0.0);
  CHECK((2.0 * a) == (a + a));
  CHECK(a.dot(b) == doctest::Approx(a.flatten().dot(b.flatten())).epsilon(1e-14));
  const auto flat = a.flatten();
  CHECK(static_cast<std::size_t>(flat.size()) == s.parameter_count());
  CHECK(LayerStack::unflatten(s, {flat.data(), static_cast<std::size_t>(flat.size())}) == a);
  CHECK(flat[static_cast<Eigen::Index>(s.layer_offset(1)) + 1] == a[1](0, 1));
  CHECK_THROWS_AS(LayerStack(s, {a[0], a[1]}), InvalidInput);
  auto bad = a.layers();
  bad[1](0, 0) = NAN;
  CHECK_THROWS_AS(LayerStack(s, bad), InvalidInput);
}

TEST_CASE("loss_and_gradient is bit-reproducible") {
  const auto w = init_weights(NetworkShape(5, 16, 4), 5);
  const auto data = random_dataset(20, 5, 6);
  const auto a = loss_and_gradient(w, data);
  const auto b = loss_and_gradient(w, data);
  CHECK(a.loss == b.loss);
  CHECK(a.gradient == b.gradient);
}
