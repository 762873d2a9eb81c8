#include <doctest.h>

#include <cmath>

#include "ntrflab/error.hpp"
#include "ntrflab/losses.hpp"
#include "ntrflab/rng.hpp"
#include "oracles.hpp"

using namespace ntrflab;

TEST_CASE("cross entropy reference values") {
  CHECK(cross_entropy(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(cross_entropy(-100.0) == doctest::Approx(100.0).epsilon(1e-15));
  const double eps = 1e-3;
  const double z = std::log(1.0 / eps);
  CHECK(cross_entropy(z) == doctest::Approx(std::log1p(eps)).epsilon(1e-14));
  CHECK(cross_entropy(z) <= eps);
  CHECK(std::isfinite(cross_entropy(-1e4)));
  CHECK(cross_entropy(-1e4) == 1e4);
  CHECK(cross_entropy(1e4) >= 0.0);
  // Tail keeps its relative precision where log(1 + e^-z) would round to 0.
  CHECK(cross_entropy(40.0) == doctest::Approx(std::exp(-40.0)).epsilon(1e-14));
  CHECK(cross_entropy(20.0) < 2.1e-9);
}

TEST_CASE("cross entropy agrees with the direct formula on its safe range") {
  for (double z = -30.0; z <= 30.0; z += 0.37) {
    CHECK(cross_entropy(z) == doctest::Approx(oracle::softplus_neg(z)).epsilon(1e-13));
  }
}

TEST_CASE("cross entropy derivative") {
  CHECK(cross_entropy_prime(0.0) == -0.5);
  const double tail = cross_entropy_prime(100.0);
  CHECK(tail < 0.0);
  CHECK(tail == doctest::Approx(-std::exp(-100.0)).epsilon(1e-14));
  for (double z = -50.0; z <= 50.0; z += 0.01) {
    const double g = -cross_entropy_prime(z);
    CHECK(g <= std::min(1.0, cross_entropy(z)));
  }
  for (double z = -30.0; z <= 700.0; z += 0.5) {
    const double g = cross_entropy_prime(z);
    CHECK(g > -1.0);
    CHECK(g < 0.0);
    CHECK(cross_entropy(z) > 0.0);
  }
}

TEST_CASE("cross entropy derivative matches finite differences") {
  for (double z = -20.0; z <= 20.0; z += 0.25) {
    const double h = 1e-5;
    const double fd = (cross_entropy(z + h) - cross_entropy(z - h)) / (2 * h);
    CHECK(oracle::relative_error(cross_entropy_prime(z), fd, 1e-8) < 1e-6);
  }
}

TEST_CASE("cross entropy is convex on random chords") {
  Rng rng(5);
  for (int k = 0; k < 10000; ++k) {
    const double a = 60.0 * rng.uniform() - 30.0;
    const double b = 60.0 * rng.uniform() - 30.0;
    const double t = rng.uniform();
    CHECK(cross_entropy(t * a + (1 - t) * b) <= t * cross_entropy(a) + (1 - t) * cross_entropy(b) + 1e-12);
  }
}

TEST_CASE("squared hinge") {
  CHECK(squared_hinge(2.0, 2.0).value == 0.0);
  CHECK(squared_hinge(2.0, 2.0).derivative == 0.0);
  CHECK(squared_hinge(0.0, 2.0).value == 4.0);
  CHECK(squared_hinge(0.0, 2.0).derivative == -4.0);
  CHECK(squared_hinge(5.0, 2.0).value == 0.0);
  CHECK_THROWS_AS(squared_hinge(0.0, 0.0), InvalidInput);
  CHECK_THROWS_AS(squared_hinge(0.0, -1.0), InvalidInput);

  Rng rng(8);
  for (int k = 0; k < 500; ++k) {
    const double lambda = 0.1 + 5.0 * rng.uniform();
    const double z = 10.0 * rng.uniform() - 5.0;
    if (std::abs(lambda - z) <= 1e-3) continue;
    const auto hv = squared_hinge(z, lambda);
    CHECK(hv.derivative == doctest::Approx(-2.0 * std::sqrt(hv.value)).epsilon(1e-14));
    const double h = 1e-6;
    const double fd = (squared_hinge(z + h, lambda).value - squared_hinge(z - h, lambda).value) / (2 * h);
    if (hv.derivative == 0.0) {
      CHECK(fd == 0.0);
    } else {
      CHECK(oracle::relative_error(hv.derivative, fd, 0.0) <= 1e-6);
    }
  }
}

TEST_CASE("dataset metrics") {
  const NetworkShape s(2, 3, 3);
  const LabeledDataset data(Matrix{{1.0, 0.0}, {0.0, 1.0}, {0.6, 0.8}}, {1, -1, 1});
  const auto zero = dataset_metrics(LayerStack(s), data);
  CHECK(zero.err01 == 1.0);
  CHECK(zero.loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(zero.surrogate == 0.5);

  Vector scores(3);
  scores << 20.0, -25.0, 30.0;
  const auto good = metrics_from_scores(scores, data.labels());
  CHECK(good.err01 == 0.0);
  CHECK(good.loss <= 3e-9);

  CHECK_THROWS_AS(dataset_metrics(LayerStack(s), LabeledDataset()), InvalidInput);

  Rng rng(3);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto w = init_weights(NetworkShape(2, 16, 3), seed);
    const auto m = dataset_metrics(w, data);
    CHECK(m.err01 <= 2.0 * m.surrogate);
    CHECK(m.surrogate > 0.0);
    CHECK(m.surrogate <= 1.0);
  }
}
