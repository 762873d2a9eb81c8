#pragma once

// Reference implementations for the unit tests. They use plain loops and
// share no code with the library beyond the container types.

#include <cmath>
#include <functional>
#include <vector>

#include "ntrflab/network.hpp"

namespace oracle {

using ntrflab::LayerStack;

// f_W(x) by explicit loops.
inline double score(const LayerStack& w, const std::vector<double>& x) {
  const auto& s = w.shape();
  std::vector<double> h = x;
  for (std::size_t l = 0; l + 1 < s.L; ++l) {
    std::vector<double> next(s.m, 0.0);
    for (std::size_t r = 0; r < s.m; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < h.size(); ++c) acc += w[l](r, c) * h[c];
      next[r] = acc > 0.0 ? acc : 0.0;
    }
    h = std::move(next);
  }
  double out = 0.0;
  for (std::size_t c = 0; c < s.m; ++c) out += w[s.L - 1](0, c) * h[c];
  return std::sqrt(static_cast<double>(s.m)) * out;
}

inline std::vector<double> row(const ntrflab::Matrix& m, Eigen::Index i) {
  return {m.row(i).data(), m.row(i).data() + m.cols()};
}

// Central finite differences of `f` with respect to every weight entry.
inline LayerStack central_difference(const LayerStack& w, const std::function<double(const LayerStack&)>& f,
                                     double h = 1e-5) {
  LayerStack grad(w.shape());
  LayerStack probe = w;
  for (std::size_t l = 0; l < w.size(); ++l) {
    for (Eigen::Index k = 0; k < w[l].size(); ++k) {
      const double orig = probe[l].data()[k];
      probe[l].data()[k] = orig + h;
      const double up = f(probe);
      probe[l].data()[k] = orig - h;
      const double down = f(probe);
      probe[l].data()[k] = orig;
      grad[l].data()[k] = (up - down) / (2.0 * h);
    }
  }
  return grad;
}

inline double relative_error(double a, double b, double floor = 1e-2) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_relative_error(const LayerStack& a, const LayerStack& b, double floor = 1e-2) {
  double worst = 0.0;
  for (std::size_t l = 0; l < a.size(); ++l) {
    for (Eigen::Index k = 0; k < a[l].size(); ++k) {
      worst = std::max(worst, relative_error(a[l].data()[k], b[l].data()[k], floor));
    }
  }
  return worst;
}

// Smallest |preactivation| over all hidden units; finite differences are only
// trusted when this stays well above the step.
inline double min_abs_preactivation(const LayerStack& w, const std::vector<double>& x) {
  const auto& s = w.shape();
  std::vector<double> h = x;
  double lo = INFINITY;
  for (std::size_t l = 0; l + 1 < s.L; ++l) {
    std::vector<double> next(s.m, 0.0);
    for (std::size_t r = 0; r < s.m; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < h.size(); ++c) acc += w[l](r, c) * h[c];
      lo = std::min(lo, std::abs(acc));
      next[r] = acc > 0.0 ? acc : 0.0;
    }
    h = std::move(next);
  }
  return lo;
}

inline double softplus_neg(double z) { return std::log1p(std::exp(-z)); }

}  // namespace oracle
