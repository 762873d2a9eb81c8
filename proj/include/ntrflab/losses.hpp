#pragma once

#include "ntrflab/dataset.hpp"
#include "ntrflab/network.hpp"

namespace ntrflab {

/// l(z) = log(1 + exp(-z)), evaluated as max(-z, 0) + log1p(exp(-|z|)) so it
/// neither overflows for large |z| nor loses the tail for large positive z.
double cross_entropy(double z);

/// l'(z) = -1 / (1 + exp(z)), in (-1, 0) for every finite z.
double cross_entropy_prime(double z);

struct HingeValue {
  double value = 0.0;
  double derivative = 0.0;
};

/// (max(lambda - z, 0))^2 and its derivative -2 max(lambda - z, 0).
/// Throws InvalidInput unless lambda > 0.
HingeValue squared_hinge(double z, double lambda);

struct DatasetMetrics {
  double loss = 0.0;       // L_S(W)
  double err01 = 0.0;      // fraction with y f <= 0; a zero score counts as an error
  double surrogate = 0.0;  // E_S(W) = -(1/n) sum l'(y f)
};

/// Metrics from precomputed scores f(x_i).
DatasetMetrics metrics_from_scores(const Vector& scores, std::span<const std::int8_t> labels);
DatasetMetrics dataset_metrics(const WeightStack& weights, const LabeledDataset& data);

}  // namespace ntrflab
