#include "ntrflab/losses.hpp"

#include <cmath>

#include "ntrflab/error.hpp"

namespace ntrflab {

double cross_entropy(double z) { return std::max(-z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double cross_entropy_prime(double z) {
  if (z > 0.0) {
    const double e = std::exp(-z);
    return -e / (1.0 + e);
  }
  return -1.0 / (1.0 + std::exp(z));
}

HingeValue squared_hinge(double z, double lambda) {
  if (!(lambda > 0.0)) throw InvalidInput("squared hinge requires lambda > 0");
  const double gap = std::max(lambda - z, 0.0);
  return {gap * gap, -2.0 * gap};
}

DatasetMetrics metrics_from_scores(const Vector& scores, std::span<const std::int8_t> labels) {
  if (labels.empty()) throw InvalidInput("metrics need a nonempty dataset");
  DatasetMetrics out;
  std::size_t errors = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double z = labels[i] * scores[static_cast<Eigen::Index>(i)];
    out.loss += cross_entropy(z);
    out.surrogate -= cross_entropy_prime(z);
    if (!(z > 0.0)) ++errors;
  }
  const double n = static_cast<double>(labels.size());
  out.loss /= n;
  out.surrogate /= n;
  out.err01 = static_cast<double>(errors) / n;
  return out;
}

DatasetMetrics dataset_metrics(const WeightStack& weights, const LabeledDataset& data) {
  if (data.empty()) throw InvalidInput("metrics need a nonempty dataset");
  return metrics_from_scores(scores(weights, data.features()), data.labels());
}

}  // namespace ntrflab
