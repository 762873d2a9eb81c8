#include "ntrflab/ntrf.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "ntrflab/io.hpp"
#include "ntrflab/losses.hpp"

namespace ntrflab {
namespace {

constexpr std::uint32_t kFeaturesVersion = 1;

void check_labels(const NtrfFeatures& features, std::span<const std::int8_t> labels) {
  if (labels.size() != features.n()) {
    throw InvalidInput("got " + std::to_string(labels.size()) + " labels for " + std::to_string(features.n()) +
                       " feature rows");
  }
  if (labels.empty()) throw InvalidInput("NTRF fit needs a nonempty dataset");
  for (auto y : labels) {
    if (y != 1 && y != -1) throw InvalidInput("labels must be +1 or -1");
  }
}

// Column block of the feature matrix belonging to one layer.
auto layer_block(const NtrfFeatures& f, std::size_t layer) {
  const auto& s = f.shape;
  return f.gradients.middleCols(static_cast<Eigen::Index>(s.layer_offset(layer)),
                                static_cast<Eigen::Index>(s.rows(layer) * s.cols(layer)));
}

double average_cross_entropy(const Vector& margins) {
  double loss = 0.0;
  for (Eigen::Index i = 0; i < margins.size(); ++i) loss += cross_entropy(margins[i]);
  return loss / static_cast<double>(margins.size());
}

void project_flat(const NetworkShape& shape, Vector& flat, double radius) {
  for (std::size_t l = 0; l < shape.L; ++l) {
    auto seg = flat.segment(static_cast<Eigen::Index>(shape.layer_offset(l)),
                            static_cast<Eigen::Index>(shape.rows(l) * shape.cols(l)));
    const double norm = seg.norm();
    if (norm > radius) seg *= radius > 0.0 ? radius / norm : 0.0;
  }
}

}  // namespace

LayerStack NtrfFeatures::gradient(std::size_t i) const {
  if (i >= n()) throw InvalidInput("feature index " + std::to_string(i) + " out of range");
  const auto row = gradients.row(static_cast<Eigen::Index>(i));
  return LayerStack::unflatten(shape, {row.data(), static_cast<std::size_t>(row.size())});
}

void NtrfFeatures::validate() const {
  if (static_cast<std::size_t>(gradients.rows()) != n()) {
    throw InvalidInput("feature matrix has " + std::to_string(gradients.rows()) + " rows for " +
                       std::to_string(n()) + " offsets");
  }
  if (static_cast<std::size_t>(gradients.cols()) != shape.parameter_count()) {
    throw InvalidInput("feature rows have length " + std::to_string(gradients.cols()) + ", shape needs " +
                       std::to_string(shape.parameter_count()));
  }
  if (!offsets.allFinite()) throw InvalidInput("NTRF offsets must be finite");
  if (!gradients.allFinite()) throw InvalidInput("NTRF gradient features must be finite");
}

NtrfFeatures extract_features(const WeightStack& w0, const LabeledDataset& data, std::uint64_t seed) {
  const auto& shape = w0.shape();
  if (data.d() != shape.d && !data.empty()) {
    throw InvalidInput("dataset has d=" + std::to_string(data.d()) + ", network expects d=" +
                       std::to_string(shape.d));
  }
  NtrfFeatures out;
  out.shape = shape;
  out.seed = seed;
  const auto n = static_cast<Eigen::Index>(data.n());
  out.offsets = Vector::Zero(n);
  out.gradients = Matrix::Zero(n, static_cast<Eigen::Index>(shape.parameter_count()));
  if (n == 0) return out;

  const auto acts = forward_batch(w0, data.features());
  out.offsets = acts.scores;
  const std::size_t last = shape.L - 1;
  const double root_m = std::sqrt(static_cast<double>(shape.m));

  // Every per-example, per-layer gradient is the outer product delta_i h_i^T.
  const auto fill = [&](std::size_t layer, const Eigen::MatrixXd& delta, const Eigen::MatrixXd& below_cols) {
    const auto rows = static_cast<Eigen::Index>(shape.rows(layer));
    const auto cols = static_cast<Eigen::Index>(shape.cols(layer));
    const auto offset = static_cast<Eigen::Index>(shape.layer_offset(layer));
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Map<Matrix> block(out.gradients.row(i).data() + offset, rows, cols);
      block.noalias() = delta.col(i) * below_cols.col(i).transpose();
    }
  };

  fill(last, Eigen::MatrixXd::Constant(1, n, root_m), acts.post[last - 1]);
  Eigen::MatrixXd delta = (root_m * w0[last].row(0).transpose()) * Eigen::RowVectorXd::Ones(n);
  for (std::size_t l = last; l-- > 0;) {
    delta.array() *= (acts.pre[l].array() > 0.0).cast<double>();
    if (l == 0) {
      fill(0, delta, data.features().transpose());
    } else {
      fill(l, delta, acts.post[l - 1]);
      delta = w0[l].transpose() * delta;
    }
  }
  out.validate();
  return out;
}

double predict(const NtrfFeatures& features, std::size_t i, const NtrfModel& model) {
  if (i >= features.n()) throw InvalidInput("feature index " + std::to_string(i) + " out of range");
  if (!(model.delta.shape() == features.shape)) throw InvalidInput("model shape does not match features");
  const Vector flat = model.delta.flatten();
  return features.offsets[static_cast<Eigen::Index>(i)] +
         features.gradients.row(static_cast<Eigen::Index>(i)).dot(flat);
}

Vector predict_all(const NtrfFeatures& features, const LayerStack& delta) {
  if (!(delta.shape() == features.shape)) throw InvalidInput("displacement shape does not match features");
  const Vector flat = delta.flatten();
  return features.offsets + features.gradients * flat;
}

std::size_t project_to_ball(LayerStack& delta, double radius) {
  if (!(radius >= 0.0)) throw InvalidInput("ball radius must be >= 0");
  std::size_t rescaled = 0;
  for (std::size_t l = 0; l < delta.size(); ++l) {
    const double norm = delta[l].norm();
    if (norm > radius) {
      delta[l] *= radius > 0.0 ? radius / norm : 0.0;
      ++rescaled;
    }
  }
  return rescaled;
}

namespace {

// Largest eigenvalue of G G^T by power iteration from the all-ones direction,
// which is close to the dominant eigenvector for gradient features.
template <typename Block>
double top_eigenvalue(const Block& g) {
  Vector v = Vector::Ones(g.rows()).normalized();
  double lambda = 0.0;
  for (int it = 0; it < 200; ++it) {
    const Vector u = g.transpose() * v;
    Vector w = g * u;
    const double next = v.dot(w);
    const double norm = w.norm();
    if (!(norm > 0.0)) break;
    v = w / norm;
    const bool converged = std::abs(next - lambda) <= 1e-9 * next;
    lambda = next;
    if (converged && it >= 5) break;
  }
  return lambda;
}

}  // namespace

double safe_fit_step(const NtrfFeatures& features) {
  if (features.n() == 0) throw InvalidInput("safe_fit_step needs a nonempty feature set");
  const double lambda = top_eigenvalue(features.gradients);
  if (!(lambda > 0.0)) return 1.0;
  // Small safety factor since power iteration approaches lambda_max from below.
  const double smooth = 1.05 * lambda / (4.0 * static_cast<double>(features.n()));
  return 1.0 / smooth;
}

double ntrf_loss(const NtrfFeatures& features, std::span<const std::int8_t> labels, const LayerStack& delta) {
  check_labels(features, labels);
  const Vector f = predict_all(features, delta);
  Vector margins(f.size());
  for (Eigen::Index i = 0; i < f.size(); ++i) margins[i] = labels[static_cast<std::size_t>(i)] * f[i];
  return average_cross_entropy(margins);
}

NtrfFitResult fit_projected_gd(const NtrfFeatures& features, std::span<const std::int8_t> labels, double R,
                               std::size_t steps, double lr) {
  features.validate();
  check_labels(features, labels);
  if (!(R >= 0.0) || !std::isfinite(R)) throw InvalidInput("R must be finite and >= 0");
  if (steps < 1) throw InvalidInput("fit needs steps >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw InvalidInput("fit learning rate must be > 0");

  const auto& shape = features.shape;
  const auto n = static_cast<Eigen::Index>(features.n());
  const double radius = R / std::sqrt(static_cast<double>(shape.m));
  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) y[i] = labels[static_cast<std::size_t>(i)];

  Vector delta = Vector::Zero(static_cast<Eigen::Index>(shape.parameter_count()));
  Vector best_delta = delta;
  Vector margins = y.cwiseProduct(features.offsets);
  double best = average_cross_entropy(margins);

  NtrfFitResult out;
  out.loss_curve.reserve(steps + 1);
  out.loss_curve.push_back(best);
  Vector coeff(n);
  for (std::size_t s = 0; s < steps; ++s) {
    for (Eigen::Index i = 0; i < n; ++i) coeff[i] = cross_entropy_prime(margins[i]) * y[i] / static_cast<double>(n);
    delta.noalias() -= lr * (features.gradients.transpose() * coeff);
    project_flat(shape, delta, radius);
    margins = y.cwiseProduct(features.offsets + features.gradients * delta);
    const double loss = average_cross_entropy(margins);
    if (!std::isfinite(loss) || loss > 10.0 * best) {
      throw Divergence("NTRF fit diverged at step " + std::to_string(s + 1) + ": loss " + format_double(loss) +
                           " vs best " + format_double(best) + " (lr " + format_double(lr) + ")",
                       s);
    }
    if (loss < best) {
      best = loss;
      best_delta = delta;
    }
    out.loss_curve.push_back(best);
  }
  out.eps_ntrf = best;
  out.model.R = R;
  out.model.delta = LayerStack::unflatten(shape, {best_delta.data(), static_cast<std::size_t>(best_delta.size())});
  return out;
}

HingeFlowResult hinge_flow_last_hidden(const NtrfFeatures& features, std::span<const std::int8_t> labels,
                                       double lambda, double dt, std::size_t steps, double stop_below) {
  features.validate();
  check_labels(features, labels);
  if (!(lambda > 0.0)) throw InvalidInput("hinge flow needs lambda > 0");
  if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidInput("hinge flow needs dt > 0");
  const auto& shape = features.shape;
  const std::size_t layer = shape.L - 2;
  const auto n = static_cast<Eigen::Index>(features.n());
  const auto block = layer_block(features, layer);
  const double limit = hinge_stability_limit(features);
  if (dt > limit) {
    throw StepSizeTooLarge("hinge flow dt " + format_double(dt) + " exceeds the Euler stability limit " +
                               format_double(limit),
                           -1);
  }

  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) y[i] = labels[static_cast<std::size_t>(i)];

  Vector delta = Vector::Zero(block.cols());
  Vector f = features.offsets;
  Vector coeff(n);
  double worst = 0.0;
  const auto evaluate = [&]() {
    double loss = 0.0;
    worst = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto h = squared_hinge(y[i] * f[i], lambda);
      loss += h.value;
      worst = std::max(worst, h.value);
      coeff[i] = h.derivative * y[i] / static_cast<double>(n);
    }
    return loss / static_cast<double>(n);
  };

  HingeFlowResult out;
  out.dt = dt;
  out.losses.reserve(steps + 1);
  out.losses.push_back(evaluate());
  for (std::size_t s = 0; s < steps; ++s) {
    if (stop_below > 0.0 && worst <= stop_below) break;
    delta.noalias() -= dt * (block.transpose() * coeff);
    f.noalias() = features.offsets + block * delta;
    const double loss = evaluate();
    const double prev = out.losses.back();
    if (!std::isfinite(loss) || loss > 2.0 * prev) {
      throw StepSizeTooLarge("hinge flow unstable at step " + std::to_string(s + 1) + " with dt " +
                                 format_double(dt) + ": loss " + format_double(prev) + " -> " + format_double(loss),
                             s);
    }
    out.losses.push_back(loss);
    ++out.steps;
  }
  out.delta_block = Eigen::Map<const Matrix>(delta.data(), static_cast<Eigen::Index>(shape.rows(layer)),
                                             static_cast<Eigen::Index>(shape.cols(layer)));
  return out;
}

double hinge_stability_limit(const NtrfFeatures& features) {
  features.validate();
  if (features.n() == 0) throw InvalidInput("hinge flow needs a nonempty feature set");
  const double lambda = top_eigenvalue(layer_block(features, features.shape.L - 2));
  const double curvature = 2.0 * lambda / static_cast<double>(features.n());
  return curvature > 0.0 ? 1.0 / curvature : std::numeric_limits<double>::infinity();
}

double default_hinge_dt(std::size_t n, std::size_t m, double phi) {
  if (n == 0 || m == 0) throw InvalidInput("default_hinge_dt needs n, m >= 1");
  if (!(phi > 0.0)) throw InvalidInput("default_hinge_dt needs phi > 0");
  const double nn = static_cast<double>(n);
  return nn * nn * nn / (8.0 * static_cast<double>(m) * phi);
}

HingeFlowResult hinge_flow_auto(const NtrfFeatures& features, std::span<const std::int8_t> labels, double lambda,
                                double dt, std::size_t steps, double stop_below, int max_retries) {
  for (int attempt = 0;; ++attempt) {
    try {
      return hinge_flow_last_hidden(features, labels, lambda, dt, steps, stop_below);
    } catch (const StepSizeTooLarge&) {
      if (attempt >= max_retries) throw;
      dt /= 100.0;
    }
  }
}

LayerStack hinge_delta(const NetworkShape& shape, const Matrix& delta_block) {
  LayerStack out(shape);
  const std::size_t layer = shape.L - 2;
  if (static_cast<std::size_t>(delta_block.rows()) != shape.rows(layer) ||
      static_cast<std::size_t>(delta_block.cols()) != shape.cols(layer)) {
    throw InvalidInput("hinge displacement block has the wrong shape");
  }
  out[layer] = delta_block;
  return out;
}

void save_features(const NtrfFeatures& features, const std::filesystem::path& path) {
  features.validate();
  BinaryWriter w(path, "NTRFFEAT", kFeaturesVersion);
  w.u64(features.shape.d);
  w.u64(features.shape.m);
  w.u64(features.shape.L);
  w.u64(features.n());
  w.u64(features.seed);
  w.f64s({features.offsets.data(), features.n()});
  w.f64s({features.gradients.data(), static_cast<std::size_t>(features.gradients.size())});
  w.finish();
}

NtrfFeatures load_features(const std::filesystem::path& path) {
  BinaryReader r(path, "NTRFFEAT", kFeaturesVersion);
  const auto d = r.u64();
  const auto m = r.u64();
  const auto L = r.u64();
  const auto n = r.u64();
  NtrfFeatures out;
  try {
    out.shape = NetworkShape(d, m, L);
  } catch (const InvalidInput& e) {
    throw IoError(path.string() + ": corrupt feature header: " + e.what());
  }
  const auto p = out.shape.parameter_count();
  out.seed = r.u64();
  if (n > UINT64_MAX / (p + 1)) throw IoError(path.string() + ": implausible feature count");
  r.expect_available(n * (p + 1), 8);
  out.offsets.resize(static_cast<Eigen::Index>(n));
  out.gradients.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  r.f64s({out.offsets.data(), n});
  r.f64s({out.gradients.data(), static_cast<std::size_t>(out.gradients.size())});
  r.expect_end();
  try {
    out.validate();
  } catch (const InvalidInput& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  return out;
}

}  // namespace ntrflab
