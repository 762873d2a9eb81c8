#include "ntrflab/network.hpp"

#include <cmath>
#include <string>

#include "ntrflab/error.hpp"
#include "ntrflab/losses.hpp"
#include "ntrflab/rng.hpp"

namespace ntrflab {

namespace {

std::string shape_str(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

Eigen::MatrixXd relu_mask(const Eigen::MatrixXd& pre) {
  return (pre.array() > 0.0).cast<double>().matrix();
}

}  // namespace

NetworkShape::NetworkShape(std::size_t d_, std::size_t m_, std::size_t L_) : d(d_), m(m_), L(L_) {
  if (d < 1 || m < 1 || L < 2) {
    throw InvalidInput("network shape requires d >= 1, m >= 1, L >= 2 (got d=" + std::to_string(d) +
                       ", m=" + std::to_string(m) + ", L=" + std::to_string(L) + ")");
  }
}

std::size_t NetworkShape::parameter_count() const { return m * d + (L - 2) * m * m + m; }

std::size_t NetworkShape::layer_offset(std::size_t layer) const {
  if (layer == 0) return 0;
  return m * d + (layer - 1) * m * m;
}

LayerStack::LayerStack(const NetworkShape& shape) : shape_(shape) {
  layers_.reserve(shape.L);
  for (std::size_t l = 0; l < shape.L; ++l) layers_.push_back(Matrix::Zero(shape.rows(l), shape.cols(l)));
}

LayerStack::LayerStack(const NetworkShape& shape, std::vector<Matrix> layers)
    : shape_(shape), layers_(std::move(layers)) {
  if (layers_.size() != shape.L) {
    throw InvalidInput("expected " + std::to_string(shape.L) + " layers, got " + std::to_string(layers_.size()));
  }
  for (std::size_t l = 0; l < shape.L; ++l) {
    const auto r = static_cast<std::size_t>(layers_[l].rows());
    const auto c = static_cast<std::size_t>(layers_[l].cols());
    if (r != shape.rows(l) || c != shape.cols(l)) {
      throw InvalidInput("layer " + std::to_string(l + 1) + " has shape " + shape_str(r, c) + ", expected " +
                         shape_str(shape.rows(l), shape.cols(l)));
    }
  }
  if (!all_finite()) throw InvalidInput("weight stack contains non-finite entries");
}

void LayerStack::require_same_shape(const LayerStack& other) const {
  if (!(shape_ == other.shape_)) throw InvalidInput("layer stacks have different shapes");
}

LayerStack& LayerStack::axpy(double alpha, const LayerStack& other) {
  require_same_shape(other);
  for (std::size_t l = 0; l < layers_.size(); ++l) layers_[l] += alpha * other.layers_[l];
  return *this;
}

LayerStack& LayerStack::operator*=(double alpha) {
  for (auto& layer : layers_) layer *= alpha;
  return *this;
}

double LayerStack::dot(const LayerStack& other) const {
  require_same_shape(other);
  double total = 0.0;
  for (std::size_t l = 0; l < layers_.size(); ++l) total += layers_[l].cwiseProduct(other.layers_[l]).sum();
  return total;
}

std::vector<double> LayerStack::layer_norms() const {
  std::vector<double> out;
  out.reserve(layers_.size());
  for (const auto& layer : layers_) out.push_back(layer.norm());
  return out;
}

double LayerStack::max_layer_norm() const {
  double best = 0.0;
  for (const auto& layer : layers_) best = std::max(best, layer.norm());
  return best;
}

bool LayerStack::all_finite() const {
  for (const auto& layer : layers_) {
    if (!layer.allFinite()) return false;
  }
  return true;
}

Vector LayerStack::flatten() const {
  Vector flat(shape_.parameter_count());
  std::size_t offset = 0;
  for (const auto& layer : layers_) {
    const auto count = static_cast<Eigen::Index>(layer.size());
    flat.segment(static_cast<Eigen::Index>(offset), count) = Eigen::Map<const Vector>(layer.data(), count);
    offset += static_cast<std::size_t>(count);
  }
  return flat;
}

LayerStack LayerStack::unflatten(const NetworkShape& shape, std::span<const double> flat) {
  if (flat.size() != shape.parameter_count()) {
    throw InvalidInput("flattened length " + std::to_string(flat.size()) + " does not match parameter count " +
                       std::to_string(shape.parameter_count()));
  }
  LayerStack out(shape);
  std::size_t offset = 0;
  for (std::size_t l = 0; l < shape.L; ++l) {
    auto& layer = out.layers_[l];
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), layer.size(), layer.data());
    offset += static_cast<std::size_t>(layer.size());
  }
  return out;
}

bool LayerStack::operator==(const LayerStack& other) const {
  if (!(shape_ == other.shape_)) return false;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layers_[l] != other.layers_[l]) return false;
  }
  return true;
}

WeightStack init_weights(const NetworkShape& shape, std::uint64_t seed) {
  WeightStack w(shape);
  const double m = static_cast<double>(shape.m);
  for (std::size_t l = 0; l < shape.L; ++l) {
    const double stddev = std::sqrt((l + 1 == shape.L ? 1.0 : 2.0) / m);
    Rng rng(seed, l);
    auto& layer = w[l];
    for (Eigen::Index k = 0; k < layer.size(); ++k) layer.data()[k] = stddev * rng.normal();
  }
  return w;
}

ActivationCache forward(const WeightStack& weights, std::span<const double> x) {
  const auto& shape = weights.shape();
  if (x.size() != shape.d) {
    throw InvalidInput("input has length " + std::to_string(x.size()) + ", network expects d=" +
                       std::to_string(shape.d));
  }
  ActivationCache cache;
  cache.input = Eigen::Map<const Vector>(x.data(), static_cast<Eigen::Index>(x.size()));
  cache.pre.reserve(shape.L - 1);
  cache.post.reserve(shape.L - 1);
  const Vector* h = &cache.input;
  for (std::size_t l = 0; l + 1 < shape.L; ++l) {
    cache.pre.push_back(weights[l] * *h);
    cache.post.push_back(cache.pre.back().cwiseMax(0.0));
    h = &cache.post.back();
  }
  cache.score = std::sqrt(static_cast<double>(shape.m)) * weights[shape.L - 1].row(0).dot(*h);
  return cache;
}

GradientStack network_gradient(const WeightStack& weights, const ActivationCache& cache) {
  const auto& shape = weights.shape();
  if (cache.pre.size() != shape.L - 1 || cache.post.size() != shape.L - 1 ||
      static_cast<std::size_t>(cache.input.size()) != shape.d) {
    throw InvalidInput("activation cache does not match the weight stack");
  }
  for (const auto& v : cache.pre) {
    if (static_cast<std::size_t>(v.size()) != shape.m) throw InvalidInput("activation cache width mismatch");
  }
  const double root_m = std::sqrt(static_cast<double>(shape.m));
  GradientStack grad(shape);
  const std::size_t last = shape.L - 1;
  grad[last].row(0) = root_m * cache.post[last - 1].transpose();

  // delta = d f / d pre_l, walked backwards from the output layer.
  Vector delta = root_m * weights[last].row(0).transpose();
  for (std::size_t l = last; l-- > 0;) {
    delta = delta.cwiseProduct((cache.pre[l].array() > 0.0).cast<double>().matrix());
    const Vector& below = l == 0 ? cache.input : cache.post[l - 1];
    grad[l] = delta * below.transpose();
    if (l > 0) delta = weights[l].transpose() * delta;
  }
  return grad;
}

BatchActivations forward_batch(const WeightStack& weights, const Matrix& inputs) {
  const auto& shape = weights.shape();
  if (static_cast<std::size_t>(inputs.cols()) != shape.d) {
    throw InvalidInput("inputs have " + std::to_string(inputs.cols()) + " columns, network expects d=" +
                       std::to_string(shape.d));
  }
  BatchActivations acts;
  acts.pre.reserve(shape.L - 1);
  acts.post.reserve(shape.L - 1);
  acts.pre.emplace_back(weights[0] * inputs.transpose());
  acts.post.emplace_back(acts.pre.back().cwiseMax(0.0));
  for (std::size_t l = 1; l + 1 < shape.L; ++l) {
    acts.pre.emplace_back(weights[l] * acts.post.back());
    acts.post.emplace_back(acts.pre.back().cwiseMax(0.0));
  }
  const double root_m = std::sqrt(static_cast<double>(shape.m));
  acts.scores = root_m * (weights[shape.L - 1] * acts.post.back()).transpose();
  return acts;
}

Vector scores(const WeightStack& weights, const Matrix& inputs) { return forward_batch(weights, inputs).scores; }

GradientStack weighted_gradient_sum(const WeightStack& weights, const Matrix& inputs,
                                    const BatchActivations& acts, const Vector& coeff) {
  const auto& shape = weights.shape();
  const std::size_t last = shape.L - 1;
  const double root_m = std::sqrt(static_cast<double>(shape.m));
  GradientStack grad(shape);
  grad[last] = root_m * (acts.post[last - 1] * coeff).transpose();

  // Column i of delta holds coeff_i * d f(x_i) / d pre_l.
  Eigen::MatrixXd delta = (root_m * weights[last].row(0).transpose()) * coeff.transpose();
  for (std::size_t l = last; l-- > 0;) {
    delta.array() *= (acts.pre[l].array() > 0.0).cast<double>();
    if (l == 0) {
      grad[0].noalias() = delta * inputs;
    } else {
      grad[l].noalias() = delta * acts.post[l - 1].transpose();
      delta = weights[l].transpose() * delta;
    }
  }
  return grad;
}

Matrix gradient_norms(const WeightStack& weights, const Matrix& inputs, const BatchActivations& acts) {
  const auto& shape = weights.shape();
  const auto n = inputs.rows();
  const std::size_t last = shape.L - 1;
  const double root_m = std::sqrt(static_cast<double>(shape.m));
  Matrix norms(n, static_cast<Eigen::Index>(shape.L));
  // grad_{W_l} f(x_i) = delta_{l,i} h_{l-1,i}^T is rank one, so its norm factorises.
  norms.col(static_cast<Eigen::Index>(last)) = root_m * acts.post[last - 1].colwise().norm().transpose();
  Eigen::MatrixXd delta = (root_m * weights[last].row(0).transpose()) * Eigen::RowVectorXd::Ones(n);
  for (std::size_t l = last; l-- > 0;) {
    delta.array() *= (acts.pre[l].array() > 0.0).cast<double>();
    const Vector below = l == 0 ? Vector(inputs.rowwise().norm()) : Vector(acts.post[l - 1].colwise().norm());
    norms.col(static_cast<Eigen::Index>(l)) = delta.colwise().norm().transpose().cwiseProduct(below);
    if (l > 0) delta = weights[l].transpose() * delta;
  }
  return norms;
}

Vector directional_derivative(const WeightStack& weights, const LayerStack& direction, const Matrix& inputs) {
  const auto& shape = weights.shape();
  if (!(direction.shape() == shape)) throw InvalidInput("direction shape does not match weights");
  const Eigen::MatrixXd xt = inputs.transpose();
  Eigen::MatrixXd pre = weights[0] * xt;
  Eigen::MatrixXd tangent = direction[0] * xt;
  Eigen::MatrixXd mask = relu_mask(pre);
  Eigen::MatrixXd h = pre.cwiseMax(0.0);
  Eigen::MatrixXd dh = tangent.cwiseProduct(mask);
  for (std::size_t l = 1; l + 1 < shape.L; ++l) {
    pre = weights[l] * h;
    tangent = direction[l] * h + weights[l] * dh;
    mask = relu_mask(pre);
    h = pre.cwiseMax(0.0);
    dh = tangent.cwiseProduct(mask);
  }
  const std::size_t last = shape.L - 1;
  const double root_m = std::sqrt(static_cast<double>(shape.m));
  return root_m * (direction[last] * h + weights[last] * dh).transpose();
}

LossAndGradient loss_and_gradient(const WeightStack& weights, const LabeledDataset& data) {
  if (data.empty()) throw InvalidInput("loss_and_gradient needs a nonempty dataset");
  const auto acts = forward_batch(weights, data.features());
  const auto n = static_cast<Eigen::Index>(data.n());
  Vector coeff(n);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double y = data.label(static_cast<std::size_t>(i));
    const double z = y * acts.scores[i];
    loss += cross_entropy(z);
    coeff[i] = cross_entropy_prime(z) * y / static_cast<double>(n);
  }
  LossAndGradient out;
  out.loss = loss / static_cast<double>(n);
  out.gradient = weighted_gradient_sum(weights, data.features(), acts, coeff);
  out.scores = acts.scores;
  return out;
}

}  // namespace ntrflab
