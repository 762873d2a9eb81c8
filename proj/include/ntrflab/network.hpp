#pragma once

// Deep fully-connected ReLU network without biases,
//
//   f_W(x) = sqrt(m) * W_L relu(W_{L-1} ... relu(W_1 x) ...),
//
// with W_1: m x d, W_2..W_{L-1}: m x m, W_L: 1 x m.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ntrflab/dataset.hpp"
#include "ntrflab/linalg.hpp"

namespace ntrflab {

struct NetworkShape {
  std::size_t d = 1;
  std::size_t m = 1;
  std::size_t L = 2;

  NetworkShape() = default;
  /// Throws InvalidInput unless d >= 1, m >= 1, L >= 2.
  NetworkShape(std::size_t d, std::size_t m, std::size_t L);

  std::size_t rows(std::size_t layer) const { return layer + 1 == L ? 1 : m; }
  std::size_t cols(std::size_t layer) const { return layer == 0 ? d : m; }
  /// m*d + (L-2)*m^2 + m.
  std::size_t parameter_count() const;
  /// Offset of layer `layer` inside the flattened (row-major, layer-ordered) vector.
  std::size_t layer_offset(std::size_t layer) const;

  bool operator==(const NetworkShape&) const = default;
};

/// Per-layer matrices with the shapes of a NetworkShape. Used for weights,
/// gradients and displacements alike; all three live in the same vector space.
class LayerStack {
 public:
  LayerStack() = default;
  /// All-zero stack.
  explicit LayerStack(const NetworkShape& shape);
  /// Throws InvalidInput if the count or any shape disagrees with `shape`, or
  /// if an entry is not finite.
  LayerStack(const NetworkShape& shape, std::vector<Matrix> layers);

  const NetworkShape& shape() const { return shape_; }
  std::size_t size() const { return layers_.size(); }
  Matrix& operator[](std::size_t l) { return layers_[l]; }
  const Matrix& operator[](std::size_t l) const { return layers_[l]; }
  const std::vector<Matrix>& layers() const { return layers_; }

  /// this += alpha * other
  LayerStack& axpy(double alpha, const LayerStack& other);
  LayerStack& operator*=(double alpha);
  LayerStack& operator+=(const LayerStack& other) { return axpy(1.0, other); }
  LayerStack& operator-=(const LayerStack& other) { return axpy(-1.0, other); }
  friend LayerStack operator+(LayerStack a, const LayerStack& b) { return a += b; }
  friend LayerStack operator-(LayerStack a, const LayerStack& b) { return a -= b; }
  friend LayerStack operator*(double alpha, LayerStack a) { return a *= alpha; }

  /// Sum over layers of the Frobenius inner products.
  double dot(const LayerStack& other) const;
  double squared_norm() const { return dot(*this); }
  std::vector<double> layer_norms() const;
  double max_layer_norm() const;
  bool all_finite() const;

  Vector flatten() const;
  static LayerStack unflatten(const NetworkShape& shape, std::span<const double> flat);

  bool operator==(const LayerStack& other) const;

 private:
  void require_same_shape(const LayerStack& other) const;

  NetworkShape shape_;
  std::vector<Matrix> layers_;
};

using WeightStack = LayerStack;
using GradientStack = LayerStack;

/// Layers 1..L-1 ~ N(0, 2/m), layer L ~ N(0, 1/m); layer l draws from Rng
/// stream l of `seed`, entries in row-major order.
WeightStack init_weights(const NetworkShape& shape, std::uint64_t seed);

struct ActivationCache {
  Vector input;
  std::vector<Vector> pre;   // L-1 hidden preactivations
  std::vector<Vector> post;  // relu(pre)
  double score = 0.0;
};

ActivationCache forward(const WeightStack& weights, std::span<const double> x);

/// Exact gradient of f_W(x) w.r.t. every layer, with relu'(0) = 0.
GradientStack network_gradient(const WeightStack& weights, const ActivationCache& cache);

/// Activations for a batch of inputs stored as rows of `inputs` (n x d).
/// Hidden matrices are m x n with one column per example.
struct BatchActivations {
  std::vector<Eigen::MatrixXd> pre;
  std::vector<Eigen::MatrixXd> post;
  Vector scores;
};

BatchActivations forward_batch(const WeightStack& weights, const Matrix& inputs);
Vector scores(const WeightStack& weights, const Matrix& inputs);

/// sum_i coeff_i * grad_W f_W(x_i), accumulated with fixed-order matrix products.
GradientStack weighted_gradient_sum(const WeightStack& weights, const Matrix& inputs,
                                    const BatchActivations& acts, const Vector& coeff);

/// n x L matrix of per-example, per-layer gradient Frobenius norms.
Matrix gradient_norms(const WeightStack& weights, const Matrix& inputs, const BatchActivations& acts);

/// <grad_W f_W(x_i), direction> for every row x_i, by forward-mode propagation.
Vector directional_derivative(const WeightStack& weights, const LayerStack& direction, const Matrix& inputs);

struct LossAndGradient {
  double loss = 0.0;
  GradientStack gradient;
  Vector scores;
};

/// Average cross-entropy L_S(W) = (1/n) sum_i log(1 + exp(-y_i f_W(x_i))) and
/// its gradient (1/n) sum_i l'(y_i f) y_i grad f. Throws on empty data.
LossAndGradient loss_and_gradient(const WeightStack& weights, const LabeledDataset& data);

}  // namespace ntrflab
