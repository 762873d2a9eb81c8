#pragma once

// Neural tangent random feature (NTRF) model around an initialization W0:
//
//   F(x) = f_{W0}(x) + <grad f_{W0}(x), W - W0>,
//
// restricted to the per-layer Frobenius ball max_l ||W_l - W0_l||_F <= R / sqrt(m).

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ntrflab/dataset.hpp"
#include "ntrflab/error.hpp"
#include "ntrflab/network.hpp"

namespace ntrflab {

/// Offsets f_{W0}(x_i) and flattened gradient stacks grad f_{W0}(x_i), one row
/// per example. Row layout is LayerStack::flatten order, so its length is
/// m*d + (L-2)*m^2 + m.
struct NtrfFeatures {
  NetworkShape shape;
  std::uint64_t seed = 0;  // provenance of W0
  Vector offsets;
  Matrix gradients;

  std::size_t n() const { return static_cast<std::size_t>(offsets.size()); }
  LayerStack gradient(std::size_t i) const;
  /// Throws InvalidInput on inconsistent sizes or non-finite offsets.
  void validate() const;
};

struct NtrfModel {
  LayerStack delta;  // W - W0
  double R = 0.0;    // ball radius is R / sqrt(m)
};

struct NtrfFitResult {
  NtrfModel model;
  double eps_ntrf = 0.0;
  /// Best-so-far average loss, starting with the loss at delta = 0.
  std::vector<double> loss_curve;
};

struct HingeFlowResult {
  std::vector<double> losses;  // squared-hinge average, initial value first
  Matrix delta_block;          // displacement of layer L-1
  double dt = 0.0;
  std::size_t steps = 0;  // Euler steps taken
};

/// Raised when an Euler step grows the loss by 2x or produces non-finite values.
class StepSizeTooLarge : public Divergence {
 public:
  using Divergence::Divergence;
};

NtrfFeatures extract_features(const WeightStack& w0, const LabeledDataset& data, std::uint64_t seed = 0);

double predict(const NtrfFeatures& features, std::size_t i, const NtrfModel& model);
/// F(x_i) for every example.
Vector predict_all(const NtrfFeatures& features, const LayerStack& delta);

/// Projects each layer of `delta` independently onto the Frobenius ball of the
/// given radius. Returns the number of layers that were rescaled.
std::size_t project_to_ball(LayerStack& delta, double radius);

/// 1 / L_smooth for the average cross-entropy over these features, where
/// L_smooth = lambda_max(G^T G) / (4 n) and lambda_max is a power-iteration
/// estimate.
double safe_fit_step(const NtrfFeatures& features);

/// Projected gradient descent on (1/n) sum_i l(y_i F(x_i)) over the ball of
/// radius R / sqrt(m). eps_ntrf is the best loss reached (an upper bound on
/// the infimum). Throws Divergence if the loss exceeds 10x the best so far.
NtrfFitResult fit_projected_gd(const NtrfFeatures& features, std::span<const std::int8_t> labels, double R,
                               std::size_t steps, double lr);

/// Average cross-entropy of the NTRF model with displacement `delta`.
double ntrf_loss(const NtrfFeatures& features, std::span<const std::int8_t> labels, const LayerStack& delta);

/// Forward-Euler discretisation of the squared-hinge gradient flow that
/// moves only layer L-1:  dW_{L-1} <- dW_{L-1} - dt * grad_{W_{L-1}} Lhinge.
/// Throws StepSizeTooLarge if dt exceeds hinge_stability_limit or the loss
/// doubles between consecutive steps. With stop_below > 0 the flow ends early
/// once every per-example loss is <= stop_below.
HingeFlowResult hinge_flow_last_hidden(const NtrfFeatures& features, std::span<const std::int8_t> labels,
                                       double lambda, double dt, std::size_t steps, double stop_below = 0.0);

/// 1 / lambda_max of the hinge-loss Hessian in the layer L-1 block with every
/// example active, (2/n) B B^T. Below it Euler steps never overshoot along any
/// eigendirection; above it they can jump across the flow instead of following it.
double hinge_stability_limit(const NtrfFeatures& features);

/// n^3 / (8 m phi): resolves the decay rate 4 C m phi / n^3 at C = 1/200.
double default_hinge_dt(std::size_t n, std::size_t m, double phi);

/// Runs hinge_flow_last_hidden starting at `dt`, dividing dt by 100 after
/// each StepSizeTooLarge, at most `max_retries` times.
HingeFlowResult hinge_flow_auto(const NtrfFeatures& features, std::span<const std::int8_t> labels, double lambda,
                                double dt, std::size_t steps, double stop_below = 0.0, int max_retries = 8);

/// Full displacement stack holding only the layer L-1 block.
LayerStack hinge_delta(const NetworkShape& shape, const Matrix& delta_block);

/// Container: magic "NTRFFEAT", u32 version, u64 d, m, L, n, seed, then n
/// offsets and n*P gradient entries (f64, row-major).
void save_features(const NtrfFeatures& features, const std::filesystem::path& path);
NtrfFeatures load_features(const std::filesystem::path& path);

}  // namespace ntrflab
