#pragma once

// Data-difficulty diagnostics: the NTRF margin of the gradient features, the
// shallow NTK margin, the cross-class distance phi, and the explicit
// first-layer witness built from a shallow margin map.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "ntrflab/dataset.hpp"
#include "ntrflab/network.hpp"
#include "ntrflab/ntrf.hpp"

namespace ntrflab {

struct PhiReport {
  double phi = 0.0;
  std::size_t i = 0;  // witness pair, i < j
  std::size_t j = 0;
};

/// Exact minimum distance over cross-class pairs. Throws InvalidInput if a
/// class is missing.
PhiReport class_distance(const LabeledDataset& data);

struct MarginAtRho {
  double rho = 0.0;        // allowed violating fraction
  double gamma = 0.0;      // (floor(rho n) + 1)-th smallest normalized margin
  double violating = 0.0;  // fraction strictly below sqrt(m) * gamma
};

struct NtrfMarginReport {
  double gamma_hat = 0.0;  // rho = 0 entry: min_i y_i <G_i, U*> / sqrt(m)
  double rho_hat = 0.0;    // fraction with y_i <G_i, U*> < sqrt(m) gamma_hat
  LayerStack ustar;        // unit total Frobenius norm
  std::vector<MarginAtRho> grid;
};

inline constexpr double kRhoGrid[] = {0.0, 0.01, 0.05, 0.1};

/// Soft-min ascent of y_i <G_i, U> / sqrt(m) over the unit Frobenius sphere.
/// The temperature starts at a tenth of the mean feature norm / sqrt(m) and is
/// halved every iterations/5 steps, as is the angular step. Throws
/// InvalidInput if every feature is zero.
NtrfMarginReport ntrf_margin(const NtrfFeatures& features, std::span<const std::int8_t> labels,
                             std::size_t iterations);

/// Samples z_j and per-sample directions u_j, ||u_j|| <= 1.
struct ShallowMarginReport {
  double gamma_hat = 0.0;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  Matrix z;     // k x d sample points
  Matrix umap;  // k x d values u_j = u(z_j)
  Vector margins;  // y_i (1/k) sum_j relu'(<z_j, x_i>) <u_j, x_i>
};

/// Monte Carlo version of the shallow NTK margin with k standard normal
/// samples (sample j drawn from stream j of `seed`), maximised by projected
/// soft-min ascent.
ShallowMarginReport shallow_ntk_margin(const LabeledDataset& data, std::size_t k, std::uint64_t seed,
                                       std::size_t iterations);

/// Same objective over caller-supplied sample points (rows of `z`). Only the
/// sign pattern of <z_j, x_i> matters, so any positive rescaling of Gaussian
/// samples is admissible.
ShallowMarginReport shallow_ntk_margin_at(const LabeledDataset& data, const Matrix& z, std::size_t iterations,
                                          std::uint64_t seed = 0);

/// Hidden-unit magnitude threshold 0.47 / sqrt(m) of the witness construction.
inline constexpr double kWitnessThreshold = 0.47;

struct WitnessResult {
  Matrix U;         // m x d
  Vector margins;   // y_i <grad_{W1} f_{W0}(x_i), U>
  std::vector<std::size_t> survivors;
  double u_norm = 0.0;
};

/// v_j = u_j / w_{2,j} on S = {j : |w_{2,j}| >= 0.47 / sqrt(m)}, 0 elsewhere,
/// U = V / sqrt(m |S|). Needs L = 2 and one umap row per hidden unit; throws
/// InvalidInput if S is empty.
WitnessResult shallow_witness(const WeightStack& w0, const Matrix& umap, const LabeledDataset& data);

/// Container: magic "NTRFUMAP", u32 version, u64 k, d, seed, f64 gamma_hat, then z and umap
/// (row-major f64).
void save_umap(const ShallowMarginReport& report, const std::filesystem::path& path);
ShallowMarginReport load_umap(const std::filesystem::path& path);

nlohmann::ordered_json to_json(const PhiReport& report);
nlohmann::ordered_json to_json(const NtrfMarginReport& report);
nlohmann::ordered_json to_json(const ShallowMarginReport& report);
nlohmann::ordered_json to_json(const WitnessResult& report);

}  // namespace ntrflab
