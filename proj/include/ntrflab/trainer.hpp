#pragma once

// Full-batch gradient descent and single-pass online SGD from a random
// initialization, with per-step metrics and periodic weight snapshots.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ntrflab/dataset.hpp"
#include "ntrflab/network.hpp"

namespace ntrflab {

struct TrainConfig {
  double eta = 0.0;
  std::size_t T = 1;
  std::uint64_t seed = 0;
  std::size_t snapshot_every = 0;  // 0 = only W0 and the final iterate
  /// Stop once L_S <= target_loss. Zero disables the loss rule.
  double target_loss = 0.0;
  /// Also require err01 = 0 before stopping. With target_loss = 0 the run
  /// stops at the first iterate with zero training error.
  bool stop_on_zero_error = false;

  /// Throws InvalidInput unless eta >= 0 is finite, T >= 1 and target_loss >= 0.
  void validate() const;
};

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double err01 = 0.0;
  double surrogate = 0.0;
  std::vector<double> dist;  // ||W_l - W0_l||_F per layer
  double best_loss = 0.0;
};

struct Snapshot {
  std::size_t step = 0;
  WeightStack weights;
};

struct Trajectory {
  std::vector<StepRecord> records;
  std::vector<Snapshot> snapshots;  // ascending steps, always starting at 0
  WeightStack final;
  double best_loss = 0.0;
  std::size_t best_step = 0;
  bool stopped_early = false;

  /// Snapshot at exactly `step`, or nullptr.
  const Snapshot* snapshot_at(std::size_t step) const;
};

/// ceil(T / 50).
std::size_t default_snapshot_every(std::size_t T);

/// Algorithm: W(t) = W(t-1) - eta * grad L_S(W(t-1)) for up to T steps.
/// Records metrics for every iterate 0..t_stop. Throws Divergence if a loss or
/// weight becomes non-finite.
Trajectory gd_train(const WeightStack& w0, const LabeledDataset& data, const TrainConfig& cfg);

struct SgdResult {
  /// Record i holds the online metrics of example i at W(i), before its update.
  Trajectory trajectory;
  WeightStack chosen;
  std::size_t chosen_index = 0;
};

/// One update per stream example, in order; returns W(k) for k drawn
/// uniformly from {0, ..., n-1} with draw_uniform_index(n, cfg.seed).
/// cfg.T is ignored (the stream length is the budget).
SgdResult sgd_train(const WeightStack& w0, const LabeledDataset& stream, const TrainConfig& cfg);

std::size_t draw_uniform_index(std::size_t n, std::uint64_t seed);

enum class StepMode { GD, SGD };

struct StepSizeAux {
  double R = 0.0;
  std::size_t n = 0;
  double eps_ntrf = 0.0;
};

constexpr double kDefaultStepConstant = 0.5;

/// GD: c / (L m). SGD: c * min(L R^2 / (n eps_ntrf), 1 / L) / m, where
/// eps_ntrf = 0 selects the 1/L branch.
double default_step_size(const NetworkShape& shape, StepMode mode, const StepSizeAux& aux = {},
                         double c_eta = kDefaultStepConstant);

/// One JSON object per record: {step, loss, err01, surrogate, dist, best_loss}.
std::string format_metrics_jsonl(const Trajectory& traj);
void write_metrics_jsonl(const Trajectory& traj, const std::filesystem::path& path);

/// Container: magic "NTRFWGTS", u32 version, u64 d, m, L, seed, then every
/// layer's entries as f64 in row-major order.
void save_weights(const WeightStack& weights, std::uint64_t seed, const std::filesystem::path& path);
struct LoadedWeights {
  WeightStack weights;
  std::uint64_t seed = 0;
};
LoadedWeights load_weights(const std::filesystem::path& path);

}  // namespace ntrflab
