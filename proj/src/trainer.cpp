#include "ntrflab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "ntrflab/error.hpp"
#include "ntrflab/io.hpp"
#include "ntrflab/losses.hpp"
#include "ntrflab/rng.hpp"

namespace ntrflab {
namespace {

constexpr std::uint32_t kWeightsVersion = 1;
// Stream of the seed reserved for drawing the returned SGD iterate.
constexpr std::uint64_t kChoiceStream = 0xC401CE;

std::vector<double> layer_distances(const WeightStack& w, const WeightStack& w0) {
  std::vector<double> out(w.size());
  for (std::size_t l = 0; l < w.size(); ++l) out[l] = (w[l] - w0[l]).norm();
  return out;
}

bool should_stop(const TrainConfig& cfg, const DatasetMetrics& m) {
  if (cfg.stop_on_zero_error) return m.err01 == 0.0 && (cfg.target_loss == 0.0 || m.loss <= cfg.target_loss);
  return cfg.target_loss > 0.0 && m.loss <= cfg.target_loss;
}

void push_record(Trajectory& traj, std::size_t step, const DatasetMetrics& m, std::vector<double> dist) {
  if (traj.records.empty() || m.loss < traj.best_loss) {
    traj.best_loss = m.loss;
    traj.best_step = step;
  }
  traj.records.push_back({step, m.loss, m.err01, m.surrogate, std::move(dist), traj.best_loss});
}

}  // namespace

void TrainConfig::validate() const {
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw InvalidInput("step size eta must be finite and >= 0");
  if (T < 1) throw InvalidInput("iteration budget T must be >= 1");
  if (!(target_loss >= 0.0)) throw InvalidInput("target_loss must be >= 0");
}

const Snapshot* Trajectory::snapshot_at(std::size_t step) const {
  const auto it = std::lower_bound(snapshots.begin(), snapshots.end(), step,
                                   [](const Snapshot& s, std::size_t v) { return s.step < v; });
  return it != snapshots.end() && it->step == step ? &*it : nullptr;
}

std::size_t default_snapshot_every(std::size_t T) { return std::max<std::size_t>(1, (T + 49) / 50); }

Trajectory gd_train(const WeightStack& w0, const LabeledDataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw InvalidInput("gd_train needs a nonempty dataset");
  if (data.d() != w0.shape().d) throw InvalidInput("dataset dimension does not match the network");

  Trajectory traj;
  WeightStack w = w0;
  traj.snapshots.push_back({0, w0});
  for (std::size_t t = 0;; ++t) {
    auto lg = loss_and_gradient(w, data);
    const auto m = metrics_from_scores(lg.scores, data.labels());
    if (!std::isfinite(m.loss) || !lg.gradient.all_finite()) {
      throw Divergence("GD produced a non-finite loss at step " + std::to_string(t), static_cast<long>(t) - 1);
    }
    push_record(traj, t, m, layer_distances(w, w0));
    const bool stop = should_stop(cfg, m);
    if (stop || t == cfg.T) {
      traj.stopped_early = stop && t < cfg.T;
      if (traj.snapshots.back().step != t) traj.snapshots.push_back({t, w});
      break;
    }
    w.axpy(-cfg.eta, lg.gradient);
    if (!w.all_finite()) {
      throw Divergence("GD weights became non-finite at step " + std::to_string(t + 1), static_cast<long>(t));
    }
    if (cfg.snapshot_every > 0 && (t + 1) % cfg.snapshot_every == 0) traj.snapshots.push_back({t + 1, w});
  }
  traj.final = std::move(w);
  return traj;
}

std::size_t draw_uniform_index(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw InvalidInput("cannot draw from an empty index range");
  return static_cast<std::size_t>(Rng(seed, kChoiceStream).below(n));
}

SgdResult sgd_train(const WeightStack& w0, const LabeledDataset& stream, const TrainConfig& cfg) {
  if (!(cfg.eta >= 0.0) || !std::isfinite(cfg.eta)) throw InvalidInput("step size eta must be finite and >= 0");
  if (stream.empty()) throw InvalidInput("sgd_train needs a nonempty stream");
  if (stream.d() != w0.shape().d) throw InvalidInput("stream dimension does not match the network");

  const std::size_t n = stream.n();
  SgdResult out;
  out.chosen_index = draw_uniform_index(n, cfg.seed);
  auto& traj = out.trajectory;
  WeightStack w = w0;
  traj.snapshots.push_back({0, w0});
  for (std::size_t i = 0; i < n; ++i) {
    if (i == out.chosen_index) out.chosen = w;
    const auto cache = forward(w, stream.x(i));
    const double y = stream.label(i);
    const double z = y * cache.score;
    if (!std::isfinite(z)) {
      throw Divergence("SGD produced a non-finite score at step " + std::to_string(i), static_cast<long>(i) - 1);
    }
    DatasetMetrics m;
    m.loss = cross_entropy(z);
    m.err01 = z > 0.0 ? 0.0 : 1.0;
    m.surrogate = -cross_entropy_prime(z);
    push_record(traj, i, m, layer_distances(w, w0));
    w.axpy(-cfg.eta * cross_entropy_prime(z) * y, network_gradient(w, cache));
    if (!w.all_finite()) {
      throw Divergence("SGD weights became non-finite at step " + std::to_string(i + 1), static_cast<long>(i));
    }
    if (cfg.snapshot_every > 0 && (i + 1) % cfg.snapshot_every == 0 && i + 1 < n) {
      traj.snapshots.push_back({i + 1, w});
    }
  }
  traj.snapshots.push_back({n, w});
  traj.final = std::move(w);
  return out;
}

double default_step_size(const NetworkShape& shape, StepMode mode, const StepSizeAux& aux, double c_eta) {
  if (!(c_eta > 0.0)) throw InvalidInput("step constant must be > 0");
  const double L = static_cast<double>(shape.L);
  const double m = static_cast<double>(shape.m);
  if (mode == StepMode::GD) return c_eta / (L * m);
  if (aux.n == 0) throw InvalidInput("SGD step size needs the sample count n");
  if (!(aux.R >= 0.0) || !(aux.eps_ntrf >= 0.0)) throw InvalidInput("SGD step size needs R, eps_ntrf >= 0");
  const double branch = aux.eps_ntrf > 0.0 ? L * aux.R * aux.R / (static_cast<double>(aux.n) * aux.eps_ntrf)
                                            : std::numeric_limits<double>::infinity();
  return c_eta * std::min(branch, 1.0 / L) / m;
}

std::string format_metrics_jsonl(const Trajectory& traj) {
  std::string out;
  for (const auto& r : traj.records) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["loss"] = r.loss;
    j["err01"] = r.err01;
    j["surrogate"] = r.surrogate;
    j["dist"] = r.dist;
    j["best_loss"] = r.best_loss;
    out += j.dump();
    out += '\n';
  }
  return out;
}

void write_metrics_jsonl(const Trajectory& traj, const std::filesystem::path& path) {
  write_text_file(path, format_metrics_jsonl(traj));
}

void save_weights(const WeightStack& weights, std::uint64_t seed, const std::filesystem::path& path) {
  const auto& s = weights.shape();
  BinaryWriter w(path, "NTRFWGTS", kWeightsVersion);
  w.u64(s.d);
  w.u64(s.m);
  w.u64(s.L);
  w.u64(seed);
  for (const auto& layer : weights.layers()) w.f64s({layer.data(), static_cast<std::size_t>(layer.size())});
  w.finish();
}

LoadedWeights load_weights(const std::filesystem::path& path) {
  BinaryReader r(path, "NTRFWGTS", kWeightsVersion);
  const auto d = r.u64();
  const auto m = r.u64();
  const auto L = r.u64();
  NetworkShape shape;
  try {
    shape = NetworkShape(d, m, L);
  } catch (const InvalidInput& e) {
    throw IoError(path.string() + ": corrupt weight header: " + e.what());
  }
  LoadedWeights out;
  out.seed = r.u64();
  r.expect_available(shape.parameter_count(), 8);
  std::vector<Matrix> layers;
  for (std::size_t l = 0; l < L; ++l) {
    Matrix layer(static_cast<Eigen::Index>(shape.rows(l)), static_cast<Eigen::Index>(shape.cols(l)));
    r.f64s({layer.data(), static_cast<std::size_t>(layer.size())});
    layers.push_back(std::move(layer));
  }
  r.expect_end();
  try {
    out.weights = WeightStack(shape, std::move(layers));
  } catch (const InvalidInput& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  return out;
}

}  // namespace ntrflab
