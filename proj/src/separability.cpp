#include "ntrflab/separability.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ntrflab/error.hpp"
#include "ntrflab/io.hpp"
#include "ntrflab/rng.hpp"

namespace ntrflab {
namespace {

constexpr std::uint32_t kUmapVersion = 1;

// Soft-min weights p_i proportional to exp(-margin_i / temperature).
Vector softmin_weights(const Vector& margins, double temperature) {
  const double lo = margins.minCoeff();
  Vector p = (-(margins.array() - lo) / temperature).exp().matrix();
  return p / p.sum();
}

std::size_t stage_length(std::size_t iterations) { return std::max<std::size_t>(1, iterations / 5); }

std::vector<MarginAtRho> margin_grid(const Vector& normalized, double scale) {
  std::vector<double> sorted(normalized.data(), normalized.data() + normalized.size());
  std::sort(sorted.begin(), sorted.end());
  const auto n = sorted.size();
  std::vector<MarginAtRho> out;
  for (double rho : kRhoGrid) {
    const auto k = std::min(n - 1, static_cast<std::size_t>(std::floor(rho * static_cast<double>(n))));
    MarginAtRho row;
    row.rho = rho;
    row.gamma = sorted[k];
    std::size_t below = 0;
    for (Eigen::Index i = 0; i < normalized.size(); ++i) {
      if (normalized[i] * scale < scale * row.gamma) ++below;
    }
    row.violating = static_cast<double>(below) / static_cast<double>(n);
    out.push_back(row);
  }
  return out;
}

void check_labels(std::size_t n, std::span<const std::int8_t> labels) {
  if (n == 0) throw InvalidInput("margin estimation needs a nonempty dataset");
  if (labels.size() != n) throw InvalidInput("label count does not match the example count");
}

}  // namespace

PhiReport class_distance(const LabeledDataset& data) {
  PhiReport out;
  double best = std::numeric_limits<double>::infinity();
  const auto& x = data.features();
  for (std::size_t i = 0; i < data.n(); ++i) {
    for (std::size_t j = i + 1; j < data.n(); ++j) {
      if (data.label(i) == data.label(j)) continue;
      const double dist = (x.row(static_cast<Eigen::Index>(i)) - x.row(static_cast<Eigen::Index>(j))).norm();
      if (dist < best) {
        best = dist;
        out.i = i;
        out.j = j;
      }
    }
  }
  if (!std::isfinite(best)) throw InvalidInput("phi is undefined: the dataset has a single class");
  out.phi = best;
  return out;
}

NtrfMarginReport ntrf_margin(const NtrfFeatures& features, std::span<const std::int8_t> labels,
                             std::size_t iterations) {
  features.validate();
  check_labels(features.n(), labels);
  const auto n = static_cast<Eigen::Index>(features.n());
  const double root_m = std::sqrt(static_cast<double>(features.shape.m));
  const Matrix& g = features.gradients;
  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) y[i] = labels[static_cast<std::size_t>(i)];

  const double mean_norm = g.rowwise().norm().mean();
  if (!(mean_norm > 0.0)) throw InvalidInput("degenerate NTRF features: every gradient is zero");

  const auto margins_of = [&](const Vector& u) -> Vector { return y.cwiseProduct(g * u) / root_m; };
  Vector u = g.transpose() * y;
  if (!(u.norm() > 0.0)) u = g.row(0).transpose();
  u.normalize();
  Vector margins = margins_of(u);
  Vector best_u = u;
  double best = margins.minCoeff();

  const double temperature0 = 0.1 * mean_norm / root_m;
  const std::size_t stage = stage_length(iterations);
  for (std::size_t t = 0; t < iterations; ++t) {
    const double halvings = std::ldexp(1.0, -static_cast<int>(t / stage));
    const Vector p = softmin_weights(margins, temperature0 * halvings);
    const Vector grad = g.transpose() * p.cwiseProduct(y);
    const double gn = grad.norm();
    if (!(gn > 0.0)) break;
    u += (0.5 * halvings / gn) * grad;
    u.normalize();
    margins = margins_of(u);
    const double current = margins.minCoeff();
    if (current > best) {
      best = current;
      best_u = u;
    }
  }

  NtrfMarginReport out;
  const Vector final_margins = margins_of(best_u);
  out.grid = margin_grid(final_margins, root_m);
  out.gamma_hat = out.grid.front().gamma;
  out.rho_hat = out.grid.front().violating;
  out.ustar = LayerStack::unflatten(features.shape, {best_u.data(), static_cast<std::size_t>(best_u.size())});
  return out;
}

ShallowMarginReport shallow_ntk_margin_at(const LabeledDataset& data, const Matrix& z, std::size_t iterations,
                                          std::uint64_t seed) {
  if (data.empty()) throw InvalidInput("shallow margin needs a nonempty dataset");
  if (z.rows() < 1) throw InvalidInput("shallow margin needs k >= 1 samples");
  if (static_cast<std::size_t>(z.cols()) != data.d()) throw InvalidInput("sample dimension does not match data");
  const auto n = static_cast<Eigen::Index>(data.n());
  const auto k = z.rows();
  const Matrix& x = data.features();
  const Vector y = data.label_vector();
  const Eigen::MatrixXd act = ((x * z.transpose()).array() > 0.0).cast<double>();  // n x k
  const double inv_k = 1.0 / static_cast<double>(k);

  const auto margins_of = [&](const Matrix& u) -> Vector {
    const Eigen::MatrixXd s = act * u;  // n x d: sum_j a_ij u_j
    return y.cwiseProduct(s.cwiseProduct(x).rowwise().sum()) * inv_k;
  };
  // Ascent direction for each u_j, up to the 1/k factor.
  const auto direction = [&](const Vector& w) -> Matrix { return act.transpose() * (w.cwiseProduct(y).asDiagonal() * x); };
  const auto project = [](Matrix& u) {
    for (Eigen::Index j = 0; j < u.rows(); ++j) {
      const double norm = u.row(j).norm();
      if (norm > 1.0) u.row(j) /= norm;
    }
  };
  const auto normalize_rows = [](Matrix& u) {
    for (Eigen::Index j = 0; j < u.rows(); ++j) {
      const double norm = u.row(j).norm();
      if (norm > 0.0) u.row(j) /= norm;
    }
  };

  Matrix u = direction(Vector::Constant(n, 1.0 / static_cast<double>(n)));
  normalize_rows(u);
  Vector margins = margins_of(u);
  Matrix best_u = u;
  double best = margins.minCoeff();

  const double temperature0 = std::max(0.1 * margins.cwiseAbs().mean(), 1e-6);
  const std::size_t stage = stage_length(iterations);
  for (std::size_t t = 0; t < iterations; ++t) {
    const double halvings = std::ldexp(1.0, -static_cast<int>(t / stage));
    const Vector p = softmin_weights(margins, temperature0 * halvings);
    u += halvings * direction(p);
    project(u);
    margins = margins_of(u);
    const double current = margins.minCoeff();
    if (current > best) {
      best = current;
      best_u = u;
    }
  }

  ShallowMarginReport out;
  out.k = static_cast<std::size_t>(k);
  out.seed = seed;
  out.z = z;
  out.umap = std::move(best_u);
  out.margins = margins_of(out.umap);
  out.gamma_hat = out.margins.minCoeff();
  return out;
}

ShallowMarginReport shallow_ntk_margin(const LabeledDataset& data, std::size_t k, std::uint64_t seed,
                                       std::size_t iterations) {
  if (k < 1) throw InvalidInput("shallow margin needs k >= 1 samples");
  if (data.empty()) throw InvalidInput("shallow margin needs a nonempty dataset");
  Matrix z(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(data.d()));
  for (Eigen::Index j = 0; j < z.rows(); ++j) {
    Rng rng(seed, static_cast<std::uint64_t>(j));
    for (Eigen::Index c = 0; c < z.cols(); ++c) z(j, c) = rng.normal();
  }
  return shallow_ntk_margin_at(data, z, iterations, seed);
}

WitnessResult shallow_witness(const WeightStack& w0, const Matrix& umap, const LabeledDataset& data) {
  const auto& shape = w0.shape();
  if (shape.L != 2) throw InvalidInput("the shallow witness needs a 2-layer network");
  if (static_cast<std::size_t>(umap.rows()) != shape.m || static_cast<std::size_t>(umap.cols()) != shape.d) {
    throw InvalidInput("umap must have one d-dimensional row per hidden unit");
  }
  if (data.empty()) throw InvalidInput("the shallow witness needs a nonempty dataset");
  if (data.d() != shape.d) throw InvalidInput("dataset dimension does not match the network");
  for (Eigen::Index j = 0; j < umap.rows(); ++j) {
    if (!(umap.row(j).norm() <= 1.0 + 1e-10)) throw InvalidInput("umap rows must have norm <= 1");
  }

  const double m = static_cast<double>(shape.m);
  const double root_m = std::sqrt(m);
  const auto& w2 = w0[1];
  WitnessResult out;
  for (std::size_t j = 0; j < shape.m; ++j) {
    if (std::abs(w2(0, static_cast<Eigen::Index>(j))) >= kWitnessThreshold / root_m) out.survivors.push_back(j);
  }
  if (out.survivors.empty()) throw InvalidInput("no hidden unit passes the 0.47/sqrt(m) threshold");

  const double scale = 1.0 / std::sqrt(m * static_cast<double>(out.survivors.size()));
  out.U = Matrix::Zero(umap.rows(), umap.cols());
  for (auto j : out.survivors) {
    const auto r = static_cast<Eigen::Index>(j);
    out.U.row(r) = umap.row(r) * (scale / w2(0, r));
  }
  out.u_norm = out.U.norm();

  // <grad_{W1} f(x_i), U> = sqrt(m) sum_j w2_j relu'(<w1_j, x_i>) <U_j, x_i>.
  const Matrix& x = data.features();
  const Eigen::MatrixXd act = ((w0[0] * x.transpose()).array() > 0.0).cast<double>();  // m x n
  const Eigen::MatrixXd proj = out.U * x.transpose();                                     // m x n
  const Vector weighted = (act.cwiseProduct(proj).transpose() * w2.row(0).transpose()) * root_m;
  out.margins = data.label_vector().cwiseProduct(weighted);
  return out;
}

void save_umap(const ShallowMarginReport& report, const std::filesystem::path& path) {
  if (report.z.rows() != report.umap.rows() || report.z.cols() != report.umap.cols()) {
    throw InvalidInput("umap and sample points disagree in shape");
  }
  BinaryWriter w(path, "NTRFUMAP", kUmapVersion);
  w.u64(static_cast<std::uint64_t>(report.umap.rows()));
  w.u64(static_cast<std::uint64_t>(report.umap.cols()));
  w.u64(report.seed);
  w.f64(report.gamma_hat);
  w.f64s({report.z.data(), static_cast<std::size_t>(report.z.size())});
  w.f64s({report.umap.data(), static_cast<std::size_t>(report.umap.size())});
  w.finish();
}

ShallowMarginReport load_umap(const std::filesystem::path& path) {
  BinaryReader r(path, "NTRFUMAP", kUmapVersion);
  const auto k = r.u64();
  const auto d = r.u64();
  if (k == 0 || d == 0 || k > UINT64_MAX / (2 * d)) throw IoError(path.string() + ": implausible umap size");
  ShallowMarginReport out;
  out.k = k;
  out.seed = r.u64();
  out.gamma_hat = r.f64();
  r.expect_available(2 * k * d, 8);
  out.z.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d));
  out.umap.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d));
  r.f64s({out.z.data(), static_cast<std::size_t>(out.z.size())});
  r.f64s({out.umap.data(), static_cast<std::size_t>(out.umap.size())});
  r.expect_end();
  return out;
}

nlohmann::ordered_json to_json(const PhiReport& report) {
  return {{"phi", report.phi}, {"i", report.i}, {"j", report.j}};
}

nlohmann::ordered_json to_json(const NtrfMarginReport& report) {
  nlohmann::ordered_json j;
  j["gamma_hat"] = report.gamma_hat;
  j["rho_hat"] = report.rho_hat;
  auto& grid = j["grid"] = nlohmann::ordered_json::array();
  for (const auto& row : report.grid) {
    grid.push_back({{"rho", row.rho}, {"gamma", row.gamma}, {"violating", row.violating}});
  }
  return j;
}

nlohmann::ordered_json to_json(const ShallowMarginReport& report) {
  nlohmann::ordered_json j;
  j["gamma_hat"] = report.gamma_hat;
  j["k"] = report.k;
  j["seed"] = report.seed;
  return j;
}

nlohmann::ordered_json to_json(const WitnessResult& report) {
  nlohmann::ordered_json j;
  j["survivors"] = report.survivors.size();
  j["u_norm"] = report.u_norm;
  j["min_margin"] = report.margins.minCoeff();
  std::vector<double> sorted(report.margins.data(), report.margins.data() + report.margins.size());
  std::sort(sorted.begin(), sorted.end());
  j["median_margin"] = sorted[sorted.size() / 2];
  return j;
}

}  // namespace ntrflab
