#include "ntrflab/dataset.hpp"

#include <charconv>
#include <cmath>
#include <numeric>
#include <string>

#include "ntrflab/error.hpp"
#include "ntrflab/io.hpp"
#include "ntrflab/rng.hpp"

namespace ntrflab {

namespace {

constexpr std::size_t kRejectionBudget = 1'000'000;

Vector random_unit_vector(Rng& rng, std::size_t d) {
  Vector v(static_cast<Eigen::Index>(d));
  double norm = 0.0;
  do {
    for (auto& e : v) e = rng.normal();
    norm = v.norm();
  } while (norm == 0.0);
  return v / norm;
}

std::string_view trim_cr(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

bool parse_double(std::string_view field, double& out) {
  while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
  while (!field.empty() && field.back() == ' ') field.remove_suffix(1);
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  if (field.empty()) return false;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), out);
  return ec == std::errc{} && ptr == field.data() + field.size();
}

}  // namespace

LabeledDataset::LabeledDataset(Matrix features, std::vector<std::int8_t> labels, std::uint64_t seed)
    : features_(std::move(features)), labels_(std::move(labels)), seed_(seed) {
  if (static_cast<std::size_t>(features_.rows()) != labels_.size()) {
    throw InvalidInput("dataset has " + std::to_string(features_.rows()) + " rows but " +
                       std::to_string(labels_.size()) + " labels");
  }
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] != 1 && labels_[i] != -1) {
      throw InvalidInput("label of example " + std::to_string(i) + " is " + std::to_string(labels_[i]) +
                         ", expected -1 or +1");
    }
    const double norm = features_.row(static_cast<Eigen::Index>(i)).norm();
    if (!(std::abs(norm - 1.0) <= kUnitNormTolerance)) {
      throw InvalidInput("example " + std::to_string(i) + " has norm " + format_double(norm) + ", expected 1");
    }
  }
}

Vector LabeledDataset::label_vector() const {
  Vector y(static_cast<Eigen::Index>(n()));
  for (std::size_t i = 0; i < n(); ++i) y[static_cast<Eigen::Index>(i)] = labels_[i];
  return y;
}

LabeledDataset LabeledDataset::with_labels(std::vector<std::int8_t> labels) const {
  return LabeledDataset(features_, std::move(labels), seed_);
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
  Matrix x(static_cast<Eigen::Index>(indices.size()), features_.cols());
  std::vector<std::int8_t> y;
  y.reserve(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= n()) throw InvalidInput("subset index out of range");
    x.row(static_cast<Eigen::Index>(k)) = features_.row(static_cast<Eigen::Index>(indices[k]));
    y.push_back(labels_[indices[k]]);
  }
  return LabeledDataset(std::move(x), std::move(y), seed_);
}

LabeledDataset LabeledDataset::concat(const LabeledDataset& a, const LabeledDataset& b) {
  if (a.d() != b.d()) throw InvalidInput("cannot concatenate datasets of different dimension");
  Matrix x(static_cast<Eigen::Index>(a.n() + b.n()), static_cast<Eigen::Index>(a.d()));
  x.topRows(static_cast<Eigen::Index>(a.n())) = a.features_;
  x.bottomRows(static_cast<Eigen::Index>(b.n())) = b.features_;
  std::vector<std::int8_t> y(a.labels_);
  y.insert(y.end(), b.labels_.begin(), b.labels_.end());
  return LabeledDataset(std::move(x), std::move(y), a.seed_);
}

bool LabeledDataset::operator==(const LabeledDataset& other) const {
  return features_.rows() == other.features_.rows() && features_.cols() == other.features_.cols() &&
         features_ == other.features_ && labels_ == other.labels_;
}

Vector margin_teacher(std::size_t d, std::uint64_t seed) {
  Rng rng(seed, 0);
  return random_unit_vector(rng, d);
}

LabeledDataset gen_margin_dataset(std::size_t n, std::size_t d, double gamma, std::uint64_t seed) {
  if (d < 2) throw InvalidInput("margin dataset needs d >= 2");
  if (!(gamma > 0.0 && gamma < 1.0)) throw InvalidInput("margin gamma must lie in (0, 1)");
  const Vector teacher = margin_teacher(d, seed);
  Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  std::vector<std::int8_t> y(n);
  std::size_t rejections = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(seed, i + 1);
    while (true) {
      const Vector v = random_unit_vector(rng, d);
      const double proj = teacher.dot(v);
      if (std::abs(proj) >= gamma) {
        x.row(static_cast<Eigen::Index>(i)) = v.transpose();
        y[i] = proj > 0.0 ? 1 : -1;
        break;
      }
      if (++rejections > kRejectionBudget) {
        throw BudgetExceeded("margin dataset: more than 10^6 rejections at gamma=" + format_double(gamma) +
                             " (generated " + std::to_string(i) + " of " + std::to_string(n) + ")");
      }
    }
  }
  return LabeledDataset(std::move(x), std::move(y), seed);
}

LabeledDataset flip_labels(const LabeledDataset& data, double rho, std::uint64_t seed) {
  if (!(rho >= 0.0 && rho < 1.0)) throw InvalidInput("flip fraction rho must lie in [0, 1)");
  const std::size_t n = data.n();
  // Slack guards against rho*n landing a hair below an integer, e.g. 0.29*100.
  const auto count = static_cast<std::size_t>(std::floor(rho * static_cast<double>(n) * (1.0 + 1e-12)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed, 0);
  for (std::size_t k = 0; k < count; ++k) {
    const auto j = k + static_cast<std::size_t>(rng.below(n - k));
    std::swap(order[k], order[j]);
  }
  std::vector<std::int8_t> labels(data.labels().begin(), data.labels().end());
  for (std::size_t k = 0; k < count; ++k) labels[order[k]] = static_cast<std::int8_t>(-labels[order[k]]);
  return data.with_labels(std::move(labels));
}

LabeledDataset gen_phi_dataset(std::size_t n, std::size_t d, double phi, std::uint64_t seed,
                               std::optional<std::vector<std::int8_t>> labels) {
  if (d < 1) throw InvalidInput("phi dataset needs d >= 1");
  if (!(phi > 0.0 && phi < 2.0)) throw InvalidInput("phi must lie in (0, 2)");
  std::vector<std::int8_t> y;
  if (labels) {
    if (labels->size() != n) throw InvalidInput("forced label count differs from n");
    y = *labels;
  } else {
    Rng label_rng(seed, 0);
    y.resize(n);
    for (auto& label : y) label = label_rng.below(2) == 0 ? -1 : 1;
  }
  Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  Rng rng(seed, 1);
  std::size_t rejections = 0;
  for (std::size_t i = 0; i < n; ++i) {
    while (true) {
      const Vector v = random_unit_vector(rng, d);
      bool ok = true;
      for (std::size_t j = 0; j < i && ok; ++j) {
        if (y[j] != y[i] && (x.row(static_cast<Eigen::Index>(j)).transpose() - v).norm() < phi) ok = false;
      }
      if (ok) {
        x.row(static_cast<Eigen::Index>(i)) = v.transpose();
        break;
      }
      if (++rejections > kRejectionBudget) {
        throw BudgetExceeded("phi dataset: more than 10^6 rejections at phi=" + format_double(phi) +
                             " (placed " + std::to_string(i) + " of " + std::to_string(n) + " points)");
      }
    }
  }
  return LabeledDataset(std::move(x), std::move(y), seed);
}

RawDataset parse_csv(std::string_view text) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  auto next_line = [&](std::string_view& line) {
    if (pos >= text.size()) return false;
    const auto end = text.find('\n', pos);
    line = trim_cr(text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos));
    pos = end == std::string_view::npos ? text.size() : end + 1;
    ++line_no;
    return true;
  };

  std::string_view header;
  if (!next_line(header)) throw InvalidInput("CSV line 1: missing header");
  const auto names = split_commas(header);
  if (names.size() < 2 || names.back() != "y") {
    throw InvalidInput("CSV line 1: header must be x0,...,x{d-1},y");
  }
  const std::size_t d = names.size() - 1;
  for (std::size_t k = 0; k < d; ++k) {
    if (names[k] != "x" + std::to_string(k)) {
      throw InvalidInput("CSV line 1: column " + std::to_string(k) + " should be named x" + std::to_string(k));
    }
  }

  std::vector<double> values;
  std::vector<std::int8_t> labels;
  std::string_view line;
  while (next_line(line)) {
    if (line.empty()) {
      if (pos >= text.size()) break;
      throw InvalidInput("CSV line " + std::to_string(line_no) + ": empty row");
    }
    const auto fields = split_commas(line);
    if (fields.size() != d + 1) {
      throw InvalidInput("CSV line " + std::to_string(line_no) + ": expected " + std::to_string(d + 1) +
                         " fields, found " + std::to_string(fields.size()));
    }
    for (std::size_t k = 0; k < d; ++k) {
      double v;
      if (!parse_double(fields[k], v) || !std::isfinite(v)) {
        throw InvalidInput("CSV line " + std::to_string(line_no) + ": cannot parse field " + std::to_string(k));
      }
      values.push_back(v);
    }
    double label;
    if (!parse_double(fields[d], label)) {
      throw InvalidInput("CSV line " + std::to_string(line_no) + ": cannot parse label");
    }
    if (label != 1.0 && label != -1.0) {
      throw InvalidInput("CSV line " + std::to_string(line_no) + ": label must be -1 or 1");
    }
    labels.push_back(label > 0 ? 1 : -1);
  }

  RawDataset raw;
  raw.features = Eigen::Map<Matrix>(values.data(), static_cast<Eigen::Index>(labels.size()),
                                    static_cast<Eigen::Index>(d));
  raw.labels = std::move(labels);
  return raw;
}

RawDataset load_csv(const std::filesystem::path& path) { return parse_csv(read_text_file(path)); }

LabeledDataset project_unit(const RawDataset& raw) {
  Matrix x = raw.features;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double norm = x.row(i).norm();
    if (norm == 0.0) throw InvalidInput("example " + std::to_string(i) + " has zero norm");
    x.row(i) /= norm;
  }
  return LabeledDataset(std::move(x), raw.labels);
}

LabeledDataset to_labeled(const RawDataset& raw) { return LabeledDataset(raw.features, raw.labels); }

std::string format_csv(const LabeledDataset& data) {
  std::string out;
  for (std::size_t k = 0; k < data.d(); ++k) out += "x" + std::to_string(k) + ",";
  out += "y\n";
  for (std::size_t i = 0; i < data.n(); ++i) {
    for (const double v : data.x(i)) {
      out += format_double(v);
      out += ',';
    }
    out += data.label(i) > 0 ? "1\n" : "-1\n";
  }
  return out;
}

void save_csv(const LabeledDataset& data, const std::filesystem::path& path) {
  write_text_file(path, format_csv(data));
}

namespace {
constexpr std::string_view kDatasetMagic = "NTRFDSET";
constexpr std::uint32_t kDatasetVersion = 1;
}  // namespace

void save_dataset(const LabeledDataset& data, const std::filesystem::path& path) {
  BinaryWriter w(path, kDatasetMagic, kDatasetVersion);
  w.u64(data.n());
  w.u64(data.d());
  w.u64(data.seed());
  w.f64s({data.features().data(), static_cast<std::size_t>(data.features().size())});
  w.i8s(data.labels());
  w.finish();
}

LabeledDataset load_dataset(const std::filesystem::path& path) {
  BinaryReader r(path, kDatasetMagic, kDatasetVersion);
  const auto n = r.u64();
  const auto d = r.u64();
  const auto seed = r.u64();
  if (d != 0 && n > UINT64_MAX / d) throw IoError(path.string() + ": implausible dataset size");
  r.expect_available(n * d + n / 8, 8);
  Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  r.f64s({x.data(), static_cast<std::size_t>(x.size())});
  std::vector<std::int8_t> y(n);
  r.i8s(y);
  r.expect_end();
  try {
    return LabeledDataset(std::move(x), std::move(y), seed);
  } catch (const InvalidInput& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace ntrflab
