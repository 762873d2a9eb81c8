#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "ntrflab/linalg.hpp"

namespace ntrflab {

/// Binary-labelled examples with unit-norm inputs. Construction checks both
/// invariants; every dataset handed out by this module has passed them.
class LabeledDataset {
 public:
  static constexpr double kUnitNormTolerance = 1e-9;

  LabeledDataset() = default;
  /// Throws InvalidInput if a row is not unit norm within 1e-9, a label is not
  /// +-1, or the row and label counts differ. An empty dataset (n = 0) is
  /// representable; operations that need data reject it.
  LabeledDataset(Matrix features, std::vector<std::int8_t> labels, std::uint64_t seed = 0);

  std::size_t n() const { return labels_.size(); }
  std::size_t d() const { return static_cast<std::size_t>(features_.cols()); }
  bool empty() const { return labels_.empty(); }

  const Matrix& features() const { return features_; }
  std::span<const std::int8_t> labels() const { return labels_; }
  int label(std::size_t i) const { return labels_[i]; }
  std::span<const double> x(std::size_t i) const {
    return {features_.data() + i * d(), d()};
  }
  Vector label_vector() const;
  /// Seed the dataset was generated from (0 for external data).
  std::uint64_t seed() const { return seed_; }

  LabeledDataset with_labels(std::vector<std::int8_t> labels) const;
  LabeledDataset subset(std::span<const std::size_t> indices) const;
  /// Rows of `a` followed by rows of `b`.
  static LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b);

  bool operator==(const LabeledDataset& other) const;

 private:
  Matrix features_;
  std::vector<std::int8_t> labels_;
  std::uint64_t seed_ = 0;
};

/// Parsed CSV before unit-norm projection. Rows may have any nonzero norm.
struct RawDataset {
  Matrix features;
  std::vector<std::int8_t> labels;
};

/// Linear-teacher data: hidden unit vector w, x uniform on the sphere, points
/// with |<w, x>| < gamma rejected, y = sign(<w, x>). Example i uses Rng stream
/// i + 1 of `seed`, so a dataset of size n is a prefix of any larger one.
/// Throws BudgetExceeded after 10^6 total rejections.
LabeledDataset gen_margin_dataset(std::size_t n, std::size_t d, double gamma, std::uint64_t seed);
/// The hidden teacher direction used by gen_margin_dataset for `seed`.
Vector margin_teacher(std::size_t d, std::uint64_t seed);

/// Flips exactly floor(rho * n) labels chosen uniformly without replacement.
LabeledDataset flip_labels(const LabeledDataset& data, double rho, std::uint64_t seed);

/// Random labels (i.i.d. uniform unless `labels` is given) with every
/// cross-class pair at distance >= phi. Throws BudgetExceeded after 10^6
/// total rejections.
LabeledDataset gen_phi_dataset(std::size_t n, std::size_t d, double phi, std::uint64_t seed,
                               std::optional<std::vector<std::int8_t>> labels = std::nullopt);

/// Header "x0,...,x{d-1},y", one example per line. Errors carry line numbers.
RawDataset load_csv(const std::filesystem::path& path);
RawDataset parse_csv(std::string_view text);
/// Rescales each row to unit norm; throws on a zero-norm row.
LabeledDataset project_unit(const RawDataset& raw);
/// Validates an already-normalised raw dataset without rescaling.
LabeledDataset to_labeled(const RawDataset& raw);
void save_csv(const LabeledDataset& data, const std::filesystem::path& path);
std::string format_csv(const LabeledDataset& data);

/// Versioned binary container: magic "NTRFDSET", u32 version, u64 n, u64 d,
/// u64 seed, n*d little-endian f64 (row-major), n int8 labels.
void save_dataset(const LabeledDataset& data, const std::filesystem::path& path);
LabeledDataset load_dataset(const std::filesystem::path& path);

}  // namespace ntrflab
