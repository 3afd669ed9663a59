#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mafin/core.hpp"

namespace mafin {

/// Sparse feature vector, indices strictly ascending.
struct SparseFeatures {
  std::vector<std::uint32_t> index;
  std::vector<double> value;

  std::size_t nnz() const noexcept { return index.size(); }
  friend bool operator==(const SparseFeatures&, const SparseFeatures&) = default;
};

/// Signed feature hashing of lower-cased character 3/4/5-grams and word
/// unigrams into a power-of-two index space. Counts are scaled by 1/sqrt(nnz).
class FeatureHasher {
 public:
  static constexpr std::uint32_t kDefaultFeatureDim = 1u << 18;

  explicit FeatureHasher(std::uint32_t feature_dim = kDefaultFeatureDim, std::uint64_t seed = 0);

  std::uint32_t feature_dim() const noexcept { return feature_dim_; }
  std::uint64_t seed() const noexcept { return seed_; }

  /// Throws UsageError on empty text.
  SparseFeatures featurize(std::string_view text) const;

 private:
  std::uint32_t feature_dim_;
  std::uint64_t seed_;
};

enum class EmbeddingMode : std::uint8_t { normalized = 0, unnormalized = 1 };

const char* to_string(EmbeddingMode mode);
EmbeddingMode embedding_mode_from_string(std::string_view name);

/// Output of one forward pass; retained so the backward pass can reuse it.
struct Encoded {
  std::vector<double> raw;  ///< W * features
  double raw_norm = 0.0;
  EmbeddingVector emitted;  ///< normalized or raw, per model mode
  bool fallback = false;    ///< normalized mode hit the zero-vector policy
};

/// Gradient w.r.t. the augmenting weights, stored by feature column.
class AugGradient {
 public:
  explicit AugGradient(std::size_t rows = 0) : rows_(rows) {}

  std::size_t rows() const noexcept { return rows_; }
  /// Column for feature f, created zeroed on first use.
  std::span<double> column(std::uint32_t feature);
  double get(std::size_t row, std::uint32_t feature) const;
  const std::unordered_map<std::uint32_t, std::vector<double>>& columns() const noexcept {
    return columns_;
  }
  void clear() { columns_.clear(); }
  bool empty() const noexcept { return columns_.empty(); }
  void scale(double factor);
  void add(const AugGradient& other);
  double squared_norm() const;

 private:
  std::size_t rows_;
  std::unordered_map<std::uint32_t, std::vector<double>> columns_;
};

/// Trainable encoder: a single linear map from hashed features to d_aug
/// dimensions. Normalized mode emits unit vectors (e_theta); unnormalized mode
/// emits the raw map output (e_hat_theta).
///
/// A zero raw vector in normalized mode emits the basis vector (1, 0, ..., 0)
/// and contributes no gradient.
class AugmentingModel {
 public:
  static constexpr std::size_t kDefaultDim = 64;

  /// Zero-initialized weights.
  AugmentingModel(FeatureHasher hasher, std::size_t d_aug, EmbeddingMode mode);

  /// Weights drawn i.i.d. uniform in [-b, b] from `seed`. The bound b is
  /// 1/sqrt(F) in normalized mode. In unnormalized mode b = sqrt(3/d_aug),
  /// which makes the expected raw norm 1 so both halves of the concatenated
  /// embedding start with equal weight.
  static AugmentingModel random(FeatureHasher hasher, std::size_t d_aug, EmbeddingMode mode,
                                std::uint64_t seed);

  std::size_t dim() const noexcept { return d_aug_; }
  std::uint32_t feature_dim() const noexcept { return hasher_.feature_dim(); }
  EmbeddingMode mode() const noexcept { return mode_; }
  const FeatureHasher& hasher() const noexcept { return hasher_; }

  double weight(std::size_t row, std::uint32_t feature) const {
    return weights_[static_cast<std::size_t>(feature) * d_aug_ + row];
  }
  void set_weight(std::size_t row, std::uint32_t feature, double value) {
    weights_[static_cast<std::size_t>(feature) * d_aug_ + row] = value;
  }
  /// Feature-major storage: column f occupies [f*d_aug, (f+1)*d_aug).
  std::span<double> weights() noexcept { return weights_; }
  std::span<const double> weights() const noexcept { return weights_; }

  SparseFeatures featurize(std::string_view text) const { return hasher_.featurize(text); }

  /// Throws NumericError when the result is non-finite.
  Encoded encode(const SparseFeatures& features) const;
  EmbeddingVector encode(std::string_view text) const;

  /// Accumulates d(loss)/dW given `upstream` = d(loss)/d(emitted embedding),
  /// including the normalization Jacobian (I - v v^T)/||raw|| in normalized mode.
  void encode_backward(const SparseFeatures& features, const Encoded& forward,
                       std::span<const double> upstream, AugGradient& grad) const;

  friend bool operator==(const AugmentingModel& a, const AugmentingModel& b) {
    return a.d_aug_ == b.d_aug_ && a.mode_ == b.mode_ &&
           a.hasher_.feature_dim() == b.hasher_.feature_dim() &&
           a.hasher_.seed() == b.hasher_.seed() && a.weights_ == b.weights_;
  }

 private:
  FeatureHasher hasher_;
  std::size_t d_aug_;
  EmbeddingMode mode_;
  std::vector<double> weights_;
};

}  // namespace mafin
