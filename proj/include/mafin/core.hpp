#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace mafin {

using DocId = std::string;
using QueryId = std::string;

/// Relevance scores are plain doubles; cosine-derived values lie in [-1, 1].
using RelevanceScore = double;

/// Tolerance on | ||v|| - 1 | under which a vector is flagged as normalized.
inline constexpr double kNormTolerance = 1e-6;

/// Dense, finite, fixed-dimension embedding. The normalized flag is derived
/// from the values on construction and is never stale.
class EmbeddingVector {
 public:
  EmbeddingVector() = default;

  /// Throws UsageError on empty input and NumericError on non-finite entries.
  explicit EmbeddingVector(std::vector<double> values);

  static EmbeddingVector zeros(std::size_t dim);
  /// Canonical basis vector e_index.
  static EmbeddingVector basis(std::size_t dim, std::size_t index);

  std::size_t dim() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  bool normalized() const noexcept { return normalized_; }
  double norm() const noexcept { return norm_; }

  friend bool operator==(const EmbeddingVector& a, const EmbeddingVector& b) {
    return a.values_ == b.values_;
  }

 private:
  std::vector<double> values_;
  double norm_ = 0.0;
  bool normalized_ = false;
};

/// Index-ascending dot product.
double dot(std::span<const double> a, std::span<const double> b);
double dot(const EmbeddingVector& a, const EmbeddingVector& b);

/// Euclidean norm, index-ascending accumulation.
double l2_norm(std::span<const double> a);

/// Cosine similarity. Returns the plain dot product when both inputs are
/// flagged normalized. Throws NumericError on zero-norm input.
RelevanceScore cosine(const EmbeddingVector& a, const EmbeddingVector& b);

/// a / ||a||. Throws NumericError on the zero vector.
EmbeddingVector l2_normalize(const EmbeddingVector& a);

/// Concatenation scaled by a constant factor.
EmbeddingVector concat_scaled(const EmbeddingVector& a, const EmbeddingVector& b, double scale);

}  // namespace mafin
