#include "mafin/core.hpp"

#include <cmath>

#include "mafin/error.hpp"

namespace mafin {

EmbeddingVector::EmbeddingVector(std::vector<double> values) : values_(std::move(values)) {
  if (values_.empty()) throw UsageError("embedding must have dim >= 1");
  for (double v : values_) {
    if (!std::isfinite(v)) throw NumericError("embedding contains a non-finite value");
  }
  norm_ = l2_norm(values_);
  normalized_ = std::abs(norm_ - 1.0) <= kNormTolerance;
}

EmbeddingVector EmbeddingVector::zeros(std::size_t dim) {
  return EmbeddingVector(std::vector<double>(dim, 0.0));
}

EmbeddingVector EmbeddingVector::basis(std::size_t dim, std::size_t index) {
  if (index >= dim) throw UsageError("basis index out of range");
  std::vector<double> v(dim, 0.0);
  v[index] = 1.0;
  return EmbeddingVector(std::move(v));
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("dimension mismatch: " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
  return sum;
}

double dot(const EmbeddingVector& a, const EmbeddingVector& b) {
  return dot(a.values(), b.values());
}

double l2_norm(std::span<const double> a) {
  double sum = 0.0;
  for (double v : a) sum += v * v;
  return std::sqrt(sum);
}

RelevanceScore cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
  const double d = dot(a, b);
  if (a.norm() == 0.0 || b.norm() == 0.0) {
    throw NumericError("cosine of a zero-norm embedding is undefined");
  }
  if (a.normalized() && b.normalized()) return d;
  return d / (a.norm() * b.norm());
}

EmbeddingVector l2_normalize(const EmbeddingVector& a) {
  const double n = a.norm();
  if (n == 0.0) throw NumericError("cannot normalize the zero vector");
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v /= n;
  return EmbeddingVector(std::move(out));
}

EmbeddingVector concat_scaled(const EmbeddingVector& a, const EmbeddingVector& b, double scale) {
  std::vector<double> out;
  out.reserve(a.dim() + b.dim());
  for (double v : a.values()) out.push_back(v * scale);
  for (double v : b.values()) out.push_back(v * scale);
  return EmbeddingVector(std::move(out));
}

}  // namespace mafin
