#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mafin/augmodel.hpp"
#include "mafin/core.hpp"
#include "mafin/ingest.hpp"
#include "mafin/providers.hpp"

namespace mafin {

enum class ScorerKind { bb_only, aug_only, mafin, lambda_mafin, concat_frozen, linear_transform };

inline constexpr ScorerKind kAllScorerKinds[] = {
    ScorerKind::bb_only,      ScorerKind::aug_only,      ScorerKind::mafin,
    ScorerKind::lambda_mafin, ScorerKind::concat_frozen, ScorerKind::linear_transform};

const char* to_string(ScorerKind kind);
/// Throws UsageError listing the valid kinds.
ScorerKind scorer_kind_from_string(std::string_view name);
std::string valid_scorer_kinds();

bool uses_black_box(ScorerKind kind);
bool uses_augmenting_model(ScorerKind kind);
/// Kinds whose parameters the trainer can update.
bool is_trainable(ScorerKind kind);

/// concat(bb, aug) / sqrt(2). Both inputs must be normalized.
EmbeddingVector mafin_embed(const EmbeddingVector& bb, const EmbeddingVector& aug);

/// concat(bb, aug_raw) / sqrt(1 + ||aug_raw||^2). `bb` must be normalized.
EmbeddingVector lambda_mafin_embed(const EmbeddingVector& bb, const EmbeddingVector& aug_raw);

struct LambdaWeights {
  double bb;   ///< lambda_1
  double aug;  ///< lambda_2
};

/// Implicit weights of the lambda-Mafin dot product given the two raw
/// augmenting norms a and b.
LambdaWeights lambda_weights(double a, double b);

struct TransformGradient {
  std::vector<double> full;   ///< D x D, row-major
  std::vector<double> left;   ///< D x R, row-major
  std::vector<double> right;  ///< D x R, row-major
};

/// e_new = W e_bb, with W dense or factored as W_l W_r^T.
class LinearTransform {
 public:
  enum class Mode : std::uint8_t { full = 0, low_rank = 1 };

  static LinearTransform full(std::size_t dim, std::vector<double> weights);
  static LinearTransform low_rank(std::size_t dim, std::size_t rank, std::vector<double> left,
                                  std::vector<double> right);

  /// W = I + eps * N(0, 1).
  static LinearTransform near_identity(std::size_t dim, std::uint64_t seed, double eps = 1e-3);
  /// W_l = W_r = [I_R; 0] + eps * N(0, 1).
  static LinearTransform near_identity_low_rank(std::size_t dim, std::size_t rank,
                                                std::uint64_t seed, double eps = 1e-3);

  Mode mode() const noexcept { return mode_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t rank() const noexcept { return rank_; }

  std::vector<double>& full_weights() noexcept { return full_; }
  const std::vector<double>& full_weights() const noexcept { return full_; }
  std::vector<double>& left() noexcept { return left_; }
  const std::vector<double>& left() const noexcept { return left_; }
  std::vector<double>& right() noexcept { return right_; }
  const std::vector<double>& right() const noexcept { return right_; }

  /// W x without materializing W in low-rank mode.
  std::vector<double> apply(std::span<const double> x) const;

  /// Accumulates the parameter gradient given d(loss)/d(W x).
  void backward(std::span<const double> x, std::span<const double> upstream,
                TransformGradient& grad) const;

  TransformGradient zero_gradient() const;

  friend bool operator==(const LinearTransform&, const LinearTransform&) = default;

 private:
  LinearTransform() = default;

  Mode mode_ = Mode::full;
  std::size_t dim_ = 0;
  std::size_t rank_ = 0;
  std::vector<double> full_;
  std::vector<double> left_;
  std::vector<double> right_;
};

/// l2_normalize(W bb). Throws NumericError when W bb is the zero vector.
EmbeddingVector linear_transform_embed(const LinearTransform& t, const EmbeddingVector& bb);

/// Gradient with respect to every trainable parameter.
struct GradientBuffer {
  AugGradient aug;
  TransformGradient transform;

  void clear();
};

/// Scorer configuration: one kind plus the components that kind requires.
/// Every kind scores by the cosine of a per-text embedding, so scores are
/// symmetric in (query, passage).
class Scorer {
 public:
  /// Throws UsageError when a required component is missing or has the wrong
  /// mode (mafin/concat_frozen need a normalized model, lambda_mafin an
  /// unnormalized one).
  Scorer(ScorerKind kind, std::shared_ptr<BlackBoxProvider> provider,
         std::shared_ptr<const AugmentingModel> aug = nullptr,
         std::shared_ptr<const LinearTransform> transform = nullptr);

  ScorerKind kind() const noexcept { return kind_; }
  std::string name() const { return to_string(kind_); }
  BlackBoxProvider* provider() const noexcept { return provider_.get(); }
  const AugmentingModel* augmenting_model() const noexcept { return aug_.get(); }
  const LinearTransform* transform() const noexcept { return transform_.get(); }

  /// Scoring embedding for one text.
  EmbeddingVector embed(const std::string& text) const;

  /// Scoring embedding from precomputed parts. `bb` may be null for aug_only
  /// and `features` may be null for kinds that do not use the augmenting model.
  EmbeddingVector combine(const EmbeddingVector* bb, const SparseFeatures* features) const;

  /// Scoring embeddings for many texts; black-box calls are batched.
  std::vector<EmbeddingVector> embed_many(std::span<const std::string> texts) const;

  RelevanceScore score(const std::string& query_text, const std::string& passage_text) const;

 private:
  ScorerKind kind_;
  std::shared_ptr<BlackBoxProvider> provider_;
  std::shared_ptr<const AugmentingModel> aug_;
  std::shared_ptr<const LinearTransform> transform_;
};

/// Precomputed inputs for one text in a training list.
struct TextInputs {
  const EmbeddingVector* bb = nullptr;
  const SparseFeatures* features = nullptr;
};

/// Differentiable scores of one query against a candidate list under a
/// trainable kind. `forward` caches intermediates used by `backward`.
class ListScorer {
 public:
  ListScorer(ScorerKind kind, const AugmentingModel* aug, const LinearTransform* transform);

  std::vector<double> forward(const TextInputs& query, std::span<const TextInputs> candidates);

  /// Accumulates d(loss)/d(params) given d(loss)/d(scores) from the last forward.
  void backward(std::span<const double> dscores, GradientBuffer& grad) const;

 private:
  ScorerKind kind_;
  const AugmentingModel* aug_;
  const LinearTransform* transform_;

  TextInputs query_;
  std::vector<TextInputs> candidates_;
  Encoded query_enc_;
  std::vector<Encoded> cand_enc_;
  std::vector<double> query_t_;
  std::vector<std::vector<double>> cand_t_;
  std::vector<double> scores_;
};

struct RankedEntry {
  DocId doc;
  RelevanceScore score;
  friend bool operator==(const RankedEntry&, const RankedEntry&) = default;
};

/// Retrieval result for one query: scores non-increasing, ties by ascending DocId.
struct RankedList {
  QueryId query;
  std::vector<RankedEntry> entries;
  friend bool operator==(const RankedList&, const RankedList&) = default;
};

/// Scoring embeddings for a whole corpus under one scorer state.
struct CorpusIndex {
  std::vector<DocId> ids;
  std::vector<EmbeddingVector> embeddings;
};

CorpusIndex build_index(const Scorer& scorer, const Corpus& corpus, bool include_title = true);

/// Exact brute-force top-K with a bounded heap. Throws UsageError on K == 0
/// and DataError on an empty index.
RankedList retrieve_topk(const CorpusIndex& index, const QueryId& query,
                         const EmbeddingVector& query_embedding, std::size_t k);

/// Top-K over precomputed scores (one per index entry).
RankedList topk_from_scores(const std::vector<DocId>& ids, std::span<const double> scores,
                            const QueryId& query, std::size_t k);

RankedList retrieve_topk(const Scorer& scorer, const Query& query, const Corpus& corpus,
                         std::size_t k, bool include_title = true);

/// TSV: query-id, doc-id, rank (from 1), score.
void write_ranked_tsv(std::ostream& out, std::span<const RankedList> lists);
std::vector<RankedList> read_ranked_tsv(std::istream& in);

}  // namespace mafin
