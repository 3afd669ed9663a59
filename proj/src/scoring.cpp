#include "mafin/scoring.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <queue>
#include <sstream>

#include "mafin/error.hpp"
#include "mafin/rng.hpp"

namespace mafin {

namespace {

// Gradient of cos(a, b) with respect to a.
void cosine_grad(std::span<const double> a, double norm_a, double norm_b, double cos_ab,
                 std::span<const double> b, double scale, std::vector<double>& out) {
  const double inv = 1.0 / (norm_a * norm_b);
  const double self = cos_ab / (norm_a * norm_a);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] += scale * (b[i] * inv - self * a[i]);
}

bool better(const RankedEntry& a, const RankedEntry& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.doc < b.doc;
}

}  // namespace

const char* to_string(ScorerKind kind) {
  switch (kind) {
    case ScorerKind::bb_only: return "bb_only";
    case ScorerKind::aug_only: return "aug_only";
    case ScorerKind::mafin: return "mafin";
    case ScorerKind::lambda_mafin: return "lambda_mafin";
    case ScorerKind::concat_frozen: return "concat_frozen";
    case ScorerKind::linear_transform: return "linear_transform";
  }
  return "?";
}

std::string valid_scorer_kinds() {
  std::string s;
  for (auto k : kAllScorerKinds) {
    if (!s.empty()) s += ", ";
    s += to_string(k);
  }
  return s;
}

ScorerKind scorer_kind_from_string(std::string_view name) {
  for (auto k : kAllScorerKinds) {
    if (name == to_string(k)) return k;
  }
  throw UsageError("unknown scorer '" + std::string(name) + "'; valid kinds: " +
                   valid_scorer_kinds());
}

bool uses_black_box(ScorerKind kind) { return kind != ScorerKind::aug_only; }

bool uses_augmenting_model(ScorerKind kind) {
  return kind == ScorerKind::aug_only || kind == ScorerKind::mafin ||
         kind == ScorerKind::lambda_mafin || kind == ScorerKind::concat_frozen;
}

bool is_trainable(ScorerKind kind) {
  return kind == ScorerKind::aug_only || kind == ScorerKind::mafin ||
         kind == ScorerKind::lambda_mafin || kind == ScorerKind::linear_transform;
}

EmbeddingVector mafin_embed(const EmbeddingVector& bb, const EmbeddingVector& aug) {
  if (!bb.normalized()) throw UsageError("mafin_embed: black-box embedding must be normalized");
  if (!aug.normalized()) throw UsageError("mafin_embed: augmenting embedding must be normalized");
  return concat_scaled(bb, aug, 1.0 / std::sqrt(2.0));
}

EmbeddingVector lambda_mafin_embed(const EmbeddingVector& bb, const EmbeddingVector& aug_raw) {
  if (!bb.normalized()) {
    throw UsageError("lambda_mafin_embed: black-box embedding must be normalized");
  }
  const double a = aug_raw.norm();
  return concat_scaled(bb, aug_raw, 1.0 / std::sqrt(1.0 + a * a));
}

LambdaWeights lambda_weights(double a, double b) {
  if (!std::isfinite(a) || !std::isfinite(b) || a < 0.0 || b < 0.0) {
    throw UsageError("lambda_weights requires finite non-negative norms");
  }
  const double denom = std::sqrt(1.0 + a * a) * std::sqrt(1.0 + b * b);
  return {1.0 / denom, a * b / denom};
}

LinearTransform LinearTransform::full(std::size_t dim, std::vector<double> weights) {
  if (dim == 0) throw UsageError("transform dimension must be positive");
  if (weights.size() != dim * dim) throw DimensionError("full transform needs D*D weights");
  for (double w : weights) {
    if (!std::isfinite(w)) throw NumericError("transform weights must be finite");
  }
  LinearTransform t;
  t.mode_ = Mode::full;
  t.dim_ = dim;
  t.full_ = std::move(weights);
  return t;
}

LinearTransform LinearTransform::low_rank(std::size_t dim, std::size_t rank,
                                          std::vector<double> left, std::vector<double> right) {
  if (dim == 0 || rank == 0) throw UsageError("transform dimension and rank must be positive");
  if (rank >= dim) throw UsageError("low-rank transform requires rank < dim");
  if (left.size() != dim * rank || right.size() != dim * rank) {
    throw DimensionError("low-rank factors must be D x R");
  }
  for (double w : left) {
    if (!std::isfinite(w)) throw NumericError("transform weights must be finite");
  }
  for (double w : right) {
    if (!std::isfinite(w)) throw NumericError("transform weights must be finite");
  }
  LinearTransform t;
  t.mode_ = Mode::low_rank;
  t.dim_ = dim;
  t.rank_ = rank;
  t.left_ = std::move(left);
  t.right_ = std::move(right);
  return t;
}

LinearTransform LinearTransform::near_identity(std::size_t dim, std::uint64_t seed, double eps) {
  Rng rng(derive_seed(seed, "transform.init"));
  std::vector<double> w(dim * dim);
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = 0; j < dim; ++j) w[i * dim + j] = (i == j ? 1.0 : 0.0) + eps * rng.normal();
  }
  return full(dim, std::move(w));
}

LinearTransform LinearTransform::near_identity_low_rank(std::size_t dim, std::size_t rank,
                                                        std::uint64_t seed, double eps) {
  Rng rng(derive_seed(seed, "transform.init"));
  auto factor = [&] {
    std::vector<double> f(dim * rank);
    for (std::size_t i = 0; i < dim; ++i) {
      for (std::size_t j = 0; j < rank; ++j) f[i * rank + j] = (i == j ? 1.0 : 0.0) + eps * rng.normal();
    }
    return f;
  };
  auto left = factor();
  auto right = factor();
  return low_rank(dim, rank, std::move(left), std::move(right));
}

std::vector<double> LinearTransform::apply(std::span<const double> x) const {
  if (x.size() != dim_) throw DimensionError("transform input dimension mismatch");
  std::vector<double> out(dim_, 0.0);
  if (mode_ == Mode::full) {
    for (std::size_t i = 0; i < dim_; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < dim_; ++j) s += full_[i * dim_ + j] * x[j];
      out[i] = s;
    }
    return out;
  }
  std::vector<double> z(rank_, 0.0);
  for (std::size_t i = 0; i < dim_; ++i) {
    for (std::size_t j = 0; j < rank_; ++j) z[j] += right_[i * rank_ + j] * x[i];
  }
  for (std::size_t i = 0; i < dim_; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < rank_; ++j) s += left_[i * rank_ + j] * z[j];
    out[i] = s;
  }
  return out;
}

TransformGradient LinearTransform::zero_gradient() const {
  TransformGradient g;
  if (mode_ == Mode::full) {
    g.full.assign(dim_ * dim_, 0.0);
  } else {
    g.left.assign(dim_ * rank_, 0.0);
    g.right.assign(dim_ * rank_, 0.0);
  }
  return g;
}

void LinearTransform::backward(std::span<const double> x, std::span<const double> upstream,
                               TransformGradient& grad) const {
  if (x.size() != dim_ || upstream.size() != dim_) {
    throw DimensionError("transform backward dimension mismatch");
  }
  if (mode_ == Mode::full) {
    if (grad.full.size() != dim_ * dim_) grad.full.assign(dim_ * dim_, 0.0);
    for (std::size_t i = 0; i < dim_; ++i) {
      for (std::size_t j = 0; j < dim_; ++j) grad.full[i * dim_ + j] += upstream[i] * x[j];
    }
    return;
  }
  if (grad.left.size() != dim_ * rank_) grad.left.assign(dim_ * rank_, 0.0);
  if (grad.right.size() != dim_ * rank_) grad.right.assign(dim_ * rank_, 0.0);
  std::vector<double> z(rank_, 0.0);
  for (std::size_t i = 0; i < dim_; ++i) {
    for (std::size_t j = 0; j < rank_; ++j) z[j] += right_[i * rank_ + j] * x[i];
  }
  std::vector<double> gz(rank_, 0.0);
  for (std::size_t i = 0; i < dim_; ++i) {
    for (std::size_t j = 0; j < rank_; ++j) {
      grad.left[i * rank_ + j] += upstream[i] * z[j];
      gz[j] += left_[i * rank_ + j] * upstream[i];
    }
  }
  for (std::size_t i = 0; i < dim_; ++i) {
    for (std::size_t j = 0; j < rank_; ++j) grad.right[i * rank_ + j] += x[i] * gz[j];
  }
}

EmbeddingVector linear_transform_embed(const LinearTransform& t, const EmbeddingVector& bb) {
  EmbeddingVector out(t.apply(bb.values()));
  if (out.norm() == 0.0) {
    throw NumericError("linear transform collapsed the embedding to zero");
  }
  return l2_normalize(out);
}

void GradientBuffer::clear() {
  aug.clear();
  std::fill(transform.full.begin(), transform.full.end(), 0.0);
  std::fill(transform.left.begin(), transform.left.end(), 0.0);
  std::fill(transform.right.begin(), transform.right.end(), 0.0);
}

Scorer::Scorer(ScorerKind kind, std::shared_ptr<BlackBoxProvider> provider,
               std::shared_ptr<const AugmentingModel> aug,
               std::shared_ptr<const LinearTransform> transform)
    : kind_(kind), provider_(std::move(provider)), aug_(std::move(aug)),
      transform_(std::move(transform)) {
  const std::string name = to_string(kind_);
  if (uses_black_box(kind_) && !provider_) {
    throw UsageError(name + " scorer requires a black-box provider");
  }
  if (uses_augmenting_model(kind_) && !aug_) {
    throw UsageError(name + " scorer requires an augmenting model");
  }
  if ((kind_ == ScorerKind::mafin || kind_ == ScorerKind::concat_frozen) &&
      aug_->mode() != EmbeddingMode::normalized) {
    throw UsageError(name + " scorer requires a normalized augmenting model");
  }
  if (kind_ == ScorerKind::lambda_mafin && aug_->mode() != EmbeddingMode::unnormalized) {
    throw UsageError("lambda_mafin scorer requires an unnormalized augmenting model");
  }
  if (kind_ == ScorerKind::linear_transform) {
    if (!transform_) throw UsageError("linear_transform scorer requires a transform");
    if (transform_->dim() != provider_->embed_dim()) {
      throw DimensionError("transform dimension does not match the black-box provider");
    }
  }
}

EmbeddingVector Scorer::combine(const EmbeddingVector* bb, const SparseFeatures* features) const {
  auto aug_emitted = [&] {
    if (features == nullptr) throw UsageError("augmenting features required");
    return aug_->encode(*features).emitted;
  };
  auto need_bb = [&]() -> const EmbeddingVector& {
    if (bb == nullptr) throw UsageError("black-box embedding required");
    return *bb;
  };
  switch (kind_) {
    case ScorerKind::bb_only: return need_bb();
    case ScorerKind::aug_only: {
      auto e = aug_emitted();
      return e.normalized() ? e : l2_normalize(e);
    }
    case ScorerKind::mafin:
    case ScorerKind::concat_frozen: return mafin_embed(need_bb(), aug_emitted());
    case ScorerKind::lambda_mafin: return lambda_mafin_embed(need_bb(), aug_emitted());
    case ScorerKind::linear_transform: return linear_transform_embed(*transform_, need_bb());
  }
  throw UsageError("unreachable scorer kind");
}

EmbeddingVector Scorer::embed(const std::string& text) const {
  return std::move(embed_many(std::span<const std::string>(&text, 1)).front());
}

std::vector<EmbeddingVector> Scorer::embed_many(std::span<const std::string> texts) const {
  std::vector<EmbeddingVector> bb;
  if (uses_black_box(kind_)) bb = provider_->embed_all(texts);
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    SparseFeatures features;
    if (uses_augmenting_model(kind_)) features = aug_->featurize(texts[i]);
    out.push_back(combine(bb.empty() ? nullptr : &bb[i], &features));
  }
  return out;
}

RelevanceScore Scorer::score(const std::string& query_text, const std::string& passage_text) const {
  const std::string texts[] = {query_text, passage_text};
  auto e = embed_many(texts);
  return cosine(e[0], e[1]);
}

ListScorer::ListScorer(ScorerKind kind, const AugmentingModel* aug,
                       const LinearTransform* transform)
    : kind_(kind), aug_(aug), transform_(transform) {
  if (kind_ == ScorerKind::concat_frozen) {
    throw UsageError("concat_frozen is not trainable; train aug_only and score with concat_frozen");
  }
  if (uses_augmenting_model(kind_) && aug_ == nullptr) {
    throw UsageError(std::string(to_string(kind_)) + " requires an augmenting model");
  }
  if (kind_ == ScorerKind::mafin && aug_->mode() != EmbeddingMode::normalized) {
    throw UsageError("mafin requires a normalized augmenting model");
  }
  if (kind_ == ScorerKind::lambda_mafin && aug_->mode() != EmbeddingMode::unnormalized) {
    throw UsageError("lambda_mafin requires an unnormalized augmenting model");
  }
  if (kind_ == ScorerKind::linear_transform && transform_ == nullptr) {
    throw UsageError("linear_transform requires a transform");
  }
}

std::vector<double> ListScorer::forward(const TextInputs& query,
                                        std::span<const TextInputs> candidates) {
  query_ = query;
  candidates_.assign(candidates.begin(), candidates.end());
  scores_.assign(candidates.size(), 0.0);
  cand_enc_.clear();
  cand_t_.clear();

  if (uses_augmenting_model(kind_)) {
    query_enc_ = aug_->encode(*query.features);
    cand_enc_.reserve(candidates.size());
    for (const auto& c : candidates) cand_enc_.push_back(aug_->encode(*c.features));
  }
  if (kind_ == ScorerKind::linear_transform) {
    query_t_ = transform_->apply(query.bb->values());
    if (l2_norm(query_t_) == 0.0) throw NumericError("linear transform collapsed the query");
    for (const auto& c : candidates) {
      cand_t_.push_back(transform_->apply(c.bb->values()));
      if (l2_norm(cand_t_.back()) == 0.0) {
        throw NumericError("linear transform collapsed a candidate");
      }
    }
  }

  for (std::size_t k = 0; k < candidates.size(); ++k) {
    switch (kind_) {
      case ScorerKind::bb_only: scores_[k] = dot(*query.bb, *candidates[k].bb); break;
      case ScorerKind::aug_only: scores_[k] = cosine(query_enc_.emitted, cand_enc_[k].emitted); break;
      case ScorerKind::mafin:
        scores_[k] = 0.5 * (dot(*query.bb, *candidates[k].bb) +
                            dot(query_enc_.emitted, cand_enc_[k].emitted));
        break;
      case ScorerKind::lambda_mafin: {
        const double a = query_enc_.raw_norm;
        const double b = cand_enc_[k].raw_norm;
        const double n = std::sqrt(1.0 + a * a) * std::sqrt(1.0 + b * b);
        scores_[k] = (dot(*query.bb, *candidates[k].bb) + dot(query_enc_.raw, cand_enc_[k].raw)) / n;
        break;
      }
      case ScorerKind::linear_transform: {
        const double nq = l2_norm(query_t_);
        const double nc = l2_norm(cand_t_[k]);
        scores_[k] = dot(query_t_, cand_t_[k]) / (nq * nc);
        break;
      }
      case ScorerKind::concat_frozen: break;
    }
  }
  return scores_;
}

void ListScorer::backward(std::span<const double> dscores, GradientBuffer& grad) const {
  if (dscores.size() != scores_.size()) throw DimensionError("dscores size mismatch");
  const std::size_t n = scores_.size();
  switch (kind_) {
    case ScorerKind::bb_only:
    case ScorerKind::concat_frozen: return;
    case ScorerKind::aug_only:
    case ScorerKind::mafin:
    case ScorerKind::lambda_mafin: {
      const std::size_t d = aug_->dim();
      if (grad.aug.rows() != d) grad.aug = AugGradient(d);
      std::vector<double> gq(d, 0.0);
      for (std::size_t k = 0; k < n; ++k) {
        if (dscores[k] == 0.0) continue;
        std::vector<double> gc(d, 0.0);
        const auto& qe = query_enc_;
        const auto& ce = cand_enc_[k];
        if (kind_ == ScorerKind::aug_only) {
          if (aug_->mode() == EmbeddingMode::normalized) {
            // Both emitted vectors are unit length: the score is their dot product.
            for (std::size_t r = 0; r < d; ++r) {
              gq[r] += dscores[k] * ce.emitted[r];
              gc[r] += dscores[k] * qe.emitted[r];
            }
          } else {
            const auto qv = qe.emitted.values();
            const auto cv = ce.emitted.values();
            cosine_grad(qv, qe.emitted.norm(), ce.emitted.norm(), scores_[k], cv, dscores[k], gq);
            cosine_grad(cv, ce.emitted.norm(), qe.emitted.norm(), scores_[k], qv, dscores[k], gc);
          }
        } else if (kind_ == ScorerKind::mafin) {
          for (std::size_t r = 0; r < d; ++r) {
            gq[r] += 0.5 * dscores[k] * ce.emitted[r];
            gc[r] += 0.5 * dscores[k] * qe.emitted[r];
          }
        } else {
          // s = P / N, P = bb.bb + q.c, N = sqrt(1+a^2) sqrt(1+b^2), a = |q|, b = |c|.
          const double a2 = qe.raw_norm * qe.raw_norm;
          const double b2 = ce.raw_norm * ce.raw_norm;
          const double norm = std::sqrt(1.0 + a2) * std::sqrt(1.0 + b2);
          const double s = scores_[k];
          for (std::size_t r = 0; r < d; ++r) {
            gq[r] += dscores[k] * (ce.raw[r] / norm - s * qe.raw[r] / (1.0 + a2));
            gc[r] += dscores[k] * (qe.raw[r] / norm - s * ce.raw[r] / (1.0 + b2));
          }
        }
        aug_->encode_backward(*candidates_[k].features, ce, gc, grad.aug);
      }
      aug_->encode_backward(*query_.features, query_enc_, gq, grad.aug);
      return;
    }
    case ScorerKind::linear_transform: {
      const std::size_t d = transform_->dim();
      const double nq = l2_norm(query_t_);
      std::vector<double> gq(d, 0.0);
      for (std::size_t k = 0; k < n; ++k) {
        if (dscores[k] == 0.0) continue;
        const double nc = l2_norm(cand_t_[k]);
        std::vector<double> gc(d, 0.0);
        cosine_grad(query_t_, nq, nc, scores_[k], cand_t_[k], dscores[k], gq);
        cosine_grad(cand_t_[k], nc, nq, scores_[k], query_t_, dscores[k], gc);
        transform_->backward(candidates_[k].bb->values(), gc, grad.transform);
      }
      transform_->backward(query_.bb->values(), gq, grad.transform);
      return;
    }
  }
}

CorpusIndex build_index(const Scorer& scorer, const Corpus& corpus, bool include_title) {
  std::vector<std::string> texts;
  texts.reserve(corpus.size());
  CorpusIndex index;
  for (const auto& p : corpus) {
    texts.push_back(p.embed_text(include_title));
    index.ids.push_back(p.id);
  }
  index.embeddings = scorer.embed_many(texts);
  return index;
}

RankedList topk_from_scores(const std::vector<DocId>& ids, std::span<const double> scores,
                            const QueryId& query, std::size_t k) {
  if (k == 0) throw UsageError("K must be >= 1");
  if (ids.empty()) throw DataError("cannot retrieve from an empty corpus");
  if (ids.size() != scores.size()) throw DimensionError("ids/scores size mismatch");
  // Min-heap on "better", so the worst retained entry sits on top.
  auto cmp = [](const RankedEntry& a, const RankedEntry& b) { return better(a, b); };
  std::priority_queue<RankedEntry, std::vector<RankedEntry>, decltype(cmp)> heap(cmp);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    RankedEntry e{ids[i], scores[i]};
    if (heap.size() < k) {
      heap.push(std::move(e));
    } else if (better(e, heap.top())) {
      heap.pop();
      heap.push(std::move(e));
    }
  }
  RankedList out;
  out.query = query;
  out.entries.reserve(heap.size());
  while (!heap.empty()) {
    out.entries.push_back(heap.top());
    heap.pop();
  }
  std::reverse(out.entries.begin(), out.entries.end());
  return out;
}

RankedList retrieve_topk(const CorpusIndex& index, const QueryId& query,
                         const EmbeddingVector& query_embedding, std::size_t k) {
  std::vector<double> scores;
  scores.reserve(index.embeddings.size());
  for (const auto& e : index.embeddings) scores.push_back(cosine(query_embedding, e));
  return topk_from_scores(index.ids, scores, query, k);
}

RankedList retrieve_topk(const Scorer& scorer, const Query& query, const Corpus& corpus,
                         std::size_t k, bool include_title) {
  if (k == 0) throw UsageError("K must be >= 1");
  if (corpus.empty()) throw DataError("cannot retrieve from an empty corpus");
  const auto index = build_index(scorer, corpus, include_title);
  return retrieve_topk(index, query.id, scorer.embed(query.text), k);
}

void write_ranked_tsv(std::ostream& out, std::span<const RankedList> lists) {
  out << "query-id\tdoc-id\trank\tscore\n";
  for (const auto& list : lists) {
    for (std::size_t i = 0; i < list.entries.size(); ++i) {
      out << list.query << '\t' << list.entries[i].doc << '\t' << (i + 1) << '\t'
          << std::setprecision(17) << list.entries[i].score << '\n';
    }
  }
}

std::vector<RankedList> read_ranked_tsv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "query-id\tdoc-id\trank\tscore") {
    throw DataError("ranked list TSV: missing or unknown header");
  }
  std::vector<RankedList> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string q, d, rank, score;
    if (!std::getline(ss, q, '\t') || !std::getline(ss, d, '\t') || !std::getline(ss, rank, '\t') ||
        !std::getline(ss, score, '\t')) {
      throw DataError("ranked list TSV line " + std::to_string(line_no) + ": expected 4 columns");
    }
    if (out.empty() || out.back().query != q) out.push_back(RankedList{q, {}});
    std::size_t r = 0;
    std::from_chars(rank.data(), rank.data() + rank.size(), r);
    if (r != out.back().entries.size() + 1) {
      throw DataError("ranked list TSV line " + std::to_string(line_no) + ": ranks out of order");
    }
    out.back().entries.push_back({d, std::stod(score)});
  }
  return out;
}

}  // namespace mafin
