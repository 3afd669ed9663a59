#include "mafin/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>

#include "mafin/error.hpp"

namespace mafin {

const char* to_string(LossKind kind) {
  switch (kind) {
    case LossKind::pl_full: return "pl_full";
    case LossKind::top1_kl: return "top1_kl";
    case LossKind::infonce: return "infonce";
  }
  return "?";
}

LossKind loss_kind_from_string(std::string_view name) {
  if (name == "pl_full") return LossKind::pl_full;
  if (name == "top1_kl") return LossKind::top1_kl;
  if (name == "infonce") return LossKind::infonce;
  throw UsageError("unknown loss '" + std::string(name) + "'; valid: pl_full, top1_kl, infonce");
}

const char* to_string(TrainScoreMode mode) {
  return mode == TrainScoreMode::combined_mafin ? "combined_mafin" : "aug_only";
}

TrainScoreMode train_score_mode_from_string(std::string_view name) {
  if (name == "combined_mafin") return TrainScoreMode::combined_mafin;
  if (name == "aug_only") return TrainScoreMode::aug_only;
  throw UsageError("unknown train-score mode '" + std::string(name) +
                   "'; valid: combined_mafin, aug_only");
}

void LossConfig::validate() const {
  if (kind != LossKind::infonce && !(temperature > 0.0 && std::isfinite(temperature))) {
    throw UsageError("temperature must be positive");
  }
  if (!(smoothing >= 0.0 && smoothing <= 0.5)) {
    throw UsageError("label smoothing must lie in [0, 0.5]");
  }
  if (negatives < 2) throw UsageError("candidate list size M must be >= 2");
  if (kind == LossKind::pl_full && negatives > kMaxEnumerationSize) {
    throw UsageError("pl_full enumerates permutations and supports M <= 8; use top1_kl");
  }
}

double log_sum_exp(std::span<const double> x) {
  if (x.empty()) throw UsageError("log_sum_exp of an empty list");
  const double m = *std::max_element(x.begin(), x.end());
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

namespace {

void check_perm(std::size_t k, std::span<const std::size_t> perm) {
  if (perm.size() != k) throw UsageError("permutation length differs from score count");
  std::vector<bool> seen(k, false);
  for (auto p : perm) {
    if (p >= k || seen[p]) throw UsageError("not a permutation");
    seen[p] = true;
  }
}

std::vector<double> softmax(std::span<const double> x) {
  if (x.empty()) throw UsageError("softmax of an empty list");
  const double m = *std::max_element(x.begin(), x.end());
  std::vector<double> p(x.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += p[i] = std::exp(x[i] - m);
  for (double& v : p) v /= s;
  return p;
}

}  // namespace

double pl_log_prob(std::span<const double> scores, std::span<const std::size_t> perm) {
  check_perm(scores.size(), perm);
  double total = 0.0;
  std::vector<double> rest;
  for (std::size_t r = 0; r < perm.size(); ++r) {
    rest.clear();
    for (std::size_t u = r; u < perm.size(); ++u) rest.push_back(scores[perm[u]]);
    total += scores[perm[r]] - log_sum_exp(rest);
  }
  return total;
}

double pl_prob(std::span<const double> scores, std::span<const std::size_t> perm) {
  return std::exp(pl_log_prob(scores, perm));
}

LossValue pl_kl_loss(std::span<const int> labels, std::span<const double> scores, double tau,
                     double smoothing) {
  const std::size_t k = scores.size();
  if (labels.size() != k) throw DimensionError("labels and scores differ in length");
  if (k > kMaxEnumerationSize) {
    throw UsageError("pl_kl_loss enumerates K! permutations and supports K <= 8; use top1_kl");
  }
  if (k == 0) throw UsageError("empty candidate list");
  if (!(tau > 0.0)) throw UsageError("temperature must be positive");

  std::vector<double> target_scores(k);
  for (std::size_t i = 0; i < k; ++i) target_scores[i] = labels[i] / tau;
  double n_perms = 1.0;
  for (std::size_t i = 2; i <= k; ++i) n_perms *= static_cast<double>(i);

  LossValue out;
  out.dscores.assign(k, 0.0);
  std::vector<std::size_t> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<double> rest;
  do {
    const double ps = (1.0 - smoothing) * pl_prob(target_scores, perm) + smoothing / n_perms;
    if (ps == 0.0) continue;
    out.loss -= ps * pl_log_prob(scores, perm);
    // d log p_theta / d s_j = sum_r [1(perm[r] == j) - softmax over ranks >= r].
    for (std::size_t r = 0; r < k; ++r) {
      rest.clear();
      for (std::size_t u = r; u < k; ++u) rest.push_back(scores[perm[u]]);
      const double lse = log_sum_exp(rest);
      out.dscores[perm[r]] -= ps;
      for (std::size_t u = r; u < k; ++u) out.dscores[perm[u]] += ps * std::exp(scores[perm[u]] - lse);
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return out;
}

std::vector<double> top1_target(std::span<const int> labels, double tau, double smoothing) {
  if (labels.empty()) throw UsageError("empty label list");
  if (!(tau > 0.0)) throw UsageError("temperature must be positive");
  if (!(smoothing >= 0.0 && smoothing <= 0.5)) throw UsageError("smoothing must lie in [0, 0.5]");
  std::vector<double> z(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) z[i] = labels[i] / tau;
  auto p = softmax(z);
  const double uniform = smoothing / static_cast<double>(labels.size());
  for (double& v : p) v = (1.0 - smoothing) * v + uniform;
  return p;
}

LossValue top1_kl_loss(std::span<const double> target, std::span<const double> scores) {
  if (target.size() != scores.size()) throw DimensionError("target and scores differ in length");
  const double total = std::accumulate(target.begin(), target.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-9) throw UsageError("target distribution must sum to 1");
  const double lse = log_sum_exp(scores);
  LossValue out;
  out.dscores.resize(scores.size());
  for (std::size_t k = 0; k < scores.size(); ++k) {
    if (target[k] != 0.0) out.loss -= target[k] * (scores[k] - lse);
    out.dscores[k] = std::exp(scores[k] - lse) - target[k];
  }
  return out;
}

LossValue infonce_loss(std::size_t positive, std::span<const double> scores) {
  if (positive >= scores.size()) throw UsageError("positive index out of range");
  const double lse = log_sum_exp(scores);
  LossValue out;
  out.loss = -(scores[positive] - lse);
  out.dscores.resize(scores.size());
  for (std::size_t k = 0; k < scores.size(); ++k) out.dscores[k] = std::exp(scores[k] - lse);
  out.dscores[positive] -= 1.0;
  return out;
}

std::size_t argmax_label(std::span<const int> labels) {
  if (labels.empty()) throw UsageError("empty label list");
  std::size_t best = 0;
  for (std::size_t i = 1; i < labels.size(); ++i) {
    if (labels[i] > labels[best]) best = i;
  }
  return best;
}

LossValue compute_loss(const LossConfig& config, std::span<const int> labels,
                       std::span<const double> scores) {
  switch (config.kind) {
    case LossKind::pl_full: return pl_kl_loss(labels, scores, config.temperature, config.smoothing);
    case LossKind::top1_kl:
      return top1_kl_loss(top1_target(labels, config.temperature, config.smoothing), scores);
    case LossKind::infonce:
      if (config.smoothing > 0.0) {
        // Smoothed delta target: (1 - eps) onehot + eps / K.
        std::vector<double> target(labels.size(), config.smoothing / labels.size());
        target[argmax_label(labels)] += 1.0 - config.smoothing;
        return top1_kl_loss(target, scores);
      }
      return infonce_loss(argmax_label(labels), scores);
  }
  throw UsageError("unreachable loss kind");
}

LabeledList sample_negatives(const QueryId& query, const Qrels& qrels, const Corpus& corpus,
                             std::size_t m, Rng& rng, Diagnostics* diag) {
  if (m < 2) throw UsageError("candidate list size M must be >= 2");
  const auto& judged = qrels.judged(query);
  int top = 0;
  for (const auto& [doc, rel] : judged) {
    if (rel > top && corpus.contains(doc)) top = rel;
  }
  if (top == 0) throw DataError("query '" + query + "' has no relevant passage in the corpus");

  std::vector<std::size_t> best;
  std::unordered_set<std::size_t> relevant;
  for (const auto& [doc, rel] : judged) {
    auto idx = corpus.index_of(doc);
    if (!idx || rel <= 0) continue;
    relevant.insert(*idx);
    if (rel == top) best.push_back(*idx);
  }
  std::sort(best.begin(), best.end());
  const std::size_t positive = best[rng.uniform_index(best.size())];

  const std::size_t eligible = corpus.size() - relevant.size();
  const std::size_t wanted = m - 1;
  std::vector<std::size_t> negatives;
  negatives.reserve(wanted);
  if (eligible == 0) throw DataError("query '" + query + "' has no label-0 passages to sample");
  if (eligible < wanted) {
    warn(diag, "query '" + query + "': only " + std::to_string(eligible) +
                   " label-0 passages for " + std::to_string(wanted) +
                   " negatives; sampling with replacement");
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      if (relevant.count(i) == 0) pool.push_back(i);
    }
    for (std::size_t j = 0; j < wanted; ++j) negatives.push_back(pool[rng.uniform_index(pool.size())]);
  } else if (2 * eligible >= corpus.size() && eligible >= 2 * wanted) {
    // Rejection sampling: uniform without replacement over label-0 passages.
    std::unordered_set<std::size_t> taken;
    while (negatives.size() < wanted) {
      const std::size_t i = rng.uniform_index(corpus.size());
      if (relevant.count(i) != 0 || !taken.insert(i).second) continue;
      negatives.push_back(i);
    }
  } else {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      if (relevant.count(i) == 0) pool.push_back(i);
    }
    for (std::size_t j = 0; j < wanted; ++j) {
      const std::size_t pick = j + rng.uniform_index(pool.size() - j);
      std::swap(pool[j], pool[pick]);
      negatives.push_back(pool[j]);
    }
  }

  LabeledList out;
  out.query = query;
  out.passages.push_back(positive);
  out.passages.insert(out.passages.end(), negatives.begin(), negatives.end());
  rng.shuffle(out.passages);
  out.labels.assign(out.passages.size(), 0);
  for (std::size_t i = 0; i < out.passages.size(); ++i) {
    if (out.passages[i] == positive) {
      out.labels[i] = top;
      out.positive_index = i;
      break;
    }
  }
  return out;
}

double loss_backward(const LossConfig& config, std::span<const int> labels, ListScorer& scorer,
                     const TextInputs& query, std::span<const TextInputs> candidates,
                     GradientBuffer* grad) {
  if (labels.size() != candidates.size()) throw DimensionError("labels/candidates size mismatch");
  if (labels.size() < 2) throw UsageError("candidate list needs at least 2 entries");
  const auto scores = scorer.forward(query, candidates);
  const auto value = compute_loss(config, labels, scores);
  if (grad != nullptr) scorer.backward(value.dscores, *grad);
  return value.loss;
}

}  // namespace mafin
