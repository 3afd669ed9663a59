#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "mafin/diagnostics.hpp"
#include "mafin/ingest.hpp"
#include "mafin/rng.hpp"
#include "mafin/scoring.hpp"

namespace mafin {

enum class LossKind { pl_full, top1_kl, infonce };

/// Which score the training softmax consumes for a Mafin-family scorer:
/// the full combined score, or the augmenting model's score alone.
enum class TrainScoreMode { combined_mafin, aug_only };

const char* to_string(LossKind kind);
LossKind loss_kind_from_string(std::string_view name);
const char* to_string(TrainScoreMode mode);
TrainScoreMode train_score_mode_from_string(std::string_view name);

/// Largest list the permutation-enumerating loss accepts.
inline constexpr std::size_t kMaxEnumerationSize = 8;

struct LossConfig {
  LossKind kind = LossKind::infonce;
  double temperature = 1.0;  ///< tau, target side only; ignored by infonce
  double smoothing = 0.0;    ///< epsilon in [0, 0.5], target side only
  std::size_t negatives = 32;  ///< candidate list size M (one positive + M-1 negatives)
  TrainScoreMode train_score = TrainScoreMode::combined_mafin;

  /// Throws UsageError on out-of-range values.
  void validate() const;
};

/// Candidate list for one query: corpus indices and their labels.
struct LabeledList {
  QueryId query;
  std::vector<std::size_t> passages;
  std::vector<int> labels;
  std::size_t positive_index = 0;
};

/// Loss value and its gradient with respect to the scores.
struct LossValue {
  double loss = 0.0;
  std::vector<double> dscores;
};

double log_sum_exp(std::span<const double> x);

/// Plackett-Luce log-probability of `perm` (perm[r] = item placed at rank r).
double pl_log_prob(std::span<const double> scores, std::span<const std::size_t> perm);
double pl_prob(std::span<const double> scores, std::span<const std::size_t> perm);

/// Cross-entropy -sum_pi p_s(pi) log p_theta(pi) over all K! permutations,
/// with p_s the Plackett-Luce distribution of labels / tau mixed with the
/// uniform permutation distribution at rate `smoothing`. The entropy of p_s
/// is omitted. Throws UsageError when K > kMaxEnumerationSize.
LossValue pl_kl_loss(std::span<const int> labels, std::span<const double> scores, double tau,
                     double smoothing = 0.0);

/// softmax(labels / tau), then (1 - eps) p + eps / K.
std::vector<double> top1_target(std::span<const int> labels, double tau, double smoothing);

/// -sum_k target_k log softmax(scores)_k.
LossValue top1_kl_loss(std::span<const double> target, std::span<const double> scores);

/// -log softmax(scores)[positive].
LossValue infonce_loss(std::size_t positive, std::span<const double> scores);

/// Index of the largest label; ties go to the lowest index.
std::size_t argmax_label(std::span<const int> labels);

/// Dispatches on `config.kind`.
LossValue compute_loss(const LossConfig& config, std::span<const int> labels,
                       std::span<const double> scores);

/// One positive (uniform among the query's highest-label passages) plus M-1
/// passages drawn uniformly without replacement from the passages labelled 0
/// for this query, in shuffled order. Falls back to sampling with replacement
/// (and warns) when fewer than M-1 such passages exist.
LabeledList sample_negatives(const QueryId& query, const Qrels& qrels, const Corpus& corpus,
                             std::size_t m, Rng& rng, Diagnostics* diag = nullptr);

/// Forward pass plus (when `grad` is non-null) exact gradient accumulation
/// through the scorer into its trainable parameters. Returns the loss.
double loss_backward(const LossConfig& config, std::span<const int> labels, ListScorer& scorer,
                     const TextInputs& query, std::span<const TextInputs> candidates,
                     GradientBuffer* grad);

}  // namespace mafin
