#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "mafin/augmodel.hpp"
#include "mafin/diagnostics.hpp"
#include "mafin/evalx.hpp"
#include "mafin/ingest.hpp"
#include "mafin/providers.hpp"
#include "mafin/ranking.hpp"
#include "mafin/scoring.hpp"

namespace mafin {

enum class OptimizerKind { sgd, adam };

const char* to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(std::string_view name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double delta = 1e-8;

  void validate() const;
};

/// Sgd or Adam over the augmenting weights and the linear transform.
/// Augmenting-model moments are kept per feature column and updated only for
/// columns present in the step's gradient.
class OptimizerState {
 public:
  explicit OptimizerState(OptimizerConfig config = {});

  const OptimizerConfig& config() const noexcept { return config_; }
  std::uint64_t steps() const noexcept { return steps_; }

  void step(AugmentingModel* aug, LinearTransform* transform, const GradientBuffer& grad);

 private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  void update(std::span<double> params, std::span<const double> grad, Moments& mom);

  OptimizerConfig config_;
  std::uint64_t steps_ = 0;
  double bias1_ = 1.0;
  double bias2_ = 1.0;
  std::unordered_map<std::uint32_t, Moments> aug_moments_;
  Moments full_, left_, right_;
};

struct EarlyStopState {
  std::optional<double> best;
  std::size_t best_epoch = 0;
  std::size_t counter = 0;
  std::size_t limit = 4;
  std::string metric = "NDCG@10";

  /// Records one epoch's validation value. Returns true when it is a new best
  /// (the first epoch always is). Strict improvement is required.
  bool observe(std::size_t epoch, double value);
  bool should_stop() const noexcept { return counter >= limit; }
};

struct TrainerConfig {
  OptimizerConfig optimizer;
  std::size_t max_epochs = 100;
  std::size_t patience = 4;
  std::string monitor = "NDCG@10";
  std::vector<std::size_t> validation_cutoffs = {1, 3, 5, 10};
  bool include_title = true;
  std::uint64_t seed = 0;
  /// Best-epoch weights are written here when non-empty.
  std::string checkpoint_path;

  void validate() const;
  nlohmann::json to_json() const;
};

/// Parameters the trainer updates. Which members are used depends on the kind.
struct ModelState {
  std::shared_ptr<AugmentingModel> aug;
  std::shared_ptr<LinearTransform> transform;

  /// Deep copy.
  ModelState clone() const;
};

/// Training and validation queries with their labels. Unsupervised runs fill
/// the training side from synthetic pairs.
struct TrainingData {
  const Corpus* corpus = nullptr;
  std::vector<Query> train_queries;
  Qrels train_qrels;
  std::vector<Query> validation_queries;
  Qrels validation_qrels;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;  ///< mean over the epoch's steps
  std::map<std::string, double> validation;
  bool improved = false;
};

struct TrainReport {
  std::string scorer;
  LossConfig loss;
  TrainerConfig trainer;
  std::vector<EpochRecord> epochs;
  std::size_t stopping_epoch = 0;
  std::size_t best_epoch = 0;
  double best_metric = 0.0;
  std::string stop_reason;  ///< "patience" or "max_epochs"
  std::string best_checkpoint;
  std::map<std::string, std::uint64_t> seeds;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
};

struct TrainResult {
  TrainReport report;
  ModelState best;  ///< weights from the best validation epoch
};

/// Runs the epoch loop for a trainable scorer kind. `initial` is not modified.
/// The provider may be null for aug_only.
TrainResult train(ScorerKind kind, std::shared_ptr<BlackBoxProvider> provider,
                  const ModelState& initial, const TrainingData& data, const LossConfig& loss,
                  const TrainerConfig& config, Diagnostics* diag = nullptr);

inline const std::vector<double> kDefaultSmoothingGrid = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5};

struct GridSearchResult {
  double best_smoothing = 0.0;
  std::size_t best_index = 0;
  std::vector<double> grid;
  std::vector<TrainReport> reports;  ///< one per grid value, in grid order
  ModelState best;

  nlohmann::json to_json() const;
};

/// Trains once per smoothing value from the same initial state and seed, and
/// keeps the one with the highest monitored validation metric (ties go to the
/// smaller value).
GridSearchResult grid_search_smoothing(ScorerKind kind, std::shared_ptr<BlackBoxProvider> provider,
                                       const ModelState& initial, const TrainingData& data,
                                       const LossConfig& base_loss, const TrainerConfig& config,
                                       std::span<const double> grid = kDefaultSmoothingGrid,
                                       Diagnostics* diag = nullptr);

nlohmann::json to_json(const LossConfig& loss);

}  // namespace mafin
