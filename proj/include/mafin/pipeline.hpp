#pragma once

#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mafin/config.hpp"
#include "mafin/diagnostics.hpp"
#include "mafin/evalx.hpp"
#include "mafin/genqueries.hpp"
#include "mafin/ingest.hpp"
#include "mafin/providers.hpp"
#include "mafin/scoring.hpp"
#include "mafin/trainer.hpp"

namespace mafin {

struct Dataset {
  Corpus corpus;
  QuerySet queries;
  Qrels qrels;             ///< dev qrels, or train qrels in provided-split mode
  Qrels validation_qrels;  ///< provided-split mode only
  Qrels test_qrels;
};

/// Loads the files named in `config` and checks every qrels reference.
Dataset load_dataset(const RunConfig& config, Diagnostics* diag = nullptr);

/// Provided splits when a validation qrels file is configured, otherwise a
/// seeded fraction split of the dev qrels (test from the test qrels file).
QuerySplits resolve_splits(const RunConfig& config, const Dataset& data);

nlohmann::json splits_to_json(const QuerySplits& splits);
QuerySplits splits_from_json(const nlohmann::json& j);
void save_splits(const QuerySplits& splits, const RunConfig& config, const std::string& path);
QuerySplits load_splits(const std::string& path);

/// Builds the configured black-box provider. A configured cache wraps it.
/// When the HTTP token is missing but the cache file exists, the cache alone
/// serves the embeddings.
std::shared_ptr<BlackBoxProvider> make_provider(const RunConfig& config);

/// Augmenting model mode required by a scorer kind.
EmbeddingMode required_mode(ScorerKind kind);

/// Freshly initialized trainable state for `kind`, seeded from `seed`.
ModelState initial_state(ScorerKind kind, const RunConfig& config, std::size_t bb_dim,
                         std::uint64_t seed);

/// Loads the checkpoints named in `config`. Missing files are left null.
ModelState load_state(const RunConfig& config);

Scorer make_scorer(ScorerKind kind, std::shared_ptr<BlackBoxProvider> provider,
                   const ModelState& state);

std::vector<Query> select_queries(const QuerySet& queries, const std::vector<QueryId>& ids);

TrainingData supervised_data(const Dataset& data, const QuerySplits& splits);

/// Training side from synthetic pairs. A seeded `validation_fraction` of the
/// pairs is held out for early stopping, so real qrels are never consulted.
TrainingData unsupervised_data(const Corpus& corpus, const SyntheticPairSet& pairs,
                               double validation_fraction, std::uint64_t seed);

/// Trainer settings resolved from the run config: seed derived from the
/// global seed, title flag shared, metrics cutoffs merged.
TrainerConfig resolved_trainer(const RunConfig& config);

/// One `train` run as the CLI performs it: a single run, or a smoothing grid
/// search when `config.smoothing_grid` is set. Returns the report document
/// with "config", "mode" and either "report" or "grid_search".
nlohmann::json run_training(RunConfig config, bool unsupervised);

/// Checkpoints per scorer kind name, overriding the config paths.
using ModelOverrides = std::map<std::string, std::string>;

ModelState state_for(ScorerKind kind, const RunConfig& config, const ModelOverrides& models);

/// Test queries of the split manifest, else every query judged in `qrels`.
std::vector<QueryId> evaluation_queries(const RunConfig& config, const Dataset& data,
                                        const Qrels& qrels);

/// Evaluates each scorer kind on the test side of the configured dataset.
std::vector<EvalReport> run_evaluation(const RunConfig& config, std::span<const ScorerKind> kinds,
                                       const ModelOverrides& models,
                                       std::vector<std::vector<RankedList>>* ranked_out = nullptr);

}  // namespace mafin
