#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mafin/augmodel.hpp"
#include "mafin/ranking.hpp"
#include "mafin/scoring.hpp"
#include "mafin/trainer.hpp"

namespace mafin {

/// Black-box provider selection. `kind` is one of stub, file, http.
struct ProviderConfig {
  std::string kind = "stub";
  std::uint64_t stub_seed = 0;
  std::size_t stub_dim = 64;
  std::string store_path;  ///< file provider: MAFC cache or JSONL store
  std::string base_url;
  std::string endpoint = "/v1/embeddings";
  std::string model;
  std::size_t dim = 0;
  std::string token_env = "MAFIN_EMBED_TOKEN";
};

struct GeneratorConfig {
  std::string kind = "offline";  ///< offline or remote
  std::string base_url;
  std::string endpoint = "/v1/chat/completions";
  std::string model;
  std::string token_env = "MAFIN_LLM_TOKEN";
  double temperature = 0.7;
  int retries = 2;
};

/// Everything a run needs. Loaded from a JSON file over the defaults; CLI
/// flags are applied on top by the caller.
struct RunConfig {
  std::string corpus;
  std::string queries;
  std::string qrels;
  std::string validation_qrels;  ///< provided-split mode
  std::string test_qrels;
  std::string cache;
  std::string checkpoint;
  std::string transform_checkpoint;
  std::string pairs;
  std::string splits;  ///< split manifest written by ingest
  std::string output;

  ProviderConfig provider;
  GeneratorConfig generator;

  ScorerKind scorer = ScorerKind::mafin;
  std::uint32_t feature_dim = FeatureHasher::kDefaultFeatureDim;
  std::size_t aug_dim = AugmentingModel::kDefaultDim;
  std::size_t transform_rank = 0;  ///< 0 selects a full matrix

  LossConfig loss;
  TrainerConfig trainer;
  std::vector<double> smoothing_grid;  ///< empty: train once with loss.smoothing
  std::vector<std::size_t> cutoffs = {1, 3, 5, 10};
  double train_fraction = 0.8;
  bool include_title = true;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  /// Fields absent from `j` keep the values already in `base`.
  static RunConfig from_json(const nlohmann::json& j, RunConfig base);
  static RunConfig from_json(const nlohmann::json& j) { return from_json(j, RunConfig{}); }
  void validate() const;
};

/// Reads a JSON config file. Unknown keys are rejected.
RunConfig load_run_config(const std::string& path);

}  // namespace mafin
