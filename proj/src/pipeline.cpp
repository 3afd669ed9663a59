#include "mafin/pipeline.hpp"

#include <filesystem>
#include <fstream>

#include "mafin/checkpoint.hpp"
#include "mafin/error.hpp"
#include "mafin/rng.hpp"

namespace mafin {

using json = nlohmann::json;

Dataset load_dataset(const RunConfig& config, Diagnostics* diag) {
  if (config.corpus.empty()) throw UsageError("a corpus path is required");
  Dataset d;
  d.corpus = load_corpus(config.corpus, diag);
  if (!config.queries.empty()) d.queries = load_queries(config.queries, diag);
  if (!config.qrels.empty()) {
    d.qrels = load_qrels(config.qrels, diag);
    d.qrels.validate(d.queries, d.corpus);
  }
  if (!config.validation_qrels.empty()) {
    d.validation_qrels = load_qrels(config.validation_qrels, diag);
    d.validation_qrels.validate(d.queries, d.corpus);
  }
  if (!config.test_qrels.empty()) {
    d.test_qrels = load_qrels(config.test_qrels, diag);
    d.test_qrels.validate(d.queries, d.corpus);
  }
  return d;
}

QuerySplits resolve_splits(const RunConfig& config, const Dataset& data) {
  if (!config.splits.empty()) return load_splits(config.splits);
  if (!config.validation_qrels.empty()) {
    return split_provided(data.queries, data.qrels, data.validation_qrels, data.test_qrels);
  }
  SplitSpec spec;
  spec.train_fraction = config.train_fraction;
  spec.seed = derive_seed(config.seed, "ingest");
  return split(data.queries, data.qrels, spec,
               config.test_qrels.empty() ? nullptr : &data.test_qrels);
}

json splits_to_json(const QuerySplits& s) {
  return {{"train", s.train}, {"validation", s.validation}, {"test", s.test}};
}

QuerySplits splits_from_json(const json& j) {
  QuerySplits s;
  try {
    s.train = j.at("train").get<std::vector<QueryId>>();
    s.validation = j.at("validation").get<std::vector<QueryId>>();
    s.test = j.value("test", std::vector<QueryId>{});
  } catch (const json::exception& e) {
    throw DataError(std::string("bad split manifest: ") + e.what());
  }
  return s;
}

void save_splits(const QuerySplits& splits, const RunConfig& config, const std::string& path) {
  json j = splits_to_json(splits);
  j["config"] = config.to_json();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out << j.dump(2) << '\n';
}

QuerySplits load_splits(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open split manifest " + path);
  try {
    return splits_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
}

std::shared_ptr<BlackBoxProvider> make_provider(const RunConfig& config) {
  std::shared_ptr<BlackBoxProvider> inner;
  const auto& p = config.provider;
  if (p.kind == "stub") {
    inner = std::make_shared<StubProvider>(p.stub_seed, p.stub_dim);
  } else if (p.kind == "file") {
    if (p.store_path.empty()) throw UsageError("file provider needs provider.store_path");
    return std::make_shared<FileStoreProvider>(p.store_path);
  } else if (p.kind == "http") {
    HttpProviderConfig hc;
    hc.base_url = p.base_url;
    hc.path = p.endpoint;
    hc.model = p.model;
    hc.dim = p.dim;
    hc.token_env = p.token_env;
    try {
      inner = std::make_shared<HttpProvider>(hc);
    } catch (const ProviderError&) {
      if (!config.cache.empty() && std::filesystem::exists(config.cache)) {
        return std::make_shared<FileStoreProvider>(config.cache);
      }
      throw;
    }
  } else {
    throw UsageError("unknown provider '" + p.kind + "'; valid: stub, file, http");
  }
  if (config.cache.empty()) return inner;
  auto cache = std::make_shared<EmbeddingCache>(config.cache, inner->identity(), inner->embed_dim());
  return std::make_shared<CachedProvider>(inner, cache);
}

EmbeddingMode required_mode(ScorerKind kind) {
  return kind == ScorerKind::lambda_mafin ? EmbeddingMode::unnormalized : EmbeddingMode::normalized;
}

ModelState initial_state(ScorerKind kind, const RunConfig& config, std::size_t bb_dim,
                         std::uint64_t seed) {
  ModelState s;
  if (uses_augmenting_model(kind)) {
    s.aug = std::make_shared<AugmentingModel>(AugmentingModel::random(
        FeatureHasher(config.feature_dim, derive_seed(seed, "hasher")), config.aug_dim,
        required_mode(kind), seed));
  }
  if (kind == ScorerKind::linear_transform) {
    const auto t = config.transform_rank == 0
                       ? LinearTransform::near_identity(bb_dim, derive_seed(seed, "transform"))
                       : LinearTransform::near_identity_low_rank(bb_dim, config.transform_rank,
                                                                 derive_seed(seed, "transform"));
    s.transform = std::make_shared<LinearTransform>(t);
  }
  return s;
}

ModelState load_state(const RunConfig& config) {
  ModelState s;
  if (!config.checkpoint.empty() && std::filesystem::exists(config.checkpoint)) {
    s.aug = std::make_shared<AugmentingModel>(load_augmenting_model(config.checkpoint));
  }
  if (!config.transform_checkpoint.empty() && std::filesystem::exists(config.transform_checkpoint)) {
    s.transform = std::make_shared<LinearTransform>(load_linear_transform(config.transform_checkpoint));
  }
  return s;
}

Scorer make_scorer(ScorerKind kind, std::shared_ptr<BlackBoxProvider> provider,
                   const ModelState& state) {
  return Scorer(kind, uses_black_box(kind) ? std::move(provider) : nullptr, state.aug,
                state.transform);
}

std::vector<Query> select_queries(const QuerySet& queries, const std::vector<QueryId>& ids) {
  std::vector<Query> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(queries.at(id));
  return out;
}

TrainingData supervised_data(const Dataset& data, const QuerySplits& splits) {
  TrainingData t;
  t.corpus = &data.corpus;
  const Qrels all = [&] {
    Qrels q = data.qrels;
    q.merge(data.validation_qrels);
    return q;
  }();
  for (const auto& id : splits.train) {
    if (all.relevant_count(id) == 0) {
      warn(nullptr, "training query '" + id + "' has no relevant passage; skipped");
      continue;
    }
    t.train_queries.push_back(data.queries.at(id));
  }
  std::vector<QueryId> train_ids;
  for (const auto& q : t.train_queries) train_ids.push_back(q.id);
  t.train_qrels = restrict_qrels(all, train_ids);
  t.validation_queries = select_queries(data.queries, splits.validation);
  t.validation_qrels = restrict_qrels(all, splits.validation);
  return t;
}

TrainingData unsupervised_data(const Corpus& corpus, const SyntheticPairSet& pairs,
                               double validation_fraction, std::uint64_t seed) {
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw UsageError("validation fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> order(pairs.pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, "unsupervised.split"));
  rng.shuffle(order);
  const auto n_valid = static_cast<std::size_t>(
      std::llround(validation_fraction * static_cast<double>(order.size())));
  if (n_valid == 0 || n_valid >= order.size()) {
    throw DataError("too few synthetic pairs to hold out a validation set");
  }
  TrainingData t;
  t.corpus = &corpus;
  for (std::size_t j = 0; j < order.size(); ++j) {
    const auto& p = pairs.pairs[order[j]];
    const bool valid = j < n_valid;
    (valid ? t.validation_queries : t.train_queries).push_back({p.query_id, p.text});
    (valid ? t.validation_qrels : t.train_qrels).set(p.query_id, p.doc_id, 1);
  }
  return t;
}

TrainerConfig resolved_trainer(const RunConfig& config) {
  TrainerConfig t = config.trainer;
  t.seed = derive_seed(config.seed, "trainer");
  t.include_title = config.include_title;
  for (auto k : config.cutoffs) t.validation_cutoffs.push_back(k);
  std::sort(t.validation_cutoffs.begin(), t.validation_cutoffs.end());
  t.validation_cutoffs.erase(std::unique(t.validation_cutoffs.begin(), t.validation_cutoffs.end()),
                             t.validation_cutoffs.end());
  return t;
}

nlohmann::json run_training(RunConfig c, bool unsupervised) {
  c.validate();
  if (!is_trainable(c.scorer)) {
    throw UsageError(std::string(to_string(c.scorer)) +
                     " is not trainable; trainable kinds: aug_only, mafin, lambda_mafin, "
                     "linear_transform");
  }
  auto provider = uses_black_box(c.scorer) ? make_provider(c) : nullptr;
  Dataset data;
  TrainingData training;
  if (unsupervised) {
    data.corpus = load_corpus(c.corpus);
    SyntheticPairSet pairs;
    if (!c.pairs.empty() && std::filesystem::exists(c.pairs)) {
      pairs = load_pairs(c.pairs);
    } else {
      OfflineGenerator gen;
      pairs = generate_pairs(gen, data.corpus, derive_seed(c.seed, "genqueries"));
      if (!c.pairs.empty()) save_pairs(pairs, c.pairs);
    }
    training = unsupervised_data(data.corpus, pairs, 1.0 - c.train_fraction,
                                 derive_seed(c.seed, "unsupervised"));
  } else {
    data = load_dataset(c);
    if (c.qrels.empty()) throw UsageError("supervised training needs --qrels");
    training = supervised_data(data, resolve_splits(c, data));
  }
  const std::size_t bb_dim = provider ? provider->embed_dim() : 0;
  const auto initial = initial_state(c.scorer, c, bb_dim, derive_seed(c.seed, "init"));
  auto trainer = resolved_trainer(c);
  trainer.checkpoint_path = c.scorer == ScorerKind::linear_transform ? c.transform_checkpoint
                                                                     : c.checkpoint;
  nlohmann::json out;
  out["config"] = c.to_json();
  out["mode"] = unsupervised ? "unsupervised" : "supervised";
  if (c.smoothing_grid.empty()) {
    out["report"] = train(c.scorer, provider, initial, training, c.loss, trainer).report.to_json();
  } else {
    out["grid_search"] = grid_search_smoothing(c.scorer, provider, initial, training, c.loss, trainer,
                                               c.smoothing_grid)
                             .to_json();
  }
  if (!trainer.checkpoint_path.empty()) out["checkpoint"] = trainer.checkpoint_path;
  return out;
}

ModelState state_for(ScorerKind kind, const RunConfig& config, const ModelOverrides& models) {
  RunConfig local = config;
  if (auto it = models.find(to_string(kind)); it != models.end()) {
    (kind == ScorerKind::linear_transform ? local.transform_checkpoint : local.checkpoint) = it->second;
  }
  auto state = load_state(local);
  if (uses_augmenting_model(kind) && !state.aug) {
    throw UsageError(std::string("scorer ") + to_string(kind) +
                     " needs an augmenting checkpoint; pass --checkpoint or --model " +
                     to_string(kind) + "=PATH");
  }
  if (kind == ScorerKind::linear_transform && !state.transform) {
    throw UsageError("linear_transform needs --transform-checkpoint or --model linear_transform=PATH");
  }
  return state;
}

std::vector<QueryId> evaluation_queries(const RunConfig& config, const Dataset& data,
                                        const Qrels& qrels) {
  if (!config.splits.empty()) {
    auto s = load_splits(config.splits);
    if (!s.test.empty()) return s.test;
  }
  std::vector<QueryId> ids;
  for (const auto& q : data.queries) {
    if (qrels.has_query(q.id)) ids.push_back(q.id);
  }
  return ids;
}

std::vector<EvalReport> run_evaluation(const RunConfig& config, std::span<const ScorerKind> kinds,
                                       const ModelOverrides& models,
                                       std::vector<std::vector<RankedList>>* ranked_out) {
  for (const auto& [name, path] : models) scorer_kind_from_string(name);
  const auto data = load_dataset(config);
  const Qrels& qrels = config.test_qrels.empty() ? data.qrels : data.test_qrels;
  const auto ids = evaluation_queries(config, data, qrels);
  const auto specs = metric_specs(config.cutoffs);
  std::shared_ptr<BlackBoxProvider> provider;
  std::vector<EvalReport> reports;
  for (auto kind : kinds) {
    if (uses_black_box(kind) && !provider) provider = make_provider(config);
    const auto scorer = make_scorer(kind, provider, state_for(kind, config, models));
    std::vector<RankedList> ranked;
    reports.push_back(evaluate(scorer, ids, data.queries, data.corpus, qrels, specs,
                               config.include_title, &ranked));
    if (ranked_out != nullptr) ranked_out->push_back(std::move(ranked));
  }
  return reports;
}

}  // namespace mafin
