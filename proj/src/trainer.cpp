#include "mafin/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "mafin/checkpoint.hpp"
#include "mafin/error.hpp"
#include "mafin/rng.hpp"

namespace mafin {

const char* to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind optimizer_kind_from_string(std::string_view name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw UsageError("unknown optimizer '" + std::string(name) + "'; valid: sgd, adam");
}

void OptimizerConfig::validate() const {
  if (!(learning_rate >= 0.0 && std::isfinite(learning_rate))) {
    throw UsageError("learning rate must be finite and >= 0");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw UsageError("adam betas must lie in [0, 1)");
  }
  if (!(delta > 0.0)) throw UsageError("adam delta must be positive");
}

OptimizerState::OptimizerState(OptimizerConfig config) : config_(config) { config_.validate(); }

void OptimizerState::update(std::span<double> params, std::span<const double> grad, Moments& mom) {
  const double lr = config_.learning_rate;
  if (config_.kind == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad[i];
    return;
  }
  if (mom.m.empty()) {
    mom.m.assign(params.size(), 0.0);
    mom.v.assign(params.size(), 0.0);
  }
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  for (std::size_t i = 0; i < params.size(); ++i) {
    mom.m[i] = b1 * mom.m[i] + (1.0 - b1) * grad[i];
    mom.v[i] = b2 * mom.v[i] + (1.0 - b2) * grad[i] * grad[i];
    const double m_hat = mom.m[i] / (1.0 - bias1_);
    const double v_hat = mom.v[i] / (1.0 - bias2_);
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + config_.delta);
  }
}

void OptimizerState::step(AugmentingModel* aug, LinearTransform* transform,
                          const GradientBuffer& grad) {
  ++steps_;
  bias1_ *= config_.beta1;
  bias2_ *= config_.beta2;
  if (aug != nullptr && !grad.aug.empty()) {
    // Visit columns in index order so updates do not depend on hash layout.
    std::vector<std::uint32_t> features;
    features.reserve(grad.aug.columns().size());
    for (const auto& [f, col] : grad.aug.columns()) features.push_back(f);
    std::sort(features.begin(), features.end());
    const std::size_t d = aug->dim();
    for (auto f : features) {
      auto params = aug->weights().subspan(static_cast<std::size_t>(f) * d, d);
      update(params, grad.aug.columns().at(f), aug_moments_[f]);
    }
  }
  if (transform != nullptr) {
    const auto& g = grad.transform;
    if (transform->mode() == LinearTransform::Mode::full) {
      if (!g.full.empty()) update(transform->full_weights(), g.full, full_);
    } else {
      if (!g.left.empty()) update(transform->left(), g.left, left_);
      if (!g.right.empty()) update(transform->right(), g.right, right_);
    }
  }
}

bool EarlyStopState::observe(std::size_t epoch, double value) {
  if (!best || value > *best) {
    best = value;
    best_epoch = epoch;
    counter = 0;
    return true;
  }
  ++counter;
  return false;
}

namespace {

std::pair<Metric, std::size_t> parse_metric_label(const std::string& label) {
  const auto at = label.find('@');
  if (at == std::string::npos) throw UsageError("monitored metric must look like NDCG@10");
  const auto name = label.substr(0, at);
  Metric metric;
  if (name == "NDCG") {
    metric = Metric::ndcg;
  } else if (name == "Recall") {
    metric = Metric::recall;
  } else {
    throw UsageError("unknown monitored metric '" + name + "'; valid: NDCG, Recall");
  }
  std::size_t k = 0;
  try {
    k = std::stoul(label.substr(at + 1));
  } catch (const std::exception&) {
    throw UsageError("bad cutoff in monitored metric '" + label + "'");
  }
  if (k == 0) throw UsageError("monitored metric cutoff must be positive");
  return {metric, k};
}

std::vector<MetricSpec> validation_specs(const TrainerConfig& config) {
  auto cutoffs = config.validation_cutoffs;
  cutoffs.push_back(parse_metric_label(config.monitor).second);
  return metric_specs(cutoffs);
}

ScorerKind list_scorer_kind(ScorerKind kind, TrainScoreMode mode) {
  if (mode == TrainScoreMode::aug_only &&
      (kind == ScorerKind::mafin || kind == ScorerKind::lambda_mafin)) {
    return ScorerKind::aug_only;
  }
  return kind;
}

struct TextTable {
  std::vector<EmbeddingVector> bb;
  std::vector<SparseFeatures> features;

  TextInputs inputs(std::size_t i) const {
    return {bb.empty() ? nullptr : &bb[i], features.empty() ? nullptr : &features[i]};
  }
};

TextTable precompute(ScorerKind kind, BlackBoxProvider* provider, const AugmentingModel* aug,
                     const std::vector<std::string>& texts) {
  TextTable t;
  if (uses_black_box(kind)) t.bb = provider->embed_all(texts);
  if (uses_augmenting_model(kind)) {
    t.features.reserve(texts.size());
    for (const auto& s : texts) t.features.push_back(aug->featurize(s));
  }
  return t;
}

std::vector<std::string> query_texts(const std::vector<Query>& queries) {
  std::vector<std::string> out;
  out.reserve(queries.size());
  for (const auto& q : queries) out.push_back(q.text);
  return out;
}

void save_best(ScorerKind kind, const ModelState& state, const std::string& path) {
  if (kind == ScorerKind::linear_transform) {
    save_linear_transform(*state.transform, path);
  } else {
    save_augmenting_model(*state.aug, path);
  }
}

}  // namespace

void TrainerConfig::validate() const {
  optimizer.validate();
  if (max_epochs == 0) throw UsageError("max epochs must be >= 1");
  if (patience == 0) throw UsageError("patience must be >= 1");
  parse_metric_label(monitor);
  for (auto k : validation_cutoffs) {
    if (k == 0) throw UsageError("validation cutoffs must be positive");
  }
}

nlohmann::json TrainerConfig::to_json() const {
  return {{"optimizer",
           {{"kind", to_string(optimizer.kind)},
            {"learning_rate", optimizer.learning_rate},
            {"beta1", optimizer.beta1},
            {"beta2", optimizer.beta2},
            {"delta", optimizer.delta}}},
          {"max_epochs", max_epochs},
          {"patience", patience},
          {"monitor", monitor},
          {"validation_cutoffs", validation_cutoffs},
          {"include_title", include_title},
          {"seed", seed},
          {"checkpoint_path", checkpoint_path}};
}

nlohmann::json to_json(const LossConfig& loss) {
  return {{"kind", to_string(loss.kind)},
          {"temperature", loss.temperature},
          {"smoothing", loss.smoothing},
          {"negatives", loss.negatives},
          {"train_score", to_string(loss.train_score)}};
}

ModelState ModelState::clone() const {
  ModelState out;
  if (aug) out.aug = std::make_shared<AugmentingModel>(*aug);
  if (transform) out.transform = std::make_shared<LinearTransform>(*transform);
  return out;
}

nlohmann::json TrainReport::to_json() const {
  nlohmann::json epochs_json = nlohmann::json::array();
  for (const auto& e : epochs) {
    epochs_json.push_back({{"epoch", e.epoch},
                           {"train_loss", e.train_loss},
                           {"validation", e.validation},
                           {"improved", e.improved}});
  }
  return {{"scorer", scorer},
          {"loss", mafin::to_json(loss)},
          {"trainer", trainer.to_json()},
          {"epochs", epochs_json},
          {"stopping_epoch", stopping_epoch},
          {"best_epoch", best_epoch},
          {"best_metric", best_metric},
          {"stop_reason", stop_reason},
          {"best_checkpoint", best_checkpoint},
          {"seeds", seeds},
          {"warnings", warnings}};
}

TrainResult train(ScorerKind kind, std::shared_ptr<BlackBoxProvider> provider,
                  const ModelState& initial, const TrainingData& data, const LossConfig& loss,
                  const TrainerConfig& config, Diagnostics* diag) {
  if (!is_trainable(kind)) {
    throw UsageError(std::string(to_string(kind)) + " has no trainable parameters");
  }
  loss.validate();
  config.validate();
  if (data.corpus == nullptr || data.corpus->size() == 0) throw DataError("training corpus is empty");
  if (data.train_queries.empty()) throw DataError("training split is empty");
  if (data.validation_queries.empty()) throw DataError("validation split is empty");
  const Corpus& corpus = *data.corpus;
  for (const auto& q : data.train_queries) {
    bool has_positive = false;
    for (const auto& [doc, rel] : data.train_qrels.judged(q.id)) {
      if (rel > 0 && corpus.contains(doc)) has_positive = true;
    }
    if (!has_positive) throw DataError("training query '" + q.id + "' has no positive passage");
  }

  ModelState state = initial.clone();
  if (uses_augmenting_model(kind) && !state.aug) throw UsageError("augmenting model required");
  if (kind == ScorerKind::linear_transform && !state.transform) {
    throw UsageError("linear transform required");
  }
  // Validates component modes before any work.
  Scorer{kind, provider, state.aug, state.transform};

  const auto specs = validation_specs(config);
  const ScorerKind train_kind = list_scorer_kind(kind, loss.train_score);

  std::vector<std::string> passage_texts;
  passage_texts.reserve(corpus.size());
  for (const auto& p : corpus) passage_texts.push_back(p.embed_text(config.include_title));
  const auto passages = precompute(kind, provider.get(), state.aug.get(), passage_texts);
  const auto train_q = precompute(kind, provider.get(), state.aug.get(), query_texts(data.train_queries));
  const auto valid_q =
      precompute(kind, provider.get(), state.aug.get(), query_texts(data.validation_queries));
  std::vector<QueryId> valid_ids;
  for (const auto& q : data.validation_queries) valid_ids.push_back(q.id);

  TrainReport report;
  report.scorer = to_string(kind);
  report.loss = loss;
  report.trainer = config;
  const std::uint64_t shuffle_seed = derive_seed(config.seed, "trainer.shuffle");
  const std::uint64_t negative_seed = derive_seed(config.seed, "trainer.negatives");
  report.seeds = {{"global", config.seed}, {"shuffle", shuffle_seed}, {"negatives", negative_seed}};
  Rng shuffle_rng(shuffle_seed);
  Rng negative_rng(negative_seed);
  Diagnostics local;

  auto validate_state = [&](const ModelState& s) {
    Scorer scorer(kind, provider, s.aug, s.transform);
    CorpusIndex index;
    index.ids.reserve(corpus.size());
    index.embeddings.reserve(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const auto in = passages.inputs(i);
      index.ids.push_back(corpus[i].id);
      index.embeddings.push_back(scorer.combine(in.bb, in.features));
    }
    std::vector<EmbeddingVector> qemb;
    qemb.reserve(valid_ids.size());
    for (std::size_t i = 0; i < valid_ids.size(); ++i) {
      const auto in = valid_q.inputs(i);
      qemb.push_back(scorer.combine(in.bb, in.features));
    }
    return evaluate_embeddings(index, valid_ids, qemb, data.validation_qrels, specs, scorer.name());
  };

  OptimizerState optimizer(config.optimizer);
  EarlyStopState stopper;
  stopper.limit = config.patience;
  stopper.metric = config.monitor;
  ModelState best = state.clone();
  GradientBuffer grad;
  grad.aug = AugGradient(state.aug ? state.aug->dim() : 0);
  std::vector<std::size_t> order(data.train_queries.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<TextInputs> candidates;

  report.stop_reason = "max_epochs";
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    for (auto qi : order) {
      const auto& query = data.train_queries[qi];
      const auto list =
          sample_negatives(query.id, data.train_qrels, corpus, loss.negatives, negative_rng, &local);
      candidates.clear();
      for (auto p : list.passages) candidates.push_back(passages.inputs(p));
      ListScorer list_scorer(train_kind, state.aug.get(), state.transform.get());
      grad.clear();
      const double value =
          loss_backward(loss, list.labels, list_scorer, train_q.inputs(qi), candidates, &grad);
      if (!std::isfinite(value)) {
        std::string batch;
        for (auto p : list.passages) batch += (batch.empty() ? "" : ",") + corpus[p].id;
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + " for query '" +
                            query.id + "' with candidates [" + batch + "]");
      }
      loss_sum += value;
      optimizer.step(state.aug.get(), state.transform.get(), grad);
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(order.size());
    const auto eval = validate_state(state);
    record.validation = eval.mean;
    record.improved = stopper.observe(epoch, eval.at(config.monitor));
    if (record.improved) best = state.clone();
    log_info("epoch " + std::to_string(epoch) + " loss " + std::to_string(record.train_loss) + " " +
             config.monitor + " " + std::to_string(eval.at(config.monitor)));
    report.epochs.push_back(std::move(record));
    report.stopping_epoch = epoch;
    if (stopper.should_stop()) {
      report.stop_reason = "patience";
      break;
    }
  }

  report.best_epoch = stopper.best_epoch;
  report.best_metric = *stopper.best;
  if (!config.checkpoint_path.empty()) {
    save_best(kind, best, config.checkpoint_path);
    report.best_checkpoint = config.checkpoint_path;
  }
  std::set<std::string> seen;
  for (const auto& w : local.warnings) {
    if (seen.insert(w).second) {
      report.warnings.push_back(w);
      if (diag != nullptr) diag->warnings.push_back(w);
    }
  }
  return {std::move(report), std::move(best)};
}

nlohmann::json GridSearchResult::to_json() const {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : reports) runs.push_back(r.to_json());
  return {{"grid", grid}, {"best_smoothing", best_smoothing}, {"best_index", best_index}, {"runs", runs}};
}

GridSearchResult grid_search_smoothing(ScorerKind kind, std::shared_ptr<BlackBoxProvider> provider,
                                       const ModelState& initial, const TrainingData& data,
                                       const LossConfig& base_loss, const TrainerConfig& config,
                                       std::span<const double> grid, Diagnostics* diag) {
  if (grid.empty()) throw UsageError("smoothing grid is empty");
  GridSearchResult result;
  result.grid.assign(grid.begin(), grid.end());
  TrainerConfig inner = config;
  inner.checkpoint_path.clear();
  std::optional<double> best_metric;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    LossConfig loss = base_loss;
    loss.smoothing = grid[i];
    auto run = train(kind, provider, initial, data, loss, inner, diag);
    const double metric = run.report.best_metric;
    const bool better = !best_metric || metric > *best_metric ||
                        (metric == *best_metric && grid[i] < result.best_smoothing);
    if (better) {
      best_metric = metric;
      result.best_smoothing = grid[i];
      result.best_index = i;
      result.best = std::move(run.best);
    }
    result.reports.push_back(std::move(run.report));
  }
  if (!config.checkpoint_path.empty()) {
    save_best(kind, result.best, config.checkpoint_path);
    result.reports[result.best_index].best_checkpoint = config.checkpoint_path;
  }
  return result;
}

}  // namespace mafin
