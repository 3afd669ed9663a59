#include "mafin/config.hpp"

#include <fstream>
#include <set>

#include "mafin/error.hpp"

namespace mafin {

using json = nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw UsageError("config: '" + where + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (allowed.count(key) == 0) {
      throw UsageError("config: unknown key '" + key + "' in " + where);
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

json RunConfig::to_json() const {
  return {{"paths",
           {{"corpus", corpus},
            {"queries", queries},
            {"qrels", qrels},
            {"validation_qrels", validation_qrels},
            {"test_qrels", test_qrels},
            {"cache", cache},
            {"checkpoint", checkpoint},
            {"transform_checkpoint", transform_checkpoint},
            {"pairs", pairs},
            {"splits", splits},
            {"output", output}}},
          {"provider",
           {{"kind", provider.kind},
            {"stub_seed", provider.stub_seed},
            {"stub_dim", provider.stub_dim},
            {"store_path", provider.store_path},
            {"base_url", provider.base_url},
            {"endpoint", provider.endpoint},
            {"model", provider.model},
            {"dim", provider.dim},
            {"token_env", provider.token_env}}},
          {"generator",
           {{"kind", generator.kind},
            {"base_url", generator.base_url},
            {"endpoint", generator.endpoint},
            {"model", generator.model},
            {"token_env", generator.token_env},
            {"temperature", generator.temperature},
            {"retries", generator.retries}}},
          {"scorer", to_string(scorer)},
          {"feature_dim", feature_dim},
          {"aug_dim", aug_dim},
          {"transform_rank", transform_rank},
          {"loss", mafin::to_json(loss)},
          {"trainer", trainer.to_json()},
          {"smoothing_grid", smoothing_grid},
          {"cutoffs", cutoffs},
          {"train_fraction", train_fraction},
          {"include_title", include_title},
          {"seed", seed}};
}

RunConfig RunConfig::from_json(const json& j, RunConfig c) {
  check_keys(j,
             {"paths", "provider", "generator", "scorer", "feature_dim", "aug_dim",
              "transform_rank", "loss", "trainer", "smoothing_grid", "cutoffs", "train_fraction",
              "include_title", "seed"},
             "top level");
  if (j.contains("paths")) {
    const auto& p = j["paths"];
    check_keys(p,
               {"corpus", "queries", "qrels", "validation_qrels", "test_qrels", "cache",
                "checkpoint", "transform_checkpoint", "pairs", "splits", "output"},
               "paths");
    read(p, "corpus", c.corpus);
    read(p, "queries", c.queries);
    read(p, "qrels", c.qrels);
    read(p, "validation_qrels", c.validation_qrels);
    read(p, "test_qrels", c.test_qrels);
    read(p, "cache", c.cache);
    read(p, "checkpoint", c.checkpoint);
    read(p, "transform_checkpoint", c.transform_checkpoint);
    read(p, "pairs", c.pairs);
    read(p, "splits", c.splits);
    read(p, "output", c.output);
  }
  if (j.contains("provider")) {
    const auto& p = j["provider"];
    check_keys(p,
               {"kind", "stub_seed", "stub_dim", "store_path", "base_url", "endpoint", "model",
                "dim", "token_env"},
               "provider");
    read(p, "kind", c.provider.kind);
    read(p, "stub_seed", c.provider.stub_seed);
    read(p, "stub_dim", c.provider.stub_dim);
    read(p, "store_path", c.provider.store_path);
    read(p, "base_url", c.provider.base_url);
    read(p, "endpoint", c.provider.endpoint);
    read(p, "model", c.provider.model);
    read(p, "dim", c.provider.dim);
    read(p, "token_env", c.provider.token_env);
  }
  if (j.contains("generator")) {
    const auto& g = j["generator"];
    check_keys(g, {"kind", "base_url", "endpoint", "model", "token_env", "temperature", "retries"},
               "generator");
    read(g, "kind", c.generator.kind);
    read(g, "base_url", c.generator.base_url);
    read(g, "endpoint", c.generator.endpoint);
    read(g, "model", c.generator.model);
    read(g, "token_env", c.generator.token_env);
    read(g, "temperature", c.generator.temperature);
    read(g, "retries", c.generator.retries);
  }
  if (j.contains("scorer")) c.scorer = scorer_kind_from_string(j["scorer"].get<std::string>());
  read(j, "feature_dim", c.feature_dim);
  read(j, "aug_dim", c.aug_dim);
  read(j, "transform_rank", c.transform_rank);
  if (j.contains("loss")) {
    const auto& l = j["loss"];
    check_keys(l, {"kind", "temperature", "smoothing", "negatives", "train_score"}, "loss");
    if (l.contains("kind")) c.loss.kind = loss_kind_from_string(l["kind"].get<std::string>());
    read(l, "temperature", c.loss.temperature);
    read(l, "smoothing", c.loss.smoothing);
    read(l, "negatives", c.loss.negatives);
    if (l.contains("train_score")) {
      c.loss.train_score = train_score_mode_from_string(l["train_score"].get<std::string>());
    }
  }
  if (j.contains("trainer")) {
    const auto& t = j["trainer"];
    check_keys(t,
               {"optimizer", "max_epochs", "patience", "monitor", "validation_cutoffs",
                "include_title", "seed", "checkpoint_path"},
               "trainer");
    if (t.contains("optimizer")) {
      const auto& o = t["optimizer"];
      check_keys(o, {"kind", "learning_rate", "beta1", "beta2", "delta"}, "trainer.optimizer");
      if (o.contains("kind")) {
        c.trainer.optimizer.kind = optimizer_kind_from_string(o["kind"].get<std::string>());
      }
      read(o, "learning_rate", c.trainer.optimizer.learning_rate);
      read(o, "beta1", c.trainer.optimizer.beta1);
      read(o, "beta2", c.trainer.optimizer.beta2);
      read(o, "delta", c.trainer.optimizer.delta);
    }
    read(t, "max_epochs", c.trainer.max_epochs);
    read(t, "patience", c.trainer.patience);
    read(t, "monitor", c.trainer.monitor);
    read(t, "validation_cutoffs", c.trainer.validation_cutoffs);
    read(t, "include_title", c.trainer.include_title);
    read(t, "seed", c.trainer.seed);
    read(t, "checkpoint_path", c.trainer.checkpoint_path);
  }
  read(j, "smoothing_grid", c.smoothing_grid);
  read(j, "cutoffs", c.cutoffs);
  read(j, "train_fraction", c.train_fraction);
  read(j, "include_title", c.include_title);
  read(j, "seed", c.seed);
  return c;
}

void RunConfig::validate() const {
  if (provider.kind != "stub" && provider.kind != "file" && provider.kind != "http") {
    throw UsageError("unknown provider '" + provider.kind + "'; valid: stub, file, http");
  }
  if (generator.kind != "offline" && generator.kind != "remote") {
    throw UsageError("unknown generator '" + generator.kind + "'; valid: offline, remote");
  }
  if (aug_dim == 0) throw UsageError("aug_dim must be >= 1");
  if (feature_dim == 0 || (feature_dim & (feature_dim - 1)) != 0) {
    throw UsageError("feature_dim must be a power of two");
  }
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw UsageError("train_fraction must lie in (0, 1)");
  }
  for (double eps : smoothing_grid) {
    if (!(eps >= 0.0 && eps <= 0.5)) throw UsageError("smoothing grid values must lie in [0, 0.5]");
  }
  if (cutoffs.empty()) throw UsageError("at least one metric cutoff is required");
  loss.validate();
  trainer.validate();
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError("config " + path + ": " + e.what());
  }
  return RunConfig::from_json(j);
}

}  // namespace mafin
