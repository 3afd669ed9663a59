#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "mafin/diagnostics.hpp"
#include "mafin/ingest.hpp"
#include "mafin/ranking.hpp"

namespace mafin {

/// Built-in English stopword list, lower case, sorted.
const std::set<std::string, std::less<>>& stopwords();

/// Produces one query per passage. Returns nullopt when generation failed.
class QueryGenerator {
 public:
  virtual ~QueryGenerator() = default;
  virtual std::string identity() const = 0;
  virtual std::optional<std::string> generate(const Passage& passage, std::uint64_t seed) = 0;
  /// Requests the generator may keep in flight at once.
  virtual std::size_t max_in_flight() const { return 1; }
};

/// "what does this passage explain about {t1} and {t2}?" with t1, t2 the two
/// most frequent non-stopword tokens (ties by lexicographic order). One token
/// gives "what does this passage explain about {t1}?", none gives
/// "what is this passage about?". The seed does not affect the output.
std::string offline_generate(std::string_view passage_text, std::uint64_t seed = 0);

class OfflineGenerator final : public QueryGenerator {
 public:
  std::string identity() const override { return "offline-template"; }
  std::optional<std::string> generate(const Passage& passage, std::uint64_t seed) override;
};

inline constexpr std::string_view kGenerationPrompt = "generate a query based on the given passage";

struct RemoteGeneratorConfig {
  std::string base_url;
  std::string path = "/v1/chat/completions";
  std::string model;
  std::string token_env = "MAFIN_LLM_TOKEN";
  double temperature = 0.7;
  int retries = 2;
  std::size_t max_in_flight = 4;
  std::chrono::milliseconds initial_backoff{1000};
  std::chrono::seconds timeout{60};
};

/// Chat-completions client. Failures after the retries yield nullopt.
class RemoteGenerator final : public QueryGenerator {
 public:
  /// Throws ProviderError naming the token variable when it is unset.
  explicit RemoteGenerator(RemoteGeneratorConfig config);

  std::string identity() const override { return "remote:" + config_.model; }
  std::optional<std::string> generate(const Passage& passage, std::uint64_t seed) override;
  std::size_t max_in_flight() const override { return config_.max_in_flight; }

  std::string request_body(const Passage& passage) const;
  void set_sleeper(std::function<void(std::chrono::milliseconds)> sleeper) {
    sleeper_ = std::move(sleeper);
  }

 private:
  RemoteGeneratorConfig config_;
  std::string token_;
  std::function<void(std::chrono::milliseconds)> sleeper_;
};

struct SyntheticPair {
  QueryId query_id;  ///< "synth-<doc id>"
  std::string text;
  DocId doc_id;
  friend bool operator==(const SyntheticPair&, const SyntheticPair&) = default;
};

struct SyntheticPairSet {
  std::vector<SyntheticPair> pairs;  ///< corpus order
  std::vector<DocId> skipped;

  /// Queries and one-hot qrels implied by the pairs.
  QuerySet queries() const;
  Qrels qrels() const;
};

SyntheticPairSet generate_pairs(QueryGenerator& generator, const Corpus& corpus,
                                std::uint64_t seed, bool include_title = false,
                                Diagnostics* diag = nullptr);

void save_pairs(const SyntheticPairSet& pairs, const std::string& path);
SyntheticPairSet load_pairs(const std::string& path);

/// One candidate list per pair: its passage labelled 1 plus M-1 other
/// passages labelled 0, drawn uniformly without replacement.
std::vector<LabeledList> pairs_to_training_lists(const SyntheticPairSet& pairs,
                                                 const Corpus& corpus, std::size_t m,
                                                 std::uint64_t seed);

}  // namespace mafin
