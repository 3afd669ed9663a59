#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mafin/ingest.hpp"
#include "mafin/scoring.hpp"

namespace mafin {

enum class Metric { recall, ndcg };

const char* to_string(Metric metric);

struct MetricSpec {
  Metric metric = Metric::ndcg;
  std::vector<std::size_t> cutoffs;  ///< ascending, unique, positive

  /// Throws UsageError when the invariants fail.
  void validate() const;
};

/// Recall and NDCG specs sharing one cutoff list (sorted, deduplicated).
std::vector<MetricSpec> metric_specs(std::span<const std::size_t> cutoffs);

/// Column label such as "Recall@5" or "NDCG@10".
std::string metric_label(Metric metric, std::size_t k);

/// |top-K docs with label > 0| / |docs with label > 0|. nullopt when the
/// query has no relevant docs (excluded from means).
std::optional<double> recall_at_k(const RankedList& ranked, const std::map<DocId, int>& judged,
                                  std::size_t k);

/// sum_{i=1..K} (2^rel_i - 1) / log2(i + 1) over relevance values in rank order.
double dcg_at_k(std::span<const int> rels_in_rank_order, std::size_t k);
double dcg_at_k(const RankedList& ranked, const std::map<DocId, int>& judged, std::size_t k);

/// DCG / IDCG with the ideal ordering over all judged docs. nullopt when IDCG = 0.
std::optional<double> ndcg_at_k(const RankedList& ranked, const std::map<DocId, int>& judged,
                                std::size_t k);

struct EvalReport {
  std::string scorer;
  std::string timestamp;
  std::vector<std::string> columns;  ///< metric labels, in spec order
  std::map<std::string, double> mean;
  std::map<QueryId, std::map<std::string, double>> per_query;
  std::size_t evaluated_queries = 0;
  std::size_t excluded_queries = 0;

  double at(const std::string& column) const;
  nlohmann::json to_json(bool include_timestamp = true) const;
  static EvalReport from_json(const nlohmann::json& j);
};

/// Metrics from already-ranked lists. Queries whose qrels hold no relevant
/// doc are excluded and counted.
EvalReport evaluate_ranked(std::span<const RankedList> ranked, const Qrels& qrels,
                           std::span<const MetricSpec> specs, const std::string& scorer_name);

/// Retrieves once per query at the deepest cutoff and evaluates every metric
/// from that single list. Passage and query embeddings come from `scorer`.
EvalReport evaluate(const Scorer& scorer, std::span<const QueryId> query_ids,
                    const QuerySet& queries, const Corpus& corpus, const Qrels& qrels,
                    std::span<const MetricSpec> specs, bool include_title = true,
                    std::vector<RankedList>* ranked_out = nullptr);

/// Same as `evaluate` with precomputed scoring embeddings.
EvalReport evaluate_embeddings(const CorpusIndex& index, std::span<const QueryId> query_ids,
                               std::span<const EmbeddingVector> query_embeddings, const Qrels& qrels,
                               std::span<const MetricSpec> specs, const std::string& scorer_name,
                               std::vector<RankedList>* ranked_out = nullptr);

/// Aligned text table, one row per report.
std::string format_table(std::span<const EvalReport> reports);

std::string utc_timestamp();

}  // namespace mafin
