#include "mafin/evalx.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <iomanip>
#include <set>
#include <sstream>

#include "mafin/error.hpp"

namespace mafin {

const char* to_string(Metric metric) { return metric == Metric::recall ? "Recall" : "NDCG"; }

void MetricSpec::validate() const {
  if (cutoffs.empty()) throw UsageError("metric spec needs at least one cutoff");
  for (std::size_t i = 0; i < cutoffs.size(); ++i) {
    if (cutoffs[i] == 0) throw UsageError("metric cutoffs must be positive");
    if (i > 0 && cutoffs[i] <= cutoffs[i - 1]) {
      throw UsageError("metric cutoffs must be ascending and unique");
    }
  }
}

std::vector<MetricSpec> metric_specs(std::span<const std::size_t> cutoffs) {
  std::vector<std::size_t> ks(cutoffs.begin(), cutoffs.end());
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  std::vector<MetricSpec> specs{{Metric::recall, ks}, {Metric::ndcg, ks}};
  for (const auto& s : specs) s.validate();
  return specs;
}

std::string metric_label(Metric metric, std::size_t k) {
  return std::string(to_string(metric)) + "@" + std::to_string(k);
}

std::optional<double> recall_at_k(const RankedList& ranked, const std::map<DocId, int>& judged,
                                  std::size_t k) {
  std::size_t total = 0;
  for (const auto& [doc, rel] : judged) total += rel > 0 ? 1 : 0;
  if (total == 0) return std::nullopt;
  std::size_t hit = 0;
  const std::size_t depth = std::min(k, ranked.entries.size());
  for (std::size_t i = 0; i < depth; ++i) {
    auto it = judged.find(ranked.entries[i].doc);
    if (it != judged.end() && it->second > 0) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

double dcg_at_k(std::span<const int> rels, std::size_t k) {
  double dcg = 0.0;
  const std::size_t depth = std::min(k, rels.size());
  for (std::size_t i = 0; i < depth; ++i) {
    if (rels[i] <= 0) continue;
    dcg += (std::exp2(static_cast<double>(rels[i])) - 1.0) / std::log2(static_cast<double>(i + 2));
  }
  return dcg;
}

double dcg_at_k(const RankedList& ranked, const std::map<DocId, int>& judged, std::size_t k) {
  std::vector<int> rels;
  const std::size_t depth = std::min(k, ranked.entries.size());
  rels.reserve(depth);
  for (std::size_t i = 0; i < depth; ++i) {
    auto it = judged.find(ranked.entries[i].doc);
    rels.push_back(it == judged.end() ? 0 : it->second);
  }
  return dcg_at_k(rels, k);
}

std::optional<double> ndcg_at_k(const RankedList& ranked, const std::map<DocId, int>& judged,
                                std::size_t k) {
  std::vector<int> ideal;
  ideal.reserve(judged.size());
  for (const auto& [doc, rel] : judged) ideal.push_back(rel);
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  const double idcg = dcg_at_k(ideal, k);
  if (idcg == 0.0) return std::nullopt;
  return dcg_at_k(ranked, judged, k) / idcg;
}

double EvalReport::at(const std::string& column) const {
  auto it = mean.find(column);
  if (it == mean.end()) throw UsageError("report has no column '" + column + "'");
  return it->second;
}

nlohmann::json EvalReport::to_json(bool include_timestamp) const {
  nlohmann::json j;
  j["scorer"] = scorer;
  if (include_timestamp) j["timestamp"] = timestamp;
  j["columns"] = columns;
  nlohmann::json means = nlohmann::json::object();
  for (const auto& c : columns) means[c] = mean.at(c);
  j["mean"] = means;
  j["evaluated_queries"] = evaluated_queries;
  j["excluded_queries"] = excluded_queries;
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [q, values] : per_query) per[q] = values;
  j["per_query"] = per;
  return j;
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  r.scorer = j.at("scorer").get<std::string>();
  r.timestamp = j.value("timestamp", "");
  r.columns = j.at("columns").get<std::vector<std::string>>();
  r.mean = j.at("mean").get<std::map<std::string, double>>();
  r.evaluated_queries = j.at("evaluated_queries").get<std::size_t>();
  r.excluded_queries = j.at("excluded_queries").get<std::size_t>();
  r.per_query = j.at("per_query").get<std::map<QueryId, std::map<std::string, double>>>();
  return r;
}

EvalReport evaluate_ranked(std::span<const RankedList> ranked, const Qrels& qrels,
                           std::span<const MetricSpec> specs, const std::string& scorer_name) {
  EvalReport report;
  report.scorer = scorer_name;
  report.timestamp = utc_timestamp();
  for (const auto& spec : specs) {
    spec.validate();
    for (auto k : spec.cutoffs) report.columns.push_back(metric_label(spec.metric, k));
  }
  std::map<std::string, double> sums;
  for (const auto& list : ranked) {
    const auto& judged = qrels.judged(list.query);
    if (qrels.relevant_count(list.query) == 0) {
      ++report.excluded_queries;
      continue;
    }
    auto& row = report.per_query[list.query];
    for (const auto& spec : specs) {
      for (auto k : spec.cutoffs) {
        const auto value = spec.metric == Metric::recall ? recall_at_k(list, judged, k)
                                                         : ndcg_at_k(list, judged, k);
        row[metric_label(spec.metric, k)] = *value;
      }
    }
    ++report.evaluated_queries;
  }
  // Ordered reduce over query ids keeps the means bit-stable.
  for (const auto& c : report.columns) {
    double s = 0.0;
    for (const auto& [q, row] : report.per_query) s += row.at(c);
    report.mean[c] = report.evaluated_queries == 0
                         ? 0.0
                         : s / static_cast<double>(report.evaluated_queries);
  }
  return report;
}

EvalReport evaluate_embeddings(const CorpusIndex& index, std::span<const QueryId> query_ids,
                               std::span<const EmbeddingVector> query_embeddings, const Qrels& qrels,
                               std::span<const MetricSpec> specs, const std::string& scorer_name,
                               std::vector<RankedList>* ranked_out) {
  if (query_ids.size() != query_embeddings.size()) {
    throw DimensionError("query ids and embeddings differ in count");
  }
  std::size_t depth = 0;
  for (const auto& s : specs) {
    s.validate();
    depth = std::max(depth, s.cutoffs.back());
  }
  if (depth == 0) throw UsageError("no metric cutoffs requested");
  std::vector<RankedList> ranked;
  ranked.reserve(query_ids.size());
  for (std::size_t i = 0; i < query_ids.size(); ++i) {
    ranked.push_back(retrieve_topk(index, query_ids[i], query_embeddings[i], depth));
  }
  auto report = evaluate_ranked(ranked, qrels, specs, scorer_name);
  if (ranked_out != nullptr) *ranked_out = std::move(ranked);
  return report;
}

EvalReport evaluate(const Scorer& scorer, std::span<const QueryId> query_ids,
                    const QuerySet& queries, const Corpus& corpus, const Qrels& qrels,
                    std::span<const MetricSpec> specs, bool include_title,
                    std::vector<RankedList>* ranked_out) {
  const auto index = build_index(scorer, corpus, include_title);
  std::vector<std::string> texts;
  texts.reserve(query_ids.size());
  for (const auto& id : query_ids) texts.push_back(queries.at(id).text);
  const auto query_embeddings = scorer.embed_many(texts);
  return evaluate_embeddings(index, query_ids, query_embeddings, qrels, specs, scorer.name(),
                             ranked_out);
}

std::string format_table(std::span<const EvalReport> reports) {
  if (reports.empty()) return {};
  std::vector<std::string> columns = reports.front().columns;
  std::size_t name_width = 5;
  for (const auto& r : reports) name_width = std::max(name_width, r.scorer.size());
  std::size_t col_width = 8;
  for (const auto& c : columns) col_width = std::max(col_width, c.size());
  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(name_width)) << "Model";
  for (const auto& c : columns) out << "  " << std::right << std::setw(static_cast<int>(col_width)) << c;
  out << '\n';
  for (const auto& r : reports) {
    out << std::left << std::setw(static_cast<int>(name_width)) << r.scorer;
    for (const auto& c : columns) {
      out << "  " << std::right << std::setw(static_cast<int>(col_width)) << std::fixed
          << std::setprecision(5) << r.at(c);
    }
    out << '\n';
  }
  return out.str();
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

}  // namespace mafin
