#include <doctest.h>

#include <cmath>
#include <sstream>

#include "mafin/error.hpp"
#include "mafin/evalx.hpp"
#include "metric_oracle.hpp"

using namespace mafin;
using namespace mafin::testing;

namespace {

RankedList make_list(const QueryId& q, const std::vector<std::string>& docs,
                     const std::vector<double>& scores) {
  RankedList r{q, {}};
  for (std::size_t i = 0; i < docs.size(); ++i) r.entries.push_back({docs[i], scores[i]});
  return r;
}

RankedList descending(const QueryId& q, const std::vector<std::string>& docs) {
  std::vector<double> s;
  for (std::size_t i = 0; i < docs.size(); ++i) s.push_back(1.0 - 0.01 * double(i));
  return make_list(q, docs, s);
}

}  // namespace

TEST_CASE("worked dcg and ndcg values") {
  CHECK(dcg_at_k(std::vector<int>{2, 1, 0}, 3) == doctest::Approx(3.6309298).epsilon(1e-7));
  CHECK(dcg_at_k(std::vector<int>{0, 1, 2}, 3) == doctest::Approx(2.1309298).epsilon(1e-7));
  CHECK(dcg_at_k(std::vector<int>{0, 0, 0}, 3) == 0.0);
  const std::map<DocId, int> judged{{"a", 2}, {"b", 1}, {"c", 0}};
  CHECK(*ndcg_at_k(descending("q", {"a", "b", "c"}), judged, 3) == doctest::Approx(1.0));
  CHECK(*ndcg_at_k(descending("q", {"c", "b", "a"}), judged, 3) ==
        doctest::Approx(0.5868827).epsilon(1e-7));
  CHECK(*ndcg_at_k(descending("q", {"x", "a"}), {{"a", 1}}, 1) == 0.0);
  CHECK(*ndcg_at_k(descending("q", {"a", "x"}), {{"a", 1}}, 1) == 1.0);
  CHECK_FALSE(ndcg_at_k(descending("q", {"a"}), {{"a", 0}}, 1).has_value());
}

TEST_CASE("recall examples") {
  const std::map<DocId, int> judged{{"a", 1}, {"b", 1}, {"c", 0}};
  CHECK(*recall_at_k(descending("q", {"a", "c", "x", "b"}), judged, 3) == 0.5);
  CHECK(*recall_at_k(descending("q", {"b", "a"}), judged, 3) == 1.0);
  CHECK_FALSE(recall_at_k(descending("q", {"a"}), {{"a", 0}}, 1).has_value());
}

TEST_CASE("metrics agree with the naive oracle on random instances") {
  Rng rng(2024);
  for (int i = 0; i < 500; ++i) {
    const auto inst = random_metric_instance(rng);
    const auto list = make_list("q", inst.ranked, inst.scores);
    for (std::size_t k : {1, 3, 5, 10, 20}) {
      const auto r = recall_at_k(list, inst.judged, k);
      const auto r0 = naive_recall(inst.ranked, inst.judged, k);
      REQUIRE(r.has_value() == r0.has_value());
      if (r) CHECK(std::abs(*r - *r0) <= 1e-12);
      const auto n = ndcg_at_k(list, inst.judged, k);
      const auto n0 = naive_ndcg(inst.ranked, inst.judged, k);
      REQUIRE(n.has_value() == n0.has_value());
      if (n) {
        CHECK(std::abs(*n - *n0) <= 1e-12);
        CHECK(*n >= 0.0);
        CHECK(*n <= 1.0 + 1e-12);
      }
    }
    // Recall is non-decreasing in K.
    const auto r1 = recall_at_k(list, inst.judged, 1);
    if (r1) {
      double prev = *r1;
      for (std::size_t k = 2; k <= 30; ++k) {
        const double v = *recall_at_k(list, inst.judged, k);
        CHECK(v >= prev);
        prev = v;
      }
    }
  }
}

TEST_CASE("metrics depend only on ranks") {
  Corpus corpus;
  QuerySet queries;
  Qrels qrels;
  Rng rng(5);
  CorpusIndex index;
  for (int i = 0; i < 40; ++i) {
    const std::string id = "d" + std::to_string(i);
    index.ids.push_back(id);
    std::vector<double> v(4);
    for (auto& x : v) x = rng.normal();
    index.embeddings.push_back(l2_normalize(EmbeddingVector(v)));
    if (i % 5 == 0) qrels.set("q", id, 1 + i % 3);
  }
  std::vector<double> qv(4);
  for (auto& x : qv) x = rng.normal();
  const auto qe = l2_normalize(EmbeddingVector(qv));
  const std::vector<QueryId> ids{"q"};
  const std::vector<EmbeddingVector> qes{qe};
  const auto specs = metric_specs(std::vector<std::size_t>{1, 5, 10});
  std::vector<RankedList> ranked;
  const auto a = evaluate_embeddings(index, ids, qes, qrels, specs, "x", &ranked);
  auto transformed = ranked;
  for (auto& e : transformed[0].entries) e.score = 2 * e.score + 1;
  const auto b = evaluate_ranked(transformed, qrels, specs, "x");
  CHECK(a.per_query == b.per_query);
}

TEST_CASE("report aggregation excludes queries without relevant docs") {
  Qrels qrels;
  qrels.set("q1", "a", 1);
  qrels.set("q2", "b", 1);
  qrels.set("q3", "c", 0);
  const std::vector<RankedList> lists{descending("q1", {"a", "b"}), descending("q2", {"a", "b"}),
                                      descending("q3", {"c"})};
  const auto specs = metric_specs(std::vector<std::size_t>{1});
  const auto r = evaluate_ranked(lists, qrels, specs, "bb_only");
  CHECK(r.evaluated_queries == 2);
  CHECK(r.excluded_queries == 1);
  CHECK(r.at("Recall@1") == 0.5);
  CHECK(r.at("NDCG@1") == 0.5);
  CHECK(r.columns == std::vector<std::string>{"Recall@1", "NDCG@1"});
  CHECK_THROWS_AS(r.at("NDCG@99"), UsageError);

  const auto back = EvalReport::from_json(r.to_json());
  CHECK(back.mean == r.mean);
  CHECK(back.per_query == r.per_query);
  CHECK(back.timestamp == r.timestamp);
  CHECK_FALSE(r.to_json(false).contains("timestamp"));

  const std::vector<EvalReport> reports{r};
  const auto table = format_table(reports);
  CHECK(table.find("Recall@1") != std::string::npos);
  CHECK(table.find("bb_only") != std::string::npos);
  CHECK(table.find("0.50000") != std::string::npos);
}

TEST_CASE("metric specs") {
  const auto specs = metric_specs(std::vector<std::size_t>{10, 1, 5, 5});
  REQUIRE(specs.size() == 2);
  CHECK(specs[0].metric == Metric::recall);
  CHECK(specs[1].cutoffs == std::vector<std::size_t>{1, 5, 10});
  MetricSpec bad{Metric::ndcg, {5, 1}};
  CHECK_THROWS_AS(bad.validate(), UsageError);
  bad.cutoffs = {0};
  CHECK_THROWS_AS(bad.validate(), UsageError);
  CHECK(metric_label(Metric::ndcg, 10) == "NDCG@10");
}

TEST_CASE("live evaluation matches evaluation from persisted rankings") {
  Corpus corpus;
  QuerySet queries;
  Qrels qrels;
  const char* docs[] = {"neural retrieval with embeddings", "pasta recipes with garlic",
                        "football scores tonight", "embedding models for retrieval"};
  for (int i = 0; i < 4; ++i) corpus.add({"d" + std::to_string(i), "", docs[i]});
  queries.add({"q1", "retrieval embeddings"});
  queries.add({"q2", "garlic pasta"});
  qrels.set("q1", "d0", 1);
  qrels.set("q1", "d3", 2);
  qrels.set("q2", "d1", 1);
  const Scorer scorer(ScorerKind::bb_only, std::make_shared<StubProvider>(0, 32));
  const std::vector<QueryId> ids{"q1", "q2"};
  const auto specs = metric_specs(std::vector<std::size_t>{1, 3});
  std::vector<RankedList> ranked;
  const auto live = evaluate(scorer, ids, queries, corpus, qrels, specs, true, &ranked);
  std::stringstream ss;
  write_ranked_tsv(ss, ranked);
  const auto reread = read_ranked_tsv(ss);
  const auto replay = evaluate_ranked(reread, qrels, specs, scorer.name());
  CHECK(replay.per_query == live.per_query);
  CHECK(replay.mean == live.mean);
  CHECK(live.at("Recall@3") == doctest::Approx(1.0));
}
