#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mafin/core.hpp"
#include "mafin/diagnostics.hpp"

namespace mafin {

struct Passage {
  DocId id;
  std::string title;
  std::string text;

  /// Text handed to the embedding models: "title text" when a title is
  /// present and `include_title` is set, otherwise just the body.
  std::string embed_text(bool include_title) const;
};

struct Query {
  QueryId id;
  std::string text;
};

/// Ordered collection with unique ids and O(1) lookup by id.
template <typename Record>
class Collection {
 public:
  Collection() = default;

  /// Throws DataError on a duplicate id.
  void add(Record record);

  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  const Record& operator[](std::size_t i) const { return records_[i]; }
  const std::vector<Record>& records() const noexcept { return records_; }

  std::optional<std::size_t> index_of(const std::string& id) const;
  bool contains(const std::string& id) const { return index_.count(id) != 0; }
  /// Throws DataError when the id is unknown.
  const Record& at(const std::string& id) const;

  auto begin() const { return records_.begin(); }
  auto end() const { return records_.end(); }

 private:
  std::vector<Record> records_;
  std::unordered_map<std::string, std::size_t> index_;
};

using Corpus = Collection<Passage>;
using QuerySet = Collection<Query>;

/// Graded relevance judgments, query -> (doc -> label). Labels are >= 0.
class Qrels {
 public:
  /// Inserts or overwrites a judgment. Negative labels are clamped to 0 with a warning.
  void set(const QueryId& query, const DocId& doc, int relevance, Diagnostics* diag = nullptr);

  /// Label for (query, doc); 0 when unjudged.
  int relevance(const QueryId& query, const DocId& doc) const;

  /// Judgments for one query (empty map when the query is unjudged).
  const std::map<DocId, int>& judged(const QueryId& query) const;

  bool has_query(const QueryId& query) const { return by_query_.count(query) != 0; }
  std::size_t size() const noexcept;
  std::size_t query_count() const noexcept { return by_query_.size(); }
  const std::map<QueryId, std::map<DocId, int>>& entries() const noexcept { return by_query_; }

  /// Number of docs with label > 0 for the query.
  std::size_t relevant_count(const QueryId& query) const;

  /// Checks that every referenced query and doc exists; throws DataError naming the first offender.
  void validate(const QuerySet& queries, const Corpus& corpus) const;

  /// Union of two judgment sets; `other` wins on conflicts.
  void merge(const Qrels& other);

 private:
  std::map<QueryId, std::map<DocId, int>> by_query_;
};

Corpus load_corpus(const std::string& path, Diagnostics* diag = nullptr);
QuerySet load_queries(const std::string& path, Diagnostics* diag = nullptr);
Qrels load_qrels(const std::string& path, Diagnostics* diag = nullptr);

void save_corpus(const Corpus& corpus, const std::string& path);
void save_queries(const QuerySet& queries, const std::string& path);
void save_qrels(const Qrels& qrels, const std::string& path);

enum class SplitMode { use_provided_splits, fraction_of_dev };

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  SplitMode mode = SplitMode::fraction_of_dev;
};

struct QuerySplits {
  std::vector<QueryId> train;
  std::vector<QueryId> validation;
  std::vector<QueryId> test;
};

/// Seeded shuffle of the judged queries (in query-file order), cut into
/// train / validation at `train_fraction`. `test` is filled from `test_qrels`
/// when given. Requires mode fraction_of_dev.
QuerySplits split(const QuerySet& queries, const Qrels& qrels, const SplitSpec& spec,
                  const Qrels* test_qrels = nullptr);

/// Provided-split mode: each split holds the queries judged in its qrels file,
/// in query-file order, no shuffling.
QuerySplits split_provided(const QuerySet& queries, const Qrels& train, const Qrels& validation,
                           const Qrels& test);

/// Subset of `qrels` restricted to the given queries.
Qrels restrict_qrels(const Qrels& qrels, const std::vector<QueryId>& queries);

}  // namespace mafin
