#include "mafin/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "mafin/error.hpp"
#include "mafin/rng.hpp"

namespace mafin {

namespace {

using json = nlohmann::json;

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n\f\v");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n\f\v");
  return std::string(s.substr(first, last - first + 1));
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return in;
}

std::string string_field(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw DataError(where + ": missing field '" + key + "'");
  if (!it->is_string()) throw DataError(where + ": field '" + key + "' must be a string");
  return it->get<std::string>();
}

// Calls `fn(obj, where)` for each non-blank JSON-lines record.
template <typename Fn>
std::size_t for_each_jsonl(const std::string& path, Fn&& fn) {
  auto in = open_input(path);
  std::string line;
  std::size_t line_no = 0;
  std::size_t records = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(where + ": malformed JSON (" + e.what() + ")");
    }
    if (!obj.is_object()) throw DataError(where + ": expected a JSON object");
    fn(obj, where);
    ++records;
  }
  return records;
}

}  // namespace

std::string Passage::embed_text(bool include_title) const {
  if (include_title && !title.empty()) return title + " " + text;
  return text;
}

template <typename Record>
void Collection<Record>::add(Record record) {
  if (record.id.empty()) throw DataError("empty id");
  auto [it, inserted] = index_.emplace(record.id, records_.size());
  if (!inserted) throw DataError("duplicate id '" + record.id + "'");
  records_.push_back(std::move(record));
}

template <typename Record>
std::optional<std::size_t> Collection<Record>::index_of(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

template <typename Record>
const Record& Collection<Record>::at(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw DataError("unknown id '" + id + "'");
  return records_[it->second];
}

template class Collection<Passage>;
template class Collection<Query>;

void Qrels::set(const QueryId& query, const DocId& doc, int relevance, Diagnostics* diag) {
  if (relevance < 0) {
    warn(diag, "negative relevance " + std::to_string(relevance) + " for (" + query + ", " + doc +
                   ") clamped to 0");
    relevance = 0;
  }
  by_query_[query][doc] = relevance;
}

int Qrels::relevance(const QueryId& query, const DocId& doc) const {
  auto q = by_query_.find(query);
  if (q == by_query_.end()) return 0;
  auto d = q->second.find(doc);
  return d == q->second.end() ? 0 : d->second;
}

const std::map<DocId, int>& Qrels::judged(const QueryId& query) const {
  static const std::map<DocId, int> kEmpty;
  auto q = by_query_.find(query);
  return q == by_query_.end() ? kEmpty : q->second;
}

std::size_t Qrels::size() const noexcept {
  std::size_t n = 0;
  for (const auto& [q, docs] : by_query_) n += docs.size();
  return n;
}

std::size_t Qrels::relevant_count(const QueryId& query) const {
  std::size_t n = 0;
  for (const auto& [doc, rel] : judged(query)) n += rel > 0 ? 1 : 0;
  return n;
}

void Qrels::validate(const QuerySet& queries, const Corpus& corpus) const {
  for (const auto& [q, docs] : by_query_) {
    if (!queries.contains(q)) throw DataError("qrels reference unknown query '" + q + "'");
    for (const auto& [d, rel] : docs) {
      if (!corpus.contains(d)) throw DataError("qrels reference unknown doc '" + d + "'");
    }
  }
}

void Qrels::merge(const Qrels& other) {
  for (const auto& [q, docs] : other.by_query_) {
    for (const auto& [d, rel] : docs) by_query_[q][d] = rel;
  }
}

Corpus load_corpus(const std::string& path, Diagnostics* diag) {
  Corpus corpus;
  for_each_jsonl(path, [&](const json& obj, const std::string& where) {
    Passage p;
    p.id = string_field(obj, "_id", where);
    p.text = string_field(obj, "text", where);
    if (obj.contains("title")) p.title = string_field(obj, "title", where);
    if (trim(p.text).empty()) throw DataError(where + ": empty passage text");
    try {
      corpus.add(std::move(p));
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
  });
  if (corpus.empty()) warn(diag, path + ": corpus is empty");
  return corpus;
}

QuerySet load_queries(const std::string& path, Diagnostics* diag) {
  QuerySet queries;
  for_each_jsonl(path, [&](const json& obj, const std::string& where) {
    Query q;
    q.id = string_field(obj, "_id", where);
    q.text = string_field(obj, "text", where);
    if (trim(q.text).empty()) throw DataError(where + ": empty query text");
    try {
      queries.add(std::move(q));
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
  });
  if (queries.empty()) warn(diag, path + ": query set is empty");
  return queries;
}

Qrels load_qrels(const std::string& path, Diagnostics* diag) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "query-id\tcorpus-id\tscore") {
    throw DataError(path + ":1: unknown header '" + line + "'");
  }
  Qrels qrels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    if (cols.size() != 3) throw DataError(where + ": expected 3 tab-separated columns");
    const std::string score = trim(cols[2]);
    int rel = 0;
    auto [ptr, ec] = std::from_chars(score.data(), score.data() + score.size(), rel);
    if (ec != std::errc() || ptr != score.data() + score.size() || score.empty()) {
      throw DataError(where + ": non-integer score '" + cols[2] + "'");
    }
    if (cols[0].empty() || cols[1].empty()) throw DataError(where + ": empty id");
    auto& existing = qrels.judged(cols[0]);
    if (existing.count(cols[1]) != 0) {
      warn(diag, where + ": duplicate judgment (" + cols[0] + ", " + cols[1] + "), last one wins");
    }
    qrels.set(cols[0], cols[1], rel, diag);
  }
  return qrels;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& p : corpus) {
    out << json{{"_id", p.id}, {"title", p.title}, {"text", p.text}}.dump() << '\n';
  }
}

void save_queries(const QuerySet& queries, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& q : queries) out << json{{"_id", q.id}, {"text", q.text}}.dump() << '\n';
}

void save_qrels(const Qrels& qrels, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out << "query-id\tcorpus-id\tscore\n";
  for (const auto& [q, docs] : qrels.entries()) {
    for (const auto& [d, rel] : docs) out << q << '\t' << d << '\t' << rel << '\n';
  }
}

QuerySplits split(const QuerySet& queries, const Qrels& qrels, const SplitSpec& spec,
                  const Qrels* test_qrels) {
  if (spec.mode != SplitMode::fraction_of_dev) {
    throw UsageError("split(): provided-split mode uses split_provided()");
  }
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw UsageError("train_fraction must lie in (0, 1), got " +
                     std::to_string(spec.train_fraction));
  }
  std::vector<QueryId> pool;
  for (const auto& q : queries) {
    if (qrels.has_query(q.id)) pool.push_back(q.id);
  }
  Rng rng(derive_seed(spec.seed, "split"));
  rng.shuffle(pool);
  const auto n_train =
      static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(pool.size())));
  QuerySplits out;
  out.train.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.validation.assign(pool.begin() + static_cast<std::ptrdiff_t>(n_train), pool.end());
  if (out.train.empty()) throw DataError("split would leave the train set empty");
  if (out.validation.empty()) throw DataError("split would leave the validation set empty");
  if (test_qrels != nullptr) {
    const std::set<QueryId> taken(pool.begin(), pool.end());
    for (const auto& q : queries) {
      if (test_qrels->has_query(q.id) && taken.count(q.id) == 0) out.test.push_back(q.id);
    }
    if (out.test.empty()) throw DataError("split would leave the test set empty");
  }
  return out;
}

QuerySplits split_provided(const QuerySet& queries, const Qrels& train, const Qrels& validation,
                           const Qrels& test) {
  QuerySplits out;
  std::set<QueryId> seen;
  auto collect = [&](const Qrels& qrels, std::vector<QueryId>& dest, const char* name) {
    for (const auto& q : queries) {
      if (!qrels.has_query(q.id)) continue;
      if (!seen.insert(q.id).second) {
        throw DataError("query '" + q.id + "' appears in more than one split");
      }
      dest.push_back(q.id);
    }
    if (dest.empty()) throw DataError(std::string("provided ") + name + " split is empty");
  };
  collect(train, out.train, "train");
  collect(validation, out.validation, "validation");
  collect(test, out.test, "test");
  return out;
}

Qrels restrict_qrels(const Qrels& qrels, const std::vector<QueryId>& queries) {
  Qrels out;
  for (const auto& q : queries) {
    for (const auto& [d, rel] : qrels.judged(q)) out.set(q, d, rel);
  }
  return out;
}

}  // namespace mafin
