#include "mafin/genqueries.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <future>
#include <map>
#include <thread>

#include <json.hpp>

#include "http_post.hpp"
#include "mafin/error.hpp"
#include "mafin/rng.hpp"

namespace mafin {

using json = nlohmann::json;

namespace {

bool is_token_byte(unsigned char c) { return std::isalnum(c) != 0 || c >= 0x80; }

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : text) {
    if (is_token_byte(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

}  // namespace

std::string offline_generate(std::string_view passage_text, std::uint64_t /*seed*/) {
  if (passage_text.empty()) throw UsageError("cannot generate a query for an empty passage");
  std::map<std::string, std::size_t> counts;
  const auto& stop = stopwords();
  for (auto& t : tokenize(passage_text)) {
    if (stop.count(t) == 0) ++counts[t];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.empty()) return "what is this passage about?";
  if (ranked.size() == 1) return "what does this passage explain about " + ranked[0].first + "?";
  return "what does this passage explain about " + ranked[0].first + " and " + ranked[1].first +
         "?";
}

std::optional<std::string> OfflineGenerator::generate(const Passage& passage, std::uint64_t seed) {
  return offline_generate(passage.text, seed);
}

RemoteGenerator::RemoteGenerator(RemoteGeneratorConfig config) : config_(std::move(config)) {
  if (config_.base_url.empty()) throw UsageError("remote generator needs a base URL");
  if (config_.model.empty()) throw UsageError("remote generator needs a model name");
  if (config_.retries < 0) throw UsageError("retries must be >= 0");
  if (config_.max_in_flight == 0) throw UsageError("max in-flight requests must be >= 1");
  token_ = detail::token_from_env(config_.token_env);
}

std::string RemoteGenerator::request_body(const Passage& passage) const {
  const std::string content = std::string(kGenerationPrompt) + "\n\n" + passage.text;
  return json{{"model", config_.model},
              {"messages", json::array({{{"role", "user"}, {"content", content}}})},
              {"temperature", config_.temperature}}
      .dump();
}

std::optional<std::string> RemoteGenerator::generate(const Passage& passage, std::uint64_t) {
  const std::string body = request_body(passage);
  try {
    return detail::with_retries(config_.retries + 1, config_.initial_backoff, sleeper_, [&] {
      auto res = detail::post_json(config_.base_url, config_.path, token_, body, config_.timeout);
      if (res.status != 200) {
        throw ProviderError("generation backend returned HTTP " + std::to_string(res.status),
                            res.status == 429 || res.status >= 500);
      }
      std::string content;
      try {
        content = json::parse(res.body).at("choices").at(0).at("message").at("content");
      } catch (const json::exception& e) {
        throw ProviderError(std::string("malformed generation response: ") + e.what(), true);
      }
      const auto first = content.find_first_not_of(" \t\r\n");
      if (first == std::string::npos) throw ProviderError("empty generated query", true);
      const auto last = content.find_last_not_of(" \t\r\n");
      return content.substr(first, last - first + 1);
    });
  } catch (const ProviderError& e) {
    warn(nullptr, "query generation failed for passage '" + passage.id + "': " + e.what());
    return std::nullopt;
  }
}

QuerySet SyntheticPairSet::queries() const {
  QuerySet out;
  for (const auto& p : pairs) out.add({p.query_id, p.text});
  return out;
}

Qrels SyntheticPairSet::qrels() const {
  Qrels out;
  for (const auto& p : pairs) out.set(p.query_id, p.doc_id, 1);
  return out;
}

SyntheticPairSet generate_pairs(QueryGenerator& generator, const Corpus& corpus,
                                std::uint64_t seed, bool include_title, Diagnostics* diag) {
  if (corpus.empty()) throw DataError("cannot generate queries for an empty corpus");
  const std::size_t window = std::max<std::size_t>(1, generator.max_in_flight());
  std::vector<std::optional<std::string>> results(corpus.size());
  auto run_one = [&](std::size_t i) {
    Passage p = corpus[i];
    if (include_title) p.text = p.embed_text(true);
    return generator.generate(p, derive_seed(seed, "genqueries:" + p.id));
  };
  for (std::size_t start = 0; start < corpus.size(); start += window) {
    const std::size_t end = std::min(corpus.size(), start + window);
    if (window == 1) {
      results[start] = run_one(start);
      continue;
    }
    std::vector<std::future<std::optional<std::string>>> inflight;
    for (std::size_t i = start; i < end; ++i) {
      inflight.push_back(std::async(std::launch::async, run_one, i));
    }
    for (std::size_t i = start; i < end; ++i) results[i] = inflight[i - start].get();
  }
  SyntheticPairSet out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& id = corpus[i].id;
    if (!results[i] || results[i]->empty()) {
      warn(diag, "no query generated for passage '" + id + "'; skipped");
      out.skipped.push_back(id);
      continue;
    }
    out.pairs.push_back({"synth-" + id, *results[i], id});
  }
  return out;
}

void save_pairs(const SyntheticPairSet& pairs, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& p : pairs.pairs) {
    out << json{{"query_id", p.query_id}, {"text", p.text}, {"doc_id", p.doc_id}}.dump() << '\n';
  }
  if (!out) throw DataError("failed writing " + path);
}

SyntheticPairSet load_pairs(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  SyntheticPairSet out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      out.pairs.push_back({j.at("query_id").get<std::string>(), j.at("text").get<std::string>(),
                           j.at("doc_id").get<std::string>()});
    } catch (const json::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<LabeledList> pairs_to_training_lists(const SyntheticPairSet& pairs,
                                                 const Corpus& corpus, std::size_t m,
                                                 std::uint64_t seed) {
  if (m < 2) throw UsageError("candidate list size M must be >= 2");
  const Qrels qrels = pairs.qrels();
  Rng rng(derive_seed(seed, "genqueries.lists"));
  std::vector<LabeledList> out;
  out.reserve(pairs.pairs.size());
  for (const auto& p : pairs.pairs) {
    out.push_back(sample_negatives(p.query_id, qrels, corpus, m, rng));
  }
  return out;
}

}  // namespace mafin
