#include <algorithm>
#include <json.hpp>

#include "http_post.hpp"
#include "mafin/error.hpp"
#include "mafin/providers.hpp"

namespace mafin {

using json = nlohmann::json;

HttpProvider::HttpProvider(HttpProviderConfig config) : config_(std::move(config)) {
  if (config_.base_url.empty()) throw UsageError("HTTP provider needs a base URL");
  if (config_.model.empty()) throw UsageError("HTTP provider needs a model name");
  if (config_.dim == 0) throw UsageError("HTTP provider needs the embedding dimension");
  if (config_.max_attempts < 1) throw UsageError("max_attempts must be >= 1");
  token_ = detail::token_from_env(config_.token_env);
}

std::string HttpProvider::request_body(std::span<const std::string> texts) const {
  json input = json::array();
  for (const auto& t : texts) {
    if (t.size() > config_.max_chars) {
      warn(nullptr, "truncating text of " + std::to_string(t.size()) + " chars to " +
                        std::to_string(config_.max_chars));
      input.push_back(t.substr(0, config_.max_chars));
    } else {
      input.push_back(t);
    }
  }
  return json{{"model", config_.model}, {"input", std::move(input)}}.dump();
}

std::vector<std::vector<double>> HttpProvider::parse_response(const std::string& body,
                                                              std::size_t expected) {
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error& e) {
    throw ProviderError(std::string("malformed embeddings response: ") + e.what(), false);
  }
  if (!doc.contains("data") || !doc["data"].is_array()) {
    throw ProviderError("embeddings response lacks a 'data' array", false);
  }
  std::vector<std::vector<double>> out(expected);
  std::vector<bool> seen(expected, false);
  for (const auto& item : doc["data"]) {
    if (!item.contains("index") || !item.contains("embedding")) {
      throw ProviderError("embeddings response entry lacks 'index' or 'embedding'", false);
    }
    const auto idx = item["index"].get<std::int64_t>();
    if (idx < 0 || static_cast<std::size_t>(idx) >= expected || seen[idx]) {
      throw ProviderError("embeddings response has invalid index " + std::to_string(idx), false);
    }
    seen[idx] = true;
    out[idx] = item["embedding"].get<std::vector<double>>();
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw ProviderError("embeddings response is missing entries", false);
  }
  return out;
}

std::vector<std::vector<double>> HttpProvider::fetch(std::span<const std::string> texts) {
  const std::string body = request_body(texts);
  std::vector<std::vector<double>> result;
  detail::with_retries(config_.max_attempts, config_.initial_backoff, sleeper_, [&] {
    auto res = detail::post_json(config_.base_url, config_.path, token_, body, config_.timeout);
    if (res.status == 429 || res.status >= 500) {
      throw ProviderError("embeddings backend returned HTTP " + std::to_string(res.status), true);
    }
    if (res.status != 200) {
      throw ProviderError("embeddings backend returned HTTP " + std::to_string(res.status) + ": " +
                              res.body.substr(0, 200),
                          false);
    }
    result = parse_response(res.body, texts.size());
    return std::string();
  });
  return result;
}

}  // namespace mafin
