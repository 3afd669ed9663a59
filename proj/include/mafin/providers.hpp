#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mafin/core.hpp"
#include "mafin/diagnostics.hpp"
#include "mafin/hashing.hpp"
#include "mafin/ingest.hpp"

namespace mafin {

inline constexpr std::size_t kDefaultMaxBatch = 64;

/// Frozen black-box embedding model. Subclasses implement `fetch`; the public
/// `embed_batch` enforces the batch contract, checks dimensions, and
/// normalizes backends that do not return unit vectors.
class BlackBoxProvider {
 public:
  virtual ~BlackBoxProvider() = default;

  virtual std::size_t embed_dim() const = 0;
  /// Tag identifying the underlying model, used to key caches.
  virtual std::string identity() const = 0;

  std::size_t max_batch() const noexcept { return max_batch_; }
  void set_max_batch(std::size_t n);

  std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts);

  /// Embeds any number of texts in batches of `max_batch`, with up to
  /// `parallelism` batches in flight. Output order follows input order.
  std::vector<EmbeddingVector> embed_all(std::span<const std::string> texts,
                                         std::size_t parallelism = 4);

  EmbeddingVector embed(const std::string& text);

 protected:
  /// Returns one raw vector per text, in order.
  virtual std::vector<std::vector<double>> fetch(std::span<const std::string> texts) = 0;

 private:
  std::size_t max_batch_ = kDefaultMaxBatch;
};

/// Deterministic offline embedding: signed feature hashing of character
/// 3-grams into `dim` buckets, then L2 normalization. Texts shorter than three
/// bytes hash as a single gram. Throws UsageError on empty text or dim < 2.
EmbeddingVector stub_embed(std::uint64_t seed, std::size_t dim, const std::string& text);

class StubProvider final : public BlackBoxProvider {
 public:
  StubProvider(std::uint64_t seed, std::size_t dim);

  std::size_t embed_dim() const override { return dim_; }
  std::string identity() const override;

 protected:
  std::vector<std::vector<double>> fetch(std::span<const std::string> texts) override;

 private:
  std::uint64_t seed_;
  std::size_t dim_;
};

/// Cache key: SHA-256 over (identity tag, NUL, exact text bytes).
Sha256Digest cache_key(const std::string& identity, const std::string& text);

/// Persistent text -> embedding store in the MAFC binary format:
///   "MAFC" | version u32 | dim u32 | identity length u32 | identity bytes
///   then records of 32-byte key + dim x f64, all little-endian.
/// Records are appended and flushed per batch. A trailing partial record (an
/// interrupted write) is ignored on load.
class EmbeddingCache {
 public:
  static constexpr std::uint32_t kVersion = 1;

  /// Opens `path`, creating it when absent. Throws DataError when an existing
  /// file was written for a different identity or dimension.
  EmbeddingCache(std::string path, std::string identity, std::size_t dim);

  /// Opens an existing cache read-only and adopts its identity and dimension.
  static std::unique_ptr<EmbeddingCache> open_existing(const std::string& path);

  const std::string& path() const noexcept { return path_; }
  const std::string& identity() const noexcept { return identity_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const;

  std::optional<EmbeddingVector> lookup(const std::string& text) const;
  std::optional<EmbeddingVector> lookup_key(const Sha256Digest& key) const;
  bool contains(const std::string& text) const;

  /// All entries, sorted by key.
  std::vector<std::pair<Sha256Digest, std::vector<double>>> snapshot() const;

  /// Appends entries not yet present and flushes them to disk.
  void insert(std::span<const std::string> texts, std::span<const EmbeddingVector> vectors);

 private:
  EmbeddingCache() = default;
  void load(bool must_match);

  struct KeyHash {
    std::size_t operator()(const Sha256Digest& k) const noexcept;
  };

  std::string path_;
  std::string identity_;
  std::size_t dim_ = 0;
  std::unordered_map<Sha256Digest, std::vector<double>, KeyHash> entries_;
  mutable std::mutex mutex_;
};

/// Read-only provider over precomputed vectors. Accepts either a MAFC cache
/// file or JSON lines of {"text": str, "embedding": [float...]}; a JSON-lines
/// store takes its identity from `identity`.
class FileStoreProvider final : public BlackBoxProvider {
 public:
  explicit FileStoreProvider(const std::string& path, std::string identity = "file-store");

  std::size_t embed_dim() const override { return dim_; }
  std::string identity() const override { return identity_; }
  std::size_t size() const noexcept { return entries_.size(); }

 protected:
  std::vector<std::vector<double>> fetch(std::span<const std::string> texts) override;

 private:
  struct KeyHash {
    std::size_t operator()(const Sha256Digest& k) const noexcept;
  };
  std::string identity_;
  std::size_t dim_ = 0;
  std::unordered_map<Sha256Digest, std::vector<double>, KeyHash> entries_;
};

struct HttpProviderConfig {
  std::string base_url;  ///< scheme://host[:port]
  std::string path = "/v1/embeddings";
  std::string model;
  std::size_t dim = 0;
  std::string token_env = "MAFIN_EMBED_TOKEN";
  std::size_t max_chars = 8000;
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{1000};
  std::chrono::seconds timeout{60};
};

/// Client for an OpenAI-style embeddings endpoint.
class HttpProvider final : public BlackBoxProvider {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  /// Throws ProviderError (non-retriable) when the token variable is unset.
  explicit HttpProvider(HttpProviderConfig config);

  std::size_t embed_dim() const override { return config_.dim; }
  std::string identity() const override { return "http:" + config_.model; }

  /// Replaces the backoff sleep, e.g. to keep tests fast.
  void set_sleeper(Sleeper sleeper) { sleeper_ = std::move(sleeper); }

  /// Request body for a batch, after truncation to `max_chars`.
  std::string request_body(std::span<const std::string> texts) const;

  /// Parses a response body, reordering entries by their "index" field.
  static std::vector<std::vector<double>> parse_response(const std::string& body,
                                                         std::size_t expected);

 protected:
  std::vector<std::vector<double>> fetch(std::span<const std::string> texts) override;

 private:
  HttpProviderConfig config_;
  std::string token_;
  Sleeper sleeper_;
};

/// Serves embeddings from a cache and fetches misses from the wrapped provider,
/// writing them back. Results are bit-identical to calling the provider directly.
class CachedProvider final : public BlackBoxProvider {
 public:
  /// Throws DataError on identity or dimension mismatch between cache and provider.
  CachedProvider(std::shared_ptr<BlackBoxProvider> inner, std::shared_ptr<EmbeddingCache> cache);

  std::size_t embed_dim() const override { return inner_->embed_dim(); }
  std::string identity() const override { return inner_->identity(); }

  std::size_t hits() const noexcept { return hits_; }
  std::size_t misses() const noexcept { return misses_; }

 protected:
  std::vector<std::vector<double>> fetch(std::span<const std::string> texts) override;

 private:
  std::shared_ptr<BlackBoxProvider> inner_;
  std::shared_ptr<EmbeddingCache> cache_;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
  std::mutex mutex_;
};

struct FillReport {
  std::size_t hits = 0;
  std::size_t misses = 0;
  std::size_t fetched = 0;
};

/// Persists the embedding of every passage and query. Re-running fetches only
/// what is missing. Throws DataError on an identity mismatch with an existing cache.
FillReport cache_fill(BlackBoxProvider& provider, const Corpus& corpus, const QuerySet& queries,
                      const std::string& cache_path, bool include_title = true);

}  // namespace mafin
