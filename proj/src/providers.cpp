#include "mafin/providers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <future>
#include <json.hpp>
#include <set>

#include "mafin/binary_io.hpp"
#include "mafin/error.hpp"

namespace mafin {

namespace {

using json = nlohmann::json;

constexpr char kCacheMagic[4] = {'M', 'A', 'F', 'C'};

std::size_t digest_hash(const Sha256Digest& k) noexcept {
  std::size_t h = 0;
  std::memcpy(&h, k.data(), sizeof(h));
  return h;
}

std::string short_hash(const std::string& text) {
  const auto d = sha256(text);
  return to_hex(d);
}

}  // namespace

void BlackBoxProvider::set_max_batch(std::size_t n) {
  if (n == 0) throw UsageError("max batch must be positive");
  max_batch_ = n;
}

std::vector<EmbeddingVector> BlackBoxProvider::embed_batch(std::span<const std::string> texts) {
  if (texts.size() > max_batch_) {
    throw UsageError("batch of " + std::to_string(texts.size()) + " exceeds max batch " +
                     std::to_string(max_batch_));
  }
  for (const auto& t : texts) {
    if (t.empty()) throw UsageError("cannot embed an empty text");
  }
  if (texts.empty()) return {};
  auto raw = fetch(texts);
  if (raw.size() != texts.size()) {
    throw ProviderError("backend returned " + std::to_string(raw.size()) + " vectors for " +
                            std::to_string(texts.size()) + " texts",
                        false);
  }
  std::vector<EmbeddingVector> out;
  out.reserve(raw.size());
  for (auto& r : raw) {
    if (r.size() != embed_dim()) {
      throw ProviderError("dimension drift: backend returned " + std::to_string(r.size()) +
                              ", expected " + std::to_string(embed_dim()),
                          false);
    }
    EmbeddingVector v(std::move(r));
    out.push_back(v.normalized() ? std::move(v) : l2_normalize(v));
  }
  return out;
}

std::vector<EmbeddingVector> BlackBoxProvider::embed_all(std::span<const std::string> texts,
                                                         std::size_t parallelism) {
  std::vector<EmbeddingVector> out(texts.size());
  parallelism = std::max<std::size_t>(parallelism, 1);
  std::vector<std::future<void>> inflight;
  for (std::size_t start = 0; start < texts.size(); start += max_batch_) {
    const std::size_t n = std::min(max_batch_, texts.size() - start);
    if (inflight.size() >= parallelism) {
      inflight.front().get();
      inflight.erase(inflight.begin());
    }
    auto launch = parallelism == 1 ? std::launch::deferred : std::launch::async;
    inflight.push_back(std::async(launch, [this, texts, start, n, &out] {
      auto batch = embed_batch(texts.subspan(start, n));
      std::move(batch.begin(), batch.end(), out.begin() + static_cast<std::ptrdiff_t>(start));
    }));
    if (parallelism == 1) {
      inflight.back().get();
      inflight.pop_back();
    }
  }
  for (auto& f : inflight) f.get();
  return out;
}

EmbeddingVector BlackBoxProvider::embed(const std::string& text) {
  return std::move(embed_batch(std::span<const std::string>(&text, 1)).front());
}

EmbeddingVector stub_embed(std::uint64_t seed, std::size_t dim, const std::string& text) {
  if (dim < 2) throw UsageError("stub embedding requires dim >= 2");
  if (text.empty()) throw UsageError("cannot embed an empty text");
  std::vector<double> counts(dim, 0.0);
  auto add_gram = [&](std::string_view gram) {
    const std::uint64_t h = hash_bytes(gram, seed);
    const std::size_t bucket = static_cast<std::size_t>(h % dim);
    counts[bucket] += (h >> 63) != 0 ? -1.0 : 1.0;
  };
  const std::string_view view(text);
  if (view.size() < 3) {
    add_gram(view);
  } else {
    for (std::size_t i = 0; i + 3 <= view.size(); ++i) add_gram(view.substr(i, 3));
  }
  EmbeddingVector raw(std::move(counts));
  if (raw.norm() == 0.0) {
    // Signed counts cancelled exactly; fall back to a text-dependent basis vector.
    return EmbeddingVector::basis(dim, static_cast<std::size_t>(hash_bytes(view, ~seed) % dim));
  }
  return l2_normalize(raw);
}

StubProvider::StubProvider(std::uint64_t seed, std::size_t dim) : seed_(seed), dim_(dim) {
  if (dim < 2) throw UsageError("stub provider requires dim >= 2");
}

std::string StubProvider::identity() const {
  return "stub:seed=" + std::to_string(seed_) + ":dim=" + std::to_string(dim_);
}

std::vector<std::vector<double>> StubProvider::fetch(std::span<const std::string> texts) {
  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (const auto& t : texts) {
    auto v = stub_embed(seed_, dim_, t);
    out.emplace_back(v.values().begin(), v.values().end());
  }
  return out;
}

Sha256Digest cache_key(const std::string& identity, const std::string& text) {
  std::string buf;
  buf.reserve(identity.size() + 1 + text.size());
  buf.append(identity);
  buf.push_back('\0');
  buf.append(text);
  return sha256(buf);
}

std::size_t EmbeddingCache::KeyHash::operator()(const Sha256Digest& k) const noexcept {
  return digest_hash(k);
}

EmbeddingCache::EmbeddingCache(std::string path, std::string identity, std::size_t dim)
    : path_(std::move(path)), identity_(std::move(identity)), dim_(dim) {
  if (dim_ == 0) throw UsageError("cache dimension must be positive");
  if (std::filesystem::exists(path_)) {
    load(true);
    return;
  }
  std::vector<std::uint8_t> header;
  binary::put_bytes(header, std::string_view(kCacheMagic, 4));
  binary::put_u32(header, kVersion);
  binary::put_u32(header, static_cast<std::uint32_t>(dim_));
  binary::put_u32(header, static_cast<std::uint32_t>(identity_.size()));
  binary::put_bytes(header, identity_);
  binary::write_file_atomic(path_, header);
}

std::unique_ptr<EmbeddingCache> EmbeddingCache::open_existing(const std::string& path) {
  std::unique_ptr<EmbeddingCache> cache(new EmbeddingCache());
  cache->path_ = path;
  cache->load(false);
  return cache;
}

std::vector<std::pair<Sha256Digest, std::vector<double>>> EmbeddingCache::snapshot() const {
  std::lock_guard lock(mutex_);
  std::vector<std::pair<Sha256Digest, std::vector<double>>> out(entries_.begin(), entries_.end());
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

void EmbeddingCache::load(bool must_match) {
  const auto bytes = binary::read_file(path_);
  binary::Reader r(bytes, path_);
  if (r.str(4) != std::string_view(kCacheMagic, 4)) throw DataError(path_ + ": not a MAFC cache");
  const auto version = r.u32();
  if (version != kVersion) {
    throw DataError(path_ + ": unsupported cache version " + std::to_string(version));
  }
  const std::size_t dim = r.u32();
  const std::string identity = r.str(r.u32());
  if (must_match) {
    if (identity != identity_) {
      throw DataError(path_ + ": cache was written by provider '" + identity +
                      "', refusing to mix with '" + identity_ + "'");
    }
    if (dim != dim_) {
      throw DataError(path_ + ": cache dimension " + std::to_string(dim) + " != provider " +
                      std::to_string(dim_));
    }
  } else {
    identity_ = identity;
    dim_ = dim;
  }
  const std::size_t record = 32 + 8 * dim_;
  while (r.remaining() >= record) {
    Sha256Digest key{};
    auto k = r.take(32);
    std::copy(k.begin(), k.end(), key.begin());
    std::vector<double> v(dim_);
    for (auto& x : v) x = r.f64();
    entries_[key] = std::move(v);
  }
  if (r.remaining() != 0) {
    warn(nullptr, path_ + ": ignoring " + std::to_string(r.remaining()) +
                      " trailing bytes from an interrupted write");
    if (must_match) std::filesystem::resize_file(path_, r.offset());
  }
}

std::size_t EmbeddingCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

std::optional<EmbeddingVector> EmbeddingCache::lookup_key(const Sha256Digest& key) const {
  std::lock_guard lock(mutex_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return EmbeddingVector(it->second);
}

std::optional<EmbeddingVector> EmbeddingCache::lookup(const std::string& text) const {
  return lookup_key(cache_key(identity_, text));
}

bool EmbeddingCache::contains(const std::string& text) const {
  const auto key = cache_key(identity_, text);
  std::lock_guard lock(mutex_);
  return entries_.count(key) != 0;
}

void EmbeddingCache::insert(std::span<const std::string> texts,
                            std::span<const EmbeddingVector> vectors) {
  if (texts.size() != vectors.size()) throw UsageError("cache insert: size mismatch");
  std::vector<std::uint8_t> buf;
  std::lock_guard lock(mutex_);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (vectors[i].dim() != dim_) throw DimensionError("cache insert: wrong dimension");
    const auto key = cache_key(identity_, texts[i]);
    if (entries_.count(key) != 0) continue;
    buf.insert(buf.end(), key.begin(), key.end());
    for (double x : vectors[i].values()) binary::put_f64(buf, x);
    entries_.emplace(key, std::vector<double>(vectors[i].values().begin(), vectors[i].values().end()));
  }
  if (buf.empty()) return;
  std::ofstream out(path_, std::ios::binary | std::ios::app);
  if (!out) throw DataError("cannot append to " + path_);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  out.flush();
  if (!out) throw DataError("write failed for " + path_);
}

std::size_t FileStoreProvider::KeyHash::operator()(const Sha256Digest& k) const noexcept {
  return digest_hash(k);
}

FileStoreProvider::FileStoreProvider(const std::string& path, std::string identity)
    : identity_(std::move(identity)) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw DataError("cannot open embedding store " + path);
  char magic[4] = {};
  probe.read(magic, 4);
  if (probe.gcount() == 4 && std::memcmp(magic, kCacheMagic, 4) == 0) {
    auto cache = EmbeddingCache::open_existing(path);
    identity_ = cache->identity();
    dim_ = cache->dim();
    for (auto& [key, values] : cache->snapshot()) entries_.emplace(key, std::move(values));
    return;
  }
  probe.close();
  std::ifstream in(path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(where + ": malformed JSON (" + e.what() + ")");
    }
    if (!obj.contains("text") || !obj["text"].is_string() || !obj.contains("embedding") ||
        !obj["embedding"].is_array()) {
      throw DataError(where + ": expected {\"text\": str, \"embedding\": [...]}");
    }
    auto v = obj["embedding"].get<std::vector<double>>();
    if (v.empty()) throw DataError(where + ": empty embedding");
    if (dim_ == 0) dim_ = v.size();
    if (v.size() != dim_) throw DataError(where + ": inconsistent embedding dimension");
    entries_[cache_key(identity_, obj["text"].get<std::string>())] = std::move(v);
  }
  if (dim_ == 0) throw DataError(path + ": embedding store is empty");
}

std::vector<std::vector<double>> FileStoreProvider::fetch(std::span<const std::string> texts) {
  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (const auto& t : texts) {
    auto it = entries_.find(cache_key(identity_, t));
    if (it == entries_.end()) {
      throw ProviderError("missing precomputed embedding for text sha256=" + short_hash(t), false);
    }
    out.push_back(it->second);
  }
  return out;
}

CachedProvider::CachedProvider(std::shared_ptr<BlackBoxProvider> inner,
                               std::shared_ptr<EmbeddingCache> cache)
    : inner_(std::move(inner)), cache_(std::move(cache)) {
  if (cache_->identity() != inner_->identity()) {
    throw DataError("cache identity '" + cache_->identity() + "' does not match provider '" +
                    inner_->identity() + "'");
  }
  if (cache_->dim() != inner_->embed_dim()) {
    throw DataError("cache dimension does not match provider");
  }
  set_max_batch(inner_->max_batch());
}

std::vector<std::vector<double>> CachedProvider::fetch(std::span<const std::string> texts) {
  std::vector<std::vector<double>> out(texts.size());
  std::vector<std::string> missing;
  std::vector<std::size_t> missing_pos;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (auto hit = cache_->lookup(texts[i])) {
      out[i].assign(hit->values().begin(), hit->values().end());
    } else {
      missing.push_back(texts[i]);
      missing_pos.push_back(i);
    }
  }
  {
    std::lock_guard lock(mutex_);
    hits_ += texts.size() - missing.size();
    misses_ += missing.size();
  }
  if (!missing.empty()) {
    auto fetched = inner_->embed_batch(missing);
    cache_->insert(missing, fetched);
    for (std::size_t j = 0; j < missing.size(); ++j) {
      out[missing_pos[j]].assign(fetched[j].values().begin(), fetched[j].values().end());
    }
  }
  return out;
}

FillReport cache_fill(BlackBoxProvider& provider, const Corpus& corpus, const QuerySet& queries,
                      const std::string& cache_path, bool include_title) {
  EmbeddingCache cache(cache_path, provider.identity(), provider.embed_dim());
  std::vector<std::string> texts;
  texts.reserve(corpus.size() + queries.size());
  for (const auto& p : corpus) texts.push_back(p.embed_text(include_title));
  for (const auto& q : queries) texts.push_back(q.text);

  FillReport report;
  std::vector<std::string> missing;
  std::set<Sha256Digest> queued;
  for (const auto& t : texts) {
    const auto key = cache_key(cache.identity(), t);
    if (cache.lookup_key(key)) {
      ++report.hits;
    } else if (queued.insert(key).second) {
      ++report.misses;
      missing.push_back(t);
    } else {
      ++report.hits;  // duplicate text within this fill
    }
  }
  for (std::size_t start = 0; start < missing.size(); start += provider.max_batch()) {
    const std::size_t n = std::min(provider.max_batch(), missing.size() - start);
    std::span<const std::string> batch(missing.data() + start, n);
    auto vectors = provider.embed_batch(batch);
    cache.insert(batch, vectors);
    report.fetched += n;
  }
  return report;
}

}  // namespace mafin
