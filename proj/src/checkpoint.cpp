#include "mafin/checkpoint.hpp"

#include "mafin/binary_io.hpp"
#include "mafin/error.hpp"
#include "mafin/hashing.hpp"

namespace mafin {

namespace {

void append_crc(std::vector<std::uint8_t>& buf) {
  binary::put_u32(buf, crc32(buf));
}

// Verifies the trailing CRC and returns the payload without it.
std::span<const std::uint8_t> checked_payload(const std::vector<std::uint8_t>& bytes,
                                              const std::string& path, std::string_view magic) {
  if (bytes.size() < magic.size() + 4 + 4) throw DataError(path + ": file too short");
  if (std::string_view(reinterpret_cast<const char*>(bytes.data()), magic.size()) != magic) {
    throw DataError(path + ": bad magic, expected " + std::string(magic));
  }
  const std::span<const std::uint8_t> all(bytes);
  binary::Reader version_reader(all.subspan(magic.size(), 4), path);
  const auto version = version_reader.u32();
  if (version != kCheckpointVersion) {
    throw DataError(path + ": unsupported checkpoint version " + std::to_string(version) +
                    " (this build reads version " + std::to_string(kCheckpointVersion) + ")");
  }
  const auto payload = all.first(bytes.size() - 4);
  binary::Reader tail(all.last(4), path);
  if (tail.u32() != crc32(payload)) throw DataError(path + ": CRC mismatch, checkpoint corrupted");
  return payload;
}

}  // namespace

void save_augmenting_model(const AugmentingModel& model, const std::string& path) {
  std::vector<std::uint8_t> buf;
  const std::size_t f = model.feature_dim();
  buf.reserve(32 + 8 * f * model.dim());
  binary::put_bytes(buf, "MAFW");
  binary::put_u32(buf, kCheckpointVersion);
  binary::put_u32(buf, model.feature_dim());
  binary::put_u32(buf, static_cast<std::uint32_t>(model.dim()));
  binary::put_u8(buf, static_cast<std::uint8_t>(model.mode()));
  binary::put_u64(buf, model.hasher().seed());
  for (std::size_t r = 0; r < model.dim(); ++r) {
    for (std::uint32_t c = 0; c < f; ++c) binary::put_f64(buf, model.weight(r, c));
  }
  append_crc(buf);
  binary::write_file_atomic(path, buf);
}

AugmentingModel load_augmenting_model(const std::string& path) {
  const auto bytes = binary::read_file(path);
  binary::Reader r(checked_payload(bytes, path, "MAFW"), path);
  r.take(8);
  const std::uint32_t f = r.u32();
  const std::uint32_t d = r.u32();
  const auto mode_byte = r.u8();
  if (mode_byte > 1) throw DataError(path + ": unknown embedding mode byte");
  const std::uint64_t seed = r.u64();
  if (r.remaining() != 8ull * f * d) throw DataError(path + ": weight block has the wrong size");
  AugmentingModel model(FeatureHasher(f, seed), d, static_cast<EmbeddingMode>(mode_byte));
  for (std::size_t row = 0; row < d; ++row) {
    for (std::uint32_t c = 0; c < f; ++c) model.set_weight(row, c, r.f64());
  }
  return model;
}

void save_linear_transform(const LinearTransform& t, const std::string& path) {
  std::vector<std::uint8_t> buf;
  binary::put_bytes(buf, "MAFL");
  binary::put_u32(buf, kCheckpointVersion);
  binary::put_u8(buf, static_cast<std::uint8_t>(t.mode()));
  binary::put_u32(buf, static_cast<std::uint32_t>(t.dim()));
  binary::put_u32(buf, static_cast<std::uint32_t>(t.rank()));
  if (t.mode() == LinearTransform::Mode::full) {
    for (double w : t.full_weights()) binary::put_f64(buf, w);
  } else {
    for (double w : t.left()) binary::put_f64(buf, w);
    for (double w : t.right()) binary::put_f64(buf, w);
  }
  append_crc(buf);
  binary::write_file_atomic(path, buf);
}

LinearTransform load_linear_transform(const std::string& path) {
  const auto bytes = binary::read_file(path);
  binary::Reader r(checked_payload(bytes, path, "MAFL"), path);
  r.take(8);
  const auto mode = r.u8();
  const std::size_t dim = r.u32();
  const std::size_t rank = r.u32();
  auto read_block = [&](std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = r.f64();
    return v;
  };
  if (mode == 0) {
    auto w = read_block(dim * dim);
    if (r.remaining() != 0) throw DataError(path + ": trailing bytes");
    return LinearTransform::full(dim, std::move(w));
  }
  if (mode == 1) {
    auto left = read_block(dim * rank);
    auto right = read_block(dim * rank);
    if (r.remaining() != 0) throw DataError(path + ": trailing bytes");
    return LinearTransform::low_rank(dim, rank, std::move(left), std::move(right));
  }
  throw DataError(path + ": unknown transform mode byte");
}

}  // namespace mafin
