#include "disco/formats.hpp"

#include "disco/io.hpp"

#include <cmath>

namespace disco {

namespace {

std::uint32_t to_millihz(double hz) {
  const double m = std::round(hz * 1000.0);
  if (!(m > 0.0 && m < 4294967296.0)) throw DataError("rate " + std::to_string(hz) + " Hz cannot be stored");
  return static_cast<std::uint32_t>(m);
}

void expect_header(ByteReader& r, std::string_view magic, const std::string& what) {
  if (r.bytes(4) != magic) throw DataError(what + ": bad magic (expected " + std::string(magic) + ")");
  const auto v = r.u16();
  if (v != kFormatVersion) throw DataError(what + ": unsupported version " + std::to_string(v));
}

void expect_end(const ByteReader& r, const std::string& what) {
  if (r.remaining() != 0) throw DataError(what + ": " + std::to_string(r.remaining()) + " trailing bytes");
}

}  // namespace

std::string encode_token_file(const TokenFile& f) {
  if (f.levels.size() > 255) throw DataError("token file: too many levels");
  ByteWriter w;
  w.bytes("KNTK");
  w.u16(kFormatVersion);
  w.u32(to_millihz(f.token_rate_hz));
  w.u32(f.codebook_size);
  w.u8(static_cast<std::uint8_t>(f.levels.size()));
  for (int l : f.levels) {
    if (l < 2 || l > 255) throw DataError("token file: level count " + std::to_string(l) + " does not fit u8");
    w.u8(static_cast<std::uint8_t>(l));
  }
  w.u64(f.tokens.size());
  for (auto t : f.tokens) {
    if (t >= f.codebook_size) throw DataError("token file: token " + std::to_string(t) + " >= codebook size");
    w.u16(t);
  }
  return w.str();
}

TokenFile decode_token_file(std::string_view bytes, const std::string& what) {
  ByteReader r(bytes, what);
  expect_header(r, "KNTK", what);
  TokenFile f;
  f.token_rate_hz = r.u32() / 1000.0;
  f.codebook_size = r.u32();
  f.levels.resize(r.u8());
  std::uint64_t product = 1;
  for (auto& l : f.levels) {
    l = r.u8();
    product *= static_cast<std::uint64_t>(l);
  }
  if (!f.levels.empty() && product != f.codebook_size)
    throw DataError(what + ": levels imply " + std::to_string(product) + " codes but header says " +
                    std::to_string(f.codebook_size));
  const auto n = r.u64();
  if (n * 2 != r.remaining())
    throw DataError(what + ": declared " + std::to_string(n) + " tokens but payload has " +
                    std::to_string(r.remaining()) + " bytes");
  f.tokens.resize(n);
  for (auto& t : f.tokens) {
    t = r.u16();
    if (t >= f.codebook_size) throw DataError(what + ": token " + std::to_string(t) + " >= codebook size");
  }
  return f;
}

std::string encode_embedding_file(const EmbeddingFile& f) {
  ByteWriter w;
  w.bytes("KNGE");
  w.u16(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(f.values.size()));
  for (float v : f.values) w.f32(v);
  return w.str();
}

EmbeddingFile decode_embedding_file(std::string_view bytes, const std::string& what) {
  ByteReader r(bytes, what);
  expect_header(r, "KNGE", what);
  const auto dim = r.u32();
  if (std::uint64_t{dim} * 4 != r.remaining())
    throw DataError(what + ": dim " + std::to_string(dim) + " does not match payload");
  EmbeddingFile f;
  f.values.resize(dim);
  for (auto& v : f.values) v = r.f32();
  return f;
}

std::string encode_feature_file(const FeatureFile& f) {
  ByteWriter w;
  w.bytes("KNFT");
  w.u16(kFormatVersion);
  w.u32(to_millihz(f.rate_hz));
  w.u32(static_cast<std::uint32_t>(f.values.cols()));
  w.u64(static_cast<std::uint64_t>(f.values.rows()));
  for (Eigen::Index i = 0; i < f.values.size(); ++i) w.f32(f.values.data()[i]);
  return w.str();
}

FeatureFile decode_feature_file(std::string_view bytes, const std::string& what) {
  ByteReader r(bytes, what);
  expect_header(r, "KNFT", what);
  FeatureFile f;
  f.rate_hz = r.u32() / 1000.0;
  const auto dims = r.u32();
  const auto frames = r.u64();
  if (frames * dims * 4 != r.remaining())
    throw DataError(what + ": " + std::to_string(frames) + " x " + std::to_string(dims) +
                    " frames do not match payload of " + std::to_string(r.remaining()) + " bytes");
  f.values.resize(static_cast<Eigen::Index>(frames), static_cast<Eigen::Index>(dims));
  for (Eigen::Index i = 0; i < f.values.size(); ++i) f.values.data()[i] = r.f32();
  expect_end(r, what);
  return f;
}

void write_token_file(const std::filesystem::path& p, const TokenFile& f, bool force) {
  atomic_write(p, encode_token_file(f), force);
}
TokenFile read_token_file(const std::filesystem::path& p) { return decode_token_file(read_file(p), p.string()); }
void write_embedding_file(const std::filesystem::path& p, const EmbeddingFile& f, bool force) {
  atomic_write(p, encode_embedding_file(f), force);
}
EmbeddingFile read_embedding_file(const std::filesystem::path& p) {
  return decode_embedding_file(read_file(p), p.string());
}
void write_feature_file(const std::filesystem::path& p, const FeatureFile& f, bool force) {
  atomic_write(p, encode_feature_file(f), force);
}
FeatureFile read_feature_file(const std::filesystem::path& p) { return decode_feature_file(read_file(p), p.string()); }

}  // namespace disco
