#include "disco/checkpoint.hpp"

#include "disco/formats.hpp"
#include "disco/io.hpp"

#include <map>

namespace disco {

namespace {

constexpr char kMagic[4] = {'K', 'N', 'C', 'K'};
enum : std::uint8_t { kF32 = 0, kF64 = 1 };

void put_str(ByteWriter& w, const std::string& s) {
  w.u32(static_cast<std::uint32_t>(s.size()));
  w.bytes(s);
}

std::string get_str(ByteReader& r) {
  const std::uint32_t n = r.u32();
  return std::string(r.bytes(n));
}

template <typename M>
void put_blob(ByteWriter& w, const std::string& name, const M& m, bool f64) {
  put_str(w, name);
  w.u8(f64 ? kF64 : kF32);
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    if (f64)
      w.f64(static_cast<double>(m.data()[i]));
    else
      w.f32(static_cast<float>(m.data()[i]));
  }
}

struct Blob {
  std::uint8_t dtype;
  MatD values;
};

}  // namespace

std::string encode_checkpoint(const Config& cfg, const Codec<float>& codec, const NormStats& stats,
                              const Discriminator<float>* disc) {
  ByteWriter w;
  w.bytes(std::string_view(kMagic, 4));
  w.u16(kFormatVersion);
  put_str(w, render_config(cfg));
  std::uint32_t count = static_cast<std::uint32_t>(codec.store.entries().size()) + 2;
  if (codec.vq.initialized()) ++count;
  if (disc) count += static_cast<std::uint32_t>(disc->store.entries().size());
  w.u32(count);
  for (const auto& e : codec.store.entries()) put_blob(w, e.name, e.var.value(), false);
  put_blob(w, "norm.mean", MatD(stats.mean), true);
  put_blob(w, "norm.std", MatD(stats.std), true);
  if (codec.vq.initialized()) put_blob(w, "vq.codebook", codec.vq.codebook(), true);
  if (disc)
    for (const auto& e : disc->store.entries()) put_blob(w, e.name, e.var.value(), false);
  return w.str();
}

Checkpoint decode_checkpoint(std::string_view bytes, const std::string& what) {
  ByteReader r(bytes, what);
  if (r.bytes(4) != std::string_view(kMagic, 4)) throw DataError(what + ": not a checkpoint (bad magic)");
  const std::uint16_t version = r.u16();
  if (version != kFormatVersion) throw DataError(what + ": unsupported version " + std::to_string(version));
  const std::string text = get_str(r);
  Config cfg;
  try {
    cfg = parse_config(text, what + " config");
  } catch (const ConfigError& e) {
    throw DataError(e.what());
  }
  const std::uint32_t count = r.u32();
  std::map<std::string, Blob> blobs;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = get_str(r);
    Blob b;
    b.dtype = r.u8();
    if (b.dtype != kF32 && b.dtype != kF64) throw DataError(what + ": blob '" + name + "' has unknown dtype");
    const std::uint32_t rows = r.u32(), cols = r.u32();
    const std::uint64_t n = std::uint64_t(rows) * cols;
    if (n * (b.dtype == kF64 ? 8 : 4) > r.remaining()) throw DataError(what + ": blob '" + name + "' is truncated");
    b.values.resize(rows, cols);
    for (std::uint64_t k = 0; k < n; ++k) b.values.data()[k] = b.dtype == kF64 ? r.f64() : double(r.f32());
    if (!blobs.emplace(name, std::move(b)).second) throw DataError(what + ": duplicate blob '" + name + "'");
  }
  if (r.remaining() != 0) throw DataError(what + ": trailing bytes after the last blob");

  Checkpoint ck{cfg, make_codec<float>(cfg.model, cfg.train.seed), {}, std::nullopt};
  auto take = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols) -> MatD {
    auto it = blobs.find(name);
    if (it == blobs.end()) throw DataError(what + ": missing blob '" + name + "'");
    if (it->second.values.rows() != rows || it->second.values.cols() != cols)
      throw DataError(what + ": blob '" + name + "' has shape " + std::to_string(it->second.values.rows()) + "x" +
                      std::to_string(it->second.values.cols()) + ", config expects " + std::to_string(rows) + "x" +
                      std::to_string(cols));
    MatD v = std::move(it->second.values);
    blobs.erase(it);
    return v;
  };
  for (auto& e : ck.codec.store.entries()) e.var.mutable_value() = take(e.name, e.var.rows(), e.var.cols()).cast<float>();
  const auto d = cfg.model.ssl_dim;
  ck.stats.mean = take("norm.mean", 1, d).row(0);
  ck.stats.std = take("norm.std", 1, d).row(0);
  if (auto it = blobs.find("vq.codebook"); it != blobs.end()) {
    ck.codec.vq.restore(take("vq.codebook", cfg.model.vq.codebook_size, cfg.model.vq_dim));
  }
  bool has_disc = false;
  for (const auto& [name, b] : blobs) has_disc = has_disc || name.rfind("disc.", 0) == 0;
  if (has_disc) {
    ck.disc = make_discriminator<float>(cfg.model.mel.n_mels, cfg.train.disc_bands, cfg.train.disc_layers,
                                        cfg.train.disc_channels, cfg.train.seed);
    for (auto& e : ck.disc->store.entries())
      e.var.mutable_value() = take(e.name, e.var.rows(), e.var.cols()).cast<float>();
  }
  if (!blobs.empty()) throw DataError(what + ": unexpected blob '" + blobs.begin()->first + "'");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Config& cfg, const Codec<float>& codec,
                     const NormStats& stats, const Discriminator<float>* disc, bool force) {
  atomic_write(path, encode_checkpoint(cfg, codec, stats, disc), force);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path), path.string());
}

}  // namespace disco
