#include "disco/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <system_error>

namespace disco {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void check_writable(const std::filesystem::path& path, bool force) {
  if (!force && std::filesystem::exists(path))
    throw OutputExistsError("'" + path.string() + "' exists (use --force to overwrite)");
}

void atomic_write(const std::filesystem::path& path, std::string_view bytes, bool force) {
  check_writable(path, force);
  std::filesystem::path tmp = path;
  tmp += ".tmp" + std::to_string(std::random_device{}() % 1000000);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw DataError("cannot move output into '" + path.string() + "': " + ec.message());
  }
}

namespace {

template <typename T>
void put(std::string& buf, T v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

}  // namespace

void ByteWriter::u16(std::uint16_t v) { put(buf_, v); }
void ByteWriter::u32(std::uint32_t v) { put(buf_, v); }
void ByteWriter::u64(std::uint64_t v) { put(buf_, v); }
void ByteWriter::f32(float v) { put(buf_, v); }
void ByteWriter::f64(double v) { put(buf_, v); }

std::string_view ByteReader::bytes(std::size_t n) {
  if (n > remaining())
    throw DataError(what_ + ": truncated at byte " + std::to_string(pos_) + " (wanted " + std::to_string(n) +
                    ", have " + std::to_string(remaining()) + ")");
  auto s = data_.substr(pos_, n);
  pos_ += n;
  return s;
}

namespace {

template <typename T>
T take(ByteReader& r) {
  auto s = r.bytes(sizeof(T));
  T v;
  std::memcpy(&v, s.data(), sizeof(T));
  return v;
}

}  // namespace

std::uint8_t ByteReader::u8() { return take<std::uint8_t>(*this); }
std::uint16_t ByteReader::u16() { return take<std::uint16_t>(*this); }
std::uint32_t ByteReader::u32() { return take<std::uint32_t>(*this); }
std::uint64_t ByteReader::u64() { return take<std::uint64_t>(*this); }
float ByteReader::f32() { return take<float>(*this); }
double ByteReader::f64() { return take<double>(*this); }

}  // namespace disco
