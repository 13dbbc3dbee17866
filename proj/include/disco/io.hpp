#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace disco {

/// Malformed, missing or inconsistent input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration text or values.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Destination exists and overwriting was not requested.
class OutputExistsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::filesystem::path& path);

/// Writes through a temporary sibling and renames it into place.
void atomic_write(const std::filesystem::path& path, std::string_view bytes, bool force = true);

/// Throws OutputExistsError when `path` exists and `force` is false.
void check_writable(const std::filesystem::path& path, bool force);

// Little-endian byte packing.
class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.append(s); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}
  std::string_view bytes(std::size_t n);
  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }
  void skip(std::size_t n) { bytes(n); }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
  std::string what_;
};

}  // namespace disco
