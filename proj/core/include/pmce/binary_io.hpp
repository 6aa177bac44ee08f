#pragma once

// Little-endian byte encoding, FNV-1a checksums and whole-file I/O shared by
// every on-disk format in the library.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pmce {

using Bytes = std::vector<std::byte>;

/// 64-bit FNV-1a over a byte range.
std::uint64_t fnv1a64(std::span<const std::byte> bytes);

/// 16 lowercase hex digits.
std::string to_hex(std::uint64_t value);
std::string fnv1a64_hex(std::span<const std::byte> bytes);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::byte> bytes);

/// Appends little-endian scalars to a growing buffer.
class ByteWriter {
 public:
  void put_u32(std::uint32_t v);
  void put_u64(std::uint64_t v);
  void put_f32(float v);
  void put_f64(double v);
  void put_bytes(std::span<const std::byte> b);
  void put_string(std::string_view s);

  const Bytes& bytes() const noexcept { return buf_; }
  Bytes take() noexcept { return std::move(buf_); }

 private:
  Bytes buf_;
};

/// Reads little-endian scalars from a byte range; throws FormatError when the
/// range is exhausted early.
class ByteReader {
 public:
  ByteReader(std::span<const std::byte> bytes, std::string context)
      : bytes_(bytes), context_(std::move(context)) {}

  std::uint32_t get_u32();
  std::uint64_t get_u64();
  float get_f32();
  double get_f64();
  std::span<const std::byte> get_bytes(std::size_t n);

  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
  std::size_t position() const noexcept { return pos_; }

 private:
  void need(std::size_t n) const;

  std::span<const std::byte> bytes_;
  std::size_t pos_ = 0;
  std::string context_;
};

}  // namespace pmce
