#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace flowcrypt::io {

using Bytes = std::vector<std::uint8_t>;

std::uint32_t crc32(std::span<const std::uint8_t> data);

// Little-endian append-only encoder for the FKEY / FMOD / FTNS containers.
class ByteWriter {
 public:
  void magic(std::string_view four_cc);
  void u8(std::uint8_t v);
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void f64(double v);
  void f64s(std::span<const double> values);

  // Appends CRC-32 of everything written so far and returns the buffer.
  Bytes finish_with_crc() &&;
  const Bytes& bytes() const { return buf_; }

 private:
  Bytes buf_;
};

// Bounds-checked decoder. Construction verifies the trailing CRC-32 and
// throws kCorruption on mismatch; reads past the payload throw kCorruption.
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> data, std::string_view what);

  void expect_magic(std::string_view four_cc);
  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  double f64();
  std::vector<double> f64s(std::size_t count);

  std::size_t remaining() const { return end_ - pos_; }
  void expect_end() const;

 private:
  const std::uint8_t* take(std::size_t n);

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::size_t end_ = 0;
  std::string what_;
};

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data);

// 64-bit FNV-1a, hex encoded. Used for provenance fingerprints only.
std::string fingerprint(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

}  // namespace flowcrypt::io
