#include "flowcrypt/binary_io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "flowcrypt/error.hpp"

namespace flowcrypt::io {

static_assert(std::endian::native == std::endian::little,
              "container encoders assume a little-endian host");

std::uint32_t crc32(std::span<const std::uint8_t> data) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for very large payloads.
  const std::uint8_t* p = data.data();
  std::size_t left = data.size();
  while (left > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
    crc = ::crc32(crc, p, chunk);
    p += chunk;
    left -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void ByteWriter::magic(std::string_view four_cc) {
  buf_.insert(buf_.end(), four_cc.begin(), four_cc.end());
}

void ByteWriter::u8(std::uint8_t v) { buf_.push_back(v); }

void ByteWriter::u16(std::uint16_t v) {
  buf_.push_back(static_cast<std::uint8_t>(v & 0xff));
  buf_.push_back(static_cast<std::uint8_t>(v >> 8));
}

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f64(double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

void ByteWriter::f64s(std::span<const double> values) {
  for (double v : values) f64(v);
}

Bytes ByteWriter::finish_with_crc() && {
  u32(crc32(buf_));
  return std::move(buf_);
}

ByteReader::ByteReader(std::span<const std::uint8_t> data, std::string_view what)
    : data_(data), what_(what) {
  require(data.size() >= 8, ErrorKind::kCorruption, what_ + ": file truncated");
  end_ = data.size() - 4;
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= std::uint32_t{data[end_ + i]} << (8 * i);
  require(stored == crc32(data.first(end_)), ErrorKind::kCorruption,
          what_ + ": CRC-32 mismatch");
}

const std::uint8_t* ByteReader::take(std::size_t n) {
  require(n <= end_ - pos_, ErrorKind::kCorruption, what_ + ": payload truncated");
  const std::uint8_t* p = data_.data() + pos_;
  pos_ += n;
  return p;
}

void ByteReader::expect_magic(std::string_view four_cc) {
  const auto* p = take(four_cc.size());
  require(std::memcmp(p, four_cc.data(), four_cc.size()) == 0, ErrorKind::kCorruption,
          what_ + ": bad magic, expected " + std::string(four_cc));
}

std::uint8_t ByteReader::u8() { return *take(1); }

std::uint16_t ByteReader::u16() {
  const auto* p = take(2);
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t ByteReader::u32() {
  const auto* p = take(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{p[i]} << (8 * i);
  return v;
}

double ByteReader::f64() {
  const auto* p = take(8);
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= std::uint64_t{p[i]} << (8 * i);
  return std::bit_cast<double>(bits);
}

std::vector<double> ByteReader::f64s(std::size_t count) {
  require(count <= remaining() / 8, ErrorKind::kCorruption, what_ + ": payload truncated");
  std::vector<double> out(count);
  for (auto& v : out) v = f64();
  return out;
}

void ByteReader::expect_end() const {
  require(pos_ == end_, ErrorKind::kCorruption, what_ + ": trailing bytes before CRC");
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size()));
  if (!out) fail(ErrorKind::kIo, "write failed: " + path.string());
}

std::string fingerprint(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](std::span<const std::uint8_t> s) {
    for (auto c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  };
  feed(a);
  // Length separator keeps (a,b) and (a',b') with a+b == a'+b' apart.
  const auto n = static_cast<std::uint64_t>(a.size());
  for (int i = 0; i < 8; ++i) {
    h ^= static_cast<std::uint8_t>(n >> (8 * i));
    h *= 0x100000001b3ULL;
  }
  feed(b);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace flowcrypt::io
