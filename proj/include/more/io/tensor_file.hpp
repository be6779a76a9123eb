#pragma once

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "more/error.hpp"

namespace more::io {

/// Binary tensor container.
///
///   offset  size     field
///   0       4        magic "MRTF"
///   4       2        format version (u16, currently 1)
///   6       1        dtype tag: 0 = f32, 1 = f64, 2 = u8
///   7       1        rank (u8)
///   8       8*rank   dims (u64 each)
///   ...     N        payload, row-major, little-endian
///   end-4   4        CRC-32 (IEEE, zlib) of every preceding byte (u32)
///
/// All integers are little-endian.
enum class DType : std::uint8_t { f32 = 0, f64 = 1, u8 = 2 };

inline constexpr std::uint16_t kTensorVersion = 1;
inline constexpr char kTensorMagic[4] = {'M', 'R', 'T', 'F'};

inline std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::f32:
      return 4;
    case DType::f64:
      return 8;
    case DType::u8:
      return 1;
  }
  throw FormatError("tensor: unknown dtype tag");
}

struct Tensor {
  DType dtype = DType::f64;
  std::vector<std::uint64_t> dims;
  std::vector<std::byte> payload;  // little-endian element bytes

  std::uint64_t element_count() const {
    return std::accumulate(dims.begin(), dims.end(), std::uint64_t{1}, std::multiplies<>());
  }

  static Tensor from_f64(std::vector<std::uint64_t> dims, std::span<const double> values) {
    Tensor t{DType::f64, std::move(dims), {}};
    if (t.element_count() != values.size()) throw InvalidArgument("tensor: value count does not match dims");
    t.payload.resize(values.size() * 8);
    for (std::size_t i = 0; i < values.size(); ++i) put_le(t.payload.data() + 8 * i, std::bit_cast<std::uint64_t>(values[i]), 8);
    return t;
  }

  static Tensor from_f32(std::vector<std::uint64_t> dims, std::span<const float> values) {
    Tensor t{DType::f32, std::move(dims), {}};
    if (t.element_count() != values.size()) throw InvalidArgument("tensor: value count does not match dims");
    t.payload.resize(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) put_le(t.payload.data() + 4 * i, std::bit_cast<std::uint32_t>(values[i]), 4);
    return t;
  }

  static Tensor from_u8(std::vector<std::uint64_t> dims, std::span<const std::uint8_t> values) {
    Tensor t{DType::u8, std::move(dims), {}};
    if (t.element_count() != values.size()) throw InvalidArgument("tensor: value count does not match dims");
    t.payload.resize(values.size());
    std::memcpy(t.payload.data(), values.data(), values.size());
    return t;
  }

  // f32 and u8 payloads widen exactly.
  std::vector<double> to_f64() const {
    const std::size_t n = static_cast<std::size_t>(element_count());
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      switch (dtype) {
        case DType::f64:
          out[i] = std::bit_cast<double>(get_le(payload.data() + 8 * i, 8));
          break;
        case DType::f32:
          out[i] = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(payload.data() + 4 * i, 4)));
          break;
        case DType::u8:
          out[i] = static_cast<double>(std::to_integer<std::uint8_t>(payload[i]));
          break;
      }
    }
    return out;
  }

  std::vector<std::uint8_t> to_u8() const {
    if (dtype != DType::u8) throw FormatError("tensor: expected u8 payload");
    std::vector<std::uint8_t> out(payload.size());
    std::memcpy(out.data(), payload.data(), payload.size());
    return out;
  }

  static void put_le(std::byte* dst, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) dst[i] = static_cast<std::byte>((v >> (8 * i)) & 0xff);
  }
  static std::uint64_t get_le(const std::byte* src, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(std::to_integer<std::uint8_t>(src[i])) << (8 * i);
    return v;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

inline std::uint32_t crc32_of(std::span<const std::byte> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - off, 1u << 30);
    crc = ::crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + off), static_cast<uInt>(n));
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

inline std::vector<std::byte> encode_tensor(const Tensor& t) {
  if (t.dims.size() > 255) throw InvalidArgument("tensor: rank exceeds 255");
  if (t.payload.size() != t.element_count() * dtype_size(t.dtype))
    throw InvalidArgument("tensor: payload size does not match dims");
  std::vector<std::byte> buf;
  buf.reserve(8 + 8 * t.dims.size() + t.payload.size() + 4);
  for (char c : kTensorMagic) buf.push_back(static_cast<std::byte>(c));
  std::byte tmp[8];
  Tensor::put_le(tmp, kTensorVersion, 2);
  buf.insert(buf.end(), tmp, tmp + 2);
  buf.push_back(static_cast<std::byte>(t.dtype));
  buf.push_back(static_cast<std::byte>(t.dims.size()));
  for (auto d : t.dims) {
    Tensor::put_le(tmp, d, 8);
    buf.insert(buf.end(), tmp, tmp + 8);
  }
  buf.insert(buf.end(), t.payload.begin(), t.payload.end());
  Tensor::put_le(tmp, crc32_of(buf), 4);
  buf.insert(buf.end(), tmp, tmp + 4);
  return buf;
}

inline Tensor decode_tensor(std::span<const std::byte> buf) {
  if (buf.size() < 12) throw FormatError("tensor: truncated file");
  if (std::memcmp(buf.data(), kTensorMagic, 4) != 0) throw FormatError("tensor: bad magic");
  const std::uint32_t stored = static_cast<std::uint32_t>(Tensor::get_le(buf.data() + buf.size() - 4, 4));
  if (crc32_of(buf.first(buf.size() - 4)) != stored) throw FormatError("tensor: CRC mismatch");
  const auto version = static_cast<std::uint16_t>(Tensor::get_le(buf.data() + 4, 2));
  if (version != kTensorVersion) throw FormatError("tensor: unsupported version " + std::to_string(version));
  const auto tag = std::to_integer<std::uint8_t>(buf[6]);
  if (tag > 2) throw FormatError("tensor: unknown dtype tag");
  Tensor t;
  t.dtype = static_cast<DType>(tag);
  const std::size_t rank = std::to_integer<std::uint8_t>(buf[7]);
  const std::size_t header = 8 + 8 * rank;
  if (buf.size() < header + 4) throw FormatError("tensor: truncated header");
  for (std::size_t r = 0; r < rank; ++r) t.dims.push_back(Tensor::get_le(buf.data() + 8 + 8 * r, 8));
  const std::size_t expect = static_cast<std::size_t>(t.element_count()) * dtype_size(t.dtype);
  if (buf.size() - header - 4 != expect) throw FormatError("tensor: payload length does not match dims");
  t.payload.assign(buf.begin() + static_cast<std::ptrdiff_t>(header),
                   buf.begin() + static_cast<std::ptrdiff_t>(header + expect));
  return t;
}

inline void write_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

inline std::vector<std::byte> read_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  std::vector<std::byte> out(raw.size());
  std::memcpy(out.data(), raw.data(), raw.size());
  return out;
}

inline void save_tensor(const std::filesystem::path& path, const Tensor& t) { write_bytes(path, encode_tensor(t)); }

inline Tensor load_tensor(const std::filesystem::path& path) {
  try {
    return decode_tensor(read_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace more::io
