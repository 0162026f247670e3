#pragma once

// Compressed image container (integers big-endian):
//
//   "MANF"                   4 bytes
//   version                  u8 (= 1)
//   model kind               u8 (0 = M-ANFIC, 1 = MS-ANFIC)
//   lambda index             u8 (0..5)
//   width, height            u32 each, true extents
//   padded width, height     u32 each
//   checkpoint hash          u64 (FNV-1a 64 of the checkpoint file)
//   mask section             u32 length + mask bits
//   4 substreams             u32 length + range-coded bytes each, in the order
//                            level-2 hyper, level-2 latent, level-1 hyper, level-1 latent
//   CRC-32                   u32 over every preceding byte
//
// The fixed header is the first 31 bytes; bpp counts everything after it.

#include <array>
#include <zlib.h>

#include "manf/byte_io.hpp"
#include "manf/mask.hpp"

namespace manf {

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

inline constexpr char kStreamMagic[] = "MANF";
inline constexpr std::uint8_t kStreamVersion = 1;
inline constexpr std::size_t kHeaderSize = 31;
inline constexpr std::size_t kSubstreams = 4;
inline constexpr std::size_t kLambdaCount = 6;

struct StreamHeader {
  std::uint8_t version = kStreamVersion;
  std::uint8_t model_kind = 1;
  std::uint8_t lambda_index = 0;
  std::uint32_t width = 0, height = 0;
  std::uint32_t padded_width = 0, padded_height = 0;
  std::uint64_t checkpoint_hash = 0;

  bool operator==(const StreamHeader&) const = default;
};

struct Bitstream {
  StreamHeader header;
  Bytes mask;
  std::array<Bytes, kSubstreams> substreams;

  bool operator==(const Bitstream&) const = default;
};

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong c = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    c = crc32(c, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(c);
}

inline std::uint32_t padded_extent(std::uint32_t v) {
  return static_cast<std::uint32_t>((v + kBlockSize - 1) / kBlockSize * kBlockSize);
}

inline void validate_header(const StreamHeader& h) {
  if (h.version != kStreamVersion) throw VersionError("unsupported bitstream version " + std::to_string(h.version));
  if (h.model_kind > 1) throw FormatError("unknown model kind " + std::to_string(h.model_kind));
  if (h.lambda_index >= kLambdaCount) throw FormatError("lambda index out of range");
  if (h.width == 0 || h.height == 0) throw FormatError("zero image extent in header");
  if (h.padded_width != padded_extent(h.width) || h.padded_height != padded_extent(h.height))
    throw FormatError("padded extents inconsistent with image extents");
}

inline Bytes write_bitstream(const Bitstream& s) {
  validate_header(s.header);
  ByteWriter w;
  w.raw(std::string_view(kStreamMagic, 4));
  w.u8(s.header.version);
  w.u8(s.header.model_kind);
  w.u8(s.header.lambda_index);
  w.u32_be(s.header.width);
  w.u32_be(s.header.height);
  w.u32_be(s.header.padded_width);
  w.u32_be(s.header.padded_height);
  w.u64_be(s.header.checkpoint_hash);
  w.u32_be(static_cast<std::uint32_t>(s.mask.size()));
  w.raw(s.mask);
  for (const auto& sub : s.substreams) {
    w.u32_be(static_cast<std::uint32_t>(sub.size()));
    w.raw(sub);
  }
  const std::uint32_t crc = crc32_of(w.bytes().data(), w.bytes().size());
  w.u32_be(crc);
  return w.take();
}

/// Parses only the fixed header; used to reject a stream before decoding.
inline StreamHeader read_header(const Bytes& bytes) {
  ByteReader r(bytes);
  Bytes magic = r.bytes(4, "magic");
  if (std::string(magic.begin(), magic.end()) != std::string(kStreamMagic, 4))
    throw FormatError("not a MANF bitstream (bad magic)");
  StreamHeader h;
  h.version = r.u8("version");
  if (h.version != kStreamVersion) throw VersionError("unsupported bitstream version " + std::to_string(h.version));
  h.model_kind = r.u8("model kind");
  h.lambda_index = r.u8("lambda index");
  h.width = r.u32_be("width");
  h.height = r.u32_be("height");
  h.padded_width = r.u32_be("padded width");
  h.padded_height = r.u32_be("padded height");
  h.checkpoint_hash = r.u64_be("checkpoint hash");
  validate_header(h);
  return h;
}

inline Bitstream read_bitstream(const Bytes& bytes) {
  Bitstream s;
  s.header = read_header(bytes);
  if (bytes.size() < kHeaderSize + 4) throw FormatError("truncated input while reading checksum");
  const std::size_t body = bytes.size() - 4;
  ByteReader tail(bytes.data() + body, 4);
  if (tail.u32_be("checksum") != crc32_of(bytes.data(), body))
    throw ChecksumError("bitstream checksum mismatch");
  ByteReader r(bytes.data(), body);
  r.bytes(kHeaderSize, "header");
  s.mask = r.bytes(r.u32_be("mask length"), "mask section");
  for (auto& sub : s.substreams) sub = r.bytes(r.u32_be("substream length"), "substream");
  if (r.remaining() != 0) throw FormatError("declared section lengths do not cover the stream");
  return s;
}

}  // namespace manf
