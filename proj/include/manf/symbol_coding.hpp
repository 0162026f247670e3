#pragma once

// Mixture-driven coding of integer latents with 16-bit cumulative tables.
//
// Index i in [0, 256) stands for value i - 127. The cumulative count of
// index i is q(i) = floor(F(i - 127.5) * (65536 - 256)) + i with q(0) = 0 and
// q(256) = 65536, so every index has frequency >= 1. Index 0 absorbs all
// values <= -127 and index 255 all values >= 128; either is followed by
// 16 raw bits holding the distance to the boundary value.

#include <cmath>
#include <cstdint>

#include "manf/gmm.hpp"
#include "manf/range_coder.hpp"

namespace manf {

inline constexpr int kSymbolMin = -127;
inline constexpr int kSymbolMax = 128;
inline constexpr std::uint32_t kAlphabet = 256;
inline constexpr unsigned kTableBits = 16;
inline constexpr std::uint32_t kTableTotal = 1u << kTableBits;
inline constexpr std::uint32_t kTableSpread = kTableTotal - kAlphabet;
inline constexpr unsigned kEscapeBits = 16;

inline std::uint32_t symbol_cum(std::uint32_t i, const GmmParams& p) {
  if (i == 0) return 0;
  if (i >= kAlphabet) return kTableTotal;
  const double f = std::clamp(gmm_cdf(double(i) + kSymbolMin - 0.5, p), 0.0, 1.0);
  return std::min(static_cast<std::uint32_t>(std::floor(f * kTableSpread)), kTableSpread) + i;
}

/// Full table for one mixture (tests and diagnostics).
inline CdfTable symbol_table(const GmmParams& p) {
  CdfTable t;
  t.total_bits = kTableBits;
  t.cum.resize(kAlphabet + 1);
  for (std::uint32_t i = 0; i <= kAlphabet; ++i) t.cum[i] = symbol_cum(i, p);
  return t;
}

/// Ideal code length used for rate estimates.
inline double symbol_bits(int v, const GmmParams& p) {
  return -std::log2(std::max(gmm_interval_prob(double(v), p), kProbMin));
}

inline void encode_symbol(RangeEncoder& enc, int v, const GmmParams& p) {
  const std::uint32_t i = static_cast<std::uint32_t>(std::clamp(v, kSymbolMin, kSymbolMax) - kSymbolMin);
  const std::uint32_t lo = symbol_cum(i, p), hi = symbol_cum(i + 1, p);
  if (hi <= lo) throw std::logic_error("symbol table lost monotonicity");
  enc.encode(lo, hi - lo, kTableBits);
  if (i == 0 || i == kAlphabet - 1) {
    const long dist = i == 0 ? long(kSymbolMin) - v : long(v) - kSymbolMax;
    if (dist >= (1L << kEscapeBits))
      throw std::out_of_range("latent value " + std::to_string(v) + " outside the codable range");
    enc.encode_raw(static_cast<std::uint32_t>(dist), kEscapeBits);
  }
}

inline int decode_symbol(RangeDecoder& dec, const GmmParams& p) {
  const std::uint32_t target = dec.peek(kTableBits);
  std::uint32_t lo = 0, hi = kAlphabet;
  while (hi - lo > 1) {
    const std::uint32_t mid = (lo + hi) / 2;
    if (symbol_cum(mid, p) <= target) lo = mid;
    else hi = mid;
  }
  const std::uint32_t c0 = symbol_cum(lo, p), c1 = symbol_cum(lo + 1, p);
  if (c1 <= c0) throw CorruptStream("symbol table lost monotonicity");
  dec.consume(c0, c1 - c0);
  int v = int(lo) + kSymbolMin;
  if (lo == 0) v -= int(dec.decode_raw(kEscapeBits));
  if (lo == kAlphabet - 1) v += int(dec.decode_raw(kEscapeBits));
  return v;
}

}  // namespace manf
