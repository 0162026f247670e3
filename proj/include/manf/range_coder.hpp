#pragma once

// Byte-oriented range coder with carry propagation (LZMA-style low/range
// registers). Symbol probabilities are given as integer cumulative
// frequencies with a power-of-two total.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "manf/byte_io.hpp"

namespace manf {

class CorruptStream : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RangeEncoder {
 public:
  /// Codes the interval [cum, cum + freq) out of 2^total_bits.
  void encode(std::uint32_t cum, std::uint32_t freq, unsigned total_bits) {
    if (freq == 0 || cum + freq > (1u << total_bits)) throw std::invalid_argument("range coder: invalid interval");
    const std::uint32_t r = range_ >> total_bits;
    low_ += std::uint64_t(r) * cum;
    range_ = r * freq;
    while (range_ < kTop) {
      range_ <<= 8;
      shift_low();
    }
  }

  /// Codes `bits` (<= 16) raw bits with a uniform model.
  void encode_raw(std::uint32_t value, unsigned bits) { encode(value, 1, bits); }

  /// Flushes the registers. The leading byte of an LZMA-style stream is
  /// always zero and is dropped.
  Bytes finish() {
    for (int i = 0; i < 5; ++i) shift_low();
    Bytes out(out_.begin() + 1, out_.end());
    return out;
  }

 private:
  static constexpr std::uint32_t kTop = 1u << 24;

  void shift_low() {
    if (static_cast<std::uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
      const auto carry = static_cast<std::uint8_t>(low_ >> 32);
      std::uint8_t temp = cache_;
      do {
        out_.push_back(static_cast<std::uint8_t>(temp + carry));
        temp = 0xFF;
      } while (--cache_size_ != 0);
      cache_ = static_cast<std::uint8_t>(low_ >> 24);
    }
    ++cache_size_;
    low_ = (low_ & 0x00FFFFFFu) << 8;
  }

  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  std::uint64_t cache_size_ = 1;
  Bytes out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const std::uint8_t> data) : data_(data) {
    for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next();
  }

  /// Target frequency for the next symbol; follow with consume().
  std::uint32_t peek(unsigned total_bits) {
    r_ = range_ >> total_bits;
    const std::uint32_t v = code_ / r_;
    if (v >= (1u << total_bits)) throw CorruptStream("range decoder: code value outside the coding interval");
    return v;
  }

  void consume(std::uint32_t cum, std::uint32_t freq) {
    code_ -= r_ * cum;
    range_ = r_ * freq;
    while (range_ < kTop) {
      code_ = (code_ << 8) | next();
      range_ <<= 8;
    }
  }

  std::uint32_t decode_raw(unsigned bits) {
    const std::uint32_t v = peek(bits);
    consume(v, 1);
    return v;
  }

  /// A stream produced by RangeEncoder::finish ends with the code register at
  /// zero and every byte consumed; anything else means corruption.
  void verify_end() const {
    if (code_ != 0 || pos_ != data_.size()) throw CorruptStream("range decoder: stream does not terminate cleanly");
  }

 private:
  static constexpr std::uint32_t kTop = 1u << 24;

  std::uint8_t next() {
    if (pos_ < data_.size()) return data_[pos_++];
    ++overrun_;
    if (overrun_ > 4) throw CorruptStream("range decoder: read past end of stream");
    return 0;
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::size_t overrun_ = 0;
  std::uint32_t code_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint32_t r_ = 1;
};

/// Explicit cumulative frequency table; cum has alphabet+1 entries, cum[0] = 0
/// and cum.back() = 2^total_bits, every symbol with positive frequency.
struct CdfTable {
  std::vector<std::uint32_t> cum;
  unsigned total_bits = 16;

  std::size_t alphabet() const { return cum.size() - 1; }

  /// Quantizes probabilities so every symbol gets frequency >= 1.
  static CdfTable from_probabilities(std::span<const double> probs, unsigned total_bits = 16) {
    if (probs.empty()) throw std::invalid_argument("CdfTable: empty alphabet");
    const std::uint32_t total = 1u << total_bits;
    if (probs.size() > total) throw std::invalid_argument("CdfTable: alphabet larger than table total");
    const double spare = double(total - probs.size());
    double sum = 0;
    for (double p : probs) {
      if (!(p >= 0)) throw std::invalid_argument("CdfTable: negative probability");
      sum += p;
    }
    if (!(sum > 0)) throw std::invalid_argument("CdfTable: probabilities sum to zero");
    CdfTable t;
    t.total_bits = total_bits;
    t.cum.resize(probs.size() + 1, 0);
    double acc = 0;
    for (std::size_t i = 1; i < probs.size(); ++i) {
      acc += probs[i - 1] / sum;
      t.cum[i] = static_cast<std::uint32_t>(std::min(std::floor(acc * spare), spare)) + static_cast<std::uint32_t>(i);
    }
    t.cum.back() = total;
    return t;
  }

  void validate() const {
    if (cum.size() < 2 || cum.front() != 0 || cum.back() != (1u << total_bits))
      throw std::invalid_argument("CdfTable: bad endpoints");
    for (std::size_t i = 1; i < cum.size(); ++i)
      if (cum[i] <= cum[i - 1]) throw std::invalid_argument("CdfTable: every symbol needs a positive frequency");
  }
};

inline Bytes range_encode(std::span<const std::uint32_t> symbols, std::span<const CdfTable> tables) {
  if (tables.size() != 1 && tables.size() != symbols.size())
    throw std::invalid_argument("range_encode: need one table, or one table per symbol");
  RangeEncoder enc;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    const CdfTable& t = tables.size() == 1 ? tables[0] : tables[i];
    if (symbols[i] >= t.alphabet()) throw std::invalid_argument("range_encode: symbol outside alphabet");
    enc.encode(t.cum[symbols[i]], t.cum[symbols[i] + 1] - t.cum[symbols[i]], t.total_bits);
  }
  return enc.finish();
}

inline std::uint32_t decode_with_table(RangeDecoder& dec, const CdfTable& t) {
  const std::uint32_t target = dec.peek(t.total_bits);
  // Largest i with cum[i] <= target.
  std::size_t lo = 0, hi = t.alphabet();
  while (hi - lo > 1) {
    const std::size_t mid = (lo + hi) / 2;
    if (t.cum[mid] <= target) lo = mid;
    else hi = mid;
  }
  dec.consume(t.cum[lo], t.cum[lo + 1] - t.cum[lo]);
  return static_cast<std::uint32_t>(lo);
}

inline std::vector<std::uint32_t> range_decode(std::span<const std::uint8_t> bytes, std::span<const CdfTable> tables,
                                               std::size_t count) {
  if (tables.size() != 1 && tables.size() != count)
    throw std::invalid_argument("range_decode: need one table, or one table per symbol");
  RangeDecoder dec(bytes);
  std::vector<std::uint32_t> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = decode_with_table(dec, tables.size() == 1 ? tables[0] : tables[i]);
  dec.verify_end();
  return out;
}

}  // namespace manf
