#pragma once

#include <array>
#include <functional>
#include <memory>
#include <sstream>

#include "manf/bitstream.hpp"
#include "manf/checkpoint.hpp"
#include "manf/model.hpp"
#include "manf/symbol_coding.hpp"

namespace manf {

/// Rate-distortion trade-offs of the trained model set, indexed by lambda index.
inline constexpr std::array<double, kLambdaCount> kLambdaSet{0.1, 0.05, 0.02, 0.01, 0.005, 0.002};

inline std::size_t lambda_index_of(double lambda2) {
  for (std::size_t i = 0; i < kLambdaSet.size(); ++i)
    if (std::abs(kLambdaSet[i] - lambda2) <= 1e-12 * kLambdaSet[i]) return i;
  throw std::invalid_argument("lambda2 " + std::to_string(lambda2) + " is not in the trained set");
}

/// Checkpoint does not fit the model or stream it is used with.
class ModelMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Model = CodecModel<float>;

struct LoadedModel {
  std::unique_ptr<Model> model;
  std::map<std::string, std::string> meta;
  std::uint64_t hash = 0;

  double lambda2() const { return meta.contains("lambda2") ? std::stod(meta.at("lambda2")) : kLambdaSet[0]; }
  double variance_threshold() const {
    return meta.contains("variance_threshold") ? std::stod(meta.at("variance_threshold")) : 0.0;
  }
};

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline Bytes model_checkpoint_bytes(const Model& m, std::map<std::string, std::string> meta = {}) {
  Checkpoint ck;
  ck.meta = std::move(meta);
  const FlowConfig& c = m.config();
  ck.meta["model_kind"] = to_string(c.kind);
  ck.meta["transform_channels"] = std::to_string(c.transform_channels);
  ck.meta["latent_channels"] = std::to_string(c.latent_channels);
  ck.meta["leaky_slope"] = format_double(c.slope);
  ck.meta["seed"] = std::to_string(c.seed);
  store_to_checkpoint(m.params(), ck);
  return encode_checkpoint(ck);
}

inline void save_model(const std::filesystem::path& path, const Model& m, std::map<std::string, std::string> meta = {}) {
  write_file_atomic(path, model_checkpoint_bytes(m, std::move(meta)));
}

inline LoadedModel load_model_bytes(const Bytes& bytes) {
  Checkpoint ck = decode_checkpoint(bytes);
  auto get = [&](const std::string& k) -> const std::string& {
    auto it = ck.meta.find(k);
    if (it == ck.meta.end()) throw FormatError("checkpoint metadata lacks '" + k + "'");
    return it->second;
  };
  FlowConfig c;
  c.kind = parse_model_kind(get("model_kind"));
  c.transform_channels = std::stoul(get("transform_channels"));
  c.latent_channels = std::stoul(get("latent_channels"));
  c.slope = std::stod(get("leaky_slope"));
  c.seed = std::stoull(get("seed"));
  LoadedModel out;
  out.model = std::make_unique<Model>(c);
  checkpoint_to_store(ck, out.model->params());
  out.meta = std::move(ck.meta);
  out.hash = fnv1a64(bytes);
  return out;
}

inline LoadedModel load_model(const std::filesystem::path& path) { return load_model_bytes(read_file(path)); }

struct CompressResult {
  Bytes stream;
  Tensor<float> reconstruction;  // cropped to the true extents, clamped to [0, 1]
  double estimated_bits = 0;
  double bpp = 0;
};

namespace detail {

inline Tensor<float> canonical_integers(const Tensor<float>& t) {
  Tensor<float> out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i])) throw std::runtime_error("non-finite latent value");
    out[i] = std::round(t[i]) + 0.0f;
  }
  return out;
}

inline bool any_set(const Tensor<float>& mask) {
  return std::any_of(mask.data().begin(), mask.data().end(), [](float v) { return v != 0.0f; });
}

/// Walks one coded level in stream order. `code(value_ref, params)` either
/// writes the referenced symbol or overwrites it with a decoded one.
template <class Code>
void walk_level(const Model& m, std::size_t level, const Tensor<float>& mask, Tensor<float>& h, Tensor<float>& y,
                const Tensor<float>* deeper, Code&& code_hyper, Code&& code_latent) {
  const EntropyModel<float>& em = *m.coded_unit(level).entropy;
  const std::size_t N = em.channels;
  if (any_set(mask)) {
    for (std::size_t c = 0; c < N; ++c) {
      const GmmParams p = em.prior_params(c);
      float* plane = h.plane(0, c);
      for (std::size_t i = 0; i < h.shape().plane(); ++i) code_hyper(plane[i], p);
    }
  }
  Var<float> cond;
  if (deeper) cond = Var<float>::constant(upsample_nearest2x(*deeper));
  const Tensor<float> hf = m.hyper_features(level, Var<float>::constant(h), cond).value();
  std::vector<double> raw;
  const std::size_t H = y.shape().h(), W = y.shape().w();
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t q = 0; q < W; ++q) {
      if (mask.at(0, 0, r, q) == 0.0f) continue;
      em.raw_at(y, hf, r, q, raw);
      for (std::size_t c = 0; c < N; ++c) {
        const GmmParams p = gmm_from_raw([&](std::size_t i) { return raw[i]; }, kMixtures, N, c);
        code_latent(y.at(0, c, r, q), p);
      }
    }
}

inline Shape hyper_shape(Shape latent) { return Shape{1, latent.c(), latent.h() / 4, latent.w() / 4}; }

inline Tensor<float> finish_image(const Tensor<float>& x, std::size_t h, std::size_t w) {
  Tensor<float> out = crop(x, h, w);
  for (auto& v : out.data()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

}  // namespace detail

/// Encodes a (1, 3, H, W) image in [0, 1] under the given block partition
/// (whose grid must cover the padded extents).
inline CompressResult compress(const Model& m, const Tensor<float>& image, const MaskPyramid& mask,
                               std::uint8_t lambda_index, std::uint64_t checkpoint_hash) {
  const Shape s = image.shape();
  require_shape(s.n() == 1 && s.c() == 3 && s.h() > 0 && s.w() > 0, "compress expects a (1,3,H,W) image, got " + s.str());
  const Tensor<float> x = replicate_pad(image);
  const auto [rows, cols] = MaskPyramid::grid_for(x.shape().h(), x.shape().w());
  if (mask.rows() != rows || mask.cols() != cols || mask.is_all_pass() || !mask.is_partition())
    throw std::invalid_argument("mask grid does not partition the padded image");

  const auto masks = LevelMasks<float>::from(mask);
  EncodeOptions<float> opt;
  opt.mode = QuantMode::kRound;
  opt.estimate_rate = false;
  const auto enc = m.anf_encode(nullptr, Var<float>::constant(x), masks, opt);

  std::array<Tensor<float>, kLevels> y, h;
  for (std::size_t l = 0; l < kLevels; ++l) y[l] = detail::canonical_integers(enc.latents[l].value());

  Bitstream bs;
  bs.header.model_kind = static_cast<std::uint8_t>(m.config().kind);
  bs.header.lambda_index = lambda_index;
  bs.header.width = static_cast<std::uint32_t>(s.w());
  bs.header.height = static_cast<std::uint32_t>(s.h());
  bs.header.padded_width = static_cast<std::uint32_t>(x.shape().w());
  bs.header.padded_height = static_cast<std::uint32_t>(x.shape().h());
  bs.header.checkpoint_hash = checkpoint_hash;
  bs.mask = mask_serialize(mask);

  double bits = 0;
  for (std::size_t level = kLevels; level >= 1; --level) {
    const std::size_t i = level - 1;
    const Tensor<float>& lm = masks.level(level);
    const Tensor<float>* deeper = level < kLevels ? &y[level] : nullptr;
    Var<float> cond;
    if (deeper) cond = Var<float>::constant(upsample_nearest2x(*deeper));
    const auto& em = *m.coded_unit(level).entropy;
    h[i] = Tensor<float>(detail::hyper_shape(y[i].shape()));
    if (detail::any_set(lm))
      h[i] = detail::canonical_integers(em.hyper_analysis(nullptr, enc.latents.levels[i].unquantized, cond).value());

    RangeEncoder hyper_enc, latent_enc;
    std::size_t hyper_count = 0, latent_count = 0;
    auto code_h = [&](float& v, const GmmParams& p) {
      encode_symbol(hyper_enc, int(v), p);
      bits += symbol_bits(int(v), p);
      ++hyper_count;
    };
    auto code_y = [&](float& v, const GmmParams& p) {
      encode_symbol(latent_enc, int(v), p);
      bits += symbol_bits(int(v), p);
      ++latent_count;
    };
    std::function<void(float&, const GmmParams&)> fh = code_h, fy = code_y;
    detail::walk_level(m, level, lm, h[i], y[i], deeper, fh, fy);
    const std::size_t slot = 2 * (kLevels - level);
    bs.substreams[slot] = hyper_count ? hyper_enc.finish() : Bytes{};
    bs.substreams[slot + 1] = latent_count ? latent_enc.finish() : Bytes{};
  }

  CompressResult out;
  out.stream = write_bitstream(bs);
  out.estimated_bits = bits;
  out.bpp = 8.0 * double(out.stream.size() - kHeaderSize) / double(s.h() * s.w());
  std::vector<Var<float>> yv{Var<float>::constant(y[0]), Var<float>::constant(y[1])};
  out.reconstruction = detail::finish_image(m.anf_decode(nullptr, yv, masks).value(), s.h(), s.w());
  return out;
}

struct DecodedImage {
  StreamHeader header;
  MaskPyramid mask;
  Tensor<float> image;
};

/// Checks that a stream was produced by this checkpoint before any decoding work.
inline StreamHeader check_stream_model(const Bytes& stream, const Model& m, std::uint64_t checkpoint_hash) {
  StreamHeader h = read_header(stream);
  if (h.checkpoint_hash != checkpoint_hash) throw ModelMismatch("bitstream was produced with a different checkpoint");
  if (h.model_kind != static_cast<std::uint8_t>(m.config().kind))
    throw ModelMismatch("bitstream model kind does not match the checkpoint");
  return h;
}

inline DecodedImage decompress(const Model& m, const Bytes& stream, std::uint64_t checkpoint_hash) {
  check_stream_model(stream, m, checkpoint_hash);
  const Bitstream bs = read_bitstream(stream);
  const StreamHeader& hd = bs.header;
  const auto [rows, cols] = MaskPyramid::grid_for(hd.padded_height, hd.padded_width);
  DecodedImage out;
  out.header = hd;
  out.mask = mask_deserialize(bs.mask, rows, cols);
  const auto masks = LevelMasks<float>::from(out.mask);
  const std::size_t N = m.config().latent_channels;

  std::array<Tensor<float>, kLevels> y, h;
  for (std::size_t level = kLevels; level >= 1; --level) {
    const std::size_t i = level - 1, f = kLevelDownsampling[i];
    y[i] = Tensor<float>(Shape{1, N, hd.padded_height / f, hd.padded_width / f});
    h[i] = Tensor<float>(detail::hyper_shape(y[i].shape()));
    const std::size_t slot = 2 * (kLevels - level);
    const Bytes& hb = bs.substreams[slot];
    const Bytes& yb = bs.substreams[slot + 1];
    RangeDecoder hyper_dec(hb), latent_dec(yb);
    std::size_t hyper_count = 0, latent_count = 0;
    std::function<void(float&, const GmmParams&)> fh = [&](float& v, const GmmParams& p) {
      v = static_cast<float>(decode_symbol(hyper_dec, p));
      ++hyper_count;
    };
    std::function<void(float&, const GmmParams&)> fy = [&](float& v, const GmmParams& p) {
      v = static_cast<float>(decode_symbol(latent_dec, p));
      ++latent_count;
    };
    detail::walk_level(m, level, masks.level(level), h[i], y[i], level < kLevels ? &y[level] : nullptr, fh, fy);
    if (hyper_count) hyper_dec.verify_end();
    else if (!hb.empty()) throw CorruptStream("unexpected bytes in an empty hyper substream");
    if (latent_count) latent_dec.verify_end();
    else if (!yb.empty()) throw CorruptStream("unexpected bytes in an empty latent substream");
  }
  std::vector<Var<float>> yv{Var<float>::constant(y[0]), Var<float>::constant(y[1])};
  out.image = detail::finish_image(m.anf_decode(nullptr, yv, masks).value(), hd.height, hd.width);
  return out;
}

}  // namespace manf
