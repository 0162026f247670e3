#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "manf/adam.hpp"
#include "manf/codec.hpp"
#include "manf/image_io.hpp"
#include "manf/metrics.hpp"

namespace manf {

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  FlowConfig flow;
  double lambda2 = 0.1;
  double learning_rate = 1e-4;
  double grad_clip = 1.0;  // 0 disables
  std::array<std::size_t, 3> stage_epochs{30, 100, 130};  // cumulative stage ends at scale 1
  double schedule_scale = 1.0;
  std::size_t crop_size = 256;
  std::size_t batch_size = 8;
  std::size_t steps_per_epoch = 100;
  std::uint64_t seed = 1;
  QuantMode quantization = QuantMode::kNoise;
  std::size_t synthetic_images = 48;
  std::size_t synthetic_size = 256;
  std::string data_dir;
  std::string output_dir = "runs";
  double variance_threshold = -1;  // negative: calibrate on the corpus

  double lambda1() const { return 0.01 * lambda2; }

  /// Stage ends after scaling, e.g. scale 0.1 gives 3/10/13.
  std::array<std::size_t, 3> stage_ends() const {
    std::array<std::size_t, 3> e{};
    for (std::size_t i = 0; i < 3; ++i)
      e[i] = static_cast<std::size_t>(std::llround(double(stage_epochs[i]) * schedule_scale));
    return e;
  }

  void validate() const {
    flow.validate();
    if (!(lambda2 > 0)) throw std::invalid_argument("lambda2 must be positive");
    if (!(learning_rate >= 0)) throw std::invalid_argument("learning_rate must be non-negative");
    if (!(grad_clip >= 0)) throw std::invalid_argument("grad_clip must be non-negative");
    if (!(schedule_scale > 0)) throw std::invalid_argument("schedule_scale must be positive");
    if (crop_size == 0 || crop_size % kBlockSize != 0)
      throw std::invalid_argument("crop_size must be a positive multiple of " + std::to_string(kBlockSize));
    if (batch_size == 0 || steps_per_epoch == 0) throw std::invalid_argument("batch_size and steps_per_epoch must be >= 1");
    if (!(stage_epochs[0] <= stage_epochs[1] && stage_epochs[1] <= stage_epochs[2]))
      throw std::invalid_argument("stage epochs must be non-decreasing");
  }
};

inline std::string quant_name(QuantMode q) { return q == QuantMode::kStraightThrough ? "ste" : "noise"; }

/// Reads `key = value` lines; '#' starts a comment. Unknown keys are errors.
inline TrainConfig parse_train_config(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto size = [](const std::string& v) { return static_cast<std::size_t>(std::stoull(v)); };
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r"), e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string k = trim(line.substr(0, eq)), v = trim(line.substr(eq + 1));
    try {
      if (k == "model_kind") c.flow.kind = parse_model_kind(v);
      else if (k == "transform_channels") c.flow.transform_channels = size(v);
      else if (k == "latent_channels") c.flow.latent_channels = size(v);
      else if (k == "leaky_slope") c.flow.slope = std::stod(v);
      else if (k == "lambda2") c.lambda2 = std::stod(v);
      else if (k == "lambda1") {
        if (std::abs(std::stod(v) - 0.01 * c.lambda2) > 1e-12)
          throw std::invalid_argument("lambda1 is fixed at 0.01 * lambda2");
      } else if (k == "learning_rate") c.learning_rate = std::stod(v);
      else if (k == "grad_clip") c.grad_clip = std::stod(v);
      else if (k == "stage_epochs") {
        std::stringstream ss(v);
        std::string part;
        for (std::size_t i = 0; i < 3; ++i) {
          if (!std::getline(ss, part, ',')) throw std::invalid_argument("stage_epochs needs three comma-separated values");
          c.stage_epochs[i] = size(part);
        }
      } else if (k == "schedule_scale") c.schedule_scale = std::stod(v);
      else if (k == "crop_size") c.crop_size = size(v);
      else if (k == "batch_size") c.batch_size = size(v);
      else if (k == "steps_per_epoch") c.steps_per_epoch = size(v);
      else if (k == "seed") c.seed = c.flow.seed = std::stoull(v);
      else if (k == "quantization") {
        if (v == "noise") c.quantization = QuantMode::kNoise;
        else if (v == "ste") c.quantization = QuantMode::kStraightThrough;
        else throw std::invalid_argument("quantization must be noise or ste");
      } else if (k == "synthetic_images") c.synthetic_images = size(v);
      else if (k == "synthetic_size") c.synthetic_size = size(v);
      else if (k == "data_dir") c.data_dir = v;
      else if (k == "output_dir") c.output_dir = v;
      else if (k == "variance_threshold") c.variance_threshold = std::stod(v);
      else throw std::invalid_argument("unknown key '" + k + "'");
    } catch (const std::logic_error& e) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

template <std::floating_point T>
struct RdLoss {
  Var<T> total;
  double rate_bpp = 0;
  double residual = 0;    // 255^2 * mean(x2^2)
  double distortion = 0;  // 255^2 * mean((xhat - x)^2)
};

/// L = r + lambda1 * 255^2 * mean(x2^2) + lambda2 * 255^2 * MSE(xhat, x),
/// with r the rate in bits per pixel of the batch.
template <std::floating_point T>
RdLoss<T> rd_loss(const Var<T>& x, const Var<T>& xhat, const Var<T>& x2, const Var<T>& rate_bits, double lambda1,
                  double lambda2) {
  require_shape(x.shape() == xhat.shape() && x.shape() == x2.shape(), "rd_loss: image shapes differ");
  const double pixels = double(x.shape().n() * x.shape().plane());
  constexpr double k255 = 255.0 * 255.0;
  auto residual = mean_square(x2);
  auto distortion = mean_square(sub(xhat, x));
  RdLoss<T> l;
  l.total = linear_combination<T>({{static_cast<T>(1.0 / pixels), rate_bits},
                                   {static_cast<T>(lambda1 * k255), residual},
                                   {static_cast<T>(lambda2 * k255), distortion}});
  l.rate_bpp = rate_bits.value()[0] / pixels;
  l.residual = k255 * residual.value()[0];
  l.distortion = k255 * distortion.value()[0];
  return l;
}

/// Uniformly placed crop of a (1, 3, H, W) image; deterministic in `seed`.
template <std::floating_point T>
Tensor<T> sample_crop(const Tensor<T>& image, std::size_t size, std::uint64_t seed) {
  const Shape s = image.shape();
  if (s.h() < size || s.w() < size)
    throw std::invalid_argument("sample_crop: image " + std::to_string(s.h()) + "x" + std::to_string(s.w()) +
                                " is smaller than the crop " + std::to_string(size));
  Rng rng(seed);
  const std::size_t top = std::uniform_int_distribution<std::size_t>(0, s.h() - size)(rng);
  const std::size_t left = std::uniform_int_distribution<std::size_t>(0, s.w() - size)(rng);
  return crop(image, size, size, top, left);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  std::uint64_t h = 0x9e3779b97f4a7c15ull ^ a;
  for (std::uint64_t v : {b, c}) {
    h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    h *= 0xbf58476d1ce4e5b9ull;
    h ^= h >> 31;
  }
  return h;
}

enum class SyntheticKind { kGradient, kNoise, kCheckerboard, kMixed };

/// Deterministic synthetic image in [0, 1]: smooth gradients, noise patches,
/// checkerboards, or a mix of flat and textured regions.
inline Tensor<float> synthetic_image(SyntheticKind kind, std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  Tensor<float> t(Shape{1, 3, h, w});
  double base[3], dx[3], dy[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = 0.2 + 0.6 * u(rng);
    dx[c] = (u(rng) - 0.5) * 0.6 / double(w);
    dy[c] = (u(rng) - 0.5) * 0.6 / double(h);
  }
  auto gradient = [&](int c, std::size_t y, std::size_t x) { return base[c] + dx[c] * double(x) + dy[c] * double(y); };
  const std::size_t period = 4 + std::size_t(u(rng) * 12);
  const double amp = 0.15 + 0.25 * u(rng);
  const std::size_t split = kBlockSize * (1 + std::size_t(u(rng) * double(std::max<std::size_t>(1, w / kBlockSize - 1))));
  const bool vertical = u(rng) < 0.5;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double n = u(rng) - 0.5;
      const bool check = ((x / period) + (y / period)) % 2 == 0;
      for (int c = 0; c < 3; ++c) {
        double v = gradient(c, y, x);
        switch (kind) {
          case SyntheticKind::kGradient:
            break;
          case SyntheticKind::kNoise:
            v += amp * n * 2;
            break;
          case SyntheticKind::kCheckerboard:
            v += check ? amp : -amp;
            break;
          case SyntheticKind::kMixed:
            if ((vertical ? x : y) >= split % (vertical ? w : h)) v += (check ? 0.5 : -0.5) * amp + amp * n;
            break;
        }
        t.at(0, std::size_t(c), y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  return t;
}

inline std::vector<Tensor<float>> synthetic_corpus(std::size_t count, std::size_t size, std::uint64_t seed) {
  std::vector<Tensor<float>> out;
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(synthetic_image(static_cast<SyntheticKind>(i % 4), size, size, mix_seed(seed, i)));
  return out;
}

/// PPM images of a directory in name order.
inline std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw std::invalid_argument("not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".ppm") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

struct StepResult {
  double loss = 0;
  double rate_bpp = 0;
  double residual = 0;
  double distortion = 0;
};

/// Stacks equally sized (1,3,H,W) images into one batch.
inline Tensor<float> stack_batch(const std::vector<Tensor<float>>& images) {
  if (images.empty()) throw std::invalid_argument("empty batch");
  const Shape s = images[0].shape();
  Tensor<float> b(Shape{images.size(), 3, s.h(), s.w()});
  for (std::size_t i = 0; i < images.size(); ++i) {
    require_shape(images[i].shape() == s, "batch images differ in size");
    std::copy(images[i].data().begin(), images[i].data().end(), b.plane(i, 0));
  }
  return b;
}

/// Builds the training graph of one batch: quantization proxy, residual and
/// reconstruction through the decoder with the residual dropped.
template <std::floating_point T>
RdLoss<T> forward_loss(Graph<T>& g, const CodecModel<T>& m, const Var<T>& x, const LevelMasks<T>& masks,
                       double lambda2, QuantMode mode, Rng& rng) {
  EncodeOptions<T> opt;
  opt.mode = mode;
  opt.rng = &rng;
  auto enc = m.anf_encode(&g, x, masks, opt);
  auto xhat = m.anf_decode(&g, CodecModel<T>::latent_vars(enc.latents), masks);
  return rd_loss(x, xhat, enc.x2, enc.rate_bits, 0.01 * lambda2, lambda2);
}

/// One optimization step; the parameters stay untouched when lr is zero.
/// A positive clip caps the global gradient norm before the update.
template <std::floating_point T>
StepResult train_step(CodecModel<T>& m, const Tensor<T>& batch, const std::vector<MaskPyramid>& masks,
                      double lambda2, double lr, QuantMode mode, Rng& rng, double clip = 0) {
  Graph<T> g;
  auto x = g.input(batch);
  auto lm = LevelMasks<T>::from(std::span<const MaskPyramid>(masks));
  RdLoss<T> l = forward_loss(g, m, x, lm, lambda2, mode, rng);
  const double loss = l.total.value()[0];
  if (!std::isfinite(loss)) {
    std::ostringstream os;
    os << "non-finite training loss (rate " << l.rate_bpp << " bpp, residual " << l.residual << ", distortion "
       << l.distortion << ")";
    throw NonFiniteLoss(os.str());
  }
  m.params().zero_grad();
  g.backward(l.total);
  if (clip > 0) clip_grad_norm(m.params(), clip);
  if (lr > 0) adam_step(m.params(), AdamConfig{lr});
  return {loss, l.rate_bpp, l.residual, l.distortion};
}

struct EpochLog {
  std::size_t epoch = 0;
  int stage = 0;
  double lambda2 = 0;
  StepResult mean;
};

inline std::string epoch_csv_header() { return "epoch,stage,lambda2,loss,rate_bpp,distortion,residual\n"; }

inline std::string epoch_csv_row(const EpochLog& e) {
  return std::to_string(e.epoch) + "," + std::to_string(e.stage) + "," + shortest(e.lambda2) + "," +
         shortest(e.mean.loss) + "," + shortest(e.mean.rate_bpp) + "," + shortest(e.mean.distortion) + "," +
         shortest(e.mean.residual) + "\n";
}

enum class MaskPolicy { kRandom, kVariance, kAllFine };

/// Trainer state shared by the schedule stages.
class Trainer {
 public:
  Trainer(TrainConfig cfg, std::vector<Tensor<float>> corpus)
      : cfg_(std::move(cfg)), corpus_(std::move(corpus)), model_(std::make_unique<Model>(cfg_.flow)) {
    cfg_.validate();
    if (corpus_.empty()) throw std::invalid_argument("training corpus is empty");
    for (const auto& im : corpus_)
      if (im.shape().h() < cfg_.crop_size || im.shape().w() < cfg_.crop_size)
        throw std::invalid_argument("corpus image smaller than crop_size");
    threshold_ = cfg_.variance_threshold >= 0 ? cfg_.variance_threshold : calibrate_threshold();
  }

  Model& model() { return *model_; }
  const TrainConfig& config() const { return cfg_; }
  double variance_threshold() const { return threshold_; }
  std::size_t epochs_done() const { return epoch_; }

  MaskPyramid mask_for(const Tensor<float>& crop_img, MaskPolicy policy, std::uint64_t seed) const {
    const auto [rows, cols] = MaskPyramid::grid_for(crop_img.shape().h(), crop_img.shape().w());
    switch (policy) {
      case MaskPolicy::kRandom:
        return random_mask(rows, cols, {0.5, 0.5}, seed);
      case MaskPolicy::kVariance:
        return variance_mask(crop_img, kBlockSize, threshold_);
      case MaskPolicy::kAllFine:
        break;
    }
    return MaskPyramid::uniform(rows, cols, 1);
  }

  EpochLog run_epoch(int stage, double lambda2, MaskPolicy policy) {
    ++epoch_;
    StepResult acc;
    for (std::size_t s = 0; s < cfg_.steps_per_epoch; ++s) {
      std::vector<Tensor<float>> crops;
      std::vector<MaskPyramid> masks;
      for (std::size_t b = 0; b < cfg_.batch_size; ++b) {
        const std::uint64_t key = mix_seed(cfg_.seed, epoch_ * 1000003 + s, b);
        const auto& src = corpus_[key % corpus_.size()];
        crops.push_back(sample_crop(src, cfg_.crop_size, key));
        masks.push_back(mask_for(crops.back(), policy, key ^ 0x5bd1e995));
      }
      StepResult r = train_step(*model_, stack_batch(crops), masks, lambda2, cfg_.learning_rate, cfg_.quantization, rng_,
                                    cfg_.grad_clip);
      acc.loss += r.loss;
      acc.rate_bpp += r.rate_bpp;
      acc.residual += r.residual;
      acc.distortion += r.distortion;
    }
    const double n = double(cfg_.steps_per_epoch);
    acc.loss /= n;
    acc.rate_bpp /= n;
    acc.residual /= n;
    acc.distortion /= n;
    return {epoch_, stage, lambda2, acc};
  }

  struct Snapshot {
    std::vector<Parameter<float>> params;
    std::size_t epoch = 0;
    Rng rng;
  };

  Snapshot snapshot() const {
    Snapshot s{{}, epoch_, rng_};
    for (const auto& p : model_->params().all()) s.params.push_back(p);
    return s;
  }

  void restore(const Snapshot& s) {
    auto& all = model_->params().all();
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = s.params[i];
    epoch_ = s.epoch;
    rng_ = s.rng;
  }

  std::map<std::string, std::string> checkpoint_meta(double lambda2, int stage) const {
    return {{"lambda2", shortest(lambda2)},
            {"variance_threshold", shortest(threshold_)},
            {"stage", std::to_string(stage)},
            {"epoch", std::to_string(epoch_)}};
  }

 private:
  double calibrate_threshold() const {
    std::vector<Tensor<float>> crops;
    for (std::size_t i = 0; i < corpus_.size(); ++i) crops.push_back(sample_crop(corpus_[i], cfg_.crop_size, mix_seed(cfg_.seed, i, 77)));
    return calibrate_variance_threshold(crops, kBlockSize);
  }

  TrainConfig cfg_;
  std::vector<Tensor<float>> corpus_;
  std::unique_ptr<Model> model_;
  double threshold_ = 0;
  std::size_t epoch_ = 0;
  Rng rng_{cfg_.seed ^ 0xa5a5a5a5ull};
};

struct ScheduleResult {
  std::vector<std::filesystem::path> checkpoints;  // one per lambda2 in kLambdaSet order
  std::filesystem::path stage1, stage2;
  std::vector<EpochLog> log;
  double variance_threshold = 0;
};

/// Three-stage schedule: random masks at lambda2 = 0.1, then variance masks,
/// then a fork fine-tuning one copy per lambda2 from the stage-2 state.
inline ScheduleResult run_schedule(const TrainConfig& cfg, std::vector<Tensor<float>> corpus,
                                   const std::function<void(const EpochLog&)>& on_epoch = {}) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.output_dir);
  const fs::path out = cfg.output_dir;
  const fs::path log_path = out / "train_log.csv";
  Trainer t(cfg, std::move(corpus));
  ScheduleResult res;
  res.variance_threshold = t.variance_threshold();
  std::string csv = epoch_csv_header();
  auto record = [&](const EpochLog& e) {
    res.log.push_back(e);
    csv += epoch_csv_row(e);
    write_file_atomic(log_path, csv);
    if (on_epoch) on_epoch(e);
  };
  const auto ends = cfg.stage_ends();
  const double base_lambda = kLambdaSet[0];
  while (t.epochs_done() < ends[0]) record(t.run_epoch(1, base_lambda, MaskPolicy::kRandom));
  res.stage1 = out / "stage1.ckpt";
  save_model(res.stage1, t.model(), t.checkpoint_meta(base_lambda, 1));
  while (t.epochs_done() < ends[1]) record(t.run_epoch(2, base_lambda, MaskPolicy::kVariance));
  res.stage2 = out / "stage2.ckpt";
  save_model(res.stage2, t.model(), t.checkpoint_meta(base_lambda, 2));
  const auto fork = t.snapshot();
  for (std::size_t i = 0; i < kLambdaSet.size(); ++i) {
    t.restore(fork);
    while (t.epochs_done() < ends[2]) record(t.run_epoch(3, kLambdaSet[i], MaskPolicy::kVariance));
    fs::path p = out / ("lambda" + std::to_string(i) + ".ckpt");
    save_model(p, t.model(), t.checkpoint_meta(kLambdaSet[i], 3));
    res.checkpoints.push_back(p);
  }
  return res;
}

inline std::vector<Tensor<float>> load_corpus(const TrainConfig& cfg) {
  std::vector<Tensor<float>> corpus = synthetic_corpus(cfg.synthetic_images, cfg.synthetic_size, cfg.seed);
  if (!cfg.data_dir.empty())
    for (const auto& p : list_images(cfg.data_dir)) corpus.push_back(load_ppm(p));
  return corpus;
}

}  // namespace manf
