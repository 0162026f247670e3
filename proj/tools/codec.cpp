// codec: encode, decode, train, eval and bdrate front end.

#include <chrono>
#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "manf/evaluate.hpp"
#include "manf/train.hpp"

namespace fs = std::filesystem;
using namespace manf;

namespace {

enum Exit { kOk = 0, kBadInput = 1, kIncompatible = 2, kChecksum = 3 };

struct CliError : std::runtime_error {
  CliError(int c, const std::string& m) : std::runtime_error(m), code(c) {}
  int code;
};

Bytes read_input(const fs::path& p) {
  try {
    return read_file(p);
  } catch (const std::exception& e) {
    throw CliError(kBadInput, e.what());
  }
}

LoadedModel open_checkpoint(const fs::path& p) {
  try {
    return load_model(p);
  } catch (const std::exception& e) {
    throw CliError(kIncompatible, "checkpoint " + p.string() + ": " + e.what());
  }
}

Tensor<float> open_image(const fs::path& p) {
  try {
    return decode_ppm(read_input(p));
  } catch (const CliError&) {
    throw;
  } catch (const std::exception& e) {
    throw CliError(kBadInput, p.string() + ": " + e.what());
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct EncodeArgs {
  std::string input, ckpt, mask = "variance", out;
  int lambda = 0;
};

int cmd_encode(const EncodeArgs& a) {
  MaskMode mode = MaskMode::kVariance;
  std::string mask_text;
  if (a.mask == "rdo") mode = MaskMode::kRdo;
  else if (a.mask.starts_with("file:")) {
    mode = MaskMode::kFile;
    const Bytes b = read_input(a.mask.substr(5));
    mask_text.assign(b.begin(), b.end());
  } else if (a.mask != "variance") throw CliError(kBadInput, "--mask must be variance, rdo or file:<path>");
  const Tensor<float> img = open_image(a.input);
  const LoadedModel lm = open_checkpoint(a.ckpt);

  const auto t0 = std::chrono::steady_clock::now();
  const double lambda2 = kLambdaSet[std::size_t(a.lambda)];
  MaskPyramid mask;
  try {
    mask = choose_mask(*lm.model, img, mode, lambda2, lm.variance_threshold(), mask_text);
  } catch (const std::exception& e) {
    throw CliError(kBadInput, e.what());
  }
  const CompressResult c = compress(*lm.model, img, mask, static_cast<std::uint8_t>(a.lambda), lm.hash);
  write_file_atomic(a.out, c.stream);
  const Psnr q = psnr_rgb(to_8bit_grid(c.reconstruction), to_8bit_grid(img));
  std::printf("bpp=%s estimated_bits=%.1f bytes=%zu psnr_rgb=%s fine_blocks=%zu coarse_blocks=%zu time=%.3fs\n",
              shortest(c.bpp).c_str(), c.estimated_bits, c.stream.size(), shortest(q.db).c_str(), mask.count(1),
              mask.count(2), seconds_since(t0));
  return kOk;
}

int cmd_decode(const std::string& input, const std::string& ckpt, const std::string& out) {
  const Bytes stream = read_input(input);
  const LoadedModel lm = open_checkpoint(ckpt);
  const auto t0 = std::chrono::steady_clock::now();
  const DecodedImage d = decompress(*lm.model, stream, lm.hash);
  save_ppm(out, d.image);
  std::printf("decoded %ux%u time=%.3fs\n", d.header.width, d.header.height, seconds_since(t0));
  return kOk;
}

int cmd_train(const std::string& config_path) {
  const Bytes b = read_input(config_path);
  TrainConfig cfg;
  try {
    cfg = parse_train_config(std::string(b.begin(), b.end()));
  } catch (const std::exception& e) {
    throw CliError(kBadInput, config_path + ": " + e.what());
  }
  auto res = run_schedule(cfg, load_corpus(cfg), [](const EpochLog& e) {
    std::printf("epoch %zu stage %d lambda2=%s loss=%s rate=%s distortion=%s residual=%s\n", e.epoch, e.stage,
                shortest(e.lambda2).c_str(), shortest(e.mean.loss).c_str(), shortest(e.mean.rate_bpp).c_str(),
                shortest(e.mean.distortion).c_str(), shortest(e.mean.residual).c_str());
    std::fflush(stdout);
  });
  for (const auto& p : res.checkpoints) std::printf("wrote %s\n", p.string().c_str());
  return kOk;
}

int cmd_eval(const std::string& dir, const std::vector<std::string>& ckpts, const std::string& out,
             std::string label) {
  std::vector<std::pair<std::string, Tensor<float>>> images;
  std::vector<fs::path> found;
  try {
    found = list_images(dir);
  } catch (const std::exception& e) {
    throw CliError(kBadInput, e.what());
  }
  if (found.empty()) throw CliError(kBadInput, "no .ppm images in " + dir);
  for (const auto& p : found) images.emplace_back(p.filename().string(), open_image(p));
  std::vector<fs::path> paths(ckpts.begin(), ckpts.end());
  for (const auto& p : paths) open_checkpoint(p);
  if (label.empty()) label = to_string(open_checkpoint(paths.front()).model->config().kind);
  const EvalResult r = evaluate(paths, images, label);
  write_file_atomic(out, emit_rd_csv({r.curve}));
  fs::path detail = out;
  detail.replace_extension(".images.csv");
  write_file_atomic(detail, image_csv(label, r.images));
  for (const auto& p : r.curve.points)
    std::printf("%s lambda2=%s bpp=%s psnr_rgb=%s ms_ssim_db=%s\n", p.model_id.c_str(), shortest(p.lambda2).c_str(),
                shortest(p.bpp).c_str(), shortest(p.psnr_rgb).c_str(), shortest(p.ms_ssim_db).c_str());
  return kOk;
}

std::vector<RdCurve> read_curves(const std::string& path) {
  const Bytes b = read_input(path);
  try {
    auto curves = parse_rd_csv(std::string(b.begin(), b.end()));
    if (curves.empty()) throw FormatError("no curves");
    return curves;
  } catch (const std::exception& e) {
    throw CliError(kBadInput, path + ": " + e.what());
  }
}

int cmd_bdrate(const std::string& anchor, const std::string& test) {
  const auto a = read_curves(anchor);
  const auto t = read_curves(test);
  try {
    std::fputs(bd_report(a.front(), t).c_str(), stdout);
  } catch (const std::exception& e) {
    throw CliError(kBadInput, e.what());
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multiscale flow image codec"};
  app.require_subcommand(1);

  EncodeArgs enc;
  auto* e = app.add_subcommand("encode", "compress a PPM image");
  e->add_option("--input", enc.input, "input P6 image")->required();
  e->add_option("--ckpt", enc.ckpt, "model checkpoint")->required();
  e->add_option("--lambda", enc.lambda, "lambda index, 0 = 0.1 .. 5 = 0.002")->check(CLI::Range(0, 5));
  e->add_option("--mask", enc.mask, "variance | rdo | file:<path>");
  e->add_option("--out", enc.out, "output bitstream")->required();

  std::string d_in, d_ckpt, d_out;
  auto* d = app.add_subcommand("decode", "decompress a bitstream");
  d->add_option("--input", d_in)->required();
  d->add_option("--ckpt", d_ckpt)->required();
  d->add_option("--out", d_out)->required();

  std::string config;
  auto* t = app.add_subcommand("train", "run the training schedule");
  t->add_option("--config", config, "key = value configuration file")->required();

  std::string dir, out, label;
  std::vector<std::string> ckpts;
  auto* v = app.add_subcommand("eval", "rate-distortion curve over an image directory");
  v->add_option("--dir", dir)->required();
  v->add_option("--ckpts", ckpts)->required()->expected(1, -1);
  v->add_option("--out", out)->required();
  v->add_option("--label", label, "curve label (default: model kind)");

  std::string anchor, test;
  auto* b = app.add_subcommand("bdrate", "BD-rate of test curves against an anchor");
  b->add_option("--anchor", anchor)->required();
  b->add_option("--test", test)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*e) return cmd_encode(enc);
    if (*d) return cmd_decode(d_in, d_ckpt, d_out);
    if (*t) return cmd_train(config);
    if (*v) return cmd_eval(dir, ckpts, out, label);
    if (*b) return cmd_bdrate(anchor, test);
  } catch (const CliError& err) {
    std::cerr << "codec: " << err.what() << "\n";
    return err.code;
  } catch (const ChecksumError& err) {
    std::cerr << "codec: " << err.what() << "\n";
    return kChecksum;
  } catch (const VersionError& err) {
    std::cerr << "codec: " << err.what() << "\n";
    return kIncompatible;
  } catch (const ModelMismatch& err) {
    std::cerr << "codec: " << err.what() << "\n";
    return kIncompatible;
  } catch (const std::exception& err) {
    std::cerr << "codec: " << err.what() << "\n";
    return kBadInput;
  }
  return kOk;
}
