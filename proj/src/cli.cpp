#include "fredsr/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>

#include "fredsr/checkpoint.hpp"
#include "fredsr/codec.hpp"
#include "fredsr/config.hpp"
#include "fredsr/errors.hpp"
#include "fredsr/losses.hpp"
#include "fredsr/synth.hpp"
#include "fredsr/training.hpp"

namespace fredsr {

namespace {

namespace fs = std::filesystem;

// Bad flags, config or inputs that the user has to fix; maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

bool is_image_path(const fs::path& p) {
  const auto ext = lower(p.extension().string());
  return ext == ".png" || ext == ".ppm";
}

std::vector<fs::path> image_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw UsageError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_image_path(e.path())) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::string dims(const Image& img) { return std::to_string(img.width()) + "x" + std::to_string(img.height()); }

std::string ckpt_name(std::int64_t step) {
  std::string s = std::to_string(step);
  return "ckpt-" + std::string(s.size() < 8 ? 8 - s.size() : 0, '0') + s + ".ckpt";
}

std::optional<ResampleFilter> parse_baseline(const std::string& name) {
  if (name.empty()) return std::nullopt;
  if (name == "bicubic") return ResampleFilter::kBicubic;
  if (name == "bilinear") return ResampleFilter::kBilinear;
  throw UsageError("unknown baseline '" + name + "' (expected bicubic or bilinear)");
}

Image upscale_with(const Image& lr, int scale, ResampleFilter filter) {
  return resample(lr, lr.height() * scale, lr.width() * scale, filter);
}

Image upscale_with(const Image& lr, int scale, Generator<float>& gen) {
  const auto up = image_to_tensor<float>(resample_bicubic(lr, lr.height() * scale, lr.width() * scale));
  return tensor_to_image(gen.super_resolve(up));
}

struct Scores {
  double ssim = 0;
  double psnr = 0;
};

Scores score(const Image& sr, const Image& hr, bool luma) {
  // Scored as written to disk: 8-bit levels.
  const auto q = quantize8(sr);
  if (luma) {
    const auto a = luma_tensor<double>(q), b = luma_tensor<double>(hr);
    return {ssim_value(a, b), psnr(a, b)};
  }
  const auto a = image_to_tensor<double>(q), b = image_to_tensor<double>(hr);
  return {ssim_value(a, b), psnr(a, b)};
}

// Shortest round-trip text, so an exact zero prints as "0".
std::string delta(double a, double b) {
  const double d = a == b ? 0.0 : a - b;
  if (std::isinf(d)) return d > 0 ? "inf" : "-inf";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, d);
  return std::string(buf, r.ptr);
}

int cmd_prepare(const std::string& input, const std::string& out_dir, int scale, bool crop_multiple,
                std::ostream& out, std::ostream& err) {
  if (scale < 2) throw UsageError("--scale must be at least 2");
  const auto files = image_files(input);
  if (files.empty()) throw UsageError("no images found in " + input);
  fs::create_directories(out_dir);
  int written = 0, skipped = 0;
  for (const auto& f : files) {
    const auto name = f.stem().string();
    try {
      const auto img = read_image(f);
      if (!crop_multiple && (img.height() % scale != 0 || img.width() % scale != 0)) {
        err << "warning: skipping " << f.filename().string() << ": " << dims(img) << " is not a multiple of "
            << scale << " (use --crop-multiple)\n";
        ++skipped;
        continue;
      }
      const auto pair = make_lr_hr_pair(img, scale);
      write_image(fs::path(out_dir) / (name + "_hr.png"), pair.hr);
      write_image(fs::path(out_dir) / (name + "_lr.png"), pair.lr);
      out << name << " hr=" << dims(pair.hr) << " lr=" << dims(pair.lr) << "\n";
      ++written;
    } catch (const std::exception& e) {
      err << "warning: skipping " << f.filename().string() << ": " << e.what() << "\n";
      ++skipped;
    }
  }
  out << "prepared=" << written << " skipped=" << skipped << "\n";
  if (written == 0) {
    err << "error: no usable images\n";
    return kExitFailure;
  }
  return kExitOk;
}

struct TrainArgs {
  std::string data, config, out_dir, resume;
  std::optional<std::int64_t> steps;
  std::optional<std::uint64_t> seed;
  bool verbose = false;
};

std::vector<std::string> kept_metric_lines(const fs::path& path, std::int64_t before_step) {
  std::vector<std::string> kept;
  std::ifstream in(path);
  for (std::string line; std::getline(in, line);) {
    if (!line.starts_with("step=")) continue;
    std::int64_t step = 0;
    const auto [ptr, ec] = std::from_chars(line.data() + 5, line.data() + line.size(), step);
    if (ec == std::errc() && step < before_step) kept.push_back(line);
  }
  return kept;
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  std::optional<Checkpoint> ckpt;
  TrainRunConfig cfg;
  if (!a.resume.empty()) {
    if (!a.config.empty() || a.seed) throw UsageError("--config and --seed come from the checkpoint when resuming");
    ckpt = load_checkpoint(a.resume);
    cfg = parse_config(ckpt->config_text);
  } else if (!a.config.empty()) {
    cfg = load_config_file(a.config);
  }
  if (a.seed) cfg.seed = *a.seed;
  if (a.steps) cfg.steps = *a.steps;
  if (!a.data.empty()) cfg.data = a.data;
  cfg.validate();
  if (cfg.data.empty()) throw UsageError("no dataset: pass --data or set data in the config");

  auto warn = [&](const std::string& w) { err << "warning: " << w << "\n"; };
  std::vector<ImagePair> data;
  for (auto& p : load_pair_dir(cfg.data, warn)) data.push_back(std::move(p.pair));
  if (data.empty()) throw UsageError("no images found in " + cfg.data);

  Trainer trainer(cfg, std::move(data), warn);
  if (ckpt) trainer.import_state(*ckpt);
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  const auto metrics_path = dir / "metrics.txt";
  {
    const auto kept = ckpt ? kept_metric_lines(metrics_path, trainer.steps_done()) : std::vector<std::string>{};
    std::ofstream m(metrics_path, std::ios::trunc);
    for (const auto& l : kept) m << l << "\n";
    if (!m) throw std::runtime_error("cannot write " + metrics_path.string());
  }
  std::ofstream metrics(metrics_path, std::ios::app);

  fs::path last;
  auto save = [&](const fs::path& path) {
    save_checkpoint(trainer.export_state(), path);
    last = path;
  };
  if (!ckpt) save(dir / ckpt_name(trainer.steps_done()));
  try {
    while (trainer.steps_done() < cfg.steps) {
      const auto m = trainer.step();
      metrics << m.line() << "\n";
      if (a.verbose) out << m.line() << "\n";
      if (cfg.checkpoint_every > 0 && trainer.steps_done() % cfg.checkpoint_every == 0) {
        metrics.flush();
        save(dir / ckpt_name(trainer.steps_done()));
      }
    }
  } catch (const TrainingAborted& e) {
    metrics.flush();
    const auto path = dir / ("abort-" + ckpt_name(trainer.steps_done()));
    save_checkpoint(trainer.export_state(), path);
    err << "error: " << e.what() << "\nstate saved to " << path.string() << "\n";
    return kExitFailure;
  }
  metrics.flush();
  if (!metrics) throw std::runtime_error("cannot write " + metrics_path.string());
  const auto final_path = dir / ckpt_name(trainer.steps_done());
  if (last != final_path) save(final_path);

  out << "steps=" << trainer.steps_done() << "\n";
  out << "generator_params=" << total_numel(trainer.generator().parameters()) << "\n";
  out << "discriminator_params=" << total_numel(trainer.discriminator().parameters()) << "\n";
  out << "checkpoint=" << final_path.string() << "\n";
  out << "metrics=" << metrics_path.string() << "\n";
  return kExitOk;
}

int cmd_upscale(const std::string& ckpt_path, const std::string& baseline, const std::string& input,
                const std::string& output, std::optional<int> scale, std::ostream& out) {
  const auto filter = parse_baseline(baseline);
  if (ckpt_path.empty() == !filter) throw UsageError("give exactly one of --ckpt and --baseline");
  format_for_path(output);  // rejects an unknown extension before any work
  const auto lr = read_image(input);
  Image sr;
  if (filter) {
    sr = upscale_with(lr, scale.value_or(3), *filter);
  } else {
    const auto ckpt = load_checkpoint(ckpt_path);
    const auto cfg = parse_config(ckpt.config_text);
    if (scale && *scale != cfg.scale) {
      throw UsageError("scale mismatch: checkpoint upscales by " + std::to_string(cfg.scale) + ", " +
                       std::to_string(*scale) + " requested");
    }
    auto gen = generator_from_checkpoint(ckpt);
    sr = upscale_with(lr, cfg.scale, gen);
  }
  write_image(output, sr);
  out << "input=" << dims(lr) << " output=" << dims(sr) << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& data_dir, const std::string& ckpt_path, const std::string& baseline, bool luma,
             std::optional<int> scale_flag, std::ostream& out, std::ostream& err) {
  auto filter = parse_baseline(baseline);
  if (ckpt_path.empty() && !filter) filter = ResampleFilter::kBicubic;
  std::optional<Generator<float>> gen;
  int scale = scale_flag.value_or(3);
  if (!ckpt_path.empty()) {
    const auto ckpt = load_checkpoint(ckpt_path);
    const auto cfg = parse_config(ckpt.config_text);
    if (scale_flag && *scale_flag != cfg.scale) {
      throw UsageError("scale mismatch: checkpoint upscales by " + std::to_string(cfg.scale) + ", " +
                       std::to_string(*scale_flag) + " requested");
    }
    scale = cfg.scale;
    gen = generator_from_checkpoint(ckpt);
  }
  auto warn = [&](const std::string& w) { err << "warning: " << w << "\n"; };
  auto pairs = load_pair_dir(data_dir, warn);
  std::erase_if(pairs, [&](const NamedPair& p) {
    const bool ok = p.pair.lr.height() * scale == p.pair.hr.height() && p.pair.lr.width() * scale == p.pair.hr.width();
    if (!ok) warn("excluding " + p.name + ": " + dims(p.pair.lr) + " -> " + dims(p.pair.hr) + " is not " +
                  std::to_string(scale) + "x");
    return !ok;
  });
  if (pairs.empty()) throw UsageError("no image pairs found in " + data_dir);

  const std::string base_name = filter == ResampleFilter::kBilinear ? "bilinear" : "bicubic";
  std::vector<std::string> methods;
  if (gen) methods.push_back("model");
  if (filter) methods.push_back(base_name);
  out << "image";
  for (const auto& m : methods) out << " " << m << "_ssim " << m << "_psnr";
  out << "\n";
  std::vector<Scores> sums(methods.size());
  for (const auto& p : pairs) {
    out << p.name;
    for (std::size_t i = 0; i < methods.size(); ++i) {
      const auto sr = methods[i] == "model" ? upscale_with(p.pair.lr, scale, *gen)
                                            : upscale_with(p.pair.lr, scale, *filter);
      const auto s = score(sr, p.pair.hr, luma);
      sums[i].ssim += s.ssim;
      sums[i].psnr += s.psnr;
      out << " " << format_metric(s.ssim) << " " << format_metric(s.psnr, 4);
    }
    out << "\n";
  }
  const double n = static_cast<double>(pairs.size());
  out << "images=" << pairs.size() << "\n";
  out << "channels=" << (luma ? "luma" : "rgb") << "\n";
  for (std::size_t i = 0; i < methods.size(); ++i) {
    out << methods[i] << "_mean_ssim=" << format_metric(sums[i].ssim / n) << "\n";
    out << methods[i] << "_mean_psnr=" << format_metric(sums[i].psnr / n, 4) << "\n";
  }
  if (methods.size() == 2) {
    out << "delta_ssim=" << delta(sums[0].ssim / n, sums[1].ssim / n) << "\n";
    out << "delta_psnr=" << delta(sums[0].psnr / n, sums[1].psnr / n) << "\n";
  }
  return kExitOk;
}

const char* dtype_name(DType d) {
  switch (d) {
    case DType::kF32: return "f32";
    case DType::kF64: return "f64";
    case DType::kI64: return "i64";
  }
  return "?";
}

int cmd_inspect(const std::string& path, std::ostream& out) {
  const auto ckpt = load_checkpoint(path);
  std::int64_t gen = 0, disc = 0, step = 0;
  if (const auto* s = ckpt.find("state.step")) step = s->as_i64().at(0);
  out << "version=" << ckpt.version << "\n";
  out << "step=" << step << "\n";
  out << "config:\n" << ckpt.config_text;
  out << "tensors:\n";
  for (const auto& t : ckpt.tensors) {
    out << "  " << t.name << " " << dtype_name(t.dtype) << " " << shape_string(t.shape) << "\n";
    if (t.name.starts_with("param.gen.")) gen += t.numel();
    if (t.name.starts_with("param.disc.")) disc += t.numel();
  }
  out << "generator_params=" << gen << "\n";
  out << "discriminator_params=" << disc << "\n";
  return kExitOk;
}

int cmd_synth(const std::string& out_dir, int count, int size, std::uint64_t seed, std::ostream& out) {
  if (count < 1 || size < 1) throw UsageError("--count and --size must be positive");
  fs::create_directories(out_dir);
  const auto images = procedural_corpus(count, size, size, seed);
  for (std::size_t i = 0; i < images.size(); ++i) {
    std::string idx = std::to_string(i);
    idx.insert(0, idx.size() < 4 ? 4 - idx.size() : 0, '0');
    write_image(fs::path(out_dir) / ("tex_" + idx + ".png"), images[i]);
  }
  out << "written=" << images.size() << "\n";
  return kExitOk;
}

}  // namespace

std::vector<NamedPair> load_pair_dir(const fs::path& dir, const std::function<void(const std::string&)>& warn) {
  std::map<std::string, std::pair<fs::path, fs::path>> groups;
  for (const auto& f : image_files(dir)) {
    const auto stem = f.stem().string();
    const bool hr = stem.ends_with("_hr"), lr = stem.ends_with("_lr");
    if (!hr && !lr) {
      if (warn) warn("ignoring " + f.filename().string() + ": not named <name>_hr or <name>_lr");
      continue;
    }
    auto& slot = groups[stem.substr(0, stem.size() - 3)];
    (hr ? slot.second : slot.first) = f;
  }
  std::vector<NamedPair> out;
  for (const auto& [name, files] : groups) {
    const auto& [lr, hr] = files;
    if (lr.empty() || hr.empty()) {
      if (warn) warn("unpaired: " + (lr.empty() ? hr : lr).filename().string());
      continue;
    }
    try {
      out.push_back({name, {read_image(lr), read_image(hr)}});
    } catch (const std::exception& e) {
      if (warn) warn("skipping " + name + ": " + e.what());
    }
  }
  return out;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Image super-resolution toolkit", "fredsr"};
  app.require_subcommand(1);

  std::string input, out_dir, data, config, resume, ckpt, baseline, output;
  int scale = 3, count = 64, size = 96;
  std::optional<int> scale_opt;
  std::optional<std::int64_t> steps;
  std::optional<std::uint64_t> seed;
  std::uint64_t synth_seed = 7;
  bool crop_multiple = false, verbose = false, luma = false;

  auto* prepare = app.add_subcommand("prepare", "Build LR/HR training pairs from a folder of images");
  prepare->add_option("--input", input, "Folder of PNG/PPM images")->required();
  prepare->add_option("--out", out_dir, "Output folder")->required();
  prepare->add_option("--scale", scale, "Downscale factor")->capture_default_str();
  prepare->add_flag("--crop-multiple", crop_multiple, "Crop sizes down to a multiple of the scale");

  auto* train = app.add_subcommand("train", "Train a generator");
  train->add_option("--data", data, "Prepared dataset folder");
  train->add_option("--config", config, "Run config file");
  train->add_option("--out", out_dir, "Checkpoint folder")->required();
  train->add_option("--steps", steps, "Total step count (overrides the config)");
  train->add_option("--seed", seed, "Seed (overrides the config)");
  train->add_option("--resume", resume, "Continue from a checkpoint");
  train->add_flag("--verbose", verbose, "Print every metrics line");

  auto* upscale = app.add_subcommand("upscale", "Upscale one image");
  upscale->add_option("--ckpt", ckpt, "Generator checkpoint");
  upscale->add_option("--baseline", baseline, "bicubic or bilinear instead of a checkpoint");
  upscale->add_option("--input", input, "Low-resolution image")->required();
  upscale->add_option("--output", output, "Output image (.png or .ppm)")->required();
  upscale->add_option("--scale", scale_opt, "Scale factor; must match the checkpoint");

  auto* eval = app.add_subcommand("eval", "Score upscaling on a prepared dataset");
  eval->add_option("--data", data, "Prepared dataset folder")->required();
  eval->add_option("--ckpt", ckpt, "Generator checkpoint");
  eval->add_option("--baseline", baseline, "bicubic or bilinear");
  eval->add_flag("--luma", luma, "Score the luma channel only");
  eval->add_option("--scale", scale_opt, "Scale factor; must match the checkpoint");

  auto* inspect = app.add_subcommand("inspect", "Describe a checkpoint");
  inspect->add_option("--ckpt", ckpt, "Checkpoint file")->required();

  auto* synth = app.add_subcommand("synth", "Write procedural texture images");
  synth->add_option("--out", out_dir, "Output folder")->required();
  synth->add_option("--count", count, "Number of images")->capture_default_str();
  synth->add_option("--size", size, "Side length in pixels")->capture_default_str();
  synth->add_option("--seed", synth_seed, "Seed")->capture_default_str();

  std::vector<std::string> argv_storage{"fredsr"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_storage) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*prepare) return cmd_prepare(input, out_dir, scale, crop_multiple, out, err);
    if (*train) return cmd_train({data, config, out_dir, resume, steps, seed, verbose}, out, err);
    if (*upscale) return cmd_upscale(ckpt, baseline, input, output, scale_opt, out);
    if (*eval) return cmd_eval(data, ckpt, baseline, luma, scale_opt, out, err);
    if (*inspect) return cmd_inspect(ckpt, out);
    if (*synth) return cmd_synth(out_dir, count, size, synth_seed, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const CheckpointError& e) {
    err << "checkpoint error (" << e.section() << "): " << e.what() << "\n";
    return kExitFailure;
  } catch (const UnsupportedFormat& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace fredsr
