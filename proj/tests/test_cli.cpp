#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "doctest.h"
#include "fredsr/checkpoint.hpp"
#include "fredsr/cli.hpp"
#include "fredsr/codec.hpp"
#include "fredsr/config.hpp"
#include "fredsr/nets.hpp"
#include "fredsr/synth.hpp"

using namespace fredsr;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

// Fresh scratch directory per test case.
struct Scratch {
  fs::path root;
  explicit Scratch(const std::string& name) : root(fs::temp_directory_path() / ("fredsr_cli_" + name)) {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Scratch() { fs::remove_all(root); }
  std::string operator/(const std::string& p) const { return (root / p).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::map<std::string, std::string> key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    const auto eq = line.find('=');
    if (eq != std::string::npos && line.find(' ') == std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

const char* kTinyConfig =
    "patch = 12\nbatch = 2\ngen.width = 8\ngen.blocks = 2\ngen.spectral_hidden = 4\n"
    "disc.widths = 4,8\ncheckpoint_every = 50\nnoise.warmup = 10\n";

// Synthesizes and prepares `count` textures of side `size`.
std::string make_dataset(const Scratch& s, int count = 4, int size = 48) {
  REQUIRE(cli({"synth", "--out", s / "raw", "--count", std::to_string(count), "--size", std::to_string(size)}).code ==
          0);
  REQUIRE(cli({"prepare", "--input", s / "raw", "--out", s / "data"}).code == 0);
  return s / "data";
}

std::string write_config(const Scratch& s, const std::string& text) {
  std::ofstream(s / "run.cfg") << text;
  return s / "run.cfg";
}

}  // namespace

TEST_CASE("prepare emits a third-size LR image for a 1920x1080 input") {
  Scratch s("prepare_hd");
  fs::create_directories(s / "in");
  write_image(s / "in/frame.png", procedural_texture(1080, 1920, 5));
  const auto r = cli({"prepare", "--input", s / "in", "--out", s / "out", "--scale", "3"});
  CHECK(r.code == 0);
  CHECK(r.out.find("frame hr=1920x1080 lr=640x360") != std::string::npos);
  const auto lr = read_image(s / "out/frame_lr.png");
  CHECK(lr.width() == 640);
  CHECK(lr.height() == 360);
}

TEST_CASE("prepare skips undersized images and fails on an empty folder") {
  Scratch s("prepare_skip");
  fs::create_directories(s / "in");
  write_image(s / "in/a.png", procedural_texture(24, 30, 1));
  write_image(s / "in/tiny.png", Image::filled(2, 2, 0.5f, 0.5f, 0.5f));
  const auto r = cli({"prepare", "--input", s / "in", "--out", s / "out", "--crop-multiple"});
  CHECK(r.code == 0);
  CHECK(r.err.find("tiny.png") != std::string::npos);
  CHECK(r.out.find("prepared=1 skipped=1") != std::string::npos);

  fs::create_directories(s / "empty");
  const auto e = cli({"prepare", "--input", s / "empty", "--out", s / "out2"});
  CHECK(e.code == 2);
  CHECK(e.err.find("no images found") != std::string::npos);
}

TEST_CASE("train with zero steps writes only the initial checkpoint") {
  Scratch s("train_zero");
  const auto data = make_dataset(s);
  const auto r = cli({"train", "--data", data, "--config", write_config(s, kTinyConfig), "--out", s / "ckpt",
                      "--steps", "0"});
  CHECK(r.code == 0);
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(s / "ckpt")) files.push_back(e.path().filename().string());
  std::sort(files.begin(), files.end());
  CHECK(files == std::vector<std::string>{"ckpt-00000000.ckpt", "metrics.txt"});
  CHECK(fs::file_size(s / "ckpt/metrics.txt") == 0);
}

TEST_CASE("an unknown config key stops train before any work") {
  Scratch s("train_badkey");
  const auto data = make_dataset(s, 1);
  const auto r = cli({"train", "--data", data, "--config", write_config(s, "gen.wdith = 8\n"), "--out", s / "ckpt"});
  CHECK(r.code == 2);
  CHECK(r.err.find("gen.wdith") != std::string::npos);
  CHECK_FALSE(fs::exists(s / "ckpt"));
}

TEST_CASE("train is repeatable and resumes bitwise") {
  Scratch s("train_resume");
  const auto data = make_dataset(s);
  const auto cfg = write_config(s, kTinyConfig);
  REQUIRE(cli({"train", "--data", data, "--config", cfg, "--out", s / "a", "--steps", "150", "--seed", "3"}).code == 0);
  REQUIRE(cli({"train", "--data", data, "--config", cfg, "--out", s / "b", "--steps", "150", "--seed", "3"}).code == 0);
  CHECK(slurp(s / "a/metrics.txt") == slurp(s / "b/metrics.txt"));

  REQUIRE(cli({"train", "--data", data, "--config", cfg, "--out", s / "c", "--steps", "100", "--seed", "3"}).code == 0);
  const auto r = cli({"train", "--data", data, "--out", s / "c", "--resume", s / "c/ckpt-00000100.ckpt", "--steps", "150"});
  CHECK(r.code == 0);
  CHECK(slurp(s / "c/metrics.txt") == slurp(s / "a/metrics.txt"));
  CHECK(slurp(s / "c/ckpt-00000150.ckpt") == slurp(s / "a/ckpt-00000150.ckpt"));
}

TEST_CASE("a zero-residual checkpoint reproduces the bicubic baseline") {
  Scratch s("residual");
  const auto data = make_dataset(s, 2);
  const auto cfg = write_config(s, std::string(kTinyConfig) + "gen.tail_init_scale = 0\n");
  REQUIRE(cli({"train", "--data", data, "--config", cfg, "--out", s / "ckpt", "--steps", "0"}).code == 0);
  const auto ckpt = s / "ckpt/ckpt-00000000.ckpt";
  const auto input = s / "data/tex_0000_lr.png";

  const auto r = cli({"upscale", "--ckpt", ckpt, "--input", input, "--output", s / "sr.png"});
  CHECK(r.code == 0);
  CHECK(r.out.find("input=16x16 output=48x48") != std::string::npos);
  REQUIRE(cli({"upscale", "--baseline", "bicubic", "--input", input, "--output", s / "bicubic.png"}).code == 0);
  CHECK(slurp(s / "sr.png") == slurp(s / "bicubic.png"));
  REQUIRE(cli({"upscale", "--ckpt", ckpt, "--input", input, "--output", s / "again.png"}).code == 0);
  CHECK(slurp(s / "sr.png") == slurp(s / "again.png"));

  const auto e = cli({"eval", "--data", data, "--ckpt", ckpt, "--baseline", "bicubic"});
  CHECK(e.code == 0);
  const auto kv = key_values(e.out);
  CHECK(kv.at("model_mean_ssim") == kv.at("bicubic_mean_ssim"));
  CHECK(kv.at("model_mean_psnr") == kv.at("bicubic_mean_psnr"));
  CHECK(kv.at("delta_ssim") == "0");
  CHECK(kv.at("delta_psnr") == "0");

  const auto m = cli({"upscale", "--ckpt", ckpt, "--input", input, "--output", s / "x.png", "--scale", "2"});
  CHECK(m.code != 0);
  CHECK(m.err.find("scale mismatch") != std::string::npos);
}

TEST_CASE("eval scores a self-consistent pair as identical") {
  Scratch s("eval_self");
  fs::create_directories(s / "data");
  write_image(s / "data/p_lr.png", procedural_texture(20, 20, 9));
  REQUIRE(cli({"upscale", "--baseline", "bicubic", "--input", s / "data/p_lr.png", "--output", s / "data/p_hr.png"})
              .code == 0);
  write_image(s / "data/orphan_hr.png", procedural_texture(60, 60, 1));
  const auto r = cli({"eval", "--data", s / "data", "--baseline", "bicubic"});
  CHECK(r.code == 0);
  CHECK(r.err.find("unpaired: orphan_hr.png") != std::string::npos);
  const auto kv = key_values(r.out);
  CHECK(kv.at("images") == "1");
  CHECK(kv.at("bicubic_mean_ssim") == "1.000000");
  CHECK(kv.at("bicubic_mean_psnr") == "inf");
}

TEST_CASE("bicubic scores at least as well as bilinear") {
  Scratch s("eval_order");
  const auto data = make_dataset(s, 6, 96);
  for (const char* extra : {"", "--luma"}) {
    std::vector<std::string> base{"eval", "--data", data, "--baseline"};
    if (*extra) base.push_back(extra);
    auto cubic = base, linear = base;
    cubic.insert(cubic.begin() + 4, "bicubic");
    linear.insert(linear.begin() + 4, "bilinear");
    const auto a = key_values(cli(cubic).out), b = key_values(cli(linear).out);
    CHECK(std::stod(a.at("bicubic_mean_psnr")) >= std::stod(b.at("bilinear_mean_psnr")));
  }
}

TEST_CASE("inspect reports the configuration and the parameter budget") {
  Scratch s("inspect");
  const auto data = make_dataset(s, 1);
  REQUIRE(cli({"train", "--data", data, "--out", s / "ckpt", "--steps", "0"}).code == 0);
  const auto path = s / "ckpt/ckpt-00000000.ckpt";
  const auto r = cli({"inspect", "--ckpt", path});
  CHECK(r.code == 0);
  const auto saved = load_checkpoint(path).config_text;
  CHECK(r.out.find("config:\n" + saved) != std::string::npos);
  const auto gen = std::stoll(key_values(r.out).at("generator_params"));
  CHECK(gen == count_parameters(GeneratorConfig{}));
  CHECK(gen >= 33000);
  CHECK(gen <= 40000);

  auto bytes = slurp(path);
  bytes[bytes.size() / 2] ^= 0x01;
  std::ofstream(s / "bad.ckpt", std::ios::binary) << bytes;
  const auto bad = cli({"inspect", "--ckpt", s / "bad.ckpt"});
  CHECK(bad.code == 1);
  CHECK(bad.err.find("checksum mismatch in tensor table") != std::string::npos);
}

TEST_CASE("usage errors exit with code 2") {
  CHECK(cli({}).code == 2);
  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({"inspect"}).code == 2);
  CHECK(cli({"upscale", "--input", "a.png", "--output", "b.png"}).code == 2);
  CHECK(cli({"upscale", "--baseline", "nearest", "--input", "a.png", "--output", "b.png"}).code == 2);
  CHECK(cli({"--help"}).code == 0);
}
