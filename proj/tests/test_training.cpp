#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "fredsr/errors.hpp"
#include "fredsr/ops.hpp"
#include "fredsr/synth.hpp"
#include "fredsr/training.hpp"

using namespace fredsr;

namespace {

TrainRunConfig tiny_config() {
  TrainRunConfig c;
  c.seed = 5;
  c.patch = 12;
  c.batch = 2;
  c.model.gen.width = 8;
  c.model.gen.blocks = 2;
  c.model.gen.spectral_hidden = 4;
  c.model.disc.widths = {4, 8};
  c.noise.warmup = 5;
  c.restart.window = 8;
  c.restart.cooldown = 20;
  c.diffusion.adapt_every = 2;
  c.diffusion.ema = 0.5;
  return c;
}

std::vector<ImagePair> tiny_data(std::uint64_t seed = 3, int count = 4, int side = 24) {
  std::vector<ImagePair> out;
  for (const auto& img : procedural_corpus(count, side, side, seed)) out.push_back(make_lr_hr_pair(img, 3));
  return out;
}

std::vector<std::string> run_lines(Trainer& t, int steps) {
  std::vector<std::string> lines;
  for (int i = 0; i < steps; ++i) lines.push_back(t.step().line());
  return lines;
}

std::vector<std::vector<float>> snapshot(const NamedTensors<float>& ps) {
  std::vector<std::vector<float>> out;
  for (const auto& p : ps) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

}  // namespace

TEST_CASE("cumulative signal coefficients start at 1 and strictly decrease") {
  DiffusionState ds;
  CHECK(ds.alpha_bar.size() == 501);
  CHECK(ds.alpha_bar_at(0) == 1.0);
  // Independent product of the linear beta schedule.
  double ab = 1.0;
  for (int t = 1; t <= 500; ++t) {
    ab *= 1.0 - (1e-4 + (0.02 - 1e-4) * (t - 1) / 499.0);
    CHECK(ds.alpha_bar_at(t) == doctest::Approx(ab).epsilon(1e-12));
    CHECK(ds.alpha_bar_at(t) < ds.alpha_bar_at(t - 1));
  }
}

TEST_CASE("T = 0 returns the residual itself and draws nothing") {
  DiffusionState ds;
  std::mt19937_64 rng(9), untouched(9);
  const TensorF r({2, 3, 4, 4}, std::vector<float>(96, 0.25f));
  const auto t = sample_timesteps(ds, 2, rng);
  CHECK(t == std::vector<int>{0, 0});
  const auto out = diffuse_residual(r, t, ds, rng);
  CHECK(out.impl() == r.impl());
  CHECK(rng() == untouched());
}

TEST_CASE("diffused zero residual has variance 1 - abar_t") {
  DiffusionState ds;
  std::mt19937_64 rng(11);
  const TensorD zero({1, 1, 1, 100000}, std::vector<double>(100000, 0.0));
  double prev = 0.0;
  for (int t : {1, 10, 50, 150, 300, 500}) {
    const auto out = diffuse_residual(zero, {t}, ds, rng);
    double s = 0, s2 = 0;
    for (double v : out.data()) s += v, s2 += v * v;
    const double n = 100000.0, mean = s / n, var = s2 / n - mean * mean;
    const double expected = 1.0 - ds.alpha_bar_at(t);
    CHECK(std::abs(var - expected) <= 0.03 * expected);
    CHECK(expected > prev);
    prev = expected;
  }
}

TEST_CASE("diffusion scales the signal by sqrt(abar_t) per batch item") {
  DiffusionState ds;
  ds.t = 500;
  std::mt19937_64 a(2), b(2);
  const TensorD r({2, 1, 2, 2}, {0.5, -0.5, 1, 0, 0.25, 0.25, -1, 1});
  const std::vector<int> ts{0, 300};
  const auto out = diffuse_residual(r, ts, ds, a);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::int64_t i = 0; i < 8; ++i) {
    const double eps = normal(b);
    const double ab = ds.alpha_bar_at(ts[static_cast<std::size_t>(i / 4)]);
    CHECK(out.data()[i] == doctest::Approx(std::sqrt(ab) * r.data()[i] + std::sqrt(1 - ab) * eps).epsilon(1e-15));
  }
}

TEST_CASE("timesteps are uniform on 0..T") {
  DiffusionState ds;
  ds.t = 4;
  std::mt19937_64 rng(1);
  std::vector<int> hist(5, 0);
  for (int v : sample_timesteps(ds, 50000, rng)) hist.at(static_cast<std::size_t>(v))++;
  for (int h : hist) CHECK(std::abs(h - 10000) < 400);
}

TEST_CASE("adapt_diffusion holds T at the target and saturates at the ends") {
  DiffusionState ds;
  ds.t = 7;
  ds.r_d = 0.6;
  // Every output on the target side: batch mean 0.6 keeps r_d at 0.6.
  const std::vector<double> at_target{0.9, 0.9, 0.9, 0.9, 0.1};
  adapt_diffusion(ds, at_target);
  CHECK(ds.r_d == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(ds.t == 7);

  DiffusionState up;
  up.t = 499;
  up.r_d = 1.0;
  const std::vector<double> right{1.0, 0.9};
  for (int i = 0; i < 10; ++i) adapt_diffusion(up, right);
  CHECK(up.t == 500);

  DiffusionState down;
  down.t = 1;
  const std::vector<double> wrong{0.0, 0.1};
  for (int i = 0; i < 10; ++i) adapt_diffusion(down, wrong);
  CHECK(down.t == 0);
}

TEST_CASE("alternating batches move T by at most one per update") {
  DiffusionState ds;
  ds.t = 250;
  double r = 0.0;  // independent simulation of the EMA
  const std::vector<double> perfect{0.9, 0.9, 0.9, 0.9};
  const std::vector<double> fooled{0.1, 0.1, 0.1, 0.1};
  for (int i = 0; i < 2000; ++i) {
    const int before = ds.t;
    const bool good = i % 2 == 0;
    adapt_diffusion(ds, good ? perfect : fooled);
    r = 0.99 * r + 0.01 * (good ? 1.0 : -1.0);
    CHECK(ds.r_d == doctest::Approx(r).epsilon(1e-12));
    CHECK(std::abs(ds.t - before) <= 1);
  }
}

TEST_CASE("a perfect discriminator drives T to T_max on the predicted update") {
  DiffusionState ds;
  // r_d after k updates is 1 - ema^k; T first rises once that exceeds the
  // target, then climbs one per update.
  const int first = static_cast<int>(std::floor(std::log(1.0 - 0.6) / std::log(0.99))) + 1;
  const int reach = first + 500 - 1;
  const std::vector<double> perfect{1.0, 1.0};
  int first_seen = -1, reach_seen = -1;
  for (int k = 1; k <= 1000; ++k) {
    adapt_diffusion(ds, perfect);
    if (ds.t == 1 && first_seen < 0) first_seen = k;
    if (ds.t == 500 && reach_seen < 0) reach_seen = k;
  }
  CHECK(first_seen == first);
  CHECK(reach_seen == reach);
}

TEST_CASE("noise multiplier follows the loss ratio") {
  CHECK(noise_multiplier_update(2.0, 2.0) == 1.0);
  CHECK(noise_multiplier_update(1.0, 2.0) == 0.5);
  CHECK(noise_multiplier_update(3.0, 2.0) == 1.0);
  CHECK(noise_multiplier_update(-1.0, 2.0) == 0.0);
  CHECK(noise_multiplier_update(1.0, 0.0) == 1.0);
}

TEST_CASE("noise tracker captures the reference at the end of warm-up") {
  NoiseScheduleConfig cfg;
  cfg.warmup = 3;
  cfg.ema = 0.5;
  NoiseTracker t;
  t.observe(4.0, cfg);
  CHECK(t.ema == 4.0);
  CHECK(t.multiplier(cfg) == 1.0);
  t.observe(2.0, cfg);
  t.observe(2.0, cfg);  // ema 2.5, captured
  CHECK(t.initial == 2.5);
  CHECK(t.multiplier(cfg) == 1.0);
  t.observe(0.0, cfg);  // ema 1.25
  CHECK(t.multiplier(cfg) == 0.5);
}

TEST_CASE("patches are aligned, sized and repeatable") {
  const auto data = tiny_data(1, 3, 60);
  std::mt19937_64 a(4), b(4);
  const auto p = sample_patches(data, 48, 3, a, 5);
  const auto q = sample_patches(data, 48, 3, b, 5);
  CHECK(p.lr.shape() == Shape{5, 3, 16, 16});
  CHECK(p.hr.shape() == Shape{5, 3, 48, 48});
  CHECK(p.up.shape() == Shape{5, 3, 48, 48});
  for (std::size_t i = 0; i < p.origins.size(); ++i) {
    CHECK(p.origins[i].y % 3 == 0);
    CHECK(p.origins[i].x % 3 == 0);
    CHECK(p.origins[i].image == q.origins[i].image);
    CHECK(p.origins[i].y == q.origins[i].y);
    CHECK(p.origins[i].x == q.origins[i].x);
    // LR crop is the co-located block of the stored LR image.
    const auto& lr = data[p.origins[i].image].lr;
    for (int y = 0; y < 16; y += 5) {
      for (int x = 0; x < 16; x += 5) {
        CHECK(p.lr.at({static_cast<std::int64_t>(i), 1, y, x}) ==
              lr.at(p.origins[i].y / 3 + y, p.origins[i].x / 3 + x, 1));
      }
    }
  }
  CHECK(std::ranges::equal(p.hr.data(), q.hr.data()));
}

TEST_CASE("undersized images are skipped with a warning") {
  auto data = tiny_data(1, 2, 60);
  data.push_back(make_lr_hr_pair(procedural_texture(30, 30, 1), 3));
  std::vector<std::string> warnings;
  std::mt19937_64 rng(0);
  const auto p = sample_patches(data, 48, 3, rng, 20, [&](const std::string& w) { warnings.push_back(w); });
  CHECK(warnings.size() == 1);
  CHECK(warnings[0].find("image 2") != std::string::npos);
  for (const auto& o : p.origins) CHECK(o.image < 2);
  std::vector<ImagePair> small{data.back()};
  CHECK_THROWS_AS(sample_patches(small, 48, 3, rng, 1), TooSmall);
}

TEST_CASE("stream seeds differ per purpose and per seed") {
  CHECK(stream_seed(1, "crops") != stream_seed(1, "noise"));
  CHECK(stream_seed(1, "crops") != stream_seed(2, "crops"));
  CHECK(stream_seed(1, "crops") == stream_seed(1, "crops"));
}

TEST_CASE("config text round-trips and rejects unknown keys") {
  auto c = tiny_config();
  c.loss.perceptual = 0.25;
  c.optim.gen_lr = 3e-4;
  c.diffusion.enabled = false;
  const auto text = serialize_config(c);
  CHECK(serialize_config(parse_config(text)) == text);
  CHECK(parse_config(text).model.disc.widths == std::vector<int>{4, 8});
  CHECK(parse_config("# comment\n\n seed = 9 # trailing\n").seed == 9);
  try {
    parse_config("seed = 1\ngen.wdth = 4\n");
    FAIL("accepted an unknown key");
  } catch (const ConfigError& e) {
    CHECK(e.line() == 2);
    CHECK(std::string(e.what()).find("gen.wdth") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config("patch = 47\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("scale = 1\n"), ConfigError);
  CHECK(config_keys().size() == static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')));
}

TEST_CASE("checkpoint bytes survive a save, load, save cycle") {
  Trainer t(tiny_config(), tiny_data());
  run_lines(t, 3);
  const auto bytes = encode_checkpoint(t.export_state());
  const auto path = std::filesystem::temp_directory_path() / "fredsr_test_roundtrip.ckpt";
  save_checkpoint(decode_checkpoint(bytes), path);
  const auto loaded = load_checkpoint(path);
  std::filesystem::remove(path);
  CHECK(encode_checkpoint(loaded) == bytes);
  CHECK(loaded.config_text == serialize_config(t.config()));
  auto resumed = resume_trainer(loaded, tiny_data());
  CHECK(encode_checkpoint(resumed.export_state()) == bytes);
}

TEST_CASE("damaged checkpoints fail with the section named") {
  Trainer t(tiny_config(), tiny_data());
  const auto bytes = encode_checkpoint(t.export_state());
  for (std::size_t len = 0; len < bytes.size(); len += 1 + len / 7) {
    try {
      decode_checkpoint(std::span(bytes).first(len));
      FAIL("accepted a truncated stream of " << len << " bytes");
    } catch (const CheckpointError& e) {
      const std::string s = e.section();
      CHECK((s == "header" || s == "config" || s == "tensor table"));
    }
  }
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  try {
    decode_checkpoint(flipped);
    FAIL("accepted a damaged payload");
  } catch (const CheckpointError& e) {
    CHECK(std::string(e.what()) == "checksum mismatch in tensor table");
  }
  auto magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_WITH_AS(decode_checkpoint(magic), "bad magic in header", CheckpointError);
  auto version = bytes;
  version[4] = 7;
  CHECK_THROWS_WITH_AS(decode_checkpoint(version), "unsupported version 7 in header", CheckpointError);
}

TEST_CASE("a rejected checkpoint leaves the trainer untouched") {
  Trainer t(tiny_config(), tiny_data());
  run_lines(t, 2);
  const auto before = encode_checkpoint(t.export_state());
  auto ckpt = t.export_state();
  ckpt.tensors.erase(std::find_if(ckpt.tensors.begin(), ckpt.tensors.end(),
                                  [](const CheckpointTensor& c) { return c.name == "rng.noise"; }));
  ckpt.tensors.front().payload.assign(ckpt.tensors.front().payload.size(), 0xff);
  CHECK_THROWS_AS(t.import_state(ckpt), CheckpointError);
  CHECK(encode_checkpoint(t.export_state()) == before);
}

TEST_CASE("same seed and config give identical metric streams") {
  Trainer a(tiny_config(), tiny_data()), b(tiny_config(), tiny_data());
  CHECK(run_lines(a, 100) == run_lines(b, 100));
  CHECK(encode_checkpoint(a.export_state()) == encode_checkpoint(b.export_state()));
}

TEST_CASE("a resumed run matches the unbroken run bitwise") {
  Trainer unbroken(tiny_config(), tiny_data());
  run_lines(unbroken, 20);
  const auto bytes = encode_checkpoint(unbroken.export_state());
  const auto tail = run_lines(unbroken, 50);
  auto resumed = resume_trainer(decode_checkpoint(bytes), tiny_data());
  CHECK(resumed.steps_done() == 20);
  CHECK(run_lines(resumed, 50) == tail);
  CHECK(encode_checkpoint(resumed.export_state()) == encode_checkpoint(unbroken.export_state()));
}

TEST_CASE("a discriminator step leaves the generator parameters unchanged") {
  Trainer t(tiny_config(), tiny_data());
  std::mt19937_64 rng(1);
  const auto batch = sample_patches(t.data(), 12, 3, rng, 2);
  const auto g = snapshot(t.generator().parameters());
  const auto d = snapshot(t.discriminator().parameters());
  t.discriminator_step(batch);
  CHECK(snapshot(t.generator().parameters()) == g);
  CHECK(snapshot(t.discriminator().parameters()) != d);
}

TEST_CASE("a zero tail makes the first report equal to the bicubic baseline") {
  auto cfg = tiny_config();
  cfg.model.gen.tail_init_scale = 0.0;
  Trainer t(cfg, tiny_data());
  std::mt19937_64 rng(2);
  const auto batch = sample_patches(t.data(), 12, 3, rng, 2);
  const auto m = t.train_step(batch);
  SsimParams p;
  CHECK(m.ssim == -ssim(batch.up, batch.hr, p).item());
  CHECK(m.charbonnier == charbonnier(batch.up, batch.hr).item());
}

TEST_CASE("Charbonnier-only training decreases on a fixed batch") {
  auto cfg = tiny_config();
  cfg.loss.adversarial = cfg.loss.perceptual = cfg.loss.mge = cfg.loss.ssim = 0.0;
  cfg.model.gen.noise_sigma = 0.0;
  cfg.optim.weight_decay = 0.0;
  cfg.optim.gen_lr = 2e-4;
  Trainer t(cfg, tiny_data());
  std::mt19937_64 rng(3);
  const auto batch = sample_patches(t.data(), 12, 3, rng, 2);
  double prev = t.train_step(batch).g_loss;
  for (int i = 0; i < 50; ++i) {
    const double cur = t.train_step(batch).g_loss;
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("metric lines carry every field") {
  Trainer t(tiny_config(), tiny_data());
  const auto line = t.step().line();
  for (const char* key : {"step=0 ", "g_loss=", "d_loss=", "d_acc=", "lr_g=", "lr_d=", "T=", "noise=", "adv=",
                          "pl=", "mge=", "ssim=", "charb=", "mode=normal"}) {
    CHECK(line.find(key) != std::string::npos);
  }
}
