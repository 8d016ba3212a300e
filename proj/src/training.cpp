#include "fredsr/training.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "fredsr/errors.hpp"
#include "fredsr/ops.hpp"

namespace fredsr {

namespace {

std::string num(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

// Unbiased enough for our ranges (n << 2^64) and identical on every platform,
// unlike std::uniform_int_distribution.
std::uint64_t draw_below(std::mt19937_64& rng, std::uint64_t n) { return rng() % n; }

int sign(double v) { return (v > 0) - (v < 0); }

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::vector<std::int64_t> rng_words(const std::mt19937_64& rng) {
  std::ostringstream out;
  out << rng;
  std::istringstream in(out.str());
  std::vector<std::int64_t> words;
  for (std::uint64_t w; in >> w;) words.push_back(static_cast<std::int64_t>(w));
  return words;
}

void restore_rng(std::mt19937_64& rng, const std::vector<std::int64_t>& words) {
  std::ostringstream text;
  for (std::size_t i = 0; i < words.size(); ++i) text << (i ? " " : "") << static_cast<std::uint64_t>(words[i]);
  std::istringstream in(text.str());
  in >> rng;
  if (!in && !in.eof()) throw CheckpointError("tensor table", "corrupt random stream state");
}

void add_f32(Checkpoint& c, const std::string& name, const TensorF& t) {
  c.add(CheckpointTensor::from(name, t.data(), t.shape()));
}

void add_f64(Checkpoint& c, const std::string& name, std::vector<double> v) {
  const auto n = static_cast<std::int64_t>(v.size());
  c.add(CheckpointTensor::from(name, std::span<const double>(v), {n}));
}

void add_i64(Checkpoint& c, const std::string& name, std::vector<std::int64_t> v) {
  const auto n = static_cast<std::int64_t>(v.size());
  c.add(CheckpointTensor::from(name, std::span<const std::int64_t>(v), {n}));
}

void load_into(const Checkpoint& c, const std::string& name, TensorF& t) {
  const auto& src = c.at(name);
  if (src.shape != t.shape()) throw CheckpointError("tensor table", "shape mismatch for " + name);
  const auto v = src.as_f32();
  std::copy(v.begin(), v.end(), t.mutable_data().begin());
}

std::vector<double> f64_of(const Checkpoint& c, const std::string& name, std::size_t n) {
  auto v = c.at(name).as_f64();
  if (n != 0 && v.size() != n) throw CheckpointError("tensor table", "wrong length for " + name);
  return v;
}

std::vector<std::int64_t> i64_of(const Checkpoint& c, const std::string& name, std::size_t n) {
  auto v = c.at(name).as_i64();
  if (n != 0 && v.size() != n) throw CheckpointError("tensor table", "wrong length for " + name);
  return v;
}

void export_optimizer(Checkpoint& c, const std::string& prefix, const AdamW<float>& opt) {
  add_i64(c, prefix + ".t", {opt.steps()});
  const auto& ps = opt.parameters();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    add_f64(c, prefix + ".m." + ps[i].name, opt.first_moments()[i]);
    add_f64(c, prefix + ".v." + ps[i].name, opt.second_moments()[i]);
  }
}

void import_optimizer(const Checkpoint& c, const std::string& prefix, AdamW<float>& opt) {
  const auto t = i64_of(c, prefix + ".t", 1)[0];
  std::vector<std::vector<double>> m, v;
  for (const auto& p : opt.parameters()) {
    const auto n = static_cast<std::size_t>(p.tensor.numel());
    m.push_back(f64_of(c, prefix + ".m." + p.name, n));
    v.push_back(f64_of(c, prefix + ".v." + p.name, n));
  }
  opt.restore(t, std::move(m), std::move(v));
}

}  // namespace

DiffusionState::DiffusionState(DiffusionConfig config) : cfg(config) {
  alpha_bar.resize(static_cast<std::size_t>(cfg.t_max) + 1);
  alpha_bar[0] = 1.0;
  for (int s = 1; s <= cfg.t_max; ++s) {
    const double frac = cfg.t_max > 1 ? static_cast<double>(s - 1) / (cfg.t_max - 1) : 0.0;
    const double beta = cfg.beta_start + (cfg.beta_end - cfg.beta_start) * frac;
    alpha_bar[static_cast<std::size_t>(s)] = alpha_bar[static_cast<std::size_t>(s - 1)] * (1.0 - beta);
  }
}

std::vector<int> sample_timesteps(const DiffusionState& ds, std::int64_t n, std::mt19937_64& rng) {
  std::vector<int> t(static_cast<std::size_t>(n), 0);
  if (!ds.cfg.enabled || ds.t == 0) return t;
  for (auto& v : t) v = static_cast<int>(draw_below(rng, static_cast<std::uint64_t>(ds.t) + 1));
  return t;
}

template <typename T>
Tensor<T> diffuse_residual(const Tensor<T>& r, const std::vector<int>& timesteps, const DiffusionState& ds,
                           std::mt19937_64& rng) {
  if (r.rank() == 0 || static_cast<std::size_t>(r.dim(0)) != timesteps.size()) {
    throw ShapeError("diffuse_residual: one timestep per batch item expected");
  }
  if (std::all_of(timesteps.begin(), timesteps.end(), [](int t) { return t == 0; })) return r;
  const auto n = r.dim(0);
  std::vector<T> signal(static_cast<std::size_t>(n)), noise(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const double ab = ds.alpha_bar_at(timesteps[static_cast<std::size_t>(i)]);
    signal[static_cast<std::size_t>(i)] = static_cast<T>(std::sqrt(ab));
    noise[static_cast<std::size_t>(i)] = static_cast<T>(std::sqrt(1.0 - ab));
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<T> eps(static_cast<std::size_t>(r.numel()));
  for (auto& e : eps) e = static_cast<T>(normal(rng));
  Shape coef_shape(r.rank(), 1);
  coef_shape[0] = n;
  return r * Tensor<T>(coef_shape, signal) + Tensor<T>(r.shape(), eps) * Tensor<T>(coef_shape, noise);
}

template Tensor<float> diffuse_residual(const Tensor<float>&, const std::vector<int>&, const DiffusionState&,
                                        std::mt19937_64&);
template Tensor<double> diffuse_residual(const Tensor<double>&, const std::vector<int>&, const DiffusionState&,
                                         std::mt19937_64&);

void adapt_diffusion(DiffusionState& ds, std::span<const double> d_real) {
  if (d_real.empty()) return;
  double s = 0;
  for (double d : d_real) s += sign(d - 0.5);
  const double batch = s / static_cast<double>(d_real.size());
  ds.r_d = ds.cfg.ema * ds.r_d + (1.0 - ds.cfg.ema) * batch;
  ds.t = std::clamp(ds.t + ds.cfg.stride * sign(ds.r_d - ds.cfg.target), 0, ds.cfg.t_max);
}

double noise_multiplier_update(double gen_loss_ema, double gen_loss_initial) {
  if (!(gen_loss_initial > 0)) return 1.0;
  return std::clamp(gen_loss_ema / gen_loss_initial, 0.0, 1.0);
}

void NoiseTracker::observe(double loss, const NoiseScheduleConfig& cfg) {
  ++count;
  ema = count == 1 ? loss : cfg.ema * ema + (1.0 - cfg.ema) * loss;
  if (count == cfg.warmup) initial = ema;
}

double NoiseTracker::multiplier(const NoiseScheduleConfig& cfg) const {
  if (count < cfg.warmup) return 1.0;
  return noise_multiplier_update(ema, initial);
}

TensorF bicubic_upscale(std::span<const Image> lr, int scale) {
  std::vector<Image> up;
  up.reserve(lr.size());
  for (const auto& img : lr) up.push_back(resample_bicubic(img, img.height() * scale, img.width() * scale));
  return images_to_tensor<float>(up);
}

PatchBatch sample_patches(std::span<const ImagePair> data, int patch, int scale, std::mt19937_64& rng, int n,
                          const std::function<void(const std::string&)>& warn) {
  if (scale < 2 || patch < scale || patch % scale != 0) throw InvalidArgument("patch must be a multiple of scale");
  if (n < 1) throw InvalidArgument("batch size must be positive");
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& p = data[i];
    const bool big = p.hr.height() >= patch && p.hr.width() >= patch;
    const bool paired = p.lr.height() * scale == p.hr.height() && p.lr.width() * scale == p.hr.width();
    if (big && paired) {
      usable.push_back(i);
    } else if (warn) {
      warn("skipping image " + std::to_string(i) + ": " + std::to_string(p.hr.width()) + "x" +
           std::to_string(p.hr.height()) + (big ? " is not an exact LR/HR pair" : " is smaller than the patch"));
    }
  }
  if (usable.empty()) throw TooSmall("no image is large enough for " + std::to_string(patch) + "px patches");

  const int lp = patch / scale;
  std::vector<Image> lrs, hrs;
  PatchBatch b;
  for (int k = 0; k < n; ++k) {
    const auto idx = usable[draw_below(rng, usable.size())];
    const auto& p = data[idx];
    const int y = static_cast<int>(draw_below(rng, static_cast<std::uint64_t>((p.hr.height() - patch) / scale) + 1)) * scale;
    const int x = static_cast<int>(draw_below(rng, static_cast<std::uint64_t>((p.hr.width() - patch) / scale) + 1)) * scale;
    hrs.push_back(p.hr.crop(y, x, patch, patch));
    lrs.push_back(p.lr.crop(y / scale, x / scale, lp, lp));
    b.origins.push_back({idx, y, x});
  }
  b.lr = images_to_tensor<float>(lrs);
  b.hr = images_to_tensor<float>(hrs);
  b.up = bicubic_upscale(lrs, scale);
  return b;
}

std::string StepMetrics::line() const {
  std::string s = "step=" + std::to_string(step);
  s += " g_loss=" + num(g_loss);
  s += " d_loss=" + num(d_loss);
  s += " d_acc=" + num(d_acc);
  s += " lr_g=" + num(lr_g);
  s += " lr_d=" + num(lr_d);
  s += " T=" + std::to_string(diffusion_t);
  s += " noise=" + num(noise_multiplier);
  s += " adv=" + num(adversarial);
  s += " pl=" + num(perceptual);
  s += " mge=" + num(mge);
  s += " ssim=" + num(ssim);
  s += " charb=" + num(charbonnier);
  s += std::string(" mode=") + (mode == RestartMode::kBoost ? "boost" : "normal");
  if (d_reinit) s += " d_reinit=1";
  return s;
}

std::uint64_t stream_seed(std::uint64_t seed, std::string_view purpose) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : purpose) h = (h ^ c) * 0x100000001b3ULL;
  return splitmix64(seed ^ splitmix64(h));
}

Trainer::Trainer(TrainRunConfig cfg, std::vector<ImagePair> data, std::function<void(const std::string&)> warn)
    : cfg_((cfg.validate(), std::move(cfg))),
      data_(std::move(data)),
      warn_(std::move(warn)),
      gen_(cfg_.model.gen, stream_seed(cfg_.seed, "gen.init")),
      disc_(cfg_.model.disc, stream_seed(cfg_.seed, "disc.init")),
      opt_g_(gen_.parameters(), cfg_.gen_optim()),
      opt_d_(disc_.parameters(), cfg_.disc_optim()),
      sched_g_(cfg_.gen_schedule()),
      sched_d_(cfg_.disc_schedule()),
      policy_(cfg_.restart),
      diffusion_(cfg_.diffusion),
      crop_rng_(stream_seed(cfg_.seed, "crops")),
      diffusion_rng_(stream_seed(cfg_.seed, "diffusion")),
      reinit_rng_(stream_seed(cfg_.seed, "disc.reinit")) {
  noise_.sigma0 = cfg_.model.gen.noise_sigma;
  noise_.rng.seed(stream_seed(cfg_.seed, "noise"));
}

StepMetrics Trainer::step() {
  return train_step(sample_patches(data_, cfg_.patch, cfg_.scale, crop_rng_, cfg_.batch, warn_));
}

double Trainer::discriminator_step(const PatchBatch& batch) {
  noise_.normal.reset();
  const auto fake = gen_.forward(batch.up, noise_, true).detach();
  const auto real = batch.hr - batch.up;
  const auto t = sample_timesteps(diffusion_, real.dim(0), diffusion_rng_);
  const auto d_real = disc_.forward(diffuse_residual(real, t, diffusion_, diffusion_rng_));
  const auto d_fake = disc_.forward(diffuse_residual(fake, t, diffusion_, diffusion_rng_));
  auto loss = adversarial_disc_loss(d_real, d_fake);
  opt_d_.zero_grad();
  loss.backward();
  opt_d_.step(sched_d_.lr_at(step_) * policy_.disc_lr_multiplier());
  disc_.update_spectral_norm();
  return loss.item();
}

StepMetrics Trainer::train_step(const PatchBatch& batch) {
  StepMetrics m;
  m.step = step_;
  m.lr_g = sched_g_.lr_at(step_);
  m.lr_d = sched_d_.lr_at(step_) * policy_.disc_lr_multiplier();
  m.noise_multiplier = noise_.multiplier;
  m.diffusion_t = diffusion_.t;

  noise_.normal.reset();
  const auto real = batch.hr - batch.up;
  const auto fake = gen_.forward(batch.up, noise_, true);
  const auto n = real.dim(0);

  // Discriminator on detached fakes; no generator gradient can arise here.
  const auto t = sample_timesteps(diffusion_, n, diffusion_rng_);
  const auto d_real = disc_.forward(diffuse_residual(real, t, diffusion_, diffusion_rng_));
  const auto d_fake = disc_.forward(diffuse_residual(fake.detach(), t, diffusion_, diffusion_rng_));
  auto d_loss = adversarial_disc_loss(d_real, d_fake);
  m.d_loss = d_loss.item();
  if (!std::isfinite(m.d_loss)) {
    throw TrainingAborted("non-finite discriminator loss at step " + std::to_string(step_));
  }
  int correct = 0;
  for (auto v : d_real.data()) correct += v > 0.5f;
  for (auto v : d_fake.data()) correct += v < 0.5f;
  m.d_acc = static_cast<double>(correct) / static_cast<double>(2 * n);
  opt_d_.zero_grad();
  d_loss.backward();
  opt_d_.step(m.lr_d);
  disc_.update_spectral_norm();

  // Generator through the updated discriminator, same timesteps.
  LossWeights w = cfg_.loss;
  w.adversarial *= policy_.adversarial_multiplier();
  const auto d_gen = disc_.forward(diffuse_residual(fake, t, diffusion_, diffusion_rng_));
  const auto sr = batch.up + fake;
  const auto terms = generator_loss_terms(sr, batch.hr, d_gen, w, extractor_);
  auto total = total_generator_loss(terms, w);
  m.adversarial = terms.adversarial.item();
  m.perceptual = terms.perceptual.item();
  m.mge = terms.mge.item();
  m.ssim = terms.ssim.item();
  m.charbonnier = terms.charbonnier.item();
  m.g_loss = total.item();
  const std::pair<const char*, double> checks[] = {{"adversarial", m.adversarial}, {"perceptual", m.perceptual},
                                                   {"mge", m.mge},                 {"ssim", m.ssim},
                                                   {"charbonnier", m.charbonnier}, {"total", m.g_loss}};
  for (const auto& [name, value] : checks) {
    if (!std::isfinite(value)) {
      throw TrainingAborted("non-finite generator loss term '" + std::string(name) + "' at step " +
                            std::to_string(step_) + " (adv=" + num(m.adversarial) + " pl=" + num(m.perceptual) +
                            " mge=" + num(m.mge) + " ssim=" + num(m.ssim) + " charb=" + num(m.charbonnier) + ")");
    }
  }
  opt_g_.zero_grad();
  total.backward();
  opt_g_.step(m.lr_g);

  // Adaptive signals, applied from the next step on.
  const auto decision = policy_.observe(m.d_acc);
  if (decision.reinit_discriminator) {
    reinitialize_discriminator();
    m.d_reinit = true;
  }
  m.mode = policy_.mode();
  if (diffusion_.cfg.enabled && (step_ + 1) % diffusion_.cfg.adapt_every == 0) {
    std::vector<double> dr(d_real.data().begin(), d_real.data().end());
    adapt_diffusion(diffusion_, dr);
  }
  tracker_.observe(m.g_loss + cfg_.loss.ssim, cfg_.noise);
  noise_.multiplier = tracker_.multiplier(cfg_.noise);
  ++step_;
  return m;
}

void Trainer::reinitialize_discriminator() {
  Discriminator<float> fresh(cfg_.model.disc, reinit_rng_());
  const auto src = fresh.parameters();
  const auto dst = disc_.parameters();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    auto out = dst[i].tensor;
    std::copy(src[i].tensor.data().begin(), src[i].tensor.data().end(), out.mutable_data().begin());
  }
  const auto src_buf = fresh.buffers();
  const auto dst_buf = disc_.buffers();
  for (std::size_t i = 0; i < dst_buf.size(); ++i) {
    auto out = dst_buf[i].tensor;
    std::copy(src_buf[i].tensor.data().begin(), src_buf[i].tensor.data().end(), out.mutable_data().begin());
  }
  opt_d_.reset();
}

Checkpoint Trainer::export_state() const {
  Checkpoint c;
  c.config_text = serialize_config(cfg_);
  for (const auto& p : gen_.parameters()) add_f32(c, "param." + p.name, p.tensor);
  for (const auto& p : gen_.buffers()) add_f32(c, "buffer." + p.name, p.tensor);
  for (const auto& p : disc_.parameters()) add_f32(c, "param." + p.name, p.tensor);
  for (const auto& p : disc_.buffers()) add_f32(c, "buffer." + p.name, p.tensor);
  export_optimizer(c, "optim.gen", opt_g_);
  export_optimizer(c, "optim.disc", opt_d_);
  add_i64(c, "state.step", {step_});
  add_i64(c, "state.diffusion.t", {diffusion_.t});
  add_f64(c, "state.diffusion.r_d", {diffusion_.r_d});
  add_f64(c, "state.noise", {noise_.multiplier, tracker_.ema, tracker_.initial});
  add_i64(c, "state.noise.count", {tracker_.count});
  const auto& ps = policy_.state();
  add_i64(c, "state.restart", {ps.mode == RestartMode::kBoost ? 1 : 0, ps.step, ps.last_trigger});
  add_f64(c, "state.restart.window", ps.window);
  add_i64(c, "rng.crops", rng_words(crop_rng_));
  add_i64(c, "rng.diffusion", rng_words(diffusion_rng_));
  add_i64(c, "rng.disc_reinit", rng_words(reinit_rng_));
  add_i64(c, "rng.noise", rng_words(noise_.rng));
  return c;
}

void Trainer::import_state(const Checkpoint& c) {
  // Read and check everything before touching any state, so a bad
  // checkpoint leaves this trainer as it was.
  std::vector<std::pair<TensorF, std::vector<float>>> writes;
  auto stage = [&](const NamedTensors<float>& ts, const char* prefix) {
    for (const auto& p : ts) {
      const auto& src = c.at(prefix + p.name);
      if (src.shape != p.tensor.shape()) throw CheckpointError("tensor table", "shape mismatch for " + src.name);
      writes.emplace_back(p.tensor, src.as_f32());
    }
  };
  stage(gen_.parameters(), "param.");
  stage(gen_.buffers(), "buffer.");
  stage(disc_.parameters(), "param.");
  stage(disc_.buffers(), "buffer.");
  AdamW<float> opt_g(gen_.parameters(), opt_g_.options()), opt_d(disc_.parameters(), opt_d_.options());
  import_optimizer(c, "optim.gen", opt_g);
  import_optimizer(c, "optim.disc", opt_d);
  const auto step = i64_of(c, "state.step", 1)[0];
  const auto diffusion_t = i64_of(c, "state.diffusion.t", 1)[0];
  const auto r_d = f64_of(c, "state.diffusion.r_d", 1)[0];
  const auto noise = f64_of(c, "state.noise", 3);
  const auto noise_count = i64_of(c, "state.noise.count", 1)[0];
  const auto rs = i64_of(c, "state.restart", 3);
  RestartPolicy::State ps;
  ps.mode = rs[0] ? RestartMode::kBoost : RestartMode::kNormal;
  ps.step = rs[1];
  ps.last_trigger = rs[2];
  ps.window = f64_of(c, "state.restart.window", 0);
  auto crop = crop_rng_, diff = diffusion_rng_, reinit = reinit_rng_, noise_rng = noise_.rng;
  restore_rng(crop, i64_of(c, "rng.crops", 0));
  restore_rng(diff, i64_of(c, "rng.diffusion", 0));
  restore_rng(reinit, i64_of(c, "rng.disc_reinit", 0));
  restore_rng(noise_rng, i64_of(c, "rng.noise", 0));
  if (step < 0 || diffusion_t < 0 || diffusion_t > diffusion_.cfg.t_max) {
    throw CheckpointError("tensor table", "training counters out of range");
  }

  for (auto& [t, v] : writes) std::copy(v.begin(), v.end(), t.mutable_data().begin());
  opt_g_.restore(opt_g.steps(), opt_g.first_moments(), opt_g.second_moments());
  opt_d_.restore(opt_d.steps(), opt_d.first_moments(), opt_d.second_moments());
  step_ = step;
  diffusion_.t = static_cast<int>(diffusion_t);
  diffusion_.r_d = r_d;
  noise_.multiplier = noise[0];
  tracker_ = {noise[1], noise[2], noise_count};
  policy_.restore(std::move(ps));
  crop_rng_ = crop;
  diffusion_rng_ = diff;
  reinit_rng_ = reinit;
  noise_.rng = noise_rng;
}

Trainer resume_trainer(const Checkpoint& ckpt, std::vector<ImagePair> data, std::function<void(const std::string&)> warn) {
  Trainer t(parse_config(ckpt.config_text), std::move(data), std::move(warn));
  t.import_state(ckpt);
  return t;
}

Generator<float> generator_from_checkpoint(const Checkpoint& ckpt) {
  const auto cfg = parse_config(ckpt.config_text);
  Generator<float> g(cfg.model.gen, 0);
  for (auto& p : g.parameters()) load_into(ckpt, "param." + p.name, p.tensor);
  for (auto& p : g.buffers()) load_into(ckpt, "buffer." + p.name, p.tensor);
  return g;
}

}  // namespace fredsr
