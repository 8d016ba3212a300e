#include "fredsr/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace fredsr {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double read_double(const std::string& s) {
  double v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError("not a number: '" + s + "'");
  return v;
}

template <typename I>
I read_int(const std::string& s) {
  I v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError("not an integer: '" + s + "'");
  return v;
}

bool read_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("not a boolean: '" + s + "'");
}

struct Field {
  const char* key;
  std::function<std::string(const TrainRunConfig&)> get;
  std::function<void(TrainRunConfig&, const std::string&)> set;
};

template <typename Sub>
Field dbl(const char* key, Sub TrainRunConfig::*s, double Sub::*m) {
  return {key, [s, m](const TrainRunConfig& c) { return fmt_double(c.*s.*m); },
          [s, m](TrainRunConfig& c, const std::string& v) { c.*s.*m = read_double(v); }};
}

template <typename Sub, typename I>
Field integer(const char* key, Sub TrainRunConfig::*s, I Sub::*m) {
  return {key, [s, m](const TrainRunConfig& c) { return std::to_string(c.*s.*m); },
          [s, m](TrainRunConfig& c, const std::string& v) { c.*s.*m = read_int<I>(v); }};
}

template <typename I>
Field integer(const char* key, I TrainRunConfig::*m) {
  return {key, [m](const TrainRunConfig& c) { return std::to_string(c.*m); },
          [m](TrainRunConfig& c, const std::string& v) { c.*m = read_int<I>(v); }};
}

template <typename Sub>
Field boolean(const char* key, Sub TrainRunConfig::*s, bool Sub::*m) {
  return {key, [s, m](const TrainRunConfig& c) { return std::string(c.*s.*m ? "true" : "false"); },
          [s, m](TrainRunConfig& c, const std::string& v) { c.*s.*m = read_bool(v); }};
}

// Model fields sit two levels deep.
template <typename Sub, typename V>
Field model(const char* key, Sub ModelConfig::*s, V Sub::*m) {
  return {key,
          [s, m](const TrainRunConfig& c) {
            if constexpr (std::is_same_v<V, double>) return fmt_double(c.model.*s.*m);
            else return std::to_string(c.model.*s.*m);
          },
          [s, m](TrainRunConfig& c, const std::string& v) {
            if constexpr (std::is_same_v<V, double>) c.model.*s.*m = read_double(v);
            else c.model.*s.*m = read_int<V>(v);
          }};
}

const std::vector<Field>& fields() {
  using C = TrainRunConfig;
  static const std::vector<Field> table = {
      {"data", [](const C& c) { return c.data; }, [](C& c, const std::string& v) { c.data = v; }},
      integer("seed", &C::seed),
      integer("scale", &C::scale),
      integer("patch", &C::patch),
      integer("batch", &C::batch),
      integer("steps", &C::steps),
      integer("checkpoint_every", &C::checkpoint_every),
      model("gen.width", &ModelConfig::gen, &GeneratorConfig::width),
      model("gen.blocks", &ModelConfig::gen, &GeneratorConfig::blocks),
      model("gen.global_fraction", &ModelConfig::gen, &GeneratorConfig::global_fraction),
      model("gen.spectral_hidden", &ModelConfig::gen, &GeneratorConfig::spectral_hidden),
      model("gen.kernel_size", &ModelConfig::gen, &GeneratorConfig::kernel_size),
      model("gen.noise_sigma", &ModelConfig::gen, &GeneratorConfig::noise_sigma),
      model("gen.tail_init_scale", &ModelConfig::gen, &GeneratorConfig::tail_init_scale),
      {"disc.widths",
       [](const C& c) {
         std::string s;
         for (std::size_t i = 0; i < c.model.disc.widths.size(); ++i) {
           s += (i ? "," : "") + std::to_string(c.model.disc.widths[i]);
         }
         return s;
       },
       [](C& c, const std::string& v) {
         std::vector<int> w;
         std::stringstream ss(v);
         for (std::string item; std::getline(ss, item, ',');) w.push_back(read_int<int>(trim(item)));
         c.model.disc.widths = w;
       }},
      model("disc.stride", &ModelConfig::disc, &DiscriminatorConfig::stride),
      model("disc.leaky_slope", &ModelConfig::disc, &DiscriminatorConfig::leaky_slope),
      {"disc.spectral_norm", [](const C& c) { return std::string(c.model.disc.spectral_norm ? "true" : "false"); },
       [](C& c, const std::string& v) { c.model.disc.spectral_norm = read_bool(v); }},
      dbl("loss.adversarial", &C::loss, &LossWeights::adversarial),
      dbl("loss.perceptual", &C::loss, &LossWeights::perceptual),
      dbl("loss.mge", &C::loss, &LossWeights::mge),
      dbl("loss.ssim", &C::loss, &LossWeights::ssim),
      dbl("loss.charbonnier", &C::loss, &LossWeights::charbonnier),
      dbl("loss.charbonnier_eps", &C::loss, &LossWeights::charbonnier_eps),
      dbl("loss.ssim_c1", &C::loss, &LossWeights::ssim_c1),
      dbl("loss.ssim_c2", &C::loss, &LossWeights::ssim_c2),
      dbl("optim.gen_lr", &C::optim, &OptimConfig::gen_lr),
      dbl("optim.disc_lr", &C::optim, &OptimConfig::disc_lr),
      dbl("optim.beta1", &C::optim, &OptimConfig::beta1),
      dbl("optim.beta2", &C::optim, &OptimConfig::beta2),
      dbl("optim.eps", &C::optim, &OptimConfig::eps),
      dbl("optim.weight_decay", &C::optim, &OptimConfig::weight_decay),
      integer("sched.cycle_steps", &C::sched, &ScheduleConfig::cycle_steps),
      dbl("sched.peak_decay", &C::sched, &ScheduleConfig::peak_decay),
      dbl("sched.floor_fraction", &C::sched, &ScheduleConfig::floor_fraction),
      boolean("restart.enabled", &C::restart, &RestartPolicyConfig::enabled),
      integer("restart.window", &C::restart, &RestartPolicyConfig::window),
      dbl("restart.low", &C::restart, &RestartPolicyConfig::low),
      dbl("restart.high", &C::restart, &RestartPolicyConfig::high),
      dbl("restart.exit_low", &C::restart, &RestartPolicyConfig::exit_low),
      dbl("restart.exit_high", &C::restart, &RestartPolicyConfig::exit_high),
      dbl("restart.k_lr", &C::restart, &RestartPolicyConfig::k_lr),
      dbl("restart.k_adv", &C::restart, &RestartPolicyConfig::k_adv),
      integer("restart.cooldown", &C::restart, &RestartPolicyConfig::cooldown),
      boolean("restart.reinit", &C::restart, &RestartPolicyConfig::reinit_on_second_trigger),
      integer("restart.every", &C::restart, &RestartPolicyConfig::restart_every),
      boolean("diffusion.enabled", &C::diffusion, &DiffusionConfig::enabled),
      integer("diffusion.t_max", &C::diffusion, &DiffusionConfig::t_max),
      dbl("diffusion.beta_start", &C::diffusion, &DiffusionConfig::beta_start),
      dbl("diffusion.beta_end", &C::diffusion, &DiffusionConfig::beta_end),
      dbl("diffusion.target", &C::diffusion, &DiffusionConfig::target),
      integer("diffusion.stride", &C::diffusion, &DiffusionConfig::stride),
      integer("diffusion.adapt_every", &C::diffusion, &DiffusionConfig::adapt_every),
      dbl("diffusion.ema", &C::diffusion, &DiffusionConfig::ema),
      dbl("noise.ema", &C::noise, &NoiseScheduleConfig::ema),
      integer("noise.warmup", &C::noise, &NoiseScheduleConfig::warmup),
  };
  return table;
}

}  // namespace

void TrainRunConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(scale >= 2, "scale must be at least 2");
  require(patch >= scale && patch % scale == 0, "patch must be a positive multiple of scale");
  require(batch >= 1, "batch must be positive");
  require(steps >= 0, "steps must be nonnegative");
  require(checkpoint_every >= 0, "checkpoint_every must be nonnegative");
  require(model.gen.width >= 1 && model.gen.blocks >= 1, "generator width and blocks must be positive");
  require(model.gen.global_fraction >= 0 && model.gen.global_fraction <= 1, "gen.global_fraction must be in [0, 1]");
  require(model.gen.kernel_size >= 1 && model.gen.kernel_size % 2 == 1, "gen.kernel_size must be odd");
  require(model.gen.spectral_hidden >= 1, "gen.spectral_hidden must be positive");
  require(model.gen.noise_sigma >= 0, "gen.noise_sigma must be nonnegative");
  require(!model.disc.widths.empty(), "disc.widths must not be empty");
  for (int w : model.disc.widths) require(w >= 1, "disc.widths entries must be positive");
  require(model.disc.stride >= 1, "disc.stride must be positive");
  for (double l : {loss.adversarial, loss.perceptual, loss.mge, loss.ssim, loss.charbonnier}) {
    require(std::isfinite(l) && l >= 0, "loss weights must be finite and nonnegative");
  }
  require(loss.charbonnier_eps > 0, "loss.charbonnier_eps must be positive");
  require(loss.ssim_c1 > 0 && loss.ssim_c2 > 0, "SSIM constants must be positive");
  require(optim.gen_lr > 0 && optim.disc_lr > 0, "learning rates must be positive");
  require(optim.beta1 >= 0 && optim.beta1 < 1 && optim.beta2 >= 0 && optim.beta2 < 1, "betas must be in [0, 1)");
  require(optim.eps > 0 && optim.weight_decay >= 0, "optim.eps must be positive, weight decay nonnegative");
  require(sched.cycle_steps >= 1, "sched.cycle_steps must be positive");
  require(sched.peak_decay > 0 && sched.floor_fraction >= 0 && sched.floor_fraction <= 1, "bad schedule shape");
  require(restart.window >= 1 && restart.cooldown >= 0 && restart.restart_every >= 0, "bad restart settings");
  require(restart.k_lr > 0 && restart.k_adv >= 0, "bad restart multipliers");
  require(diffusion.t_max >= 1 && diffusion.stride >= 1 && diffusion.adapt_every >= 1, "bad diffusion settings");
  require(diffusion.beta_start > 0 && diffusion.beta_end >= diffusion.beta_start && diffusion.beta_end < 1,
          "diffusion betas must satisfy 0 < start <= end < 1");
  require(diffusion.target >= -1 && diffusion.target <= 1, "diffusion.target must be in [-1, 1]");
  require(diffusion.ema >= 0 && diffusion.ema < 1 && noise.ema >= 0 && noise.ema < 1, "EMA decay must be in [0, 1)");
  require(noise.warmup >= 1, "noise.warmup must be positive");
}

CosineRestartSchedule TrainRunConfig::gen_schedule() const {
  return {optim.gen_lr, sched.cycle_steps, sched.peak_decay, sched.floor_fraction};
}

CosineRestartSchedule TrainRunConfig::disc_schedule() const {
  return {optim.disc_lr, sched.cycle_steps, sched.peak_decay, sched.floor_fraction};
}

AdamWOptions TrainRunConfig::gen_optim() const {
  return {optim.gen_lr, optim.beta1, optim.beta2, optim.eps, optim.weight_decay};
}

AdamWOptions TrainRunConfig::disc_optim() const {
  return {optim.disc_lr, optim.beta1, optim.beta2, optim.eps, optim.weight_decay};
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.emplace_back(f.key);
  return keys;
}

TrainRunConfig parse_config(std::string_view text) {
  TrainRunConfig cfg;
  std::istringstream in{std::string(text)};
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("expected 'key = value'", line_no);
    const auto key = trim(std::string_view(body).substr(0, eq));
    const auto value = trim(std::string_view(body).substr(eq + 1));
    const Field* field = nullptr;
    for (const auto& f : fields()) {
      if (key == f.key) field = &f;
    }
    if (!field) throw ConfigError("unknown key '" + key + "'", line_no);
    try {
      field->set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(e.what()) + " for key '" + key + "'", line_no);
    }
  }
  cfg.validate();
  return cfg;
}

std::string serialize_config(const TrainRunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  return out;
}

TrainRunConfig load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace fredsr
