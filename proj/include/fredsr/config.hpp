#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fredsr/losses.hpp"
#include "fredsr/nets.hpp"
#include "fredsr/optim.hpp"

namespace fredsr {

/// Malformed or unknown configuration entry. `line` is 1-based, 0 when not
/// tied to a line.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& what, int line = 0)
      : std::invalid_argument(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

struct DiffusionConfig {
  bool enabled = true;
  int t_max = 500;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  double target = 0.6;
  int stride = 1;
  int adapt_every = 4;
  double ema = 0.99;
};

struct NoiseScheduleConfig {
  double ema = 0.99;
  int warmup = 100;  // steps before the reference loss is captured
};

struct OptimConfig {
  double gen_lr = 3e-4;
  double disc_lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

struct ScheduleConfig {
  std::int64_t cycle_steps = 2000;
  double peak_decay = 0.95;
  double floor_fraction = 0.5;
};

struct TrainRunConfig {
  std::string data;  // prepared dataset directory; may be left empty and given on the command line
  std::uint64_t seed = 1;
  int scale = 3;
  int patch = 48;
  int batch = 8;
  std::int64_t steps = 2000;
  std::int64_t checkpoint_every = 500;
  ModelConfig model;
  LossWeights loss;
  OptimConfig optim;
  ScheduleConfig sched;
  RestartPolicyConfig restart;
  DiffusionConfig diffusion;
  NoiseScheduleConfig noise;

  /// Throws ConfigError when a value is out of range.
  void validate() const;
  CosineRestartSchedule gen_schedule() const;
  CosineRestartSchedule disc_schedule() const;
  AdamWOptions gen_optim() const;
  AdamWOptions disc_optim() const;
};

/// Parses `key = value` lines. `#` starts a comment; blank lines are
/// ignored; keys not listed in config_keys() are rejected. Keys that do not
/// appear keep their defaults. The result is validated.
TrainRunConfig parse_config(std::string_view text);

/// Every key in a fixed order, one per line. Floating-point values use the
/// shortest form that reads back to the same double.
std::string serialize_config(const TrainRunConfig& cfg);

/// All recognized keys, in serialization order.
std::vector<std::string> config_keys();

TrainRunConfig load_config_file(const std::string& path);

}  // namespace fredsr
