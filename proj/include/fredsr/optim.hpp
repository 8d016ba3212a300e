#pragma once

#include <cstdint>
#include <vector>

#include "fredsr/nets.hpp"

namespace fredsr {

struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Decoupled-weight-decay Adam over a fixed list of named leaf tensors.
/// Moments are kept in double regardless of T.
template <typename T>
class AdamW {
 public:
  AdamW(NamedTensors<T> params, AdamWOptions options);

  /// One update using the current gradients (a parameter without a gradient
  /// is treated as having a zero gradient). Throws DomainError naming the
  /// first parameter with a non-finite gradient; nothing is modified then.
  void step(double lr);
  void step() { step(options_.lr); }
  void zero_grad();

  const AdamWOptions& options() const { return options_; }
  const NamedTensors<T>& parameters() const { return params_; }
  std::int64_t steps() const { return t_; }

  // Checkpoint access.
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void restore(std::int64_t t, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v);
  /// Zero moments and step counter, e.g. after the parameters are reinitialized.
  void reset();

 private:
  NamedTensors<T> params_;
  AdamWOptions options_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Cosine annealing with warm restarts. Cycle k starts at lr0 * decay^k and
/// falls to floor_fraction of that peak on its last step.
struct CosineRestartSchedule {
  double base_lr = 2e-4;
  std::int64_t cycle_steps = 2000;
  double peak_decay = 0.95;
  double floor_fraction = 0.5;

  double lr_at(std::int64_t step) const;
  double peak(std::int64_t cycle) const;
  std::int64_t cycle_of(std::int64_t step) const { return step / cycle_steps; }
};

struct RestartPolicyConfig {
  bool enabled = true;
  int window = 200;
  double low = 0.5;    // enter boost below this mean accuracy
  double high = 0.95;  // or above this one
  double exit_low = 0.55;
  double exit_high = 0.8;
  double k_lr = 5.0;
  double k_adv = 0.1;
  std::int64_t cooldown = 1000;
  bool reinit_on_second_trigger = true;
  std::int64_t restart_every = 0;  // > 0: periodic entry instead of accuracy thresholds
};

enum class RestartMode { kNormal, kBoost };
enum class RestartAction { kNone, kEnterBoost, kExitBoost };

struct RestartDecision {
  RestartAction action = RestartAction::kNone;
  bool reinit_discriminator = false;
};

/// Discriminator restart state machine. Fed one accuracy per step; decides
/// only when its window is full, and clears the window on every transition.
class RestartPolicy {
 public:
  struct State {
    RestartMode mode = RestartMode::kNormal;
    std::int64_t step = 0;
    std::int64_t last_trigger = -1;
    std::vector<double> window;  // oldest first
  };

  explicit RestartPolicy(RestartPolicyConfig config = {});

  RestartDecision observe(double accuracy);

  RestartMode mode() const { return state_.mode; }
  double disc_lr_multiplier() const { return state_.mode == RestartMode::kBoost ? config_.k_lr : 1.0; }
  double adversarial_multiplier() const { return state_.mode == RestartMode::kBoost ? config_.k_adv : 1.0; }
  double window_mean() const;

  const RestartPolicyConfig& config() const { return config_; }
  const State& state() const { return state_; }
  void restore(State s) { state_ = std::move(s); }

 private:
  RestartPolicyConfig config_;
  State state_;
};

}  // namespace fredsr
