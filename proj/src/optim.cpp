#include "fredsr/optim.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

#include "fredsr/errors.hpp"

namespace fredsr {

template <typename T>
AdamW<T>::AdamW(NamedTensors<T> params, AdamWOptions options) : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    if (!p.tensor.is_leaf()) throw InvalidArgument("optimizer parameter is not a leaf: " + p.name);
  }
  reset();
}

template <typename T>
void AdamW<T>::reset() {
  t_ = 0;
  m_.clear();
  v_.clear();
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
    v_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
  }
}

template <typename T>
void AdamW<T>::restore(std::int64_t t, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v) {
  if (t < 0 || m.size() != params_.size() || v.size() != params_.size()) {
    throw ShapeError("optimizer state does not match the parameter list");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto n = static_cast<std::size_t>(params_[i].tensor.numel());
    if (m[i].size() != n || v[i].size() != n) throw ShapeError("optimizer moment size mismatch: " + params_[i].name);
  }
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

template <typename T>
void AdamW<T>::step(double lr) {
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) continue;
    for (T g : p.tensor.grad()) {
      if (!std::isfinite(static_cast<double>(g))) throw DomainError("non-finite gradient in " + p.name);
    }
  }
  ++t_;
  const auto& o = options_;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(t_));
  const double decay = 1.0 - lr * o.weight_decay;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i].tensor;
    auto theta = p.mutable_data();
    const bool has = p.has_grad();
    const auto grad = has ? p.grad() : std::span<const T>();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double g = has ? static_cast<double>(grad[j]) : 0.0;
      m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * g;
      v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * g * g;
      const double mhat = m[j] / bc1, vhat = v[j] / bc2;
      theta[j] = static_cast<T>(static_cast<double>(theta[j]) * decay - lr * (mhat / (std::sqrt(vhat) + o.eps)));
    }
  }
}

template <typename T>
void AdamW<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template class AdamW<float>;
template class AdamW<double>;

double CosineRestartSchedule::peak(std::int64_t cycle) const {
  return base_lr * std::pow(peak_decay, static_cast<double>(cycle));
}

double CosineRestartSchedule::lr_at(std::int64_t step) const {
  if (step < 0) throw InvalidArgument("schedule step must be nonnegative");
  if (cycle_steps < 1) throw InvalidArgument("schedule cycle length must be positive");
  const std::int64_t k = step / cycle_steps, i = step % cycle_steps;
  const double phase = cycle_steps > 1 ? static_cast<double>(i) / static_cast<double>(cycle_steps - 1) : 0.0;
  const double cosine = (1.0 + std::cos(std::numbers::pi * phase)) / 2.0;
  return peak(k) * (floor_fraction + (1.0 - floor_fraction) * cosine);
}

RestartPolicy::RestartPolicy(RestartPolicyConfig config) : config_(config) {
  if (config_.window < 1) throw InvalidArgument("restart window must be positive");
}

double RestartPolicy::window_mean() const {
  if (state_.window.empty()) return 0.0;
  return std::accumulate(state_.window.begin(), state_.window.end(), 0.0) /
         static_cast<double>(state_.window.size());
}

RestartDecision RestartPolicy::observe(double accuracy) {
  RestartDecision d;
  const std::int64_t step = state_.step++;
  if (!config_.enabled) return d;
  auto& w = state_.window;
  w.push_back(accuracy);
  if (w.size() > static_cast<std::size_t>(config_.window)) w.erase(w.begin());
  const bool full = w.size() == static_cast<std::size_t>(config_.window);

  if (state_.mode == RestartMode::kNormal) {
    bool trigger = false;
    if (config_.restart_every > 0) {
      trigger = step > 0 && step % config_.restart_every == 0;
    } else if (full) {
      const double mean = window_mean();
      trigger = mean < config_.low || mean > config_.high;
    }
    if (!trigger) return d;
    d.action = RestartAction::kEnterBoost;
    d.reinit_discriminator = config_.reinit_on_second_trigger && state_.last_trigger >= 0 &&
                             step - state_.last_trigger < config_.cooldown;
    state_.last_trigger = step;
    state_.mode = RestartMode::kBoost;
    w.clear();
    return d;
  }

  if (!full) return d;
  const double mean = window_mean();
  if (mean >= config_.exit_low && mean <= config_.exit_high) {
    d.action = RestartAction::kExitBoost;
    state_.mode = RestartMode::kNormal;
    w.clear();
  }
  return d;
}

}  // namespace fredsr
