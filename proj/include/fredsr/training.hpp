#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fredsr/checkpoint.hpp"
#include "fredsr/config.hpp"
#include "fredsr/image.hpp"
#include "fredsr/losses.hpp"
#include "fredsr/nets.hpp"
#include "fredsr/optim.hpp"

namespace fredsr {

/// Adaptive forward-diffusion of discriminator inputs.
struct DiffusionState {
  DiffusionConfig cfg;
  int t = 0;         // current maximum timestep
  double r_d = 0.0;  // EMA of mean(sign(D(real) - 0.5))
  std::vector<double> alpha_bar;  // cumulative signal coefficients, index 0..t_max

  explicit DiffusionState(DiffusionConfig config = {});
  double alpha_bar_at(int step) const { return alpha_bar.at(static_cast<std::size_t>(step)); }
};

/// One timestep per batch item, uniform in {0..T}. Draws nothing when T = 0.
std::vector<int> sample_timesteps(const DiffusionState& ds, std::int64_t n, std::mt19937_64& rng);

/// sqrt(abar_t) r + sqrt(1 - abar_t) eps per batch item. Returns `r` itself
/// (same handle, no draws) when every timestep is 0.
template <typename T>
Tensor<T> diffuse_residual(const Tensor<T>& r, const std::vector<int>& timesteps, const DiffusionState& ds,
                           std::mt19937_64& rng);

/// Folds one batch of discriminator outputs on real inputs into r_d and
/// moves T one stride toward the target.
void adapt_diffusion(DiffusionState& ds, std::span<const double> d_real);

/// clamp(ema / initial, 0, 1); 1 when no reference has been captured.
double noise_multiplier_update(double gen_loss_ema, double gen_loss_initial);

/// EMA of the (shifted, nonnegative) generator loss driving the noise level.
struct NoiseTracker {
  double ema = 0.0;
  double initial = 0.0;
  std::int64_t count = 0;

  void observe(double loss, const NoiseScheduleConfig& cfg);
  double multiplier(const NoiseScheduleConfig& cfg) const;
};

struct PatchOrigin {
  std::size_t image;
  int y, x;  // top-left corner in HR pixels; multiples of the scale
};

struct PatchBatch {
  TensorF lr;  // N x 3 x p/s x p/s
  TensorF hr;  // N x 3 x p x p
  TensorF up;  // bicubic upscale of lr, same shape as hr
  std::vector<PatchOrigin> origins;
};

/// Uniform aligned crops. Pairs whose HR side is smaller than `patch` are
/// skipped and reported through `warn`. Throws TooSmall when none is usable.
PatchBatch sample_patches(std::span<const ImagePair> data, int patch, int scale, std::mt19937_64& rng, int n,
                          const std::function<void(const std::string&)>& warn = {});

/// Bicubic upscale of every batch item, as used for generator inputs.
TensorF bicubic_upscale(std::span<const Image> lr, int scale);

/// Non-finite loss during a training step.
class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StepMetrics {
  std::int64_t step = 0;
  double g_loss = 0, adversarial = 0, perceptual = 0, mge = 0, ssim = 0, charbonnier = 0;
  double d_loss = 0, d_acc = 0;
  double lr_g = 0, lr_d = 0;
  int diffusion_t = 0;
  double noise_multiplier = 1;
  RestartMode mode = RestartMode::kNormal;
  bool d_reinit = false;

  /// `step=.. g_loss=.. d_acc=.. lr_g=.. T=..` with round-trip-exact numbers.
  std::string line() const;
};

/// Seeds for independent per-purpose random streams.
std::uint64_t stream_seed(std::uint64_t seed, std::string_view purpose);

/// Single-threaded adversarial training loop over float networks.
class Trainer {
 public:
  Trainer(TrainRunConfig cfg, std::vector<ImagePair> data,
          std::function<void(const std::string&)> warn = {});

  /// Samples a batch and runs one step.
  StepMetrics step();
  /// One step on a given batch.
  StepMetrics train_step(const PatchBatch& batch);
  /// Only the discriminator update of a step; the generator is untouched.
  double discriminator_step(const PatchBatch& batch);

  std::int64_t steps_done() const { return step_; }
  const TrainRunConfig& config() const { return cfg_; }
  Generator<float>& generator() { return gen_; }
  Discriminator<float>& discriminator() { return disc_; }
  DiffusionState& diffusion() { return diffusion_; }
  NoiseState& noise() { return noise_; }
  const NoiseTracker& noise_tracker() const { return tracker_; }
  RestartPolicy& restart_policy() { return policy_; }
  std::span<const ImagePair> data() const { return data_; }

  /// Full state as a checkpoint (tensors sorted by name).
  Checkpoint export_state() const;
  /// Restores everything export_state wrote. The checkpoint's config must
  /// describe the same networks; the data set is this trainer's own.
  void import_state(const Checkpoint& ckpt);

 private:
  void reinitialize_discriminator();

  TrainRunConfig cfg_;
  std::vector<ImagePair> data_;
  std::function<void(const std::string&)> warn_;
  Generator<float> gen_;
  Discriminator<float> disc_;
  PerceptualExtractor<float> extractor_;
  AdamW<float> opt_g_, opt_d_;
  CosineRestartSchedule sched_g_, sched_d_;
  RestartPolicy policy_;
  DiffusionState diffusion_;
  NoiseState noise_;
  NoiseTracker tracker_;
  std::mt19937_64 crop_rng_, diffusion_rng_, reinit_rng_;
  std::int64_t step_ = 0;
};

/// Builds a trainer from a checkpoint file's config and state.
Trainer resume_trainer(const Checkpoint& ckpt, std::vector<ImagePair> data,
                       std::function<void(const std::string&)> warn = {});

/// Loads a generator (parameters and running statistics) from a checkpoint.
Generator<float> generator_from_checkpoint(const Checkpoint& ckpt);

}  // namespace fredsr
