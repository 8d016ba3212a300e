#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "fredsr/ops.hpp"
#include "fredsr/tensor.hpp"

namespace fredsr {

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using NamedTensors = std::vector<NamedTensor<T>>;

/// Draws initial weights. Values are generated in double so float and double
/// networks built from the same seed hold the same numbers.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}
  /// He-uniform: U(-b, b) with b = gain * sqrt(6 / fan_in).
  std::vector<double> he_uniform(std::size_t count, std::int64_t fan_in, double gain = 1.0);

 private:
  std::mt19937_64 rng_;
};

template <typename T>
class Conv2dLayer {
 public:
  Conv2dLayer() = default;
  Conv2dLayer(int in_channels, int out_channels, int kernel, bool bias, Conv2dOptions options, Initializer& init,
              double gain = 1.0);

  Tensor<T> forward(const Tensor<T>& x) const;
  /// Same convolution with a substitute weight of the same shape.
  Tensor<T> forward_with(const Tensor<T>& x, const Tensor<T>& weight) const;
  void collect_parameters(const std::string& prefix, NamedTensors<T>& out) const;
  Tensor<T>& weight() { return weight_; }
  const Tensor<T>& weight() const { return weight_; }
  Tensor<T>& bias() { return bias_; }

 private:
  Tensor<T> weight_;
  Tensor<T> bias_;
  Conv2dOptions options_;
};

template <typename T>
class BatchNorm2dLayer {
 public:
  BatchNorm2dLayer() = default;
  explicit BatchNorm2dLayer(int channels);

  Tensor<T> forward(const Tensor<T>& x, NormMode mode);
  void collect_parameters(const std::string& prefix, NamedTensors<T>& out) const;
  void collect_buffers(const std::string& prefix, NamedTensors<T>& out) const;
  Tensor<T>& gamma() { return gamma_; }
  Tensor<T>& beta() { return beta_; }
  BatchNormState<T>& state() { return state_; }

 private:
  Tensor<T> gamma_;
  Tensor<T> beta_;
  BatchNormState<T> state_;
};

struct FfcBlockConfig {
  int in_channels = 32;
  int out_channels = 32;
  double global_fraction = 0.5;
  int kernel_size = 3;
  int spectral_hidden = 16;

  int in_global() const;
  int in_local() const { return in_channels - in_global(); }
  int out_global() const;
  int out_local() const { return out_channels - out_global(); }
};

/// Global-branch operator: 1x1 conv, real FFT, 1x1 conv + batch norm + ReLU
/// on stacked (re, im) channels, inverse FFT, 1x1 conv. Both transforms are
/// scaled by 1/sqrt(H*W) relative to the unnormalized DFT. Output spatial size
/// equals input spatial size.
template <typename T>
class SpectralTransform {
 public:
  SpectralTransform() = default;
  SpectralTransform(int in_channels, int out_channels, int hidden, Initializer& init);

  Tensor<T> forward(const Tensor<T>& x, NormMode mode);
  void collect_parameters(const std::string& prefix, NamedTensors<T>& out) const;
  void collect_buffers(const std::string& prefix, NamedTensors<T>& out) const;

  Conv2dLayer<T>& reduce() { return reduce_; }
  Conv2dLayer<T>& spectral_conv() { return spectral_conv_; }
  BatchNorm2dLayer<T>& spectral_norm() { return spectral_norm_; }
  Conv2dLayer<T>& expand() { return expand_; }

 private:
  Conv2dLayer<T> reduce_;
  Conv2dLayer<T> spectral_conv_;
  BatchNorm2dLayer<T> spectral_norm_;
  Conv2dLayer<T> expand_;
};

/// Fast Fourier convolution block. Input channels are split into a local
/// part (first in_local) and a global part (last in_global). The local
/// destination sums the local->local and global->local spatial convolutions,
/// which is a single convolution over all input channels. The global
/// destination sums a local->global spatial convolution and the spectral
/// transform of the global part. Each destination gets batch norm + ReLU;
/// the output concatenates [local, global].
template <typename T>
class FfcBlock {
 public:
  FfcBlock() = default;
  FfcBlock(const FfcBlockConfig& cfg, Initializer& init);

  Tensor<T> forward(const Tensor<T>& x, NormMode mode);
  void collect_parameters(const std::string& prefix, NamedTensors<T>& out) const;
  void collect_buffers(const std::string& prefix, NamedTensors<T>& out) const;

  const FfcBlockConfig& config() const { return cfg_; }
  Conv2dLayer<T>& to_local() { return to_local_; }
  Conv2dLayer<T>& local_to_global() { return local_to_global_; }
  SpectralTransform<T>& spectral() { return spectral_; }
  BatchNorm2dLayer<T>& local_norm() { return local_norm_; }
  BatchNorm2dLayer<T>& global_norm() { return global_norm_; }

 private:
  FfcBlockConfig cfg_;
  Conv2dLayer<T> to_local_;
  Conv2dLayer<T> local_to_global_;
  SpectralTransform<T> spectral_;
  BatchNorm2dLayer<T> local_norm_;
  BatchNorm2dLayer<T> global_norm_;
};

/// Gaussian feature noise with its own random stream.
struct NoiseState {
  double sigma0 = 0.05;
  double multiplier = 1.0;
  std::mt19937_64 rng{0};
  std::normal_distribution<double> normal{0.0, 1.0};

  double sigma() const { return sigma0 * multiplier; }
};

/// x + sigma0 * multiplier * eps in training; the identity otherwise (and
/// whenever the effective sigma is 0).
template <typename T>
Tensor<T> inject_noise(const Tensor<T>& x, NoiseState& ns, bool training);

struct GeneratorConfig {
  int width = 32;
  int blocks = 4;
  double global_fraction = 0.5;
  int spectral_hidden = 16;
  int kernel_size = 3;
  double noise_sigma = 0.05;
  /// Scales the tail initialization; 0 makes the initial residual exactly 0.
  double tail_init_scale = 0.1;
};

struct DiscriminatorConfig {
  std::vector<int> widths{16, 32, 32};
  int stride = 2;
  double leaky_slope = 0.2;
  bool spectral_norm = true;
};

struct ModelConfig {
  GeneratorConfig gen;
  DiscriminatorConfig disc;
};

/// Residual generator: head conv 3->W, FFC blocks with noise injected between
/// consecutive blocks, tail conv W->3, tanh. Input is the bicubic upscale;
/// output is the residual in [-1, 1].
template <typename T>
class Generator {
 public:
  Generator() = default;
  Generator(const GeneratorConfig& cfg, std::uint64_t seed);

  Tensor<T> forward(const Tensor<T>& upscaled, NoiseState& noise, bool training);
  /// clamp(upscaled + forward(upscaled), 0, 1) in eval mode.
  Tensor<T> super_resolve(const Tensor<T>& upscaled);

  NamedTensors<T> parameters() const;
  NamedTensors<T> buffers() const;
  const GeneratorConfig& config() const { return cfg_; }
  Conv2dLayer<T>& tail() { return tail_; }
  FfcBlock<T>& block(std::size_t i) { return blocks_.at(i); }

 private:
  GeneratorConfig cfg_;
  Conv2dLayer<T> head_;
  std::vector<FfcBlock<T>> blocks_;
  Conv2dLayer<T> tail_;
};

/// Strided conv stack with LeakyReLU, global average pool, linear, sigmoid.
/// Returns one probability per batch item (shape {N}).
///
/// With spectral_norm, every layer divides its weight by sigma = u^T W v,
/// where u and v are stored singular-vector estimates. forward() treats them
/// as constants; update_spectral_norm() advances them by one power
/// iteration and is called once per discriminator update.
template <typename T>
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed);

  Tensor<T> forward(const Tensor<T>& residual) const;
  void update_spectral_norm(int iterations = 1);
  NamedTensors<T> parameters() const;
  /// Singular-vector estimates (empty without spectral_norm).
  NamedTensors<T> buffers() const;
  const DiscriminatorConfig& config() const { return cfg_; }

 private:
  struct SpectralState {
    Tensor<T> u, v;
  };
  Tensor<T> layer_weight(std::size_t layer) const;
  Conv2dLayer<T>& layer(std::size_t i) { return i < convs_.size() ? convs_[i] : linear_; }
  const Conv2dLayer<T>& layer(std::size_t i) const { return i < convs_.size() ? convs_[i] : linear_; }

  DiscriminatorConfig cfg_;
  std::vector<Conv2dLayer<T>> convs_;
  Conv2dLayer<T> linear_;
  std::vector<SpectralState> spectral_;
};

std::int64_t conv_parameter_count(int in_channels, int out_channels, int kernel, bool bias);
std::int64_t count_parameters(const FfcBlockConfig& cfg);
std::int64_t count_parameters(const GeneratorConfig& cfg);
std::int64_t count_parameters(const DiscriminatorConfig& cfg);

template <typename T>
std::int64_t total_numel(const NamedTensors<T>& tensors) {
  std::int64_t n = 0;
  for (const auto& t : tensors) n += t.tensor.numel();
  return n;
}

}  // namespace fredsr
