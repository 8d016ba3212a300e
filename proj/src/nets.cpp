#include "fredsr/nets.hpp"

#include <cmath>
#include <stdexcept>

#include "fredsr/errors.hpp"
#include "fredsr/spectral.hpp"

namespace fredsr {

namespace {

template <typename T>
Tensor<T> tensor_from(const Shape& shape, const std::vector<double>& values) {
  return Tensor<T>(shape, std::vector<T>(values.begin(), values.end()), true);
}

std::string join(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

Conv2dOptions same_padding(int kernel, int stride = 1) {
  return Conv2dOptions{stride, kernel / 2, PadMode::kReflect};
}

}  // namespace

std::vector<double> Initializer::he_uniform(std::size_t count, std::int64_t fan_in, double gain) {
  const double bound = gain * std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(count);
  for (auto& x : v) x = dist(rng_);
  return v;
}

template <typename T>
Conv2dLayer<T>::Conv2dLayer(int in_channels, int out_channels, int kernel, bool bias, Conv2dOptions options,
                            Initializer& init, double gain)
    : options_(options) {
  const Shape shape{out_channels, in_channels, kernel, kernel};
  weight_ = tensor_from<T>(shape, init.he_uniform(static_cast<std::size_t>(shape_numel(shape)),
                                                  std::int64_t{in_channels} * kernel * kernel, gain));
  if (bias) bias_ = Tensor<T>::zeros({out_channels}, true);
}

template <typename T>
Tensor<T> Conv2dLayer<T>::forward(const Tensor<T>& x) const {
  return conv2d(x, weight_, bias_, options_);
}

template <typename T>
Tensor<T> Conv2dLayer<T>::forward_with(const Tensor<T>& x, const Tensor<T>& weight) const {
  return conv2d(x, weight, bias_, options_);
}

template <typename T>
void Conv2dLayer<T>::collect_parameters(const std::string& prefix, NamedTensors<T>& out) const {
  out.push_back({join(prefix, "weight"), weight_});
  if (bias_.defined()) out.push_back({join(prefix, "bias"), bias_});
}

template <typename T>
BatchNorm2dLayer<T>::BatchNorm2dLayer(int channels)
    : gamma_(Tensor<T>::full({channels}, T(1), true)), beta_(Tensor<T>::zeros({channels}, true)), state_(channels) {}

template <typename T>
Tensor<T> BatchNorm2dLayer<T>::forward(const Tensor<T>& x, NormMode mode) {
  return batch_norm2d(x, gamma_, beta_, state_, mode);
}

template <typename T>
void BatchNorm2dLayer<T>::collect_parameters(const std::string& prefix, NamedTensors<T>& out) const {
  out.push_back({join(prefix, "gamma"), gamma_});
  out.push_back({join(prefix, "beta"), beta_});
}

template <typename T>
void BatchNorm2dLayer<T>::collect_buffers(const std::string& prefix, NamedTensors<T>& out) const {
  out.push_back({join(prefix, "running_mean"), state_.running_mean});
  out.push_back({join(prefix, "running_var"), state_.running_var});
}

int FfcBlockConfig::in_global() const { return static_cast<int>(std::lround(global_fraction * in_channels)); }
int FfcBlockConfig::out_global() const { return static_cast<int>(std::lround(global_fraction * out_channels)); }

template <typename T>
SpectralTransform<T>::SpectralTransform(int in_channels, int out_channels, int hidden, Initializer& init)
    : reduce_(in_channels, hidden, 1, false, {}, init),
      spectral_conv_(2 * hidden, 2 * hidden, 1, false, {}, init),
      spectral_norm_(2 * hidden),
      expand_(hidden, out_channels, 1, false, {}, init) {}

template <typename T>
Tensor<T> SpectralTransform<T>::forward(const Tensor<T>& x, NormMode mode) {
  if (x.rank() != 4 || x.dim(2) < 2 || x.dim(3) < 2) {
    throw ShapeError("spectral transform needs N x C x H x W with H, W >= 2, got " + shape_string(x.shape()));
  }
  // Orthonormal scaling keeps spectrum magnitudes independent of image size,
  // so running statistics from training patches fit full frames.
  const T ortho = static_cast<T>(1 / std::sqrt(static_cast<double>(x.dim(2) * x.dim(3))));
  auto spectrum = rfft2d(reduce_.forward(x)) * ortho;
  auto mixed = relu(spectral_norm_.forward(spectral_conv_.forward(spectrum), mode));
  return expand_.forward(irfft2d(mixed, x.dim(3)) * (1 / ortho));
}

template <typename T>
void SpectralTransform<T>::collect_parameters(const std::string& prefix, NamedTensors<T>& out) const {
  reduce_.collect_parameters(join(prefix, "reduce"), out);
  spectral_conv_.collect_parameters(join(prefix, "spectral_conv"), out);
  spectral_norm_.collect_parameters(join(prefix, "spectral_norm"), out);
  expand_.collect_parameters(join(prefix, "expand"), out);
}

template <typename T>
void SpectralTransform<T>::collect_buffers(const std::string& prefix, NamedTensors<T>& out) const {
  spectral_norm_.collect_buffers(join(prefix, "spectral_norm"), out);
}

template <typename T>
FfcBlock<T>::FfcBlock(const FfcBlockConfig& cfg, Initializer& init) : cfg_(cfg) {
  if (cfg.global_fraction < 0 || cfg.global_fraction > 1) {
    throw InvalidArgument("global_fraction must lie in [0, 1]");
  }
  if (cfg.in_channels < 1 || cfg.out_channels < 1 || cfg.kernel_size < 1 || cfg.kernel_size % 2 == 0) {
    throw InvalidArgument("FFC block needs positive channel counts and an odd kernel size");
  }
  const int in_l = cfg.in_local(), in_g = cfg.in_global();
  const int out_l = cfg.out_local(), out_g = cfg.out_global();
  const auto pad = same_padding(cfg.kernel_size);
  if (out_l > 0) {
    to_local_ = Conv2dLayer<T>(cfg.in_channels, out_l, cfg.kernel_size, false, pad, init);
    local_norm_ = BatchNorm2dLayer<T>(out_l);
  }
  if (out_g > 0) {
    if (in_l > 0) local_to_global_ = Conv2dLayer<T>(in_l, out_g, cfg.kernel_size, false, pad, init);
    if (in_g > 0) spectral_ = SpectralTransform<T>(in_g, out_g, cfg.spectral_hidden, init);
    global_norm_ = BatchNorm2dLayer<T>(out_g);
  }
}

template <typename T>
Tensor<T> FfcBlock<T>::forward(const Tensor<T>& x, NormMode mode) {
  if (x.rank() != 4 || x.dim(1) != cfg_.in_channels) {
    throw ShapeError("FFC block expects " + std::to_string(cfg_.in_channels) + " input channels, got " +
                     shape_string(x.shape()));
  }
  const int in_l = cfg_.in_local(), in_g = cfg_.in_global();
  std::vector<Tensor<T>> outputs;
  if (cfg_.out_local() > 0) {
    outputs.push_back(relu(local_norm_.forward(to_local_.forward(x), mode)));
  }
  if (cfg_.out_global() > 0) {
    Tensor<T> global;
    if (in_l > 0) global = local_to_global_.forward(in_g > 0 ? narrow(x, 1, 0, in_l) : x);
    if (in_g > 0) {
      auto spectral = spectral_.forward(in_l > 0 ? narrow(x, 1, in_l, in_g) : x, mode);
      global = global.defined() ? global + spectral : spectral;
    }
    outputs.push_back(relu(global_norm_.forward(global, mode)));
  }
  return outputs.size() == 1 ? outputs.front() : cat(outputs, 1);
}

template <typename T>
void FfcBlock<T>::collect_parameters(const std::string& prefix, NamedTensors<T>& out) const {
  if (cfg_.out_local() > 0) {
    to_local_.collect_parameters(join(prefix, "to_local"), out);
    local_norm_.collect_parameters(join(prefix, "local_norm"), out);
  }
  if (cfg_.out_global() > 0) {
    if (cfg_.in_local() > 0) local_to_global_.collect_parameters(join(prefix, "local_to_global"), out);
    if (cfg_.in_global() > 0) spectral_.collect_parameters(join(prefix, "spectral"), out);
    global_norm_.collect_parameters(join(prefix, "global_norm"), out);
  }
}

template <typename T>
void FfcBlock<T>::collect_buffers(const std::string& prefix, NamedTensors<T>& out) const {
  if (cfg_.out_local() > 0) local_norm_.collect_buffers(join(prefix, "local_norm"), out);
  if (cfg_.out_global() > 0) {
    if (cfg_.in_global() > 0) spectral_.collect_buffers(join(prefix, "spectral"), out);
    global_norm_.collect_buffers(join(prefix, "global_norm"), out);
  }
}

template <typename T>
Tensor<T> inject_noise(const Tensor<T>& x, NoiseState& ns, bool training) {
  const double sigma = ns.sigma();
  if (!training || sigma == 0.0) return x;
  std::vector<T> eps(static_cast<std::size_t>(x.numel()));
  for (auto& e : eps) e = static_cast<T>(sigma * ns.normal(ns.rng));
  return x + Tensor<T>(x.shape(), std::move(eps));
}

template <typename T>
Generator<T>::Generator(const GeneratorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.width < 1 || cfg.blocks < 0 || cfg.tail_init_scale < 0) throw InvalidArgument("invalid generator config");
  Initializer init(seed);
  const auto pad = same_padding(cfg.kernel_size);
  head_ = Conv2dLayer<T>(3, cfg.width, cfg.kernel_size, true, pad, init);
  FfcBlockConfig block{cfg.width, cfg.width, cfg.global_fraction, cfg.kernel_size, cfg.spectral_hidden};
  for (int i = 0; i < cfg.blocks; ++i) blocks_.emplace_back(block, init);
  tail_ = Conv2dLayer<T>(cfg.width, 3, cfg.kernel_size, true, pad, init, cfg.tail_init_scale);
}

template <typename T>
Tensor<T> Generator<T>::forward(const Tensor<T>& upscaled, NoiseState& noise, bool training) {
  if (upscaled.rank() != 4 || upscaled.dim(1) != 3) {
    throw ShapeError("generator expects N x 3 x H x W, got " + shape_string(upscaled.shape()));
  }
  const NormMode mode = training ? NormMode::kTrain : NormMode::kEval;
  auto x = head_.forward(upscaled);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (i > 0) x = inject_noise(x, noise, training);
    x = blocks_[i].forward(x, mode);
  }
  return tanh(tail_.forward(x));
}

template <typename T>
Tensor<T> Generator<T>::super_resolve(const Tensor<T>& upscaled) {
  NoiseState unused;
  return clamp(upscaled.detach() + forward(upscaled.detach(), unused, false), T(0), T(1)).detach();
}

template <typename T>
NamedTensors<T> Generator<T>::parameters() const {
  NamedTensors<T> out;
  head_.collect_parameters("gen.head", out);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].collect_parameters("gen.block" + std::to_string(i), out);
  }
  tail_.collect_parameters("gen.tail", out);
  return out;
}

template <typename T>
NamedTensors<T> Generator<T>::buffers() const {
  NamedTensors<T> out;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].collect_buffers("gen.block" + std::to_string(i), out);
  }
  return out;
}

template <typename T>
Discriminator<T>::Discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.widths.empty() || cfg.stride < 1) throw InvalidArgument("invalid discriminator config");
  Initializer init(seed);
  int in = 3;
  for (int w : cfg.widths) {
    convs_.emplace_back(in, w, 3, true, same_padding(3, cfg.stride), init);
    in = w;
  }
  linear_ = Conv2dLayer<T>(in, 1, 1, true, {}, init);
  if (cfg.spectral_norm) {
    for (std::size_t i = 0; i <= convs_.size(); ++i) {
      const auto& w = layer(i).weight();
      const auto rows = w.dim(0), cols = w.numel() / rows;
      // Uniform start vectors; converged before first use.
      spectral_.push_back({Tensor<T>::full({rows}, static_cast<T>(1 / std::sqrt(static_cast<double>(rows)))),
                           Tensor<T>::full({cols}, static_cast<T>(1 / std::sqrt(static_cast<double>(cols))))});
    }
    update_spectral_norm(200);
  }
}

template <typename T>
void Discriminator<T>::update_spectral_norm(int iterations) {
  for (std::size_t l = 0; l < spectral_.size(); ++l) {
    const auto w = layer(l).weight().data();
    auto u = spectral_[l].u.mutable_data();
    auto v = spectral_[l].v.mutable_data();
    const auto rows = u.size(), cols = v.size();
    std::vector<double> nu(u.begin(), u.end()), nv(cols);
    for (int it = 0; it < iterations; ++it) {
      std::fill(nv.begin(), nv.end(), 0.0);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) nv[c] += static_cast<double>(w[r * cols + c]) * nu[r];
      double norm = 0;
      for (double x : nv) norm += x * x;
      norm = std::sqrt(norm) + 1e-12;
      for (double& x : nv) x /= norm;
      norm = 0;
      for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0;
        for (std::size_t c = 0; c < cols; ++c) acc += static_cast<double>(w[r * cols + c]) * nv[c];
        nu[r] = acc;
        norm += acc * acc;
      }
      norm = std::sqrt(norm) + 1e-12;
      for (double& x : nu) x /= norm;
    }
    for (std::size_t r = 0; r < rows; ++r) u[r] = static_cast<T>(nu[r]);
    for (std::size_t c = 0; c < cols; ++c) v[c] = static_cast<T>(nv[c]);
  }
}

template <typename T>
Tensor<T> Discriminator<T>::layer_weight(std::size_t l) const {
  const auto& w = layer(l).weight();
  if (spectral_.empty()) return w;
  const auto u = spectral_[l].u.data(), v = spectral_[l].v.data();
  std::vector<T> outer(static_cast<std::size_t>(w.numel()));
  for (std::size_t r = 0; r < u.size(); ++r)
    for (std::size_t c = 0; c < v.size(); ++c) outer[r * v.size() + c] = u[r] * v[c];
  const auto sigma = sum_all(w * Tensor<T>(w.shape(), std::move(outer)));
  return w / reshape(sigma, {1, 1, 1, 1});
}

template <typename T>
Tensor<T> Discriminator<T>::forward(const Tensor<T>& residual) const {
  if (residual.rank() != 4 || residual.dim(1) != 3) {
    throw ShapeError("discriminator expects N x 3 x H x W, got " + shape_string(residual.shape()));
  }
  auto x = residual;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    x = leaky_relu(convs_[i].forward_with(x, layer_weight(i)), static_cast<T>(cfg_.leaky_slope));
  }
  auto pooled = mean(x, {2, 3}, true);
  return reshape(sigmoid(linear_.forward_with(pooled, layer_weight(convs_.size()))), {residual.dim(0)});
}

template <typename T>
NamedTensors<T> Discriminator<T>::parameters() const {
  NamedTensors<T> out;
  for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].collect_parameters("disc.conv" + std::to_string(i), out);
  linear_.collect_parameters("disc.linear", out);
  return out;
}

template <typename T>
NamedTensors<T> Discriminator<T>::buffers() const {
  NamedTensors<T> out;
  for (std::size_t i = 0; i < spectral_.size(); ++i) {
    const auto name = i < convs_.size() ? "disc.conv" + std::to_string(i) : std::string("disc.linear");
    out.push_back({name + ".sn_u", spectral_[i].u});
    out.push_back({name + ".sn_v", spectral_[i].v});
  }
  return out;
}

std::int64_t conv_parameter_count(int in_channels, int out_channels, int kernel, bool bias) {
  return std::int64_t{in_channels} * out_channels * kernel * kernel + (bias ? out_channels : 0);
}

std::int64_t count_parameters(const FfcBlockConfig& cfg) {
  std::int64_t n = 0;
  const int out_l = cfg.out_local(), out_g = cfg.out_global();
  if (out_l > 0) n += conv_parameter_count(cfg.in_channels, out_l, cfg.kernel_size, false) + 2 * out_l;
  if (out_g > 0) {
    if (cfg.in_local() > 0) n += conv_parameter_count(cfg.in_local(), out_g, cfg.kernel_size, false);
    if (cfg.in_global() > 0) {
      const int h = cfg.spectral_hidden;
      n += conv_parameter_count(cfg.in_global(), h, 1, false) + conv_parameter_count(2 * h, 2 * h, 1, false) +
           4 * h + conv_parameter_count(h, out_g, 1, false);
    }
    n += 2 * out_g;
  }
  return n;
}

std::int64_t count_parameters(const GeneratorConfig& cfg) {
  const FfcBlockConfig block{cfg.width, cfg.width, cfg.global_fraction, cfg.kernel_size, cfg.spectral_hidden};
  return conv_parameter_count(3, cfg.width, cfg.kernel_size, true) + cfg.blocks * count_parameters(block) +
         conv_parameter_count(cfg.width, 3, cfg.kernel_size, true);
}

std::int64_t count_parameters(const DiscriminatorConfig& cfg) {
  std::int64_t n = 0;
  int in = 3;
  for (int w : cfg.widths) {
    n += conv_parameter_count(in, w, 3, true);
    in = w;
  }
  return n + conv_parameter_count(in, 1, 1, true);
}

#define FREDSR_INSTANTIATE_NETS(T)                                             \
  template class Conv2dLayer<T>;                                               \
  template class BatchNorm2dLayer<T>;                                          \
  template class SpectralTransform<T>;                                         \
  template class FfcBlock<T>;                                                  \
  template class Generator<T>;                                                 \
  template class Discriminator<T>;                                             \
  template Tensor<T> inject_noise(const Tensor<T>&, NoiseState&, bool);

FREDSR_INSTANTIATE_NETS(float)
FREDSR_INSTANTIATE_NETS(double)

}  // namespace fredsr
