#include "fredsr/fft.hpp"

#include <cmath>
#include <memory>
#include <numbers>
#include <unordered_map>

namespace fredsr::fft {

namespace {

std::size_t next_power_of_two(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

struct Radix2Plan {
  std::size_t n = 0;
  std::vector<std::size_t> reversed;
  std::vector<Complex> twiddle;  // exp(-2 pi i k / n), k < n/2
};

struct BluesteinPlan {
  std::size_t n = 0;
  std::size_t m = 0;
  std::vector<Complex> chirp;         // exp(-i pi k^2 / n)
  std::vector<Complex> kernel_fft;    // FFT of the conjugate chirp, wrapped to length m
};

std::shared_ptr<const Radix2Plan> radix2_plan(std::size_t n);

void radix2(std::span<Complex> a, bool inverse) {
  const std::size_t n = a.size();
  if (n < 2) return;
  auto plan = radix2_plan(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = plan->reversed[i];
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t step = n / len;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t j = 0; j < half; ++j) {
        Complex w = plan->twiddle[j * step];
        if (inverse) w = std::conj(w);
        const Complex u = a[i + j];
        const Complex v = a[i + j + half] * w;
        a[i + j] = u + v;
        a[i + j + half] = u - v;
      }
    }
  }
}

std::shared_ptr<const Radix2Plan> radix2_plan(std::size_t n) {
  thread_local std::unordered_map<std::size_t, std::shared_ptr<const Radix2Plan>> cache;
  if (auto it = cache.find(n); it != cache.end()) return it->second;
  auto plan = std::make_shared<Radix2Plan>();
  plan->n = n;
  plan->reversed.resize(n);
  std::size_t bits = 0;
  while ((std::size_t{1} << bits) < n) ++bits;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t r = 0;
    for (std::size_t b = 0; b < bits; ++b) {
      if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
    }
    plan->reversed[i] = r;
  }
  plan->twiddle.resize(n / 2);
  for (std::size_t k = 0; k < n / 2; ++k) {
    const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    plan->twiddle[k] = {std::cos(angle), std::sin(angle)};
  }
  cache.emplace(n, plan);
  return plan;
}

std::shared_ptr<const BluesteinPlan> bluestein_plan(std::size_t n) {
  thread_local std::unordered_map<std::size_t, std::shared_ptr<const BluesteinPlan>> cache;
  if (auto it = cache.find(n); it != cache.end()) return it->second;
  auto plan = std::make_shared<BluesteinPlan>();
  plan->n = n;
  plan->m = next_power_of_two(2 * n - 1);
  plan->chirp.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    // k^2 mod 2n keeps the angle argument small and exact.
    const std::size_t k2 = (k * k) % (2 * n);
    const double angle = -std::numbers::pi * static_cast<double>(k2) / static_cast<double>(n);
    plan->chirp[k] = {std::cos(angle), std::sin(angle)};
  }
  plan->kernel_fft.assign(plan->m, Complex{});
  plan->kernel_fft[0] = std::conj(plan->chirp[0]);
  for (std::size_t k = 1; k < n; ++k) {
    plan->kernel_fft[k] = std::conj(plan->chirp[k]);
    plan->kernel_fft[plan->m - k] = std::conj(plan->chirp[k]);
  }
  radix2(plan->kernel_fft, false);
  cache.emplace(n, plan);
  return plan;
}

// Mixed-radix Cooley-Tukey for lengths whose prime factors are all small.
struct MixedPlan {
  std::size_t n = 0;
  std::vector<std::size_t> factors;  // outermost first
  std::vector<Complex> twiddle;      // exp(-2 pi i k / n), k < n
};

std::vector<std::size_t> small_factors(std::size_t n) {
  std::vector<std::size_t> f;
  for (std::size_t r : {4, 2, 3, 5, 7}) {
    while (n % r == 0) {
      f.push_back(r);
      n /= r;
    }
  }
  if (n != 1) f.clear();
  return f;
}

std::shared_ptr<const MixedPlan> mixed_plan(std::size_t n) {
  thread_local std::unordered_map<std::size_t, std::shared_ptr<const MixedPlan>> cache;
  if (auto it = cache.find(n); it != cache.end()) return it->second;
  auto plan = std::make_shared<MixedPlan>();
  plan->n = n;
  plan->factors = small_factors(n);
  plan->twiddle.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    plan->twiddle[k] = {std::cos(angle), std::sin(angle)};
  }
  cache.emplace(n, plan);
  return plan;
}

// Plain product; std::complex's operator* adds an Annex G slow path.
inline Complex cmul(Complex a, Complex b) {
  return {a.real() * b.real() - a.imag() * b.imag(), a.real() * b.imag() + a.imag() * b.real()};
}

// One decimation-in-frequency Stockham stage of radix R (0 = generic `r`)
// over `batch` interleaved sequences: element j of sequence b is at
// j * batch + b.
template <int R>
void stockham_stage(const Complex* src, Complex* dst, std::size_t r, std::size_t m, std::size_t s,
                    std::size_t batch, std::size_t step, const MixedPlan& plan) {
  const std::size_t total = plan.n;
  const std::size_t in_stride = s * m * batch;
  const std::size_t out_stride = s * batch;
  const double sin60 = std::sqrt(3.0) / 2.0;
  Complex w[7];
  Complex t[7], u[7];
  for (std::size_t p = 0; p < m; ++p) {
    for (std::size_t k = 1; k < r; ++k) w[k] = plan.twiddle[p * k * step];
    for (std::size_t q = 0; q < s; ++q) {
      const Complex* in = src + (q + s * p) * batch;
      Complex* out = dst + (q + s * r * p) * batch;
      for (std::size_t b = 0; b < batch; ++b) {
        if constexpr (R == 2) {
          const Complex t0 = in[b], t1 = in[b + in_stride];
          out[b] = t0 + t1;
          out[b + out_stride] = cmul(t0 - t1, w[1]);
        } else if constexpr (R == 4) {
          const Complex t0 = in[b], t1 = in[b + in_stride];
          const Complex t2 = in[b + 2 * in_stride], t3 = in[b + 3 * in_stride];
          const Complex a = t0 + t2, c = t0 - t2, e = t1 + t3, d = t1 - t3;
          const Complex md(d.imag(), -d.real());  // -i d
          out[b] = a + e;
          out[b + out_stride] = cmul(c + md, w[1]);
          out[b + 2 * out_stride] = cmul(a - e, w[2]);
          out[b + 3 * out_stride] = cmul(c - md, w[3]);
        } else if constexpr (R == 3) {
          const Complex t0 = in[b], t1 = in[b + in_stride], t2 = in[b + 2 * in_stride];
          const Complex sum = t1 + t2, d = t1 - t2;
          const Complex half = t0 - 0.5 * sum;
          const Complex rot(sin60 * d.imag(), -sin60 * d.real());  // -i sin60 d
          out[b] = t0 + sum;
          out[b + out_stride] = cmul(half + rot, w[1]);
          out[b + 2 * out_stride] = cmul(half - rot, w[2]);
        } else {
          const std::size_t root_step = total / r;
          for (std::size_t j = 0; j < r; ++j) t[j] = in[b + j * in_stride];
          for (std::size_t k = 0; k < r; ++k) {
            Complex acc = t[0];
            for (std::size_t j = 1; j < r; ++j) acc += cmul(t[j], plan.twiddle[((j * k) % r) * root_step]);
            u[k] = acc;
          }
          out[b] = u[0];
          for (std::size_t k = 1; k < r; ++k) out[b + k * out_stride] = cmul(u[k], w[k]);
        }
      }
    }
  }
}

// Forward transforms of `batch` interleaved sequences of length plan.n.
void mixed_forward(Complex* x, std::size_t batch, const MixedPlan& plan) {
  thread_local std::vector<Complex> scratch;
  const std::size_t total = plan.n;
  scratch.resize(total * batch);
  Complex* src = x;
  Complex* dst = scratch.data();
  std::size_t n = total, s = 1;
  for (const std::size_t r : plan.factors) {
    const std::size_t m = n / r;
    const std::size_t step = total / n;
    switch (r) {
      case 2: stockham_stage<2>(src, dst, r, m, s, batch, step, plan); break;
      case 3: stockham_stage<3>(src, dst, r, m, s, batch, step, plan); break;
      case 4: stockham_stage<4>(src, dst, r, m, s, batch, step, plan); break;
      default: stockham_stage<0>(src, dst, r, m, s, batch, step, plan); break;
    }
    n = m;
    s *= r;
    std::swap(src, dst);
  }
  if (src != x) std::copy(src, src + total * batch, x);
}

void bluestein_forward(std::span<Complex> x) {
  auto plan = bluestein_plan(x.size());
  std::vector<Complex> a(plan->m, Complex{});
  for (std::size_t k = 0; k < plan->n; ++k) a[k] = x[k] * plan->chirp[k];
  radix2(a, false);
  for (std::size_t k = 0; k < plan->m; ++k) a[k] *= plan->kernel_fft[k];
  radix2(a, true);
  const double scale = 1.0 / static_cast<double>(plan->m);
  for (std::size_t k = 0; k < plan->n; ++k) x[k] = a[k] * scale * plan->chirp[k];
}

// Unscaled transforms of `batch` interleaved sequences of length n.
void transform_batch(Complex* data, std::size_t n, std::size_t batch, Direction direction) {
  if (n < 2 || batch == 0) return;
  const bool inverse = direction == Direction::kInverse;
  auto plan = mixed_plan(n);
  if (inverse) {
    for (std::size_t i = 0; i < n * batch; ++i) data[i] = std::conj(data[i]);
  }
  if (!plan->factors.empty()) {
    mixed_forward(data, batch, *plan);
  } else {
    std::vector<Complex> seq(n);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t j = 0; j < n; ++j) seq[j] = data[j * batch + b];
      bluestein_forward(seq);
      for (std::size_t j = 0; j < n; ++j) data[j * batch + b] = seq[j];
    }
  }
  if (inverse) {
    for (std::size_t i = 0; i < n * batch; ++i) data[i] = std::conj(data[i]);
  }
}

}  // namespace

void transform_unscaled(std::span<Complex> data, Direction direction) {
  transform_batch(data.data(), data.size(), 1, direction);
}

void transform(std::span<Complex> data, Direction direction) {
  transform_unscaled(data, direction);
  if (direction == Direction::kInverse && data.size() > 1) {
    const double n = static_cast<double>(data.size());
    for (auto& v : data) v /= n;
  }
}

std::vector<Complex> fft1d(std::span<const Complex> x, Direction direction) {
  std::vector<Complex> out(x.begin(), x.end());
  transform(out, direction);
  return out;
}

std::vector<std::complex<float>> fft1d(std::span<const std::complex<float>> x, Direction direction) {
  std::vector<Complex> work(x.begin(), x.end());
  transform(work, direction);
  return {work.begin(), work.end()};
}

std::vector<Complex> rfft2_plane(std::span<const double> plane, std::size_t height, std::size_t width) {
  const std::size_t wh = half_width(width);
  const std::size_t pairs = (height + 1) / 2;
  // Two real rows per complex transform (z = a + i b), laid out so the
  // transforms run as one interleaved batch.
  std::vector<Complex> rows(width * pairs);
  for (std::size_t pr = 0; pr < pairs; ++pr) {
    const std::size_t y = 2 * pr;
    const bool pair = y + 1 < height;
    for (std::size_t x = 0; x < width; ++x) {
      rows[x * pairs + pr] = {plane[y * width + x], pair ? plane[(y + 1) * width + x] : 0.0};
    }
  }
  transform_batch(rows.data(), width, pairs, Direction::kForward);
  std::vector<Complex> out(height * wh);
  for (std::size_t pr = 0; pr < pairs; ++pr) {
    const std::size_t y = 2 * pr;
    for (std::size_t k = 0; k < wh; ++k) {
      const Complex zk = rows[k * pairs + pr], zn = std::conj(rows[((width - k) % width) * pairs + pr]);
      out[y * wh + k] = 0.5 * (zk + zn);
      if (y + 1 < height) {
        const Complex d = 0.5 * (zk - zn);
        out[(y + 1) * wh + k] = {d.imag(), -d.real()};  // d / i
      }
    }
  }
  // Columns are already interleaved: element y of column x is at y * wh + x.
  transform_batch(out.data(), height, wh, Direction::kForward);
  return out;
}

std::vector<double> half_spectrum_to_real(std::span<const Complex> spectrum, std::size_t height,
                                          std::size_t width, double mirror_weight) {
  const std::size_t wh = half_width(width);
  const std::size_t mirrored_end = width - wh;  // inclusive upper column index
  std::vector<Complex> work(spectrum.begin(), spectrum.end());
  transform_batch(work.data(), height, wh, Direction::kInverse);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 1; x < wh && x <= mirrored_end; ++x) work[y * wh + x] *= mirror_weight;
  }
  // Re(IDFT(X)) = IDFT(H(X)) with H(X)_k = (X_k + conj(X_-k)) / 2, which is
  // Hermitian, so two rows share one transform as real and imaginary parts.
  const std::size_t pairs = (height + 1) / 2;
  std::vector<Complex> rows(width * pairs);
  auto at = [&](std::size_t y, std::size_t k) { return k < wh ? work[y * wh + k] : Complex{}; };
  for (std::size_t pr = 0; pr < pairs; ++pr) {
    const std::size_t y = 2 * pr;
    const bool pair = y + 1 < height;
    for (std::size_t k = 0; k < width; ++k) {
      const std::size_t nk = (width - k) % width;
      const Complex a = 0.5 * (at(y, k) + std::conj(at(y, nk)));
      const Complex b = pair ? 0.5 * (at(y + 1, k) + std::conj(at(y + 1, nk))) : Complex{};
      rows[k * pairs + pr] = a + Complex(-b.imag(), b.real());  // a + i b
    }
  }
  transform_batch(rows.data(), width, pairs, Direction::kInverse);
  std::vector<double> out(height * width);
  for (std::size_t pr = 0; pr < pairs; ++pr) {
    const std::size_t y = 2 * pr;
    for (std::size_t x = 0; x < width; ++x) {
      out[y * width + x] = rows[x * pairs + pr].real();
      if (y + 1 < height) out[(y + 1) * width + x] = rows[x * pairs + pr].imag();
    }
  }
  return out;
}

}  // namespace fredsr::fft
