#include "fredsr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "fredsr/errors.hpp"

namespace fredsr {

namespace {

class Uniform {
 public:
  explicit Uniform(std::uint64_t seed) : rng_(seed) {}
  double operator()() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
  double operator()(double lo, double hi) { return lo + (hi - lo) * (*this)(); }
  int below(int n) { return static_cast<int>(rng_() % static_cast<std::uint64_t>(n)); }

 private:
  std::mt19937_64 rng_;
};

struct Rgb {
  double c[3];
};

Rgb color(Uniform& u) { return {{u(), u(), u()}}; }

}  // namespace

Image procedural_texture(int height, int width, std::uint64_t seed) {
  if (height < 1 || width < 1) throw InvalidArgument("texture size must be positive");
  Uniform u(seed);
  const auto n = static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  std::vector<double> px(n * 3);

  const Rgb a = color(u), b = color(u);
  const double angle = u(0, 2 * std::numbers::pi);
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double t = 0.5 + 0.5 * ((x - width / 2.0) * ca + (y - height / 2.0) * sa) / std::max(height, width);
      for (int c = 0; c < 3; ++c) {
        px[(static_cast<std::size_t>(y) * width + x) * 3 + c] = a.c[c] + (b.c[c] - a.c[c]) * t;
      }
    }
  }

  const int gratings = 1 + u.below(3);
  for (int g = 0; g < gratings; ++g) {
    const double freq = u(0.03, 0.2), theta = u(0, std::numbers::pi), phase = u(0, 2 * std::numbers::pi);
    const double amp = u(0.05, 0.25);
    const Rgb tint = color(u);
    const double fx = 2 * std::numbers::pi * freq * std::cos(theta), fy = 2 * std::numbers::pi * freq * std::sin(theta);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const double s = amp * std::sin(fx * x + fy * y + phase);
        for (int c = 0; c < 3; ++c) px[(static_cast<std::size_t>(y) * width + x) * 3 + c] += s * (tint.c[c] - 0.5);
      }
    }
  }

  const int shapes = 3 + u.below(5);
  for (int s = 0; s < shapes; ++s) {
    const int kind = u.below(3);
    const Rgb fill = color(u);
    const double cy = u(0, height), cx = u(0, width);
    const double r = u(0.08, 0.3) * std::min(height, width);
    const double h2 = u(0.05, 0.25) * height, w2 = u(0.05, 0.25) * width;
    const double period = u(4, 12), theta = u(0, std::numbers::pi);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        bool inside = false;
        if (kind == 0) {
          inside = (y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r;
        } else if (kind == 1) {
          inside = std::abs(y - cy) <= h2 && std::abs(x - cx) <= w2;
        } else {
          const double along = (x - cx) * std::cos(theta) + (y - cy) * std::sin(theta);
          const double across = -(x - cx) * std::sin(theta) + (y - cy) * std::cos(theta);
          inside = std::abs(across) <= r && std::fmod(std::abs(along), period) < period / 2;
        }
        if (!inside) continue;
        for (int c = 0; c < 3; ++c) px[(static_cast<std::size_t>(y) * width + x) * 3 + c] = fill.c[c];
      }
    }
  }

  std::vector<float> rgb(px.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    rgb[i] = static_cast<float>(std::clamp(std::round(px[i] * 255.0) / 255.0, 0.0, 1.0));
  }
  return Image(height, width, std::move(rgb), Provenance::kGenerated);
}

std::vector<Image> procedural_corpus(int count, int height, int width, std::uint64_t seed) {
  std::vector<Image> out;
  std::mt19937_64 seeds(seed);
  for (int i = 0; i < count; ++i) out.push_back(procedural_texture(height, width, seeds()));
  return out;
}

}  // namespace fredsr
