#include <cmath>
#include <numbers>
#include <random>

#include "dft_oracle.hpp"
#include "doctest.h"
#include "fredsr/errors.hpp"
#include "fredsr/fft.hpp"
#include "fredsr/ops.hpp"
#include "fredsr/spectral.hpp"
#include "gradcheck.hpp"

using namespace fredsr;
using fft::Complex;
using fft::Direction;

namespace {

std::vector<Complex> random_signal(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-1, 1);
  std::vector<Complex> v(n);
  for (auto& x : v) x = {d(rng), d(rng)};
  return v;
}

double max_abs_diff(const std::vector<Complex>& a, const std::vector<Complex>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("fft1d small examples") {
  auto delta = fft::fft1d(std::vector<Complex>{1, 0, 0, 0}, Direction::kForward);
  for (const auto& v : delta) CHECK(v == Complex(1, 0));
  auto dc = fft::fft1d(std::vector<Complex>{1, 1, 1, 1}, Direction::kForward);
  CHECK(dc[0] == Complex(4, 0));
  for (std::size_t k = 1; k < 4; ++k) CHECK(std::abs(dc[k]) < 1e-15);

  std::mt19937_64 rng(1);
  auto x = random_signal(6, rng);
  CHECK(max_abs_diff(fft::fft1d(x, Direction::kForward), testing::naive_dft(x, false)) < 1e-10);

  std::vector<std::complex<float>> xf{{1, 0}, {2, 0}, {3, 0}};
  auto yf = fft::fft1d(xf, Direction::kForward);
  CHECK(yf[0].real() == doctest::Approx(6.0f));
}

TEST_CASE("fft1d matches naive DFT, round-trips, and obeys Parseval for N = 1..64") {
  std::mt19937_64 rng(2);
  for (std::size_t n = 1; n <= 64; ++n) {
    CAPTURE(n);
    auto x = random_signal(n, rng);
    auto fwd = fft::fft1d(x, Direction::kForward);
    CHECK(max_abs_diff(fwd, testing::naive_dft(x, false)) < 1e-9);
    CHECK(max_abs_diff(fft::fft1d(x, Direction::kInverse), testing::naive_dft(x, true)) < 1e-9);
    CHECK(max_abs_diff(fft::fft1d(fwd, Direction::kInverse), x) < 1e-9);
    double time_energy = 0, freq_energy = 0;
    for (std::size_t i = 0; i < n; ++i) {
      time_energy += std::norm(x[i]);
      freq_energy += std::norm(fwd[i]);
    }
    CHECK(std::abs(time_energy - freq_energy / static_cast<double>(n)) <= 1e-9 * time_energy);
  }
}

TEST_CASE("fft1d is linear") {
  std::mt19937_64 rng(3);
  for (std::size_t n : {5u, 8u, 12u, 17u, 32u}) {
    auto x = random_signal(n, rng);
    auto y = random_signal(n, rng);
    const Complex a(0.7, -0.2), b(-1.3, 0.5);
    std::vector<Complex> combo(n);
    for (std::size_t i = 0; i < n; ++i) combo[i] = a * x[i] + b * y[i];
    auto fx = fft::fft1d(x, Direction::kForward);
    auto fy = fft::fft1d(y, Direction::kForward);
    auto fc = fft::fft1d(combo, Direction::kForward);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(fc[i] - (a * fx[i] + b * fy[i])) < 1e-9);
  }
}

TEST_CASE("rfft2d matches naive 2-D DFT for H, W in 2..16") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> d(-1, 1);
  for (std::int64_t h = 2; h <= 16; ++h) {
    for (std::int64_t w = 2; w <= 16; ++w) {
      std::vector<double> plane(static_cast<std::size_t>(h * w));
      for (auto& v : plane) v = d(rng);
      TensorD x({1, 1, h, w}, plane);
      auto spec = rfft2d(x);
      const auto wh = w / 2 + 1;
      REQUIRE(spec.shape() == Shape{1, 2, h, wh});
      auto ref = testing::naive_dft2(plane, static_cast<std::size_t>(h), static_cast<std::size_t>(w));
      double err = 0;
      for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t k = 0; k < wh; ++k) {
          const auto r = ref[static_cast<std::size_t>(y * w + k)];
          err = std::max(err, std::abs(spec.at({0, 0, y, k}) - r.real()));
          err = std::max(err, std::abs(spec.at({0, 1, y, k}) - r.imag()));
        }
      }
      CHECK(err < 1e-9);
      auto back = irfft2d(spec, w);
      double rt = 0;
      for (std::size_t i = 0; i < plane.size(); ++i) rt = std::max(rt, std::abs(back.data()[i] - plane[i]));
      CHECK(rt < 1e-10);
    }
  }
}

TEST_CASE("rfft2d of constant and cosine images") {
  const double c = 0.37;
  auto spec = rfft2d(TensorD::full({1, 1, 6, 10}, c));
  CHECK(spec.at({0, 0, 0, 0}) == doctest::Approx(c * 60).epsilon(1e-12));
  for (std::size_t i = 1; i < spec.data().size(); ++i) CHECK(std::abs(spec.data()[i]) < 1e-9);

  const std::int64_t h = 5, w = 12;
  std::vector<double> cosine(static_cast<std::size_t>(h * w));
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      cosine[static_cast<std::size_t>(y * w + x)] = std::cos(2 * std::numbers::pi * static_cast<double>(x) / w);
    }
  }
  auto cs = rfft2d(TensorD({1, 1, h, w}, cosine));
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t k = 0; k < w / 2 + 1; ++k) {
      const double re = cs.at({0, 0, y, k}), im = cs.at({0, 1, y, k});
      if (y == 0 && k == 1) {
        CHECK(re == doctest::Approx(h * w / 2.0).epsilon(1e-12));
      } else {
        CHECK(std::abs(re) < 1e-9);
      }
      CHECK(std::abs(im) < 1e-9);
    }
  }
}

TEST_CASE("irfft2d of DC-only spectrum is constant") {
  const std::int64_t h = 4, w = 7;
  auto spec = TensorD::zeros({1, 2, h, w / 2 + 1});
  std::vector<double> v(spec.data().begin(), spec.data().end());
  v[0] = 0.25 * h * w;
  auto img = irfft2d(TensorD({1, 2, h, w / 2 + 1}, v), w);
  for (double x : img.data()) CHECK(x == doctest::Approx(0.25).epsilon(1e-12));
  CHECK_THROWS_AS(irfft2d(TensorD({1, 2, h, w / 2 + 1}, v), 9), ShapeError);
  CHECK_THROWS_AS(rfft2d(TensorD::zeros({1, 1, 1, 4})), ShapeError);
}

TEST_CASE("float round trip") {
  std::mt19937_64 rng(5);
  auto x = testing::random_tensor({2, 3, 9, 10}, rng, 0, 1, false).cast<float>();
  auto back = irfft2d(rfft2d(x), 10);
  for (std::size_t i = 0; i < x.data().size(); ++i) CHECK(std::abs(back.data()[i] - x.data()[i]) < 1e-5);
}

TEST_CASE("adjoint identities validate the backward rules") {
  std::mt19937_64 rng(6);
  for (auto [h, w] : {std::pair<std::int64_t, std::int64_t>{4, 4}, {5, 7}, {6, 9}, {8, 2}, {3, 10}}) {
    CAPTURE(h);
    CAPTURE(w);
    const auto wh = w / 2 + 1;
    // <rfft2d(x), y> == <x, rfft2d^T(y)>, with the adjoint supplied by backward
    auto x = testing::random_tensor({1, 2, h, w}, rng);
    auto y = testing::random_tensor({1, 4, h, wh}, rng, -1, 1, false);
    auto lhs = sum_all(rfft2d(x) * y);
    lhs.backward();
    double rhs = 0;
    for (std::size_t i = 0; i < x.data().size(); ++i) rhs += x.data()[i] * x.grad()[i];
    CHECK(std::abs(lhs.item() - rhs) < 1e-8);

    auto s = testing::random_tensor({1, 4, h, wh}, rng);
    auto g = testing::random_tensor({1, 2, h, w}, rng, -1, 1, false);
    auto lhs2 = sum_all(irfft2d(s, w) * g);
    lhs2.backward();
    double rhs2 = 0;
    for (std::size_t i = 0; i < s.data().size(); ++i) rhs2 += s.data()[i] * s.grad()[i];
    CHECK(std::abs(lhs2.item() - rhs2) < 1e-8);
  }
}

TEST_CASE("spectral gradients") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 20; ++i) {
    auto x = testing::random_tensor({1, 2, 5, 6}, rng);
    auto w = testing::random_tensor({1, 2, 5, 6}, rng, -1, 1, false);
    // irfft2d(rfft2d(x)) is the identity, so the gradient equals w
    auto loss = sum_all(irfft2d(rfft2d(x), 6) * w);
    loss.backward();
    for (std::size_t k = 0; k < w.data().size(); ++k) CHECK(std::abs(x.grad()[k] - w.data()[k]) < 1e-6);

    auto wr = testing::random_tensor({1, 4, 5, 4}, rng, -1, 1, false);
    CHECK(testing::gradcheck([&](const auto& in) { return sum_all(square(rfft2d(in[0])) * wr); }, {x}) < 1e-4);
    auto s = testing::random_tensor({1, 4, 5, 4}, rng);
    CHECK(testing::gradcheck([&](const auto& in) { return sum_all(square(irfft2d(in[0], 6)) * w); }, {s}) < 1e-4);
  }
}
