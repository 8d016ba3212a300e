#pragma once

// Central finite-difference oracle, independent of the reverse-mode engine
// except for reading the analytic gradients it is compared against.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "fredsr/tensor.hpp"

namespace fredsr::testing {

using LossFn = std::function<TensorD(const std::vector<TensorD>&)>;

inline TensorD random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                             bool requires_grad = true) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = dist(rng);
  return TensorD(std::move(shape), std::move(v), requires_grad);
}

inline double norm(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

/// Relative error ||analytic - numeric|| / max(||analytic||, ||numeric||, floor)
/// per input, maximized over inputs. Every element is perturbed.
inline double gradcheck(const LossFn& f, std::vector<TensorD> inputs, double h = 1e-5,
                        double floor = 1e-6) {
  for (auto& t : inputs) t.zero_grad();
  f(inputs).backward();
  double worst = 0;
  for (auto& t : inputs) {
    if (!t.requires_grad()) continue;
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    if (analytic.empty()) analytic.assign(static_cast<std::size_t>(t.numel()), 0.0);
    std::vector<double> numeric(analytic.size());
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = f(inputs).item();
      data[i] = saved - h;
      const double down = f(inputs).item();
      data[i] = saved;
      numeric[i] = (up - down) / (2 * h);
    }
    std::vector<double> diff(analytic.size());
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = analytic[i] - numeric[i];
    const double scale = std::max({norm(analytic), norm(numeric), floor});
    worst = std::max(worst, norm(diff) / scale);
  }
  return worst;
}

/// Directional-derivative check over all inputs jointly: compares
/// <grad, v> with (f(x + h v) - f(x - h v)) / 2h for random directions v.
inline double directional_check(const LossFn& f, std::vector<TensorD> inputs, std::mt19937_64& rng,
                                int directions = 3, double h = 1e-5) {
  for (auto& t : inputs) t.zero_grad();
  f(inputs).backward();
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst = 0;
  for (int d = 0; d < directions; ++d) {
    std::vector<std::vector<double>> dir;
    double analytic = 0;
    for (auto& t : inputs) {
      std::vector<double> v(static_cast<std::size_t>(t.numel()));
      for (auto& x : v) x = normal(rng);
      if (t.has_grad()) {
        for (std::size_t i = 0; i < v.size(); ++i) analytic += t.grad()[i] * v[i];
      }
      dir.push_back(std::move(v));
    }
    auto shift = [&](double step) {
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto data = inputs[k].mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) data[i] += step * dir[k][i];
      }
    };
    std::vector<std::vector<double>> saved;
    for (auto& t : inputs) saved.emplace_back(t.data().begin(), t.data().end());
    auto restore = [&] {
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto data = inputs[k].mutable_data();
        std::copy(saved[k].begin(), saved[k].end(), data.begin());
      }
    };
    shift(h);
    const double up = f(inputs).item();
    restore();
    shift(-h);
    const double down = f(inputs).item();
    restore();
    const double numeric = (up - down) / (2 * h);
    const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic - numeric) / scale);
  }
  return worst;
}

}  // namespace fredsr::testing
