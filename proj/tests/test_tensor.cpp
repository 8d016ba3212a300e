#include <cmath>
#include <random>

#include "doctest.h"
#include "fredsr/errors.hpp"
#include "fredsr/ops.hpp"
#include "gradcheck.hpp"

using namespace fredsr;
using fredsr::testing::gradcheck;
using fredsr::testing::random_tensor;

namespace {

std::vector<double> values(const TensorD& t) { return {t.data().begin(), t.data().end()}; }

constexpr int kInstances = 20;
constexpr double kTol = 1e-4;

}  // namespace

TEST_CASE("elementwise examples") {
  TensorD a({2}, {1, 2});
  TensorD b({2}, {3, 4});
  CHECK(values(a + b) == std::vector<double>{4, 6});
  CHECK(values(relu(TensorD({3}, {-1, 0, 2}))) == std::vector<double>{0, 0, 2});
}

TEST_CASE("mul gradient matches the other operand") {
  TensorD a({1}, {2}, true);
  TensorD b({1}, {3});
  sum_all(a * b).backward();
  CHECK(a.grad()[0] == 3.0);

  // finite differences, h = 1e-6
  const double h = 1e-6;
  const double numeric = ((2 + h) * 3 - (2 - h) * 3) / (2 * h);
  CHECK(a.grad()[0] == doctest::Approx(numeric).epsilon(1e-8));
}

TEST_CASE("broadcasting") {
  TensorD x({2, 3}, {1, 2, 3, 4, 5, 6});
  TensorD row({3}, {10, 20, 30});
  CHECK(values(x + row) == std::vector<double>{11, 22, 33, 14, 25, 36});
  TensorD col({2, 1}, {1, 2});
  CHECK(values(x * col) == std::vector<double>{1, 2, 3, 8, 10, 12});
  CHECK_THROWS_AS(x + TensorD({2}, {1, 2}), ShapeError);
  CHECK(values(x * 2.0) == std::vector<double>{2, 4, 6, 8, 10, 12});
}

TEST_CASE("elementwise gradients match finite differences") {
  std::mt19937_64 rng(11);
  struct Case {
    const char* name;
    std::function<TensorD(const TensorD&, const TensorD&)> f;
    double lo, hi;
  };
  const std::vector<Case> cases = {
      {"add", [](const TensorD& a, const TensorD& b) { return a + b; }, -1, 1},
      {"sub", [](const TensorD& a, const TensorD& b) { return a - b; }, -1, 1},
      {"mul", [](const TensorD& a, const TensorD& b) { return a * b; }, -1, 1},
      {"div", [](const TensorD& a, const TensorD& b) { return a / b; }, 0.5, 2},
      {"pow", [](const TensorD& a, const TensorD&) { return pow(a, 1.7); }, 0.2, 2},
      {"sqrt", [](const TensorD& a, const TensorD&) { return fredsr::sqrt(a); }, 0.2, 2},
      {"log", [](const TensorD& a, const TensorD&) { return fredsr::log(a); }, 0.2, 2},
      {"exp", [](const TensorD& a, const TensorD&) { return fredsr::exp(a); }, -1, 1},
      {"sigmoid", [](const TensorD& a, const TensorD&) { return sigmoid(a); }, -3, 3},
      {"tanh", [](const TensorD& a, const TensorD&) { return fredsr::tanh(a); }, -2, 2},
      {"relu", [](const TensorD& a, const TensorD&) { return relu(a); }, -1, 1},
      {"leaky_relu", [](const TensorD& a, const TensorD&) { return leaky_relu(a, 0.2); }, -1, 1},
      {"clamp", [](const TensorD& a, const TensorD&) { return clamp(a, -0.5, 0.5); }, -1, 1},
      {"square", [](const TensorD& a, const TensorD&) { return square(a); }, -1, 1},
      {"abs", [](const TensorD& a, const TensorD&) { return fredsr::abs(a); }, -1, 1},
      {"broadcast_mul", [](const TensorD& a, const TensorD& b) { return a * narrow(b, 1, 0, 1); }, -1, 1},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    for (int i = 0; i < kInstances; ++i) {
      auto a = random_tensor({3, 4}, rng, c.lo, c.hi);
      auto b = random_tensor({3, 4}, rng, c.lo, c.hi);
      auto w = random_tensor({3, 4}, rng, -1, 1, false);
      const double err =
          gradcheck([&](const std::vector<TensorD>& in) { return sum_all(c.f(in[0], in[1]) * w); }, {a, b});
      CHECK(err < kTol);
    }
  }
}

TEST_CASE("strict domain mode") {
  TensorD neg_values({2}, {1.0, -1.0});
  CHECK(std::isnan(fredsr::log(neg_values).data()[1]));
  set_strict_domain(true);
  CHECK_THROWS_AS(fredsr::log(neg_values), DomainError);
  CHECK_THROWS_AS(fredsr::sqrt(neg_values), DomainError);
  set_strict_domain(false);
  TensorF f({1}, {-1.0f});
  set_strict_domain(true);
  CHECK(std::isnan(fredsr::sqrt(f).data()[0]));
  set_strict_domain(false);
}

TEST_CASE("reductions") {
  TensorD x({4}, {1, 2, 3, 6}, true);
  CHECK(mean_all(x).item() == 3.0);
  auto same = sum(x, {});
  CHECK(values(same) == values(x));

  mean_all(x).backward();
  for (double g : x.grad()) CHECK(g == 0.25);

  TensorD m({2, 3}, {1, 5, 2, 7, 3, 9});
  CHECK(values(max(m, {1})) == std::vector<double>{5, 9});
  CHECK(values(sum(m, {0})) == std::vector<double>{8, 8, 11});
  CHECK(sum(m, {1}, true).shape() == Shape{2, 1});
  CHECK_THROWS_AS(sum(m, {2}), AxisError);

  std::mt19937_64 rng(5);
  for (int i = 0; i < kInstances; ++i) {
    auto t = random_tensor({2, 3, 4}, rng);
    auto w = random_tensor({3}, rng, -1, 1, false);
    CHECK(gradcheck([&](const auto& in) { return sum_all(mean(in[0], {0, 2}) * w); }, {t}) < kTol);
    CHECK(gradcheck([&](const auto& in) { return sum_all(sum(in[0], {1}) * sum(in[0], {1})); }, {t}) < kTol);
    CHECK(gradcheck([&](const auto& in) { return sum_all(max(in[0], {2}) * 3.0); }, {t}) < kTol);
  }
}

TEST_CASE("shape ops") {
  std::mt19937_64 rng(9);
  for (int i = 0; i < kInstances; ++i) {
    auto a = random_tensor({2, 3, 2, 2}, rng);
    auto b = random_tensor({2, 1, 2, 2}, rng);
    auto w = random_tensor({2, 2, 2, 2}, rng, -1, 1, false);
    auto f = [&](const std::vector<TensorD>& in) {
      auto joined = cat<double>({in[0], in[1]}, 1);
      auto part = narrow(joined, 1, 2, 2);
      return sum_all(reshape(part, {2, 2, 4}) * reshape(w, {2, 2, 4}));
    };
    CHECK(gradcheck(f, {a, b}) < kTol);
  }
  CHECK_THROWS_AS(reshape(TensorD::zeros({2, 3}), {4}), ShapeError);
  CHECK_THROWS_AS(narrow(TensorD::zeros({2, 3}), 1, 2, 2), ShapeError);
}

TEST_CASE("conv2d examples") {
  auto ones = TensorD::full({1, 1, 3, 3}, 1.0);
  auto out = conv2d(ones, ones, TensorD{}, {1, 1, PadMode::kZero});
  CHECK(out.shape() == Shape{1, 1, 3, 3});
  CHECK(out.at({0, 0, 1, 1}) == 9.0);

  std::mt19937_64 rng(3);
  auto x = random_tensor({2, 3, 5, 6}, rng);
  std::vector<double> k(3 * 3 * 9, 0.0);
  for (int c = 0; c < 3; ++c) k[static_cast<std::size_t>((c * 3 + c) * 9 + 4)] = 1.0;
  auto identity = conv2d(x, TensorD({3, 3, 3, 3}, k), TensorD{}, {1, 1, PadMode::kReflect});
  CHECK(values(identity) == values(x));

  CHECK_THROWS_AS(conv2d(x, TensorD::zeros({3, 2, 3, 3}), TensorD{}), ShapeError);

  // output size floor((H + 2p - k) / s) + 1
  auto strided = conv2d(TensorD::zeros({1, 1, 7, 8}), TensorD::zeros({2, 1, 3, 3}), TensorD::zeros({2}),
                        {2, 1, PadMode::kZero});
  CHECK(strided.shape() == Shape{1, 2, 4, 4});
}

TEST_CASE("reflect padding mirrors without repeating the edge") {
  TensorD x({1, 1, 1, 4}, {1, 2, 3, 4});
  auto p = pad2d(TensorD({1, 1, 2, 4}, {1, 2, 3, 4, 5, 6, 7, 8}), 1, PadMode::kReflect);
  CHECK(p.shape() == Shape{1, 1, 4, 6});
  std::vector<double> first_row(p.data().begin(), p.data().begin() + 6);
  CHECK(first_row == std::vector<double>{6, 5, 6, 7, 8, 7});
  CHECK_THROWS_AS(pad2d(x, 1, PadMode::kReflect), ShapeError);
}

TEST_CASE("conv2d gradients match finite differences") {
  std::mt19937_64 rng(17);
  for (int i = 0; i < kInstances; ++i) {
    auto x = random_tensor({1, 2, 5, 5}, rng);
    auto k = random_tensor({3, 2, 3, 3}, rng);
    auto b = random_tensor({3}, rng);
    auto w = random_tensor({1, 3, 5, 5}, rng, -1, 1, false);
    const auto mode = i % 2 ? PadMode::kReflect : PadMode::kZero;
    auto f = [&](const std::vector<TensorD>& in) {
      return sum_all(conv2d(in[0], in[1], in[2], {1, 1, mode}) * w);
    };
    CHECK(gradcheck(f, {x, k, b}) < kTol);

    auto w2 = random_tensor({1, 3, 3, 3}, rng, -1, 1, false);
    auto strided = [&](const std::vector<TensorD>& in) {
      return sum_all(conv2d(in[0], in[1], in[2], {2, 1, mode}) * w2);
    };
    CHECK(gradcheck(strided, {x, k, b}) < kTol);
  }
}

TEST_CASE("batch norm") {
  std::mt19937_64 rng(23);
  auto x = random_tensor({4, 3, 5, 5}, rng, -10, 10, false);
  BatchNormState<double> state(3);
  auto y = batch_norm2d(x, TensorD::full({3}, 1.0), TensorD::zeros({3}), state, NormMode::kTrain);
  for (int c = 0; c < 3; ++c) {
    double s = 0, sq = 0;
    int n = 0;
    for (int b = 0; b < 4; ++b) {
      for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 5; ++j) {
          const double v = y.at({b, c, i, j});
          s += v;
          sq += v * v;
          ++n;
        }
      }
    }
    const double m = s / n;
    CHECK(std::abs(m) < 1e-6);
    CHECK(std::abs(sq / n - m * m - 1.0) < 1e-5);
  }
  // running stats moved towards the batch statistics
  CHECK(state.running_var.data()[0] != 1.0);

  BatchNormState<double> fresh(3);
  auto same = batch_norm2d(x, TensorD::full({3}, 1.0), TensorD::zeros({3}), fresh, NormMode::kEval);
  for (std::size_t i = 0; i < same.data().size(); ++i) {
    CHECK(same.data()[i] == doctest::Approx(x.data()[i] / std::sqrt(1.0 + 1e-5)).epsilon(1e-12));
  }
  fresh.eps = 0;
  auto exact = batch_norm2d(x, TensorD::full({3}, 1.0), TensorD::zeros({3}), fresh, NormMode::kEval);
  CHECK(values(exact) == values(x));

  for (int i = 0; i < kInstances; ++i) {
    auto xi = random_tensor({2, 3, 4, 4}, rng);
    auto gamma = random_tensor({3}, rng, 0.5, 1.5);
    auto beta = random_tensor({3}, rng);
    auto w = random_tensor({2, 3, 4, 4}, rng, -1, 1, false);
    for (auto mode : {NormMode::kTrain, NormMode::kEval}) {
      BatchNormState<double> s(3);
      auto f = [&](const std::vector<TensorD>& in) {
        return sum_all(batch_norm2d(in[0], in[1], in[2], s, mode) * w);
      };
      CHECK(gradcheck(f, {xi, gamma, beta}) < kTol);
    }
  }
  CHECK_THROWS_AS(batch_norm2d(x, TensorD::full({2}, 1.0), TensorD::zeros({2}), state, NormMode::kTrain),
                  ShapeError);
}

TEST_CASE("zero-variance channel is finite") {
  BatchNormState<double> state(1);
  auto y = batch_norm2d(TensorD::full({2, 1, 3, 3}, 4.0), TensorD::full({1}, 1.0), TensorD::zeros({1}), state,
                        NormMode::kTrain);
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("backward contracts") {
  TensorD w({3}, {0.5, -1, 2}, true);
  TensorD x({3}, {4, 5, 6});
  auto loss = sum_all(w * x);
  loss.backward();
  CHECK(values(w.grad_tensor()) == values(x));
  loss.backward();
  CHECK(values(w.grad_tensor()) == std::vector<double>{8, 10, 12});

  TensorD v({2}, {1, 2}, true);
  sum_all(v + v).backward();
  CHECK(values(v.grad_tensor()) == std::vector<double>{2, 2});

  CHECK_THROWS_AS((v * 2.0).backward(), ShapeError);

  // parents recorded once per distinct input
  TensorD p({2}, {1, 2}, true);
  auto sq = p * p;
  CHECK(sq.impl()->node->parents.size() == 1);
  sum_all(sq).backward();
  CHECK(values(p.grad_tensor()) == std::vector<double>{2, 4});

  // leaves are the only mutable tensors
  CHECK_THROWS_AS(sq.mutable_data(), InvalidArgument);
}

TEST_CASE("two-layer chain rule") {
  std::mt19937_64 rng(29);
  for (int i = 0; i < kInstances; ++i) {
    auto x = random_tensor({1, 2, 6, 6}, rng);
    auto k1 = random_tensor({3, 2, 3, 3}, rng);
    auto k2 = random_tensor({1, 3, 3, 3}, rng);
    auto f = [&](const std::vector<TensorD>& in) {
      auto h = fredsr::tanh(conv2d(in[0], in[1], TensorD{}, {1, 1, PadMode::kReflect}));
      return mean_all(square(conv2d(h, in[2], TensorD{}, {1, 1, PadMode::kZero})));
    };
    CHECK(gradcheck(f, {x, k1, k2}) < kTol);
  }
}

TEST_CASE("forward is bitwise deterministic") {
  std::mt19937_64 rng(31);
  auto x = random_tensor({2, 3, 9, 7}, rng, -1, 1, false).cast<float>();
  auto k = random_tensor({4, 3, 3, 3}, rng, -1, 1, false).cast<float>();
  auto a = conv2d(x, k, TensorF{}, {1, 1, PadMode::kReflect});
  auto b = conv2d(x, k, TensorF{}, {1, 1, PadMode::kReflect});
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST_CASE("conv2d is bitwise repeatable whatever the heap layout") {
  std::mt19937_64 rng(77);
  for (int k : {3, 5, 7}) {
    auto x = random_tensor({6, 1, 8, 8}, rng, 0, 1, false);
    auto row = random_tensor({1, 1, 1, k}, rng, 0, 1, false);
    auto col = reshape(row, {1, 1, k, 1});
    auto blur = [&](const TensorD& v) { return conv2d(conv2d(v, row, TensorD()), col, TensorD()); };
    auto ref = blur(x);
    for (int shift = 1; shift < 24; ++shift) {
      std::vector<std::vector<double>> hold;
      for (int i = 0; i < shift; ++i) hold.emplace_back(static_cast<std::size_t>(i * 7 + 1), 0.0);
      auto again = blur(x);
      CHECK(std::equal(ref.data().begin(), ref.data().end(), again.data().begin()));
    }
  }
}
