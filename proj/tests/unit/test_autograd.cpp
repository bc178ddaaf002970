#include <cmath>
#include <random>

#include "doctest.h"
#include "tmf/autograd.hpp"
#include "tmf/error.hpp"

using namespace tmf;
using namespace tmf::ag;
using TD = Tensor<double>;

namespace {

TD random_tensor(Shape shape, std::uint64_t seed, bool requires_grad = true) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(numel(shape));
  for (double& x : v) x = n(rng);
  return TD::from_data(std::move(shape), std::move(v), requires_grad);
}

std::vector<double> values(const TD& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("softmax of zeros is uniform") {
  const TD s = softmax(TD::zeros({4}));
  for (double v : s.data()) CHECK(v == 0.25);
}

TEST_CASE("causal softmax zeroes the upper triangle") {
  const TD s = softmax(random_tensor({2, 3, 3}, 1, false), true);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t i = 0; i < 3; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < 3; ++j) {
        const double v = s.data()[b * 9 + i * 3 + j];
        if (j > i) CHECK(v == 0.0);
        row += v;
      }
      CHECK(row == doctest::Approx(1.0).epsilon(1e-15));
    }
  }
}

TEST_CASE("identity matmul") {
  const TD eye = TD::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const TD a = random_tensor({3, 4}, 2, false);
  CHECK(values(matmul(eye, a)) == values(a));
}

TEST_CASE("matmul flattens leading dims against a 2-D weight") {
  const TD x = TD::from_data({2, 1, 2}, {1, 2, 3, 4});
  const TD w = TD::from_data({2, 2}, {1, 1, 0, 1});
  const TD y = matmul(x, w);
  CHECK(y.shape() == Shape{2, 1, 2});
  CHECK(values(y) == std::vector<double>{1, 3, 3, 7});
}

TEST_CASE("layer_norm of a constant vector is zero before gain and bias") {
  const TD x = TD::full({5}, 3.0);
  const TD y = layer_norm(x, TD::full({5}, 1.0), TD::zeros({5}));
  for (double v : y.data()) CHECK(v == 0.0);
  const TD z = layer_norm(x, TD::full({5}, 2.0), TD::full({5}, 0.5));
  for (double v : z.data()) CHECK(v == 0.5);
}

TEST_CASE("layer_norm normalizes the last axis") {
  const TD x = TD::from_data({2, 2}, {1, 3, 10, 30});
  const TD y = layer_norm(x, TD::full({2}, 1.0), TD::zeros({2}), 0.0);
  CHECK(values(y) == std::vector<double>{-1, 1, -1, 1});
}

TEST_CASE("gradient of sum is ones") {
  Tape<double> tape;
  TD w = random_tensor({3, 2}, 3);
  tape.backward(sum(w));
  for (double g : w.grad()) CHECK(g == 1.0);
}

TEST_CASE("gradient of sum of squares") {
  Tape<double> tape;
  TD w = TD::from_data({3}, {1, 2, 3}, true);
  tape.backward(sum(square(w)));
  CHECK(std::vector<double>(w.grad().begin(), w.grad().end()) == std::vector<double>{2, 4, 6});
}

TEST_CASE("a tensor used twice accumulates") {
  Tape<double> tape;
  TD w = TD::from_data({2}, {0.5, -1.0}, true);
  tape.backward(sum(add(w, w)));
  for (double g : w.grad()) CHECK(g == 2.0);
}

TEST_CASE("backward requires a scalar loss") {
  Tape<double> tape;
  TD w = random_tensor({2}, 4);
  const TD y = scale(w, 2.0);
  CHECK_THROWS_AS(tape.backward(y), Error);
}

TEST_CASE("no tape means no recording") {
  TD w = random_tensor({2}, 5);
  const TD y = sum(square(w));
  CHECK(Tape<double>::active() == nullptr);
  CHECK_FALSE(w.has_grad());
  CHECK(y.item() > 0.0);
}

TEST_CASE("sqrt has a zero gradient at zero") {
  Tape<double> tape;
  TD w = TD::from_data({2}, {0.0, 4.0}, true);
  tape.backward(sum(ag::sqrt(w)));
  CHECK(w.grad()[0] == 0.0);
  CHECK(w.grad()[1] == 0.25);
}

TEST_CASE("dropout is identity outside training and inverted inside") {
  const TD x = TD::full({1000}, 1.0);
  CHECK(values(dropout(x, 0.5, false, 1)) == values(x));
  const TD y = dropout(x, 0.25, true, 7);
  std::size_t kept = 0;
  for (double v : y.data()) {
    CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.75)));
    if (v != 0.0) ++kept;
  }
  CHECK(kept > 650);
  CHECK(kept < 850);
  CHECK(values(dropout(x, 0.25, true, 7)) == values(y));
}

TEST_CASE("gradcheck of sum of squares") {
  const TD x = random_tensor({4}, 6, false);
  CHECK(gradcheck([](const TD& v) { return sum(square(v)); }, x) < 1e-8);
}

TEST_CASE("gradcheck of a softmax component") {
  const TD x = random_tensor({5}, 7, false);
  CHECK(gradcheck([](const TD& v) { return slice(softmax(v), 0, 2, 3); }, x) < 1e-6);
}

TEST_CASE("gradcheck over the op set") {
  const TD w = random_tensor({3, 4}, 8, false);
  const TD a = random_tensor({2, 3, 3}, 9, false);
  const TD g = random_tensor({4}, 10, false);
  const TD b = random_tensor({4}, 11, false);
  auto f = [&](const TD& x) {
    // x: 2 x 3 x 3
    TD s = softmax(scale(matmul(x, transpose(x, 1, 2)), 0.5), true);
    TD h = matmul(s, a);
    h = reshape(h, {6, 3});
    h = matmul(h, w);
    h = layer_norm(h, g, b);
    h = concat(std::vector<TD>{gelu(h), relu(slice(h, 1, 0, 2))}, 1);
    TD m = mean(square(sub(h, mul(h, h))));
    return add(m, sum(ag::sqrt(add(sum_last(square(h)), TD::full({6}, 1.0)))));
  };
  CHECK(gradcheck(f, random_tensor({2, 3, 3}, 12, false)) < 1e-6);
}

TEST_CASE("gradcheck_parameters audits every tensor") {
  std::vector<TD> params{random_tensor({3, 2}, 13), random_tensor({2}, 14)};
  const TD x = random_tensor({4, 3}, 15, false);
  auto loss = [&] { return mean(square(add(matmul(x, params[0]), params[1]))); };
  CHECK(gradcheck_parameters(loss, params) < 1e-8);
}
