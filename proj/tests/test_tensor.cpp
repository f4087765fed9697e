#include <doctest.h>

#include <cmath>
#include <functional>

#include "abfr/error.hpp"
#include "abfr/tensor.hpp"
#include "gradcheck.hpp"

using namespace abfr;
using abfr::testing::gradcheck;
using abfr::testing::project;
using abfr::testing::random_tensor;

namespace {

using UnaryOp = std::function<Tensor(const Tensor&)>;

void check_unary(const char* name, const UnaryOp& op, double lo = -1.5, double hi = 1.5) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Tensor x = random_tensor({3, 4}, rng, lo, hi);
    Tensor w = random_tensor(op(x).shape(), rng, -1, 1, false);
    const double err = gradcheck([&] { return project(op(x), w); }, {x});
    INFO(name << " seed " << seed);
    CHECK(err <= 1e-4);
  }
}

}  // namespace

TEST_CASE("matmul values and shape errors") {
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor b = Tensor::from({2, 2}, {3, 4, 5, 6});
  auto c = matmul(eye, b).data();
  CHECK(std::vector<double>(c.begin(), c.end()) == std::vector<double>{3, 4, 5, 6});
  CHECK(matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4})).item() == 11);
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
}

TEST_CASE("matmul gradient on a random 3x3 pair") {
  Rng rng(5);
  Tensor a = random_tensor({3, 3}, rng), b = random_tensor({3, 3}, rng);
  Tensor w = random_tensor({3, 3}, rng, -1, 1, false);
  CHECK(gradcheck([&] { return project(matmul(a, b), w); }, {a, b}) <= 1e-6);
}

TEST_CASE("elementwise values") {
  CHECK(tanh(Tensor::scalar(0)).item() == 0);
  CHECK(silu(Tensor::scalar(0)).item() == 0);
  CHECK(relu(Tensor::scalar(-2)).item() == 0);
  CHECK(square(Tensor::scalar(-3)).item() == 9);
  CHECK_THROWS_AS(div(Tensor::scalar(1), Tensor::scalar(0)), DomainError);
  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), DimensionError);
}

TEST_CASE("tanh gradient at 0.3") {
  Tensor x = Tensor::from({1}, {0.3}, true);
  CHECK(gradcheck([&] { return sum(tanh(x)); }, {x}) <= 1e-6);
}

TEST_CASE("unary ops match finite differences on 20 seeds") {
  check_unary("tanh", [](const Tensor& x) { return tanh(x); });
  check_unary("exp", [](const Tensor& x) { return exp(x); });
  check_unary("sigmoid", [](const Tensor& x) { return sigmoid(x); });
  check_unary("silu", [](const Tensor& x) { return silu(x); });
  check_unary("relu", [](const Tensor& x) { return relu(x); });
  check_unary("gelu", [](const Tensor& x) { return gelu(x); });
  check_unary("softplus", [](const Tensor& x) { return softplus(x); });
  check_unary("square", [](const Tensor& x) { return square(x); });
  check_unary("neg", [](const Tensor& x) { return neg(x); });
  check_unary("scale", [](const Tensor& x) { return scale(x, -2.5); });
  check_unary("transpose", [](const Tensor& x) { return transpose(transpose(x)); });
  check_unary("reshape", [](const Tensor& x) { return reshape(reshape(x, {12}), {3, 4}); });
  check_unary("slice_cols", [](const Tensor& x) {
    return concat_cols(std::vector<Tensor>{slice_cols(x, 1, 3), slice_cols(x, 0, 2)});
  });
  check_unary("softmax_rows", [](const Tensor& x) { return softmax_rows(x); });
  check_unary("mean_rows", [](const Tensor& x) {
    return concat_rows(std::vector<Tensor>{mean_rows(x), mean_rows(square(x)), x});
  });
  check_unary("gather_rows", [](const Tensor& x) {
    const std::size_t rows[] = {2, 0, 2};
    return gather_rows(x, rows);
  });
}

TEST_CASE("binary ops with broadcasting match finite differences on 20 seeds") {
  using BinaryOp = std::function<Tensor(const Tensor&, const Tensor&)>;
  const std::pair<const char*, BinaryOp> ops[] = {
      {"add", [](const Tensor& a, const Tensor& b) { return add(a, b); }},
      {"sub", [](const Tensor& a, const Tensor& b) { return sub(a, b); }},
      {"mul", [](const Tensor& a, const Tensor& b) { return mul(a, b); }},
      {"div", [](const Tensor& a, const Tensor& b) { return div(a, b); }},
  };
  const Shape rhs_shapes[] = {{3, 4}, {4}, {}};
  for (const auto& [name, op] : ops)
    for (const auto& shape : rhs_shapes)
      for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        Tensor a = random_tensor({3, 4}, rng);
        // Divisors kept away from zero.
        Tensor b = random_tensor(shape, rng, 0.5, 2.0);
        Tensor w = random_tensor({3, 4}, rng, -1, 1, false);
        INFO(name << " rhs " << shape_str(shape) << " seed " << seed);
        CHECK(gradcheck([&] { return project(op(a, b), w); }, {a, b}) <= 1e-4);
      }
}

TEST_CASE("structural ops match finite differences on 20 seeds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Tensor a = random_tensor({2, 3}, rng), b = random_tensor({3, 4}, rng);
    Tensor c = random_tensor({2, 4}, rng), s = random_tensor({2}, rng);
    Tensor w24 = random_tensor({2, 4}, rng, -1, 1, false);
    Tensor w44 = random_tensor({4, 4}, rng, -1, 1, false);
    Tensor w27 = random_tensor({2, 7}, rng, -1, 1, false);
    INFO("seed " << seed);
    CHECK(gradcheck([&] { return project(matmul(a, b), w24); }, {a, b}) <= 1e-4);
    CHECK(gradcheck([&] {
            return project(concat_rows(std::vector<Tensor>{c, mul(c, c)}), w44);
          }, {c}) <= 1e-4);
    CHECK(gradcheck([&] { return project(concat_cols(std::vector<Tensor>{a, c}), w27); },
                    {a, c}) <= 1e-4);
    CHECK(gradcheck([&] { return project(scale_rows(c, s), w24); }, {c, s}) <= 1e-4);
    CHECK(gradcheck([&] { return sum(mul(c, c)); }, {c}) <= 1e-4);
    CHECK(gradcheck([&] { return mean(exp(c)); }, {c}) <= 1e-4);
  }
}

TEST_CASE("layer_norm values and gradient") {
  Tensor g = Tensor::full({3}, 1.0), b = Tensor::zeros({3});
  for (double v : layer_norm(Tensor::from({1, 3}, {5, 5, 5}), g, b).data()) CHECK(v == 0.0);
  auto pair = layer_norm(Tensor::from({1, 2}, {1, -1}), Tensor::full({2}, 1.0), Tensor::zeros({2}))
                  .data();
  CHECK(pair[0] == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(pair[1] == doctest::Approx(-1.0).epsilon(1e-5));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Tensor x = random_tensor({2, 4}, rng), gamma = random_tensor({4}, rng),
           beta = random_tensor({4}, rng), w = random_tensor({2, 4}, rng, -1, 1, false);
    INFO("seed " << seed);
    CHECK(gradcheck([&] { return project(layer_norm(x, gamma, beta), w); }, {x, gamma, beta}) <=
          1e-5);
  }
}

TEST_CASE("softmax rows") {
  auto half = softmax_rows(Tensor::from({1, 2}, {0, 0})).data();
  CHECK(half[0] == 0.5);
  CHECK(half[1] == 0.5);
  auto big = softmax_rows(Tensor::from({1, 2}, {1000, 0})).data();
  CHECK(big[0] == doctest::Approx(1.0));
  CHECK(big[1] == doctest::Approx(0.0));
  CHECK(std::isfinite(big[1]));
  Rng rng(1);
  Tensor x = random_tensor({4, 5}, rng, -20, 20);
  auto s = softmax_rows(x).data();
  for (std::size_t r = 0; r < 4; ++r) {
    double total = 0;
    for (std::size_t c = 0; c < 5; ++c) total += s[r * 5 + c];
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }
  Tensor y = random_tensor({2, 3}, rng), w = random_tensor({2, 3}, rng, -1, 1, false);
  CHECK(gradcheck([&] { return project(softmax_rows(y), w); }, {y}) <= 1e-5);
}

TEST_CASE("cross entropy") {
  const int zero[] = {0, 1};
  CHECK(cross_entropy(Tensor::zeros({2, 2}), zero).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  const int first[] = {0};
  CHECK(cross_entropy(Tensor::from({1, 2}, {30, -30}), first).item() < 1e-20);
  const int bad[] = {2};
  CHECK_THROWS_AS(cross_entropy(Tensor::zeros({1, 2}), bad), IndexError);

  // Closed form: (softmax - onehot) / n.
  Rng rng(3);
  Tensor logits = random_tensor({3, 2}, rng, -2, 2);
  const int labels[] = {1, 0, 1};
  backward(cross_entropy(logits, labels));
  auto p = softmax_rows(logits.detach()).data();
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 2; ++c) {
      const double expected = (p[r * 2 + c] - (labels[r] == static_cast<int>(c) ? 1 : 0)) / 3;
      CHECK(logits.grad()[r * 2 + c] == doctest::Approx(expected).epsilon(1e-12));
    }
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng r2(seed);
    Tensor x = random_tensor({4, 3}, r2, -3, 3);
    const int ys[] = {0, 2, 1, 2};
    CHECK(gradcheck([&] { return cross_entropy(x, ys); }, {x}) <= 1e-4);
  }
}

TEST_CASE("backward contracts") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  CHECK_THROWS_AS(backward(mul(x, x)), ContractError);
  Tensor unreachable = Tensor::from({1}, {1}, true);
  backward(sum(square(x)));
  CHECK_FALSE(unreachable.has_grad());
  CHECK(x.grad()[0] == 2);
  CHECK(x.grad()[1] == 4);
}

TEST_CASE("backward accumulation is linear in the loss") {
  Rng rng(9);
  Tensor x = random_tensor({3, 3}, rng);
  auto l1 = [&] { return sum(tanh(x)); };
  auto l2 = [&] { return mean(square(x)); };
  backward(l1());
  std::vector<double> g1(x.grad().begin(), x.grad().end());
  x.zero_grad();
  backward(l2());
  std::vector<double> g2(x.grad().begin(), x.grad().end());
  x.zero_grad();
  backward(add(l1(), l2()));
  for (std::size_t i = 0; i < 9; ++i) CHECK(x.grad()[i] == doctest::Approx(g1[i] + g2[i]).epsilon(1e-14));
}

TEST_CASE("shared subexpressions are visited once") {
  Tensor x = Tensor::from({1}, {3.0}, true);
  Tensor y = mul(x, x);
  Tensor z = add(y, y);  // 4x dz/dx = 4 * 3
  backward(sum(z));
  CHECK(x.grad()[0] == 12.0);
}
