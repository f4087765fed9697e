#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "abfr/error.hpp"
#include "abfr/optim.hpp"

using namespace abfr;

TEST_CASE("adamw decay-only step") {
  Tensor p = Tensor::from({1}, {1.0}, true);
  p.mutable_grad()[0] = 0.0;
  AdamW opt({0.1, 0.1});
  std::vector<Tensor> params{p};
  opt.step(params);
  CHECK(p.data()[0] == doctest::Approx(0.99).epsilon(1e-12));
  CHECK(opt.step_count() == 1);
}

TEST_CASE("adamw constant gradient decreases monotonically") {
  Tensor p = Tensor::from({1}, {0.0}, true);
  AdamW opt({0.01, 0.0});
  std::vector<Tensor> params{p};
  double prev = p.data()[0];
  for (int i = 0; i < 20; ++i) {
    p.mutable_grad()[0] = 1.0;
    opt.step(params);
    CHECK(p.data()[0] < prev);
    prev = p.data()[0];
  }
}

TEST_CASE("adamw descends x^2") {
  Tensor x = Tensor::from({1}, {1.0}, true);
  AdamW opt({0.1, 1e-4});
  std::vector<Tensor> params{x};
  const double f0 = 1.0;
  for (int i = 0; i < 10; ++i) {
    zero_grads(params);
    backward(sum(square(x)));
    opt.step(params);
  }
  CHECK(x.data()[0] * x.data()[0] < 0.5 * f0);
}

TEST_CASE("adamw is bitwise reproducible") {
  auto run = [] {
    Tensor x = Tensor::from({3}, {0.3, -0.7, 1.1}, true);
    AdamW opt;
    std::vector<Tensor> params{x};
    for (int i = 0; i < 50; ++i) {
      zero_grads(params);
      backward(sum(tanh(mul(x, x))));
      opt.step(params);
    }
    return std::vector<double>(x.data().begin(), x.data().end());
  };
  CHECK(run() == run());
}

TEST_CASE("cosine schedule with warm restarts") {
  const LrSchedule s{1e-3, 10, 2, 0.0};
  CHECK(lr_at(s, 0) == 1e-3);
  CHECK(lr_at(s, 10) == 1e-3);
  CHECK(lr_at(s, 30) == 1e-3);
  CHECK(lr_at(s, 5) == doctest::Approx(5e-4).epsilon(1e-12));
  CHECK(lr_at(s, 20) == doctest::Approx(5e-4).epsilon(1e-12));
  CHECK(lr_at(s, 9) < lr_at(s, 8));
  const LrSchedule m{0.1, 4, 1, 0.01};
  for (int e = 0; e <= 100; ++e) {
    CHECK(lr_at(m, e) >= 0.01);
    CHECK(lr_at(m, e) <= 0.1);
    CHECK(lr_at(s, e) >= 0.0);
    CHECK(lr_at(s, e) <= 1e-3);
  }
  CHECK_THROWS_AS(lr_at(s, -1), ContractError);
}

TEST_CASE("checkpoint round trip is bitwise") {
  std::vector<NamedTensor> entries{
      {"a.weight", Tensor::from({2, 3}, {1, -2, 3.5, 1e-300, -0.0, 7})},
      {"b", Tensor::from({4}, {0.1, 0.2, 0.3, 0.4})},
      {"scalar", Tensor::scalar(3.25)}};
  const auto bytes = encode_checkpoint(entries);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "ABFK");
  const auto back = decode_checkpoint(bytes);
  REQUIRE(back.size() == entries.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].name == entries[i].name);
    CHECK(back[i].tensor.shape() == entries[i].tensor.shape());
    CHECK(std::memcmp(back[i].tensor.data().data(), entries[i].tensor.data().data(),
                      entries[i].tensor.numel() * sizeof(double)) == 0);
  }
  CHECK(encode_checkpoint(back) == bytes);

  auto path = std::filesystem::temp_directory_path() / "abfr_test_ckpt.abfk";
  save_checkpoint(path.string(), entries);
  CHECK(encode_checkpoint(load_checkpoint(path.string())) == bytes);
  std::filesystem::remove(path);

  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  CHECK_THROWS_AS(decode_checkpoint(truncated), FormatError);
  auto wrong = bytes;
  wrong[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(wrong), FormatError);
}
