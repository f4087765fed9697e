#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "abfr/rng.hpp"
#include "abfr/tensor.hpp"

namespace abfr::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = true) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Relative error between the analytic gradient of loss() and central
// differences with step h, over all elements of all `inputs`, measured as
// ||a - n|| / max(||a||, ||n||, 1e-8).
inline double gradcheck(const std::function<Tensor()>& loss, std::vector<Tensor> inputs,
                        double h = 1e-5) {
  for (auto& t : inputs) t.zero_grad();
  backward(loss());
  double diff = 0, na = 0, nn = 0;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double keep = data[i];
      data[i] = keep + h;
      const double up = loss().item();
      data[i] = keep - h;
      const double down = loss().item();
      data[i] = keep;
      const double numeric = (up - down) / (2 * h);
      diff += (analytic[i] - numeric) * (analytic[i] - numeric);
      na += analytic[i] * analytic[i];
      nn += numeric * numeric;
    }
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-8});
}

// Reduces any output to a scalar through fixed random weights so every
// output element contributes a distinct gradient.
inline Tensor project(const Tensor& y, const Tensor& weights) { return sum(mul(y, weights)); }

}  // namespace abfr::testing
