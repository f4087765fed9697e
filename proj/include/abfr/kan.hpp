#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "abfr/optim.hpp"
#include "abfr/rng.hpp"
#include "abfr/tensor.hpp"

namespace abfr {

enum class KanVariant { EfficientKan, FastKan, FasterKan, WavKan, ChebyKan, Mlp };

inline constexpr KanVariant kAllVariants[] = {KanVariant::Mlp,      KanVariant::EfficientKan,
                                              KanVariant::FastKan,  KanVariant::FasterKan,
                                              KanVariant::WavKan,   KanVariant::ChebyKan};

std::string_view variant_name(KanVariant v);
// Throws ConfigError listing the valid names.
KanVariant parse_variant(std::string_view name);
std::string valid_variant_names();

struct KanLayerConfig {
  KanVariant variant = KanVariant::FastKan;
  std::size_t in_dim = 1;
  std::size_t out_dim = 1;
  // Basis functions per input for the RBF/switch variants; grid points over
  // [range_lo, range_hi] for the spline variant.
  std::size_t grid_size = 8;
  int spline_order = 3;
  int degree = 4;  // ChebyKan
  double range_lo = -2.0;
  double range_hi = 2.0;
  bool base_activation = true;  // EfficientKan silu branch
  std::size_t expansion = 2;    // Mlp hidden width = expansion * in_dim
};

void validate(const KanLayerConfig& config);

// Exact number of trainable scalars of a layer.
std::size_t param_count(const KanLayerConfig& config);

// --- basis functions ---

// Uniform knots over [lo, hi] with `grid_points` points, extended `order`
// steps on both sides.
std::vector<double> uniform_knots(std::size_t grid_points, int order, double lo, double hi);

// All G + k - 1 B-spline basis values of order k at x. Outside [lo, hi] the
// boundary interval's polynomial pieces are extrapolated.
std::vector<double> bspline_basis(double x, std::span<const double> knots, int order);

double mexican_hat(double z);
double mexican_hat_derivative(double z);

// Features of x [n x in] laid out as column i * B + b for input i, basis b.
Tensor bspline_features(const Tensor& x, std::span<const double> knots, int order);
Tensor rbf_features(const Tensor& x, std::span<const double> centers, double width);
Tensor switch_features(const Tensor& x, std::span<const double> centers, double width);
// T_0..T_degree of tanh(x).
Tensor chebyshev_features(const Tensor& x, int degree);
// y[n, o] = sum_i weight[o, i] * psi((x[n, i] - translation[o, i]) / softplus(scale_raw[o, i])).
Tensor wavelet_edges(const Tensor& x, const Tensor& scale_raw, const Tensor& translation,
                     const Tensor& weight);

// --- layers ---

enum class Init { random, zero };

// One KAN (or MLP) layer with a uniform forward interface.
class KanLayer {
 public:
  KanLayer(const KanLayerConfig& config, Rng& rng, Init init = Init::random);

  Tensor forward(const Tensor& x) const;

  const KanLayerConfig& config() const { return config_; }
  std::vector<NamedTensor>& parameters() { return params_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }
  Tensor& param(std::string_view name);
  const Tensor& param(std::string_view name) const;

  // Zeroes every weight feeding the output, making forward() identically 0.
  void zero_output();

 private:
  KanLayerConfig config_;
  std::vector<NamedTensor> params_;
  std::vector<double> grid_;  // knots or centres
};

// Linear map x @ weight + bias, weight stored [in x out].
struct Linear {
  Tensor weight;
  Tensor bias;

  static Linear make(std::size_t in, std::size_t out, Rng& rng, Init init = Init::random);
  Tensor forward(const Tensor& x) const;
};

}  // namespace abfr
