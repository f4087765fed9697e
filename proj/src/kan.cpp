#include "abfr/kan.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "abfr/error.hpp"
#include "tensor_node.hpp"

namespace abfr {

using detail::make_result;
using detail::Node;

std::string_view variant_name(KanVariant v) {
  switch (v) {
    case KanVariant::EfficientKan: return "efficientkan";
    case KanVariant::FastKan: return "fastkan";
    case KanVariant::FasterKan: return "fasterkan";
    case KanVariant::WavKan: return "wavkan";
    case KanVariant::ChebyKan: return "chebykan";
    case KanVariant::Mlp: return "mlp";
  }
  return "?";
}

std::string valid_variant_names() {
  std::string out;
  for (auto v : kAllVariants) {
    if (!out.empty()) out += ", ";
    out += variant_name(v);
  }
  return out;
}

KanVariant parse_variant(std::string_view name) {
  for (auto v : kAllVariants)
    if (variant_name(v) == name) return v;
  throw ConfigError("unknown block variant '" + std::string(name) +
                    "'; valid names: " + valid_variant_names());
}

void validate(const KanLayerConfig& c) {
  if (c.in_dim == 0 || c.out_dim == 0) throw ConfigError("kan: in/out dims must be >= 1");
  if (!(c.range_lo < c.range_hi)) throw ConfigError("kan: input range must satisfy a < b");
  switch (c.variant) {
    case KanVariant::EfficientKan:
      if (c.spline_order < 0) throw ConfigError("kan: spline order must be >= 0");
      [[fallthrough]];
    case KanVariant::FastKan:
    case KanVariant::FasterKan:
      if (c.grid_size < 2) throw ConfigError("kan: grid size must be >= 2");
      break;
    case KanVariant::ChebyKan:
      if (c.degree < 1) throw ConfigError("kan: Chebyshev degree must be >= 1");
      break;
    case KanVariant::Mlp:
      if (c.expansion < 1) throw ConfigError("kan: MLP expansion must be >= 1");
      break;
    case KanVariant::WavKan: break;
  }
}

std::size_t param_count(const KanLayerConfig& c) {
  validate(c);
  const std::size_t in = c.in_dim, out = c.out_dim;
  switch (c.variant) {
    case KanVariant::EfficientKan: {
      const std::size_t basis = c.grid_size + static_cast<std::size_t>(c.spline_order) - 1;
      return in * out * basis + (c.base_activation ? in * out : 0);
    }
    case KanVariant::FastKan:
    case KanVariant::FasterKan: return 2 * in + in * c.grid_size * out + out;
    case KanVariant::WavKan: return 3 * in * out;
    case KanVariant::ChebyKan: return in * out * static_cast<std::size_t>(c.degree + 1);
    case KanVariant::Mlp: {
      const std::size_t hidden = c.expansion * in;
      return in * hidden + hidden + hidden * out + out;
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Basis functions

std::vector<double> uniform_knots(std::size_t grid_points, int order, double lo, double hi) {
  if (grid_points < 2) throw ConfigError("knots: need at least 2 grid points");
  const double h = (hi - lo) / static_cast<double>(grid_points - 1);
  const std::size_t n = grid_points + 2 * static_cast<std::size_t>(order);
  std::vector<double> knots(n);
  for (std::size_t i = 0; i < n; ++i)
    knots[i] = lo + (static_cast<double>(i) - order) * h;
  return knots;
}

namespace {

// Index of the polynomial piece used at x: the knot interval containing x,
// clamped to the intervals inside [knots[k], knots[n-k-1]].
std::size_t span_of(double x, std::span<const double> knots, int k) {
  const std::size_t first = static_cast<std::size_t>(k);
  const std::size_t last = knots.size() - static_cast<std::size_t>(k) - 2;
  if (x <= knots[first]) return first;
  if (x >= knots[last + 1]) return last;
  const auto it = std::upper_bound(knots.begin() + first, knots.begin() + last + 1, x);
  return static_cast<std::size_t>(it - knots.begin()) - 1;
}

// The k + 1 basis functions of order k that are non-zero on `span`, evaluated
// as polynomials at x (de Boor's triangular scheme).
void span_basis(double x, std::span<const double> knots, std::size_t span, int k, double* out) {
  double left[32], right[32];
  out[0] = 1.0;
  for (int j = 1; j <= k; ++j) {
    left[j] = x - knots[span + 1 - j];
    right[j] = knots[span + j] - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double temp = out[r] / (right[r + 1] + left[j - r]);
      out[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    out[j] = saved;
  }
}

constexpr int kMaxOrder = 30;

}  // namespace

std::vector<double> bspline_basis(double x, std::span<const double> knots, int k) {
  if (k < 0 || k > kMaxOrder) throw ConfigError("bspline: unsupported order");
  if (knots.size() < static_cast<std::size_t>(2 * k + 2))
    throw ConfigError("bspline: not enough knots for the order");
  const std::size_t count = knots.size() - static_cast<std::size_t>(k) - 1;
  std::vector<double> basis(count, 0.0);
  const std::size_t span = span_of(x, knots, k);
  double local[kMaxOrder + 1];
  span_basis(x, knots, span, k, local);
  for (int r = 0; r <= k; ++r) basis[span - static_cast<std::size_t>(k) + r] = local[r];
  return basis;
}

double mexican_hat(double z) {
  const double c = 2.0 / (std::sqrt(3.0) * std::pow(std::numbers::pi, 0.25));
  return c * (1.0 - z * z) * std::exp(-0.5 * z * z);
}

double mexican_hat_derivative(double z) {
  const double c = 2.0 / (std::sqrt(3.0) * std::pow(std::numbers::pi, 0.25));
  return c * z * (z * z - 3.0) * std::exp(-0.5 * z * z);
}

// ---------------------------------------------------------------------------
// Feature ops

namespace {

// Per-element feature map x -> (phi_0..phi_{B-1}) with derivatives.
template <class Eval>
Tensor feature_op(const Tensor& x, std::size_t B, const char* op, Eval eval) {
  detail::require_rank2(x, op);
  const std::size_t n = x.rows(), in = x.cols();
  std::vector<double> out(n * in * B), deriv(n * in * B);
  const auto X = x.data();
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t i = 0; i < in; ++i) {
      const std::size_t base = (s * in + i) * B;
      eval(X[s * in + i], out.data() + base, deriv.data() + base);
    }
  return make_result({n, in * B}, std::move(out), {x},
                     [deriv = std::move(deriv), B](Node& self) {
                       auto& gx = self.parents[0]->grad_buffer();
                       for (std::size_t e = 0; e < gx.size(); ++e) {
                         double acc = 0.0;
                         for (std::size_t b = 0; b < B; ++b)
                           acc += self.grad[e * B + b] * deriv[e * B + b];
                         gx[e] += acc;
                       }
                     });
}

}  // namespace

Tensor bspline_features(const Tensor& x, std::span<const double> knots, int k) {
  if (k < 0 || k > kMaxOrder) throw ConfigError("bspline: unsupported order");
  const std::size_t B = knots.size() - static_cast<std::size_t>(k) - 1;
  std::vector<double> kn(knots.begin(), knots.end());
  return feature_op(x, B, "bspline_features", [kn, k, B](double v, double* phi, double* dphi) {
    std::fill(phi, phi + B, 0.0);
    std::fill(dphi, dphi + B, 0.0);
    const std::size_t span = span_of(v, kn, k);
    const std::size_t first = span - static_cast<std::size_t>(k);
    double local[kMaxOrder + 1];
    span_basis(v, kn, span, k, local);
    for (int r = 0; r <= k; ++r) phi[first + r] = local[r];
    if (k == 0) return;
    // d/dx B_{g,k} = k (B_{g,k-1} / (t_{g+k} - t_g) - B_{g+1,k-1} / (t_{g+k+1} - t_{g+1}))
    double lower[kMaxOrder + 1];
    span_basis(v, kn, span, k - 1, lower);  // B_{span-k+1 .. span, k-1}
    auto lower_at = [&](std::size_t g) {
      if (g + static_cast<std::size_t>(k) < span + 1 || g > span) return 0.0;
      return lower[g - (span - static_cast<std::size_t>(k) + 1)];
    };
    for (int r = 0; r <= k; ++r) {
      const std::size_t g = first + r;
      const double a = lower_at(g) / (kn[g + k] - kn[g]);
      const double b = lower_at(g + 1) / (kn[g + k + 1] - kn[g + 1]);
      dphi[g] = k * (a - b);
    }
  });
}

Tensor rbf_features(const Tensor& x, std::span<const double> centers, double width) {
  std::vector<double> c(centers.begin(), centers.end());
  const std::size_t B = c.size();
  return feature_op(x, B, "rbf_features", [c, width, B](double v, double* phi, double* dphi) {
    for (std::size_t g = 0; g < B; ++g) {
      const double u = (v - c[g]) / width;
      phi[g] = std::exp(-u * u);
      dphi[g] = -2.0 * u / width * phi[g];
    }
  });
}

Tensor switch_features(const Tensor& x, std::span<const double> centers, double width) {
  std::vector<double> c(centers.begin(), centers.end());
  const std::size_t B = c.size();
  return feature_op(x, B, "switch_features", [c, width, B](double v, double* phi, double* dphi) {
    for (std::size_t g = 0; g < B; ++g) {
      const double th = std::tanh((v - c[g]) / width);
      phi[g] = 1.0 - th * th;
      dphi[g] = -2.0 * th * phi[g] / width;
    }
  });
}

Tensor chebyshev_features(const Tensor& x, int degree) {
  if (degree < 1) throw ConfigError("chebyshev: degree must be >= 1");
  const std::size_t B = static_cast<std::size_t>(degree) + 1;
  return feature_op(x, B, "chebyshev_features", [B](double v, double* T, double* dT) {
    const double z = std::tanh(v);
    const double dz = 1.0 - z * z;
    // T_k and dT_k/dz by the three-term recurrence.
    T[0] = 1.0;
    dT[0] = 0.0;
    T[1] = z;
    dT[1] = 1.0;
    for (std::size_t k = 1; k + 1 < B; ++k) {
      T[k + 1] = 2.0 * z * T[k] - T[k - 1];
      dT[k + 1] = 2.0 * T[k] + 2.0 * z * dT[k] - dT[k - 1];
    }
    for (std::size_t k = 0; k < B; ++k) dT[k] *= dz;
  });
}

Tensor wavelet_edges(const Tensor& x, const Tensor& scale_raw, const Tensor& translation,
                     const Tensor& weight) {
  detail::require_rank2(x, "wavelet_edges");
  const std::size_t n = x.rows(), in = x.cols();
  for (const Tensor* p : {&scale_raw, &translation, &weight}) {
    detail::require_rank2(*p, "wavelet_edges");
    if (p->cols() != in || p->rows() != scale_raw.rows())
      throw DimensionError("wavelet_edges: edge params must be [out x in]");
  }
  const std::size_t out = scale_raw.rows();
  const auto X = x.data();
  const auto S = scale_raw.data();
  const auto Tr = translation.data();
  const auto W = weight.data();
  std::vector<double> scale(out * in);
  for (std::size_t e = 0; e < scale.size(); ++e)
    scale[e] = S[e] > 0 ? S[e] + std::log1p(std::exp(-S[e])) : std::log1p(std::exp(S[e]));
  std::vector<double> y(n * out, 0.0);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < out; ++o) {
      double acc = 0.0;
      for (std::size_t i = 0; i < in; ++i) {
        const std::size_t e = o * in + i;
        acc += W[e] * mexican_hat((X[s * in + i] - Tr[e]) / scale[e]);
      }
      y[s * out + o] = acc;
    }
  return make_result(
      {n, out}, std::move(y), {x, scale_raw, translation, weight},
      [n, in, out, scale = std::move(scale)](Node& self) {
        Node& nx = *self.parents[0];
        Node& ns = *self.parents[1];
        Node& nt = *self.parents[2];
        Node& nw = *self.parents[3];
        const auto& X = nx.data;
        const auto& S = ns.data;
        const auto& Tr = nt.data;
        const auto& W = nw.data;
        std::vector<double>* gx = nx.requires_grad ? &nx.grad_buffer() : nullptr;
        std::vector<double>* gs = ns.requires_grad ? &ns.grad_buffer() : nullptr;
        std::vector<double>* gt = nt.requires_grad ? &nt.grad_buffer() : nullptr;
        std::vector<double>* gw = nw.requires_grad ? &nw.grad_buffer() : nullptr;
        for (std::size_t s = 0; s < n; ++s)
          for (std::size_t o = 0; o < out; ++o) {
            const double g = self.grad[s * out + o];
            if (g == 0.0) continue;
            for (std::size_t i = 0; i < in; ++i) {
              const std::size_t e = o * in + i;
              const double z = (X[s * in + i] - Tr[e]) / scale[e];
              if (gw) (*gw)[e] += g * mexican_hat(z);
              const double dz = g * W[e] * mexican_hat_derivative(z);
              if (gx) (*gx)[s * in + i] += dz / scale[e];
              if (gt) (*gt)[e] -= dz / scale[e];
              if (gs) {
                const double sig = S[e] >= 0 ? 1.0 / (1.0 + std::exp(-S[e]))
                                             : std::exp(S[e]) / (1.0 + std::exp(S[e]));
                (*gs)[e] -= dz * z / scale[e] * sig;
              }
            }
          }
      });
}

// ---------------------------------------------------------------------------
// Layers

namespace {

Tensor random_param(Shape shape, Rng& rng, double bound, Init init) {
  std::vector<double> v(numel(shape), 0.0);
  if (init == Init::random)
    for (auto& x : v) x = bound * (2.0 * rng.uniform() - 1.0);
  return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace

Linear Linear::make(std::size_t in, std::size_t out, Rng& rng, Init init) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Linear l;
  l.weight = random_param({in, out}, rng, bound, init);
  l.bias = random_param({out}, rng, bound, init);
  return l;
}

Tensor Linear::forward(const Tensor& x) const { return add(matmul(x, weight), bias); }

KanLayer::KanLayer(const KanLayerConfig& c, Rng& rng, Init init) : config_(c) {
  validate(c);
  const std::size_t in = c.in_dim, out = c.out_dim;
  const double fan = 1.0 / std::sqrt(static_cast<double>(in));
  auto add_param = [&](std::string name, Tensor t) { params_.push_back({std::move(name), t}); };
  switch (c.variant) {
    case KanVariant::EfficientKan: {
      grid_ = uniform_knots(c.grid_size, c.spline_order, c.range_lo, c.range_hi);
      const std::size_t basis = c.grid_size + static_cast<std::size_t>(c.spline_order) - 1;
      if (c.base_activation) add_param("base_weight", random_param({in, out}, rng, fan, init));
      add_param("spline_weight", random_param({in * basis, out}, rng, 0.1 * fan, init));
      break;
    }
    case KanVariant::FastKan:
    case KanVariant::FasterKan: {
      grid_.resize(c.grid_size);
      for (std::size_t g = 0; g < c.grid_size; ++g)
        grid_[g] = c.range_lo + (c.range_hi - c.range_lo) * static_cast<double>(g) /
                                    static_cast<double>(c.grid_size - 1);
      add_param("ln_gamma", Tensor::full({in}, 1.0, true));
      add_param("ln_beta", Tensor::zeros({in}, true));
      const double bound = 1.0 / std::sqrt(static_cast<double>(in * c.grid_size));
      add_param("weight", random_param({in * c.grid_size, out}, rng, bound, init));
      add_param("bias", Tensor::zeros({out}, true));
      break;
    }
    case KanVariant::WavKan:
      // softplus(0.5413) = 1: unit initial scale.
      add_param("scale", Tensor::full({out, in}, 0.5413248546129181, true));
      add_param("translation", Tensor::zeros({out, in}, true));
      add_param("weight", random_param({out, in}, rng, fan, init));
      break;
    case KanVariant::ChebyKan: {
      const std::size_t basis = static_cast<std::size_t>(c.degree) + 1;
      const double bound = 1.0 / std::sqrt(static_cast<double>(in * basis));
      add_param("coeffs", random_param({in * basis, out}, rng, bound, init));
      break;
    }
    case KanVariant::Mlp: {
      const std::size_t hidden = c.expansion * in;
      const double fan2 = 1.0 / std::sqrt(static_cast<double>(hidden));
      add_param("fc1_weight", random_param({in, hidden}, rng, fan, init));
      add_param("fc1_bias", random_param({hidden}, rng, fan, init));
      add_param("fc2_weight", random_param({hidden, out}, rng, fan2, init));
      add_param("fc2_bias", random_param({out}, rng, fan2, init));
      break;
    }
  }
}

Tensor& KanLayer::param(std::string_view name) {
  for (auto& p : params_)
    if (p.name == name) return p.tensor;
  throw ContractError("kan: no parameter named " + std::string(name));
}

const Tensor& KanLayer::param(std::string_view name) const {
  return const_cast<KanLayer*>(this)->param(name);
}

void KanLayer::zero_output() {
  auto zero = [](Tensor& t) {
    for (auto& v : t.mutable_data()) v = 0.0;
  };
  switch (config_.variant) {
    case KanVariant::EfficientKan:
      if (config_.base_activation) zero(param("base_weight"));
      zero(param("spline_weight"));
      break;
    case KanVariant::FastKan:
    case KanVariant::FasterKan:
      zero(param("weight"));
      zero(param("bias"));
      break;
    case KanVariant::WavKan: zero(param("weight")); break;
    case KanVariant::ChebyKan: zero(param("coeffs")); break;
    case KanVariant::Mlp:
      zero(param("fc2_weight"));
      zero(param("fc2_bias"));
      break;
  }
}

Tensor KanLayer::forward(const Tensor& x) const {
  detail::require_rank2(x, "kan forward");
  if (x.cols() != config_.in_dim)
    throw DimensionError("kan forward: expected " + std::to_string(config_.in_dim) +
                         " input features, got " + std::to_string(x.cols()));
  const auto& c = config_;
  switch (c.variant) {
    case KanVariant::EfficientKan: {
      Tensor y = matmul(bspline_features(x, grid_, c.spline_order), param("spline_weight"));
      if (c.base_activation) y = add(y, matmul(silu(x), param("base_weight")));
      return y;
    }
    case KanVariant::FastKan:
    case KanVariant::FasterKan: {
      const Tensor normed = layer_norm(x, param("ln_gamma"), param("ln_beta"));
      const double width = (c.range_hi - c.range_lo) / static_cast<double>(c.grid_size - 1);
      const Tensor phi = c.variant == KanVariant::FastKan ? rbf_features(normed, grid_, width)
                                                          : switch_features(normed, grid_, width);
      return add(matmul(phi, param("weight")), param("bias"));
    }
    case KanVariant::WavKan:
      return wavelet_edges(x, param("scale"), param("translation"), param("weight"));
    case KanVariant::ChebyKan: return matmul(chebyshev_features(x, c.degree), param("coeffs"));
    case KanVariant::Mlp: {
      const Tensor h = gelu(add(matmul(x, param("fc1_weight")), param("fc1_bias")));
      return add(matmul(h, param("fc2_weight")), param("fc2_bias"));
    }
  }
  return {};
}

}  // namespace abfr
