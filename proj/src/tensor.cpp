#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "abfr/error.hpp"
#include "tensor_node.hpp"

namespace abfr {

using detail::make_result;
using detail::Node;
using detail::node_of;

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
  out << ']';
  return out.str();
}

namespace detail {

Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                   std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  const bool needs = std::any_of(parents.begin(), parents.end(),
                                 [](const Tensor& p) { return p.requires_grad(); });
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(Access::node(p));
    node->backward = std::move(backward);
  }
  return Access::wrap(std::move(node));
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

void require_rank2(const Tensor& t, const char* op) {
  require_defined(t, op);
  if (t.rank() != 2)
    throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " +
                         shape_str(t.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Tensor handle

namespace {

std::shared_ptr<Node> new_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto d : shape)
    if (d == 0) throw DimensionError("tensor extents must be positive: " + shape_str(shape));
  if (numel(shape) != values.size())
    throw DimensionError("tensor data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = abfr::numel(shape);
  return Tensor(new_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = abfr::numel(shape);
  return Tensor(new_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(new_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value) { return Tensor(new_leaf({}, {value}, false)); }

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->data.size(); }

std::size_t Tensor::rows() const {
  const auto& s = shape();
  return s.size() == 2 ? s[0] : 1;
}

std::size_t Tensor::cols() const {
  const auto& s = shape();
  if (s.empty()) return 1;
  return s.back();
}

std::span<const double> Tensor::data() const& { return node_->data; }
std::vector<double> Tensor::data() const&& { return node_->data; }
std::span<double> Tensor::mutable_data() { return node_->data; }

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }
std::span<double> Tensor::mutable_grad() { return node_->grad_buffer(); }
void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const { return Tensor(new_leaf(shape(), node_->data, false)); }

// ---------------------------------------------------------------------------
// Backward

void backward(const Tensor& loss) {
  detail::require_defined(loss, "backward");
  if (loss.numel() != 1 || loss.rank() > 1)
    throw ContractError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
  if (!loss.requires_grad())
    throw ContractError("backward: loss does not depend on any trainable tensor");

  // Iterative post-order DFS yields a topological order (inputs first).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  Node* root = detail::Access::node(loss).get();
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw DimensionError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = B + p * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const double* G = self.grad.data();
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    if (na.requires_grad) {
      auto& ga = na.grad_buffer();
      const double* B = nb.data.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * B[p * n + j];
          ga[i * k + p] += acc;
        }
    }
    if (nb.requires_grad) {
      auto& gb = nb.grad_buffer();
      const double* A = na.data.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A[i * k + p];
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * G[i * n + j];
        }
    }
  });
}

Tensor transpose(const Tensor& a) {
  detail::require_rank2(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  const auto A = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = A[i * n + j];
  return make_result({n, m}, std::move(out), {a}, [m, n](Node& self) {
    auto& ga = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += self.grad[j * m + i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise binary

namespace {

enum class Broadcast { same, scalar, row };

Broadcast classify(const Tensor& a, const Tensor& b, const char* op) {
  detail::require_defined(a, op);
  detail::require_defined(b, op);
  if (a.shape() == b.shape()) return Broadcast::same;
  if (b.numel() == 1) return Broadcast::scalar;
  if (a.rank() == 2 && b.numel() == a.cols() &&
      (b.rank() == 1 || (b.rank() == 2 && b.rows() == 1)))
    return Broadcast::row;
  throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(b.shape()) +
                       " onto " + shape_str(a.shape()));
}

inline std::size_t bindex(Broadcast mode, std::size_t i, std::size_t cols) {
  switch (mode) {
    case Broadcast::same: return i;
    case Broadcast::scalar: return 0;
    case Broadcast::row: return i % cols;
  }
  return i;
}

// f(a, b) with partials da(a, b), db(a, b).
template <class F, class DA, class DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, F f, DA da, DB db) {
  const Broadcast mode = classify(a, b, op);
  const std::size_t n = a.numel(), cols = a.cols();
  const auto A = a.data();
  const auto B = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(A[i], B[bindex(mode, i, cols)]);
  return make_result(a.shape(), std::move(out), {a, b}, [=](Node& self) {
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    const auto& g = self.grad;
    if (na.requires_grad) {
      auto& ga = na.grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        ga[i] += g[i] * da(na.data[i], nb.data[bindex(mode, i, cols)]);
    }
    if (nb.requires_grad) {
      auto& gb = nb.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = bindex(mode, i, cols);
        gb[j] += g[i] * db(na.data[i], nb.data[j]);
      }
    }
  });
}

template <class F, class DF>
Tensor unary(const Tensor& a, const char* op, F f, DF df) {
  detail::require_defined(a, op);
  const auto A = a.data();
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = f(A[i]);
  return make_result(a.shape(), std::move(out), {a}, [df](Node& self) {
    Node& na = *self.parents[0];
    auto& ga = na.grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * df(na.data[i], self.data[i]);
  });
}

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  detail::require_defined(b, "div");
  for (double v : b.data())
    if (v == 0.0) throw DomainError("div: zero divisor");
  return binary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

// ---------------------------------------------------------------------------
// Elementwise unary

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, "scale", [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor tanh(const Tensor& a) {
  return unary(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a, "sigmoid", [](double x) { return sigmoid_value(x); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor silu(const Tensor& a) {
  return unary(
      a, "silu", [](double x) { return x * sigmoid_value(x); },
      [](double x, double) {
        const double s = sigmoid_value(x);
        return s * (1.0 + x * (1.0 - s));
      });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
  return unary(
      a, "gelu", [](double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); },
      [](double x, double) {
        const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
        const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + x * pdf;
      });
}

Tensor softplus(const Tensor& a) {
  return unary(
      a, "softplus",
      [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x, double) { return sigmoid_value(x); });
}

Tensor square(const Tensor& a) {
  return unary(
      a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

// ---------------------------------------------------------------------------
// Reductions and reshaping

Tensor sum(const Tensor& a) {
  detail::require_defined(a, "sum");
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result({}, {s}, {a}, [](Node& self) {
    auto& ga = self.parents[0]->grad_buffer();
    for (auto& g : ga) g += self.grad[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor mean_rows(const Tensor& a) {
  detail::require_rank2(a, "mean_rows");
  const std::size_t n = a.rows(), d = a.cols();
  std::vector<double> out(d, 0.0);
  const auto A = a.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += A[i * d + j];
  for (auto& v : out) v /= static_cast<double>(n);
  return make_result({1, d}, std::move(out), {a}, [n, d](Node& self) {
    auto& ga = self.parents[0]->grad_buffer();
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) ga[i * d + j] += self.grad[j] * inv;
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  detail::require_defined(a, "reshape");
  if (abfr::numel(shape) != a.numel())
    throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(out), {a}, [](Node& self) {
    auto& ga = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const std::size_t d = parts[0].cols();
  std::size_t n = 0;
  for (const auto& p : parts) {
    detail::require_defined(p, "concat_rows");
    if (p.rank() > 2 || p.cols() != d)
      throw DimensionError("concat_rows: column mismatch " + shape_str(p.shape()));
    n += p.rows();
  }
  std::vector<double> out;
  out.reserve(n * d);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return make_result({n, d}, std::move(out), parents, [](Node& self) {
    std::size_t offset = 0;
    for (auto& parent : self.parents) {
      const std::size_t len = parent->data.size();
      if (parent->requires_grad) {
        auto& g = parent->grad_buffer();
        for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[offset + i];
      }
      offset += len;
    }
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t n = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t d = 0;
  for (const auto& p : parts) {
    detail::require_rank2(p, "concat_cols");
    if (p.rows() != n) throw DimensionError("concat_cols: row mismatch " + shape_str(p.shape()));
    widths.push_back(p.cols());
    d += p.cols();
  }
  std::vector<double> out(n * d);
  std::size_t col = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    const auto P = p.data();
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(P.data() + i * w, w, out.data() + i * d + col);
    col += w;
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return make_result({n, d}, std::move(out), parents, [n, d, widths](Node& self) {
    std::size_t col = 0;
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      const std::size_t w = widths[k];
      Node& parent = *self.parents[k];
      if (parent.requires_grad) {
        auto& g = parent.grad_buffer();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < w; ++j) g[i * w + j] += self.grad[i * d + col + j];
      }
      col += w;
    }
  });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  detail::require_rank2(a, "slice_cols");
  if (begin >= end || end > a.cols())
    throw IndexError("slice_cols: bad range [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") for " + shape_str(a.shape()));
  const std::size_t n = a.rows(), d = a.cols(), w = end - begin;
  std::vector<double> out(n * w);
  const auto A = a.data();
  for (std::size_t i = 0; i < n; ++i) std::copy_n(A.data() + i * d + begin, w, out.data() + i * w);
  return make_result({n, w}, std::move(out), {a}, [n, d, w, begin](Node& self) {
    auto& ga = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) ga[i * d + begin + j] += self.grad[i * w + j];
  });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  detail::require_rank2(a, "gather_rows");
  if (rows.empty()) throw ContractError("gather_rows: empty index list");
  const std::size_t d = a.cols();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> out(idx.size() * d);
  const auto A = a.data();
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] >= a.rows()) throw IndexError("gather_rows: row " + std::to_string(idx[k]));
    std::copy_n(A.data() + idx[k] * d, d, out.data() + k * d);
  }
  const std::size_t n = idx.size();
  return make_result({n, d}, std::move(out), {a}, [idx = std::move(idx), d](Node& self) {
    auto& ga = self.parents[0]->grad_buffer();
    for (std::size_t k = 0; k < idx.size(); ++k)
      for (std::size_t j = 0; j < d; ++j) ga[idx[k] * d + j] += self.grad[k * d + j];
  });
}

Tensor scale_rows(const Tensor& a, const Tensor& s) {
  detail::require_rank2(a, "scale_rows");
  detail::require_defined(s, "scale_rows");
  const std::size_t n = a.rows(), d = a.cols();
  if (s.numel() != n)
    throw DimensionError("scale_rows: " + shape_str(s.shape()) + " vs " + shape_str(a.shape()));
  std::vector<double> out(n * d);
  const auto A = a.data();
  const auto S = s.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = A[i * d + j] * S[i];
  return make_result({n, d}, std::move(out), {a, s}, [n, d](Node& self) {
    Node& na = *self.parents[0];
    Node& ns = *self.parents[1];
    if (na.requires_grad) {
      auto& ga = na.grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) ga[i * d + j] += self.grad[i * d + j] * ns.data[i];
    }
    if (ns.requires_grad) {
      auto& gs = ns.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += self.grad[i * d + j] * na.data[i * d + j];
        gs[i] += acc;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Network primitives

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  detail::require_rank2(x, "layer_norm");
  const std::size_t n = x.rows(), d = x.cols();
  if (gamma.numel() != d || beta.numel() != d)
    throw DimensionError("layer_norm: affine params must have " + std::to_string(d) + " entries");
  const auto X = x.data();
  const auto G = gamma.data();
  const auto B = beta.data();
  std::vector<double> out(n * d), xhat(n * d), rstd(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += X[i * d + j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = X[i * d + j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (X[i * d + j] - mu) * rstd[i];
      out[i * d + j] = xhat[i * d + j] * G[j] + B[j];
    }
  }
  return make_result(
      {n, d}, std::move(out), {x, gamma, beta},
      [n, d, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
        Node& nx = *self.parents[0];
        Node& ng = *self.parents[1];
        Node& nb = *self.parents[2];
        const auto& g = self.grad;
        if (ng.requires_grad) {
          auto& gg = ng.grad_buffer();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) gg[j] += g[i * d + j] * xhat[i * d + j];
        }
        if (nb.requires_grad) {
          auto& gb = nb.grad_buffer();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
        }
        if (nx.requires_grad) {
          auto& gx = nx.grad_buffer();
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t i = 0; i < n; ++i) {
            double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = g[i * d + j] * ng.data[j];
              mean_dxhat += dxh;
              mean_dxhat_xhat += dxh * xhat[i * d + j];
            }
            mean_dxhat *= inv_d;
            mean_dxhat_xhat *= inv_d;
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = g[i * d + j] * ng.data[j];
              gx[i * d + j] +=
                  rstd[i] * (dxh - mean_dxhat - xhat[i * d + j] * mean_dxhat_xhat);
            }
          }
        }
      });
}

Tensor softmax_rows(const Tensor& x) {
  detail::require_rank2(x, "softmax_rows");
  const std::size_t n = x.rows(), d = x.cols();
  const auto X = x.data();
  std::vector<double> out(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = X.data() + i * d;
    const double mx = *std::max_element(row, row + d);
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) z += (out[i * d + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] /= z;
  }
  return make_result({n, d}, std::move(out), {x}, [n, d](Node& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += self.grad[i * d + j] * self.data[i * d + j];
      for (std::size_t j = 0; j < d; ++j)
        gx[i * d + j] += self.data[i * d + j] * (self.grad[i * d + j] - dot);
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  detail::require_rank2(logits, "cross_entropy");
  const std::size_t n = logits.rows(), c = logits.cols();
  if (labels.size() != n)
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
  const auto Z = logits.data();
  std::vector<double> probs(n * c);
  std::vector<int> lab(labels.begin(), labels.end());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (lab[i] < 0 || static_cast<std::size_t>(lab[i]) >= c)
      throw IndexError("cross_entropy: label " + std::to_string(lab[i]) + " outside [0, " +
                       std::to_string(c) + ")");
    const double* row = Z.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (probs[i * c + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
    loss += (mx + std::log(z)) - row[lab[i]];
  }
  loss /= static_cast<double>(n);
  return make_result({}, {loss}, {logits},
                     [n, c, probs = std::move(probs), lab = std::move(lab)](Node& self) {
                       auto& gz = self.parents[0]->grad_buffer();
                       const double scale = self.grad[0] / static_cast<double>(n);
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t j = 0; j < c; ++j) {
                           const double onehot = static_cast<int>(j) == lab[i] ? 1.0 : 0.0;
                           gz[i * c + j] += scale * (probs[i * c + j] - onehot);
                         }
                     });
}

}  // namespace abfr
