#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace abfr {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
struct Access;
}

// Handle to a node of the define-by-run graph. Copies share the node.
// Every op records its inputs and a backward rule; backward() walks the graph
// reachable from a scalar loss in reverse topological order.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  // rows()/cols() treat rank-1 tensors as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const&;
  // A temporary tensor hands out a copy so the values outlive it.
  std::vector<double> data() const&&;
  // Direct write access; meant for leaves (parameters) only.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Same values, cut from the graph.
  Tensor detach() const;

  const detail::Node* id() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend struct detail::Access;
};

namespace detail {
struct Access {
  static const std::shared_ptr<Node>& node(const Tensor& t) { return t.node_; }
  static Tensor wrap(std::shared_ptr<Node> node) { return Tensor(std::move(node)); }
};
}  // namespace detail

// Populates grads of every requires_grad tensor reachable from `loss`.
void backward(const Tensor& loss);

// --- linear algebra ---
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// --- elementwise; `b` may be same-shape, a scalar, or a row matching a's last dim ---
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double factor);
Tensor neg(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor square(const Tensor& a);

// --- reductions and reshaping ---
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// [n x d] -> [1 x d]
Tensor mean_rows(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);
// Multiplies row i of a [n x d] by s[i]; s is [n x 1] or [n].
Tensor scale_rows(const Tensor& a, const Tensor& s);

// --- network primitives ---
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor softmax_rows(const Tensor& x);
// Mean negative log-softmax of the true class.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace abfr
