#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "abfr/tensor.hpp"

namespace abfr::detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty when absent
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

inline Node& node_of(const Tensor& t) { return *Access::node(t); }

// Builds a result node. The backward rule is attached only when some parent
// participates in differentiation.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                   std::function<void(Node&)> backward);

void require_defined(const Tensor& t, const char* op);
void require_rank2(const Tensor& t, const char* op);

}  // namespace abfr::detail
