#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "safelens/tensor.hpp"

// Reverse-mode autodiff over Tensor values. The backward pass is itself built
// from these ops, so gradients are graph nodes that can be differentiated
// again (double backprop). Values are computed eagerly; a node keeps its
// inputs and a vector-Jacobian-product closure for the backward walk.
namespace safelens::ag {

struct Node;
using NodeRef = std::shared_ptr<Node>;

// Builds the gradients flowing to this node's inputs. `need[i]` is false when
// input i lies on no path to a requested backward target; implementations may
// return nullptr there and skip the work.
using VjpFn = std::function<std::vector<NodeRef>(const NodeRef& self, const NodeRef& grad,
                                                 const std::vector<char>& need)>;

struct Node {
  Tensor value;
  bool requires_grad = false;
  std::vector<NodeRef> inputs;
  VjpFn vjp;  // empty for leaves and constants
  const char* op = "leaf";
};

NodeRef var(Tensor value);       // leaf with requires_grad = true
NodeRef cst(Tensor value);       // constant
NodeRef detach(const NodeRef& a);

inline const Tensor& val(const NodeRef& n) { return n->value; }

NodeRef add(const NodeRef& a, const NodeRef& b);
NodeRef sub(const NodeRef& a, const NodeRef& b);
NodeRef mul(const NodeRef& a, const NodeRef& b);
NodeRef div(const NodeRef& a, const NodeRef& b);
NodeRef neg(const NodeRef& a);
NodeRef add_scalar(const NodeRef& a, double s);
NodeRef mul_scalar(const NodeRef& a, double s);

NodeRef exp(const NodeRef& a);
NodeRef log(const NodeRef& a);
NodeRef abs(const NodeRef& a);   // subgradient 0 at 0; second derivative 0
NodeRef relu(const NodeRef& a);  // subgradient 0 at 0; second derivative 0
NodeRef clamp(const NodeRef& a, double lo, double hi);

NodeRef matmul(const NodeRef& a, const NodeRef& b);
NodeRef transpose(const NodeRef& a);
NodeRef reshape(const NodeRef& a, Shape shape);

NodeRef conv2d(const NodeRef& x, const NodeRef& kernel, int64_t stride, int64_t pad);
NodeRef conv2d_input_vjp(const NodeRef& gout, const NodeRef& kernel, Shape input_shape,
                         int64_t stride, int64_t pad);
NodeRef conv2d_kernel_vjp(const NodeRef& gout, const NodeRef& x, Shape kernel_shape,
                          int64_t stride, int64_t pad);

NodeRef avg_pool(const NodeRef& x, int64_t win);
NodeRef avg_pool_adjoint(const NodeRef& g, int64_t win);

NodeRef sum_to(const NodeRef& a, Shape target);
NodeRef broadcast_to(const NodeRef& a, Shape target);
NodeRef sum_all(const NodeRef& a);   // -> shape [1]
NodeRef mean_all(const NodeRef& a);  // -> shape [1]

NodeRef row_max(const NodeRef& a);  // [N,D] -> [N,1]; gradient goes to first argmax
NodeRef gather_rows(const NodeRef& a, std::vector<int64_t> cols);
NodeRef scatter_rows(const NodeRef& g, std::vector<int64_t> cols, int64_t width);

// Composites (numerically stable; the max shift is detached).
NodeRef softmax_rows(const NodeRef& a);
NodeRef log_softmax_rows(const NodeRef& a);
NodeRef cross_entropy_mean(const NodeRef& logits, const std::vector<int64_t>& labels);

struct BackwardOptions {
  bool create_graph = false;  // keep vjp closures on the produced gradients
};

// Reverse-mode sweep from a scalar root. Returns one gradient node per
// target, aligned with `targets`; nullptr when the root does not depend on
// that target (a zero gradient). Throws ContractError for a non-scalar root
// or a target that does not require grad.
std::vector<NodeRef> backward(const NodeRef& root, const std::vector<NodeRef>& targets,
                              const BackwardOptions& opts = {});

// Gradient as a plain tensor, zeros when the target is unreachable.
Tensor grad_or_zeros(const NodeRef& grad, const NodeRef& target);

}  // namespace safelens::ag
