#include "safelens/graph.hpp"

#include <unordered_map>

#include "safelens/tensor_ops.hpp"

namespace safelens::ag {

namespace {

NodeRef make(Tensor value, std::vector<NodeRef> inputs, VjpFn vjp, const char* op) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  bool rg = false;
  for (const auto& in : inputs) rg = rg || (in && in->requires_grad);
  n->requires_grad = rg;
  if (rg) {
    n->inputs = std::move(inputs);
    n->vjp = std::move(vjp);
  }
  return n;
}

Tensor relu_mask(const Tensor& a) {
  Tensor m = Tensor::uninit(a.shape(), a.dtype());
  for (int64_t i = 0; i < a.numel(); ++i) m[i] = a[i] > 0.0 ? 1.0 : 0.0;
  return m.seal("relu_mask");
}

Tensor range_mask(const Tensor& a, double lo, double hi) {
  Tensor m = Tensor::uninit(a.shape(), a.dtype());
  for (int64_t i = 0; i < a.numel(); ++i) m[i] = (a[i] > lo && a[i] < hi) ? 1.0 : 0.0;
  return m.seal("range_mask");
}

Tensor argmax_mask(const Tensor& a) {
  const int64_t n = a.dim(0), d = a.dim(1);
  Tensor m = Tensor::zeros(a.shape(), a.dtype());
  const auto idx = tk::row_argmax(a);
  for (int64_t i = 0; i < n; ++i) m[i * d + idx[static_cast<size_t>(i)]] = 1.0;
  return m;
}

}  // namespace

NodeRef var(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->op = "var";
  return n;
}

NodeRef cst(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = "cst";
  return n;
}

NodeRef detach(const NodeRef& a) { return cst(a->value); }

NodeRef add(const NodeRef& a, const NodeRef& b) {
  return make(tk::add(a->value, b->value), {a, b},
              [](const NodeRef& self, const NodeRef& g, const std::vector<char>& need) {
                std::vector<NodeRef> gs(2);
                if (need[0]) gs[0] = sum_to(g, self->inputs[0]->value.shape());
                if (need[1]) gs[1] = sum_to(g, self->inputs[1]->value.shape());
                return gs;
              },
              "add");
}

NodeRef sub(const NodeRef& a, const NodeRef& b) {
  return make(tk::sub(a->value, b->value), {a, b},
              [](const NodeRef& self, const NodeRef& g, const std::vector<char>& need) {
                std::vector<NodeRef> gs(2);
                if (need[0]) gs[0] = sum_to(g, self->inputs[0]->value.shape());
                if (need[1]) gs[1] = neg(sum_to(g, self->inputs[1]->value.shape()));
                return gs;
              },
              "sub");
}

NodeRef mul(const NodeRef& a, const NodeRef& b) {
  return make(tk::mul(a->value, b->value), {a, b},
              [](const NodeRef& self, const NodeRef& g, const std::vector<char>& need) {
                const NodeRef& a = self->inputs[0];
                const NodeRef& b = self->inputs[1];
                std::vector<NodeRef> gs(2);
                if (need[0]) gs[0] = sum_to(mul(g, b), a->value.shape());
                if (need[1]) gs[1] = sum_to(mul(g, a), b->value.shape());
                return gs;
              },
              "mul");
}

NodeRef div(const NodeRef& a, const NodeRef& b) {
  return make(tk::div(a->value, b->value), {a, b},
              [](const NodeRef& self, const NodeRef& g, const std::vector<char>& need) {
                const NodeRef& a = self->inputs[0];
                const NodeRef& b = self->inputs[1];
                std::vector<NodeRef> gs(2);
                if (need[0]) gs[0] = sum_to(div(g, b), a->value.shape());
                if (need[1])
                  gs[1] = neg(sum_to(div(mul(g, a), mul(b, b)), b->value.shape()));
                return gs;
              },
              "div");
}

NodeRef neg(const NodeRef& a) {
  return make(tk::neg(a->value), {a},
              [](const NodeRef&, const NodeRef& g, const std::vector<char>&) {
                return std::vector<NodeRef>{neg(g)};
              },
              "neg");
}

NodeRef add_scalar(const NodeRef& a, double s) {
  return make(tk::add_scalar(a->value, s), {a},
              [](const NodeRef&, const NodeRef& g, const std::vector<char>&) {
                return std::vector<NodeRef>{g};
              },
              "add_scalar");
}

NodeRef mul_scalar(const NodeRef& a, double s) {
  return make(tk::mul_scalar(a->value, s), {a},
              [s](const NodeRef&, const NodeRef& g, const std::vector<char>&) {
                return std::vector<NodeRef>{mul_scalar(g, s)};
              },
              "mul_scalar");
}

NodeRef exp(const NodeRef& a) {
  return make(tk::exp(a->value), {a},
              [](const NodeRef& self, const NodeRef& g, const std::vector<char>&) {
                return std::vector<NodeRef>{mul(g, self)};
              },
              "exp");
}

NodeRef log(const NodeRef& a) {
  return make(tk::log(a->value), {a},
              [](const NodeRef& self, const NodeRef& g, const std::vector<char>&) {
                return std::vector<NodeRef>{div(g, self->inputs[0])};
              },
              "log");
}

NodeRef abs(const NodeRef& a) {
  return make(tk::abs(a->value), {a},
              [](const NodeRef& self, const NodeRef& g, const std::vector<char>&) {
                return std::vector<NodeRef>{mul(g, cst(tk::sign(self->inputs[0]->value)))};
              },
              "abs");
}

NodeRef relu(const NodeRef& a) {
  return make(tk::relu(a->value), {a},
              [](const NodeRef& self, const NodeRef& g, const std::vector<char>&) {
                return std::vector<NodeRef>{mul(g, cst(relu_mask(self->inputs[0]->value)))};
              },
              "relu");
}

NodeRef clamp(const NodeRef& a, double lo, double hi) {
  return make(tk::clamp(a->value, lo, hi), {a},
              [lo, hi](const NodeRef& self, const NodeRef& g, const std::vector<char>&) {
                return std::vector<NodeRef>{mul(g, cst(range_mask(self->inputs[0]->value, lo, hi)))};
              },
              "clamp");
}

NodeRef matmul(const NodeRef& a, const NodeRef& b) {
  return make(tk::matmul(a->value, b->value), {a, b},
              [](const NodeRef& self, const NodeRef& g, const std::vector<char>& need) {
                std::vector<NodeRef> gs(2);
                if (need[0]) gs[0] = matmul(g, transpose(self->inputs[1]));
                if (need[1]) gs[1] = matmul(transpose(self->inputs[0]), g);
                return gs;
              },
              "matmul");
}

NodeRef transpose(const NodeRef& a) {
  return make(tk::transpose(a->value), {a},
              [](const NodeRef&, const NodeRef& g, const std::vector<char>&) {
                return std::vector<NodeRef>{transpose(g)};
              },
              "transpose");
}

NodeRef reshape(const NodeRef& a, Shape shape) {
  return make(a->value.with_shape(std::move(shape)), {a},
              [](const NodeRef& self, const NodeRef& g, const std::vector<char>&) {
                return std::vector<NodeRef>{reshape(g, self->inputs[0]->value.shape())};
              },
              "reshape");
}

NodeRef conv2d(const NodeRef& x, const NodeRef& kernel, int64_t stride, int64_t pad) {
  return make(tk::conv2d(x->value, kernel->value, stride, pad), {x, kernel},
              [stride, pad](const NodeRef& self, const NodeRef& g, const std::vector<char>& need) {
                const NodeRef& x = self->inputs[0];
                const NodeRef& k = self->inputs[1];
                std::vector<NodeRef> gs(2);
                if (need[0]) gs[0] = conv2d_input_vjp(g, k, x->value.shape(), stride, pad);
                if (need[1]) gs[1] = conv2d_kernel_vjp(g, x, k->value.shape(), stride, pad);
                return gs;
              },
              "conv2d");
}

NodeRef conv2d_input_vjp(const NodeRef& gout, const NodeRef& kernel, Shape input_shape,
                         int64_t stride, int64_t pad) {
  Tensor v = tk::conv2d_grad_input(gout->value, kernel->value, input_shape, stride, pad);
  return make(std::move(v), {gout, kernel},
              [stride, pad](const NodeRef& self, const NodeRef& u, const std::vector<char>& need) {
                const NodeRef& gout = self->inputs[0];
                const NodeRef& k = self->inputs[1];
                std::vector<NodeRef> gs(2);
                if (need[0]) gs[0] = conv2d(u, k, stride, pad);
                if (need[1]) gs[1] = conv2d_kernel_vjp(gout, u, k->value.shape(), stride, pad);
                return gs;
              },
              "conv2d_input_vjp");
}

NodeRef conv2d_kernel_vjp(const NodeRef& gout, const NodeRef& x, Shape kernel_shape,
                          int64_t stride, int64_t pad) {
  Tensor v = tk::conv2d_grad_kernel(gout->value, x->value, kernel_shape, stride, pad);
  return make(std::move(v), {gout, x},
              [stride, pad](const NodeRef& self, const NodeRef& u, const std::vector<char>& need) {
                const NodeRef& gout = self->inputs[0];
                const NodeRef& x = self->inputs[1];
                std::vector<NodeRef> gs(2);
                if (need[0]) gs[0] = conv2d(x, u, stride, pad);
                if (need[1]) gs[1] = conv2d_input_vjp(gout, u, x->value.shape(), stride, pad);
                return gs;
              },
              "conv2d_kernel_vjp");
}

NodeRef avg_pool(const NodeRef& x, int64_t win) {
  return make(tk::avg_pool(x->value, win), {x},
              [win](const NodeRef&, const NodeRef& g, const std::vector<char>&) {
                return std::vector<NodeRef>{avg_pool_adjoint(g, win)};
              },
              "avg_pool");
}

NodeRef avg_pool_adjoint(const NodeRef& g, int64_t win) {
  return make(tk::avg_pool_adjoint(g->value, win), {g},
              [win](const NodeRef&, const NodeRef& u, const std::vector<char>&) {
                return std::vector<NodeRef>{avg_pool(u, win)};
              },
              "avg_pool_adjoint");
}

NodeRef sum_to(const NodeRef& a, Shape target) {
  if (a->value.shape() == target) return a;
  return make(tk::sum_to(a->value, target), {a},
              [](const NodeRef& self, const NodeRef& g, const std::vector<char>&) {
                return std::vector<NodeRef>{broadcast_to(g, self->inputs[0]->value.shape())};
              },
              "sum_to");
}

NodeRef broadcast_to(const NodeRef& a, Shape target) {
  if (a->value.shape() == target) return a;
  return make(tk::broadcast_to(a->value, target), {a},
              [](const NodeRef& self, const NodeRef& g, const std::vector<char>&) {
                return std::vector<NodeRef>{sum_to(g, self->inputs[0]->value.shape())};
              },
              "broadcast_to");
}

NodeRef sum_all(const NodeRef& a) { return sum_to(a, {1}); }

NodeRef mean_all(const NodeRef& a) {
  return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a->value.numel()));
}

NodeRef row_max(const NodeRef& a) {
  return make(tk::row_max(a->value), {a},
              [](const NodeRef& self, const NodeRef& g, const std::vector<char>&) {
                const Tensor& in = self->inputs[0]->value;
                NodeRef spread = broadcast_to(g, in.shape());
                return std::vector<NodeRef>{mul(spread, cst(argmax_mask(in)))};
              },
              "row_max");
}

NodeRef gather_rows(const NodeRef& a, std::vector<int64_t> cols) {
  Tensor v = tk::gather_rows(a->value, cols);
  const int64_t width = a->value.dim(1);
  return make(std::move(v), {a},
              [cols = std::move(cols), width](const NodeRef&, const NodeRef& g,
                                              const std::vector<char>&) {
                return std::vector<NodeRef>{scatter_rows(g, cols, width)};
              },
              "gather_rows");
}

NodeRef scatter_rows(const NodeRef& g, std::vector<int64_t> cols, int64_t width) {
  Tensor v = tk::scatter_rows(g->value, cols, width);
  return make(std::move(v), {g},
              [cols = std::move(cols)](const NodeRef&, const NodeRef& u, const std::vector<char>&) {
                return std::vector<NodeRef>{gather_rows(u, cols)};
              },
              "scatter_rows");
}

namespace {
// Rank-1 vectors are treated as a single row.
NodeRef as_rows(const NodeRef& a) {
  if (a->value.rank() == 1) return reshape(a, {1, a->value.dim(0)});
  if (a->value.rank() != 2)
    throw DimensionError("softmax: expected [D] or [N,D], got " + shape_str(a->value.shape()));
  return a;
}
}  // namespace

NodeRef softmax_rows(const NodeRef& a) {
  NodeRef rows = as_rows(a);
  const int64_t n = rows->value.dim(0);
  NodeRef z = sub(rows, cst(tk::row_max(rows->value)));  // shift is exact, detached
  NodeRef e = exp(z);
  NodeRef p = div(e, sum_to(e, {n, 1}));
  return rows == a ? p : reshape(p, a->value.shape());
}

NodeRef log_softmax_rows(const NodeRef& a) {
  NodeRef rows = as_rows(a);
  const int64_t n = rows->value.dim(0);
  NodeRef z = sub(rows, cst(tk::row_max(rows->value)));
  NodeRef lse = log(sum_to(exp(z), {n, 1}));
  NodeRef lp = sub(z, lse);
  return rows == a ? lp : reshape(lp, a->value.shape());
}

NodeRef cross_entropy_mean(const NodeRef& logits, const std::vector<int64_t>& labels) {
  NodeRef lp = log_softmax_rows(as_rows(logits));
  return neg(mean_all(gather_rows(lp, labels)));
}

std::vector<NodeRef> backward(const NodeRef& root, const std::vector<NodeRef>& targets,
                              const BackwardOptions& opts) {
  if (!root) throw ContractError("backward: null root");
  if (root->value.numel() != 1)
    throw ContractError("backward: root must be scalar, got shape " + shape_str(root->value.shape()));
  for (const auto& t : targets) {
    if (!t) throw ContractError("backward: null target");
    if (!t->requires_grad) throw ContractError("backward: target does not require grad");
  }

  // Post-order over the subgraph reachable from root (inputs before users).
  std::unordered_map<Node*, int> state;  // 0 new, 1 expanding, 2 done
  std::vector<NodeRef> topo;
  {
    std::vector<NodeRef> stack{root};
    while (!stack.empty()) {
      NodeRef n = stack.back();
      int& st = state[n.get()];
      if (st == 0) {
        st = 1;
        for (const auto& in : n->inputs)
          if (in && state[in.get()] == 0) stack.push_back(in);
      } else {
        stack.pop_back();
        if (st == 2) continue;
        st = 2;
        topo.push_back(std::move(n));
      }
    }
  }

  // A node needs processing iff some target lies below it.
  std::unordered_map<Node*, char> needs;
  for (const auto& t : targets) needs[t.get()] = 1;
  for (const auto& n : topo) {
    if (needs.count(n.get())) continue;
    for (const auto& in : n->inputs) {
      if (in && needs.count(in.get())) {
        needs[n.get()] = 1;
        break;
      }
    }
  }

  std::unordered_map<Node*, NodeRef> grads;
  grads[root.get()] = cst(Tensor::full({1}, 1.0, root->value.dtype()));
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    const NodeRef& n = *it;
    if (!n->requires_grad || !n->vjp) continue;
    if (!needs.count(n.get())) continue;
    auto git = grads.find(n.get());
    if (git == grads.end()) continue;
    std::vector<char> need(n->inputs.size(), 0);
    bool any = false;
    for (size_t i = 0; i < n->inputs.size(); ++i) {
      const auto& in = n->inputs[i];
      if (in && in->requires_grad && needs.count(in.get())) {
        need[i] = 1;
        any = true;
      }
    }
    if (!any) continue;
    auto gs = n->vjp(n, git->second, need);
    if (gs.size() != n->inputs.size())
      throw Error(std::string("backward: vjp of ") + n->op + " returned wrong arity");
    for (size_t i = 0; i < gs.size(); ++i) {
      if (!need[i] || !gs[i]) continue;
      if (gs[i]->value.shape() != n->inputs[i]->value.shape())
        throw Error(std::string("backward: vjp of ") + n->op + " produced shape " +
                    shape_str(gs[i]->value.shape()) + " for input of shape " +
                    shape_str(n->inputs[i]->value.shape()));
      auto acc = grads.find(n->inputs[i].get());
      if (acc == grads.end())
        grads[n->inputs[i].get()] = gs[i];
      else
        acc->second = add(acc->second, gs[i]);
    }
  }

  std::vector<NodeRef> out(targets.size());
  for (size_t i = 0; i < targets.size(); ++i) {
    auto git = grads.find(targets[i].get());
    if (git == grads.end()) continue;
    out[i] = opts.create_graph ? git->second : cst(git->second->value);
  }
  return out;
}

Tensor grad_or_zeros(const NodeRef& grad, const NodeRef& target) {
  if (grad) return grad->value;
  return Tensor::zeros(target->value.shape(), target->value.dtype());
}

}  // namespace safelens::ag
