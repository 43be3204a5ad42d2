#pragma once

#include <initializer_list>
#include <unordered_set>
#include <utility>
#include <vector>

#include "bpct/autodiff/kernels.hpp"
#include "bpct/autodiff/tensor.hpp"

namespace bpct::ad {

// Builds a new node from `inputs`; inputs are never mutated. Throws
// ShapeError naming the op on incompatible shapes.
inline Tensor apply(const Op& op, std::span<const Tensor> inputs) {
  auto node = std::make_shared<Node>();
  for (const auto& t : inputs) {
    if (!t) throw ShapeError(std::string(op_name(op)) + ": null input tensor");
  }
  std::visit([&](const auto& o) { detail::fwd(o, inputs, *node); }, op);
  if (precision() == Precision::F32) {
    for (auto& v : node->data) v = static_cast<double>(static_cast<float>(v));
  }
  bool needs_grad = false;
  for (const auto& t : inputs) needs_grad = needs_grad || t.requires_grad();
  node->requires_grad = needs_grad;
  // Constant subgraphs are collapsed into leaves so they do not pin their inputs.
  if (needs_grad) {
    node->op = op;
    node->inputs.reserve(inputs.size());
    for (const auto& t : inputs) node->inputs.push_back(t.node_ptr());
  }
  return Tensor(std::move(node));
}

inline Tensor apply(const Op& op, std::initializer_list<Tensor> inputs) {
  return ad::apply(op, std::span<const Tensor>(inputs.begin(), inputs.size()));
}

// Nodes reachable from root that require gradients, inputs before consumers.
inline std::vector<Node*> topo_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  if (!root->requires_grad) return order;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [n, child] = stack.back();
    if (child < n->inputs.size()) {
      Node* next = n->inputs[child++].get();
      if (next->requires_grad && visited.insert(next).second) stack.emplace_back(next, 0);
      continue;
    }
    order.push_back(n);
    stack.pop_back();
  }
  return order;
}

// Fills grad slots of every reachable leaf with d(loss)/d(leaf). Leaf grads
// accumulate across calls; interior grads are recomputed each call.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1) throw ShapeError("backward: loss must be scalar, got shape " + to_string(loss.shape()));
  Node* root = loss.node_ptr().get();
  const auto order = topo_order(root);
  if (order.empty()) return;
  for (Node* n : order) {
    if (n->op) n->grad.assign(n->data.size(), 0.0);
  }
  detail::grad_slot(*root)[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->op) continue;
    std::visit([&](const auto& o) { detail::bwd(o, *n); }, *n->op);
  }
}

// ---------------------------------------------------------------------------
// Convenience wrappers

inline Tensor add(const Tensor& a, const Tensor& b) { return ad::apply(Add{}, {a, b}); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return ad::apply(Sub{}, {a, b}); }
inline Tensor mul_scalar(const Tensor& a, double f) { return ad::apply(MulScalar{f}, {a}); }
inline Tensor hadamard(const Tensor& a, const Tensor& b) { return ad::apply(HadamardMul{}, {a, b}); }
inline Tensor matmul(const Tensor& a, const Tensor& b) { return ad::apply(MatMul{}, {a, b}); }
inline Tensor bmm(const Tensor& a, const Tensor& b) { return ad::apply(BatchedMatMul{}, {a, b}); }

inline Tensor conv2d(const Tensor& x, const Tensor& w, int stride = 1, int pad = 0) {
  return ad::apply(Conv2d{stride, pad}, {x, w});
}
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 1, int pad = 0) {
  return ad::apply(Conv2d{stride, pad}, {x, w, b});
}
inline Tensor conv3d(const Tensor& x, const Tensor& w, int stride = 1, int pad = 0) {
  return ad::apply(Conv3d{stride, pad}, {x, w});
}
inline Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 1, int pad = 0) {
  return ad::apply(Conv3d{stride, pad}, {x, w, b});
}

inline Tensor upsample2d(const Tensor& x, int factor) { return ad::apply(Upsample2dBilinear{factor}, {x}); }
inline Tensor upsample3d(const Tensor& x, int factor) { return ad::apply(Upsample3dTrilinear{factor}, {x}); }
inline Tensor relu(const Tensor& x) { return ad::apply(Relu{}, {x}); }
inline Tensor leaky_relu(const Tensor& x, double slope = 0.2) { return ad::apply(LeakyRelu{slope}, {x}); }
inline Tensor sigmoid(const Tensor& x) { return ad::apply(Sigmoid{}, {x}); }
inline Tensor softmax(const Tensor& x, int axis = -1) { return ad::apply(Softmax{axis}, {x}); }
inline Tensor instance_norm(const Tensor& x, double eps = 1e-5) { return ad::apply(InstanceNorm{eps}, {x}); }
inline Tensor concat(std::span<const Tensor> xs, int axis) { return ad::apply(Concat{axis}, xs); }
inline Tensor concat(std::initializer_list<Tensor> xs, int axis) {
  return ad::apply(Concat{axis}, std::span<const Tensor>(xs.begin(), xs.size()));
}
inline Tensor reshape(const Tensor& x, Shape shape) { return ad::apply(Reshape{std::move(shape)}, {x}); }
inline Tensor permute(const Tensor& x, std::vector<std::size_t> axes) { return ad::apply(Permute{std::move(axes)}, {x}); }
inline Tensor transpose(const Tensor& x) { return permute(x, {1, 0}); }
inline Tensor mean(const Tensor& x) { return ad::apply(Mean{}, {x}); }
inline Tensor mse_loss(const Tensor& a, const Tensor& b) { return ad::apply(MseLoss{}, {a, b}); }
inline Tensor straight_through_op(const Tensor& z_e, const Tensor& z_q) { return ad::apply(StraightThrough{}, {z_e, z_q}); }
inline Tensor linear_map(const Tensor& x, LinearMap op) { return ad::apply(op, {x}); }

// Multiplies every element by a scalar tensor (shape () or (1)) via MatMul.
inline Tensor scale_by(const Tensor& x, const Tensor& s) {
  if (s.numel() != 1) throw ShapeError("scale_by: scale must hold one element");
  const Shape original = x.shape();
  auto col = reshape(x, {x.numel(), 1});
  return reshape(matmul(col, reshape(s, {1, 1})), original);
}

// Repeats x (C, ...) along a new axis 1: (C, n, ...).
inline Tensor repeat_new_axis1(const Tensor& x, std::size_t n) {
  Shape s = x.shape();
  s.insert(s.begin() + 1, 1);
  auto one = reshape(x, s);
  std::vector<Tensor> copies(n, one);
  return concat(copies, 1);
}

}  // namespace bpct::ad
