#pragma once

#include <atomic>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "bpct/autodiff/op_kinds.hpp"
#include "bpct/error.hpp"

namespace bpct::ad {

// F64 is used for gradient checks. F32 rounds every op output to float
// precision; storage stays double either way.
enum class Precision { F64, F32 };

namespace detail {
inline std::atomic<Precision>& precision_slot() {
  static std::atomic<Precision> p{Precision::F64};
  return p;
}
}  // namespace detail

inline Precision precision() { return detail::precision_slot().load(); }
inline void set_precision(Precision p) { detail::precision_slot() = p; }

class PrecisionScope {
 public:
  explicit PrecisionScope(Precision p) : saved_(precision()) { set_precision(p); }
  ~PrecisionScope() { set_precision(saved_); }
  PrecisionScope(const PrecisionScope&) = delete;
  PrecisionScope& operator=(const PrecisionScope&) = delete;

 private:
  Precision saved_;
};

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::optional<Op> op;  // empty for leaves
  std::vector<std::shared_ptr<Node>> inputs;
  std::vector<double> saved;  // per-op backward context
};

// Shared handle onto a graph node. Copies alias the same node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor leaf(Shape shape, std::vector<double> data, bool requires_grad) {
    if (data.size() != ad::numel(shape)) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                       to_string(shape));
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }
  static Tensor constant(Shape shape, std::vector<double> data) { return leaf(std::move(shape), std::move(data), false); }
  static Tensor parameter(Shape shape, std::vector<double> data) { return leaf(std::move(shape), std::move(data), true); }
  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    const std::size_t n = ad::numel(shape);
    return leaf(std::move(shape), std::vector<double>(n, value), requires_grad);
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) { return full(std::move(shape), 0.0, requires_grad); }
  static Tensor scalar(double value, bool requires_grad = false) { return leaf({}, {value}, requires_grad); }

  explicit operator bool() const { return node_ != nullptr; }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  // Leaves only; used by optimizers and finite-difference probes.
  std::span<double> mutable_data() const {
    if (node_->op) throw Error("mutable_data on a non-leaf tensor");
    return node_->data;
  }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return !node_->op.has_value(); }

  void zero_grad() const {
    if (node_->requires_grad) node_->grad.assign(node_->data.size(), 0.0);
  }

  double item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return node_->data[0];
  }

  // Constant copy cut off from the graph.
  Tensor detach() const { return constant(shape(), node_->data); }

  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

}  // namespace bpct::ad
