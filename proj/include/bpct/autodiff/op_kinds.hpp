#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace bpct::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::string to_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

// Input shape rules are noted per kind. "Unbatched" conv inputs drop the
// leading batch axis.

struct Add {  // a, b same shape
  static constexpr std::string_view name = "Add";
};
struct Sub {  // a, b same shape
  static constexpr std::string_view name = "Sub";
};
struct MulScalar {
  static constexpr std::string_view name = "MulScalar";
  double factor = 1.0;
};
struct HadamardMul {  // a, b same shape
  static constexpr std::string_view name = "HadamardMul";
};
struct MatMul {  // (m,k) x (k,n)
  static constexpr std::string_view name = "MatMul";
};
struct BatchedMatMul {  // (B,m,k) x (B,k,n)
  static constexpr std::string_view name = "BatchedMatMul";
};
struct Conv2d {  // x (C,H,W) or (B,C,H,W); w (Co,Ci,kh,kw); optional bias (Co)
  static constexpr std::string_view name = "Conv2d";
  int stride = 1;
  int pad = 0;
};
struct Conv3d {  // x (C,D,H,W) or (B,C,D,H,W); w (Co,Ci,kd,kh,kw); optional bias (Co)
  static constexpr std::string_view name = "Conv3d";
  int stride = 1;
  int pad = 0;
};
// Half-pixel-centre interpolation with edge clamping over the last 2 (3) axes.
struct Upsample2dBilinear {
  static constexpr std::string_view name = "Upsample2dBilinear";
  int factor = 2;
};
struct Upsample3dTrilinear {
  static constexpr std::string_view name = "Upsample3dTrilinear";
  int factor = 2;
};
struct Relu {
  static constexpr std::string_view name = "Relu";
};
struct LeakyRelu {
  static constexpr std::string_view name = "LeakyRelu";
  double slope = 0.2;
};
struct Sigmoid {
  static constexpr std::string_view name = "Sigmoid";
};
struct Softmax {
  static constexpr std::string_view name = "Softmax";
  int axis = -1;
};
// Normalizes each slice along axis 0 over all remaining axes.
struct InstanceNorm {
  static constexpr std::string_view name = "InstanceNorm";
  double eps = 1e-5;
};
struct Concat {
  static constexpr std::string_view name = "Concat";
  int axis = 0;
};
struct Reshape {
  static constexpr std::string_view name = "Reshape";
  Shape shape;
};
struct Mean {  // -> scalar
  static constexpr std::string_view name = "Mean";
};
struct MseLoss {  // mean((a-b)^2) -> scalar
  static constexpr std::string_view name = "MseLoss";
};
struct Permute {  // out.shape[i] = in.shape[axes[i]]
  static constexpr std::string_view name = "Permute";
  std::vector<std::size_t> axes;
};
// Forward copies input 1 (z_q); backward routes the whole gradient to input 0 (z_e).
struct StraightThrough {
  static constexpr std::string_view name = "StraightThrough";
};
// User-supplied linear operator A with its adjoint. forward(x, y) writes y = A x;
// adjoint(g, r) writes r = A^T g.
struct LinearMap {
  static constexpr std::string_view name = "LinearMap";
  std::string label;
  Shape out_shape;
  std::function<void(std::span<const double>, std::span<double>)> forward;
  std::function<void(std::span<const double>, std::span<double>)> adjoint;
};

using Op = std::variant<Add, Sub, MulScalar, HadamardMul, MatMul, BatchedMatMul, Conv2d, Conv3d, Upsample2dBilinear,
                        Upsample3dTrilinear, Relu, LeakyRelu, Sigmoid, Softmax, InstanceNorm, Concat, Reshape, Mean,
                        MseLoss, Permute, StraightThrough, LinearMap>;

inline std::string_view op_name(const Op& op) {
  return std::visit([](const auto& o) -> std::string_view { return o.name; }, op);
}

}  // namespace bpct::ad
