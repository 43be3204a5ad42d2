#pragma once

// Forward and backward rules for every op kind. fwd() validates shapes,
// fills out.shape/out.data and any saved context; bwd() adds out.grad's
// contribution into each input that requires a gradient.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "bpct/autodiff/tensor.hpp"
#include "bpct/parallel.hpp"

namespace bpct::ad::detail {

using Inputs = std::span<const Tensor>;

[[noreturn]] inline void shape_fail(std::string_view op, const std::string& msg) {
  throw ShapeError(std::string(op) + ": " + msg);
}

inline void expect_arity(std::string_view op, Inputs in, std::size_t lo, std::size_t hi) {
  if (in.size() < lo || in.size() > hi) {
    shape_fail(op, "expected " + std::to_string(lo) + (lo == hi ? "" : ".." + std::to_string(hi)) + " inputs, got " +
                       std::to_string(in.size()));
  }
}

inline void expect_same(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_fail(op, "shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

// Gradient slot of an input, allocated on first use; empty when not needed.
inline std::span<double> grad_slot(Node& n) {
  if (!n.requires_grad) return {};
  if (n.grad.size() != n.data.size()) n.grad.assign(n.data.size(), 0.0);
  return n.grad;
}

inline std::size_t norm_axis(std::string_view op, int axis, std::size_t rank) {
  const long a = axis < 0 ? static_cast<long>(rank) + axis : axis;
  if (a < 0 || a >= static_cast<long>(rank)) shape_fail(op, "axis " + std::to_string(axis) + " out of range");
  return static_cast<std::size_t>(a);
}

// ---------------------------------------------------------------------------
// Elementwise

inline void fwd(const Add&, Inputs in, Node& out) {
  expect_arity(Add::name, in, 2, 2);
  expect_same(Add::name, in[0], in[1]);
  out.shape = in[0].shape();
  out.data.resize(in[0].numel());
  const auto a = in[0].data(), b = in[1].data();
  for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = a[i] + b[i];
}
inline void bwd(const Add&, Node& out) {
  for (auto& p : out.inputs) {
    auto g = grad_slot(*p);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
  }
}

inline void fwd(const Sub&, Inputs in, Node& out) {
  expect_arity(Sub::name, in, 2, 2);
  expect_same(Sub::name, in[0], in[1]);
  out.shape = in[0].shape();
  out.data.resize(in[0].numel());
  const auto a = in[0].data(), b = in[1].data();
  for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = a[i] - b[i];
}
inline void bwd(const Sub&, Node& out) {
  auto ga = grad_slot(*out.inputs[0]);
  for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += out.grad[i];
  auto gb = grad_slot(*out.inputs[1]);
  for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= out.grad[i];
}

inline void fwd(const MulScalar& op, Inputs in, Node& out) {
  expect_arity(MulScalar::name, in, 1, 1);
  out.shape = in[0].shape();
  out.data.resize(in[0].numel());
  const auto a = in[0].data();
  for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = a[i] * op.factor;
}
inline void bwd(const MulScalar& op, Node& out) {
  auto g = grad_slot(*out.inputs[0]);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * op.factor;
}

inline void fwd(const HadamardMul&, Inputs in, Node& out) {
  expect_arity(HadamardMul::name, in, 2, 2);
  expect_same(HadamardMul::name, in[0], in[1]);
  out.shape = in[0].shape();
  out.data.resize(in[0].numel());
  const auto a = in[0].data(), b = in[1].data();
  for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = a[i] * b[i];
}
inline void bwd(const HadamardMul&, Node& out) {
  const auto& a = out.inputs[0]->data;
  const auto& b = out.inputs[1]->data;
  auto ga = grad_slot(*out.inputs[0]);
  for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += out.grad[i] * b[i];
  auto gb = grad_slot(*out.inputs[1]);
  for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += out.grad[i] * a[i];
}

// Activation-mask tape. Recording appends the sign of every Relu/LeakyRelu
// input; replaying makes those ops take their branch from the tape instead of
// the sign, which freezes the piecewise-linear pattern for gradient checks.
struct MaskTape {
  enum class Mode { Record, Replay } mode = Mode::Record;
  std::vector<bool> signs;
  std::size_t cursor = 0;
};

inline MaskTape*& mask_tape() {
  thread_local MaskTape* tape = nullptr;
  return tape;
}

template <typename Fn>
void rectify(std::span<const double> a, std::vector<double>& out, Fn&& on_negative) {
  MaskTape* tape = mask_tape();
  if (tape && tape->mode == MaskTape::Mode::Replay) {
    if (tape->cursor + a.size() > tape->signs.size()) throw Error("activation mask tape exhausted");
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = tape->signs[tape->cursor + i] ? a[i] : on_negative(a[i]);
    tape->cursor += a.size();
    return;
  }
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : on_negative(a[i]);
  if (tape) {
    for (double v : a) tape->signs.push_back(v > 0.0);
  }
}

inline void fwd(const Relu&, Inputs in, Node& out) {
  expect_arity(Relu::name, in, 1, 1);
  out.shape = in[0].shape();
  out.data.resize(in[0].numel());
  const auto a = in[0].data();
  rectify(a, out.data, [](double) { return 0.0; });
}
inline void bwd(const Relu&, Node& out) {
  const auto& a = out.inputs[0]->data;
  auto g = grad_slot(*out.inputs[0]);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += a[i] > 0.0 ? out.grad[i] : 0.0;
}

inline void fwd(const LeakyRelu& op, Inputs in, Node& out) {
  expect_arity(LeakyRelu::name, in, 1, 1);
  out.shape = in[0].shape();
  out.data.resize(in[0].numel());
  const auto a = in[0].data();
  const double slope = op.slope;
  rectify(a, out.data, [slope](double v) { return slope * v; });
}
inline void bwd(const LeakyRelu& op, Node& out) {
  const auto& a = out.inputs[0]->data;
  auto g = grad_slot(*out.inputs[0]);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += a[i] > 0.0 ? out.grad[i] : op.slope * out.grad[i];
}

inline void fwd(const Sigmoid&, Inputs in, Node& out) {
  expect_arity(Sigmoid::name, in, 1, 1);
  out.shape = in[0].shape();
  out.data.resize(in[0].numel());
  const auto a = in[0].data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i];
    if (x >= 0.0) {
      out.data[i] = 1.0 / (1.0 + std::exp(-x));
    } else {
      const double e = std::exp(x);
      out.data[i] = e / (1.0 + e);
    }
  }
}
inline void bwd(const Sigmoid&, Node& out) {
  auto g = grad_slot(*out.inputs[0]);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double y = out.data[i];
    g[i] += out.grad[i] * y * (1.0 - y);
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

inline void fwd(const MatMul&, Inputs in, Node& out) {
  expect_arity(MatMul::name, in, 2, 2);
  const auto& a = in[0];
  const auto& b = in[1];
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    shape_fail(MatMul::name, "expected (m,k)x(k,n), got " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  out.shape = {m, n};
  out.data.assign(m * n, 0.0);
  const auto A = a.data(), B = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* brow = B.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
}

// gA += G B^T, gB += A^T G for one (m,k)x(k,n) block.
inline void matmul_backward_block(const double* A, const double* B, const double* G, double* gA, double* gB,
                                  std::size_t m, std::size_t k, std::size_t n) {
  if (gA != nullptr) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * B[p * n + j];
        gA[i * k + p] += acc;
      }
    }
  }
  if (gB != nullptr) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double av = A[i * k + p];
        for (std::size_t j = 0; j < n; ++j) gB[p * n + j] += av * G[i * n + j];
      }
    }
  }
}

inline void bwd(const MatMul&, Node& out) {
  Node& a = *out.inputs[0];
  Node& b = *out.inputs[1];
  auto ga = grad_slot(a);
  auto gb = grad_slot(b);
  matmul_backward_block(a.data.data(), b.data.data(), out.grad.data(), ga.empty() ? nullptr : ga.data(),
                        gb.empty() ? nullptr : gb.data(), a.shape[0], a.shape[1], b.shape[1]);
}

inline void fwd(const BatchedMatMul&, Inputs in, Node& out) {
  expect_arity(BatchedMatMul::name, in, 2, 2);
  const auto& a = in[0];
  const auto& b = in[1];
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    shape_fail(BatchedMatMul::name,
               "expected (B,m,k)x(B,k,n), got " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const std::size_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  out.shape = {bs, m, n};
  out.data.assign(bs * m * n, 0.0);
  const auto A = a.data(), B = b.data();
  for (std::size_t t = 0; t < bs; ++t) {
    const double* Ab = A.data() + t * m * k;
    const double* Bb = B.data() + t * k * n;
    double* O = out.data.data() + t * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double av = Ab[i * k + p];
        for (std::size_t j = 0; j < n; ++j) O[i * n + j] += av * Bb[p * n + j];
      }
    }
  }
}
inline void bwd(const BatchedMatMul&, Node& out) {
  Node& a = *out.inputs[0];
  Node& b = *out.inputs[1];
  auto ga = grad_slot(a);
  auto gb = grad_slot(b);
  const std::size_t bs = a.shape[0], m = a.shape[1], k = a.shape[2], n = b.shape[2];
  for (std::size_t t = 0; t < bs; ++t) {
    matmul_backward_block(a.data.data() + t * m * k, b.data.data() + t * k * n, out.grad.data() + t * m * n,
                          ga.empty() ? nullptr : ga.data() + t * m * k, gb.empty() ? nullptr : gb.data() + t * k * n,
                          m, k, n);
  }
}

// ---------------------------------------------------------------------------
// Convolution. 2D is run as 3D with a unit depth axis.

struct ConvGeom {
  std::size_t batch, cin, cout, D, H, W, kd, kh, kw, Do, Ho, Wo;
  std::size_t sd, s;  // depth stride, in-plane stride
  long pd, p;         // depth pad, in-plane pad
};

inline std::size_t conv_out(std::string_view op, std::size_t in, std::size_t k, long stride, long pad) {
  const long span = static_cast<long>(in) + 2 * pad - static_cast<long>(k);
  if (span < 0) shape_fail(op, "kernel larger than padded input");
  return static_cast<std::size_t>(span / stride + 1);
}

inline ConvGeom conv_geom(std::string_view op, Inputs in, int spatial, int stride, int pad, Shape& out_shape) {
  expect_arity(op, in, 2, 3);
  if (stride < 1 || pad < 0) shape_fail(op, "stride must be >= 1 and pad >= 0");
  const Tensor& x = in[0];
  const Tensor& w = in[1];
  const std::size_t unbatched = static_cast<std::size_t>(spatial) + 1;
  if (x.rank() != unbatched && x.rank() != unbatched + 1) {
    shape_fail(op, "input must have rank " + std::to_string(unbatched) + " or " + std::to_string(unbatched + 1) +
                       ", got " + to_string(x.shape()));
  }
  if (w.rank() != static_cast<std::size_t>(spatial) + 2) shape_fail(op, "bad weight shape " + to_string(w.shape()));
  const bool batched = x.rank() == unbatched + 1;
  const std::size_t off = batched ? 1 : 0;
  ConvGeom g{};
  g.batch = batched ? x.dim(0) : 1;
  g.cin = x.dim(off);
  g.cout = w.dim(0);
  if (w.dim(1) != g.cin) {
    shape_fail(op, "weight expects " + std::to_string(w.dim(1)) + " input channels, input has " + std::to_string(g.cin));
  }
  if (in.size() == 3 && in[2].shape() != Shape{g.cout}) shape_fail(op, "bias must have shape (Cout)");
  if (spatial == 3) {
    g.D = x.dim(off + 1);
    g.H = x.dim(off + 2);
    g.W = x.dim(off + 3);
    g.kd = w.dim(2);
    g.kh = w.dim(3);
    g.kw = w.dim(4);
    g.sd = static_cast<std::size_t>(stride);
    g.pd = pad;
  } else {
    g.D = 1;
    g.H = x.dim(off + 1);
    g.W = x.dim(off + 2);
    g.kd = 1;
    g.kh = w.dim(2);
    g.kw = w.dim(3);
    g.sd = 1;
    g.pd = 0;
  }
  g.s = static_cast<std::size_t>(stride);
  g.p = pad;
  g.Do = conv_out(op, g.D, g.kd, static_cast<long>(g.sd), g.pd);
  g.Ho = conv_out(op, g.H, g.kh, stride, pad);
  g.Wo = conv_out(op, g.W, g.kw, stride, pad);
  out_shape.clear();
  if (batched) out_shape.push_back(g.batch);
  out_shape.push_back(g.cout);
  if (spatial == 3) out_shape.push_back(g.Do);
  out_shape.push_back(g.Ho);
  out_shape.push_back(g.Wo);
  return g;
}

// Valid output index range [lo, hi) along one axis for kernel tap k.
inline void tap_range(std::size_t out_n, std::size_t in_n, std::size_t stride, long pad, std::size_t k,
                      std::size_t& lo, std::size_t& hi) {
  // need 0 <= o*stride - pad + k < in_n
  const long s = static_cast<long>(stride);
  const long off = static_cast<long>(k) - pad;
  long l = off >= 0 ? 0 : (-off + s - 1) / s;
  long h = (static_cast<long>(in_n) - 1 - off);
  h = h < 0 ? -1 : h / s;
  h = std::min(h, static_cast<long>(out_n) - 1);
  if (h < l) {
    lo = hi = 0;
    return;
  }
  lo = static_cast<std::size_t>(l);
  hi = static_cast<std::size_t>(h + 1);
}

inline void conv_forward(const ConvGeom& g, const double* x, const double* w, const double* bias, double* out) {
  const std::size_t in_plane = g.D * g.H * g.W;
  const std::size_t out_plane = g.Do * g.Ho * g.Wo;
  const std::size_t kvol = g.kd * g.kh * g.kw;
  const std::size_t pu = static_cast<std::size_t>(g.p);
  parallel_for(g.batch * g.cout, [&](std::size_t job) {
    const std::size_t b = job / g.cout, co = job % g.cout;
    double* o = out + (b * g.cout + co) * out_plane;
    std::fill(o, o + out_plane, bias ? bias[co] : 0.0);
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
      const double* xi = x + (b * g.cin + ci) * in_plane;
      const double* wk = w + (co * g.cin + ci) * kvol;
      for (std::size_t kz = 0; kz < g.kd; ++kz) {
        std::size_t z0, z1;
        tap_range(g.Do, g.D, g.sd, g.pd, kz, z0, z1);
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          std::size_t y0, y1;
          tap_range(g.Ho, g.H, g.s, g.p, ky, y0, y1);
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            std::size_t x0, x1;
            tap_range(g.Wo, g.W, g.s, g.p, kx, x0, x1);
            const double wv = wk[(kz * g.kh + ky) * g.kw + kx];
            for (std::size_t oz = z0; oz < z1; ++oz) {
              const std::size_t iz = oz * g.sd + kz - static_cast<std::size_t>(g.pd);
              for (std::size_t oy = y0; oy < y1; ++oy) {
                const std::size_t iy = oy * g.s + ky - static_cast<std::size_t>(g.p);
                const double* xrow = xi + (iz * g.H + iy) * g.W;
                double* orow = o + (oz * g.Ho + oy) * g.Wo;
                for (std::size_t ox = x0; ox < x1; ++ox) orow[ox] += wv * xrow[ox * g.s + kx - pu];
              }
            }
          }
        }
      }
    }
  });
}

inline void conv_backward(const ConvGeom& g, const double* x, const double* w, const double* gout, double* gx,
                          double* gw, double* gb) {
  const std::size_t in_plane = g.D * g.H * g.W;
  const std::size_t out_plane = g.Do * g.Ho * g.Wo;
  const std::size_t kvol = g.kd * g.kh * g.kw;
  const std::size_t pu = static_cast<std::size_t>(g.p);
  // Each job owns one slice of the gradient it writes, so the summation
  // order is independent of threading.
  if (gx != nullptr) {
    parallel_for(g.batch * g.cin, [&](std::size_t job) {
      const std::size_t b = job / g.cin, ci = job % g.cin;
      double* gxi = gx + (b * g.cin + ci) * in_plane;
      for (std::size_t co = 0; co < g.cout; ++co) {
        const double* go = gout + (b * g.cout + co) * out_plane;
        const double* wk = w + (co * g.cin + ci) * kvol;
        for (std::size_t kz = 0; kz < g.kd; ++kz) {
          std::size_t z0, z1;
          tap_range(g.Do, g.D, g.sd, g.pd, kz, z0, z1);
          for (std::size_t ky = 0; ky < g.kh; ++ky) {
            std::size_t y0, y1;
            tap_range(g.Ho, g.H, g.s, g.p, ky, y0, y1);
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
              std::size_t x0, x1;
              tap_range(g.Wo, g.W, g.s, g.p, kx, x0, x1);
              const double wv = wk[(kz * g.kh + ky) * g.kw + kx];
              for (std::size_t oz = z0; oz < z1; ++oz) {
                const std::size_t iz = oz * g.sd + kz - static_cast<std::size_t>(g.pd);
                for (std::size_t oy = y0; oy < y1; ++oy) {
                  const std::size_t iy = oy * g.s + ky - static_cast<std::size_t>(g.p);
                  double* xrow = gxi + (iz * g.H + iy) * g.W;
                  const double* orow = go + (oz * g.Ho + oy) * g.Wo;
                  for (std::size_t ox = x0; ox < x1; ++ox) xrow[ox * g.s + kx - pu] += wv * orow[ox];
                }
              }
            }
          }
        }
      }
    });
  }
  if (gw != nullptr || gb != nullptr) {
    parallel_for(g.cout, [&](std::size_t co) {
      if (gb != nullptr) {
        double acc = 0.0;
        for (std::size_t b = 0; b < g.batch; ++b) {
          const double* go = gout + (b * g.cout + co) * out_plane;
          for (std::size_t i = 0; i < out_plane; ++i) acc += go[i];
        }
        gb[co] += acc;
      }
      if (gw == nullptr) return;
      for (std::size_t ci = 0; ci < g.cin; ++ci) {
        double* gwk = gw + (co * g.cin + ci) * kvol;
        for (std::size_t kz = 0; kz < g.kd; ++kz) {
          std::size_t z0, z1;
          tap_range(g.Do, g.D, g.sd, g.pd, kz, z0, z1);
          for (std::size_t ky = 0; ky < g.kh; ++ky) {
            std::size_t y0, y1;
            tap_range(g.Ho, g.H, g.s, g.p, ky, y0, y1);
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
              std::size_t x0, x1;
              tap_range(g.Wo, g.W, g.s, g.p, kx, x0, x1);
              double acc = 0.0;
              for (std::size_t b = 0; b < g.batch; ++b) {
                const double* xi = x + (b * g.cin + ci) * in_plane;
                const double* go = gout + (b * g.cout + co) * out_plane;
                for (std::size_t oz = z0; oz < z1; ++oz) {
                  const std::size_t iz = oz * g.sd + kz - static_cast<std::size_t>(g.pd);
                  for (std::size_t oy = y0; oy < y1; ++oy) {
                    const std::size_t iy = oy * g.s + ky - static_cast<std::size_t>(g.p);
                    const double* xrow = xi + (iz * g.H + iy) * g.W;
                    const double* orow = go + (oz * g.Ho + oy) * g.Wo;
                    for (std::size_t ox = x0; ox < x1; ++ox) acc += xrow[ox * g.s + kx - pu] * orow[ox];
                  }
                }
              }
              gwk[(kz * g.kh + ky) * g.kw + kx] += acc;
            }
          }
        }
      }
    });
  }
}

template <typename ConvOp>
void conv_fwd(const ConvOp& op, int spatial, Inputs in, Node& out) {
  const ConvGeom g = conv_geom(ConvOp::name, in, spatial, op.stride, op.pad, out.shape);
  out.data.assign(numel(out.shape), 0.0);
  conv_forward(g, in[0].data().data(), in[1].data().data(), in.size() == 3 ? in[2].data().data() : nullptr,
               out.data.data());
}

template <typename ConvOp>
void conv_bwd(const ConvOp& op, int spatial, Node& out) {
  std::vector<Tensor> in;
  for (auto& p : out.inputs) in.emplace_back(p);
  Shape scratch;
  const ConvGeom g = conv_geom(ConvOp::name, in, spatial, op.stride, op.pad, scratch);
  auto gx = grad_slot(*out.inputs[0]);
  auto gw = grad_slot(*out.inputs[1]);
  std::span<double> gb;
  if (out.inputs.size() == 3) gb = grad_slot(*out.inputs[2]);
  conv_backward(g, out.inputs[0]->data.data(), out.inputs[1]->data.data(), out.grad.data(),
                gx.empty() ? nullptr : gx.data(), gw.empty() ? nullptr : gw.data(), gb.empty() ? nullptr : gb.data());
}

inline void fwd(const Conv2d& op, Inputs in, Node& out) { conv_fwd(op, 2, in, out); }
inline void bwd(const Conv2d& op, Node& out) { conv_bwd(op, 2, out); }
inline void fwd(const Conv3d& op, Inputs in, Node& out) { conv_fwd(op, 3, in, out); }
inline void bwd(const Conv3d& op, Node& out) { conv_bwd(op, 3, out); }

// ---------------------------------------------------------------------------
// Interpolating upsample, half-pixel centres, clamped at edges.

struct InterpTap {
  std::size_t i0, i1;
  double w0, w1;
};

inline std::vector<InterpTap> interp_taps(std::size_t in_n, int factor) {
  const std::size_t out_n = in_n * static_cast<std::size_t>(factor);
  std::vector<InterpTap> taps(out_n);
  for (std::size_t o = 0; o < out_n; ++o) {
    double src = (static_cast<double>(o) + 0.5) / factor - 0.5;
    if (src < 0.0) src = 0.0;
    std::size_t i0 = static_cast<std::size_t>(src);
    if (i0 >= in_n - 1) {
      taps[o] = {in_n - 1, in_n - 1, 1.0, 0.0};
      continue;
    }
    const double t = src - static_cast<double>(i0);
    taps[o] = {i0, i0 + 1, 1.0 - t, t};
  }
  return taps;
}

struct UpsampleGeom {
  std::size_t outer, D, H, W;
  std::vector<InterpTap> tz, ty, tx;
};

inline UpsampleGeom upsample_geom(std::string_view op, const Tensor& x, int spatial, int factor, Shape& out_shape) {
  if (factor < 1) shape_fail(op, "factor must be >= 1");
  if (x.rank() < static_cast<std::size_t>(spatial)) shape_fail(op, "input rank too small: " + to_string(x.shape()));
  UpsampleGeom g;
  const std::size_t r = x.rank();
  g.W = x.dim(r - 1);
  g.H = x.dim(r - 2);
  g.D = spatial == 3 ? x.dim(r - 3) : 1;
  g.outer = x.numel() / (g.D * g.H * g.W);
  g.tx = interp_taps(g.W, factor);
  g.ty = interp_taps(g.H, factor);
  g.tz = spatial == 3 ? interp_taps(g.D, factor) : std::vector<InterpTap>{{0, 0, 1.0, 0.0}};
  out_shape = x.shape();
  for (std::size_t i = r - static_cast<std::size_t>(spatial); i < r; ++i) out_shape[i] *= static_cast<std::size_t>(factor);
  return g;
}

template <typename Op>
void upsample_fwd(const Op& op, int spatial, Inputs in, Node& out) {
  expect_arity(Op::name, in, 1, 1);
  const UpsampleGeom g = upsample_geom(Op::name, in[0], spatial, op.factor, out.shape);
  out.data.resize(numel(out.shape));
  const auto x = in[0].data();
  const std::size_t Do = g.tz.size(), Ho = g.ty.size(), Wo = g.tx.size();
  std::size_t idx = 0;
  for (std::size_t m = 0; m < g.outer; ++m) {
    const double* src = x.data() + m * g.D * g.H * g.W;
    for (std::size_t oz = 0; oz < Do; ++oz) {
      const auto& az = g.tz[oz];
      for (std::size_t oy = 0; oy < Ho; ++oy) {
        const auto& ay = g.ty[oy];
        const double* r00 = src + (az.i0 * g.H + ay.i0) * g.W;
        const double* r01 = src + (az.i0 * g.H + ay.i1) * g.W;
        const double* r10 = src + (az.i1 * g.H + ay.i0) * g.W;
        const double* r11 = src + (az.i1 * g.H + ay.i1) * g.W;
        for (std::size_t ox = 0; ox < Wo; ++ox, ++idx) {
          const auto& ax = g.tx[ox];
          const double v0 = ay.w0 * (ax.w0 * r00[ax.i0] + ax.w1 * r00[ax.i1]) +
                            ay.w1 * (ax.w0 * r01[ax.i0] + ax.w1 * r01[ax.i1]);
          const double v1 = ay.w0 * (ax.w0 * r10[ax.i0] + ax.w1 * r10[ax.i1]) +
                            ay.w1 * (ax.w0 * r11[ax.i0] + ax.w1 * r11[ax.i1]);
          out.data[idx] = az.w0 * v0 + az.w1 * v1;
        }
      }
    }
  }
}

template <typename Op>
void upsample_bwd(const Op& op, int spatial, Node& out) {
  Node& in = *out.inputs[0];
  auto gx = grad_slot(in);
  if (gx.empty()) return;
  Shape scratch;
  const UpsampleGeom g = upsample_geom(Op::name, Tensor(out.inputs[0]), spatial, op.factor, scratch);
  const std::size_t Do = g.tz.size(), Ho = g.ty.size(), Wo = g.tx.size();
  std::size_t idx = 0;
  for (std::size_t m = 0; m < g.outer; ++m) {
    double* dst = gx.data() + m * g.D * g.H * g.W;
    for (std::size_t oz = 0; oz < Do; ++oz) {
      const auto& az = g.tz[oz];
      for (std::size_t oy = 0; oy < Ho; ++oy) {
        const auto& ay = g.ty[oy];
        double* r00 = dst + (az.i0 * g.H + ay.i0) * g.W;
        double* r01 = dst + (az.i0 * g.H + ay.i1) * g.W;
        double* r10 = dst + (az.i1 * g.H + ay.i0) * g.W;
        double* r11 = dst + (az.i1 * g.H + ay.i1) * g.W;
        for (std::size_t ox = 0; ox < Wo; ++ox, ++idx) {
          const auto& ax = g.tx[ox];
          const double go = out.grad[idx];
          const double g0 = az.w0 * go, g1 = az.w1 * go;
          r00[ax.i0] += g0 * ay.w0 * ax.w0;
          r00[ax.i1] += g0 * ay.w0 * ax.w1;
          r01[ax.i0] += g0 * ay.w1 * ax.w0;
          r01[ax.i1] += g0 * ay.w1 * ax.w1;
          r10[ax.i0] += g1 * ay.w0 * ax.w0;
          r10[ax.i1] += g1 * ay.w0 * ax.w1;
          r11[ax.i0] += g1 * ay.w1 * ax.w0;
          r11[ax.i1] += g1 * ay.w1 * ax.w1;
        }
      }
    }
  }
}

inline void fwd(const Upsample2dBilinear& op, Inputs in, Node& out) { upsample_fwd(op, 2, in, out); }
inline void bwd(const Upsample2dBilinear& op, Node& out) { upsample_bwd(op, 2, out); }
inline void fwd(const Upsample3dTrilinear& op, Inputs in, Node& out) { upsample_fwd(op, 3, in, out); }
inline void bwd(const Upsample3dTrilinear& op, Node& out) { upsample_bwd(op, 3, out); }

// ---------------------------------------------------------------------------
// Softmax / InstanceNorm

struct AxisSplit {
  std::size_t outer, len, inner;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

inline void fwd(const Softmax& op, Inputs in, Node& out) {
  expect_arity(Softmax::name, in, 1, 1);
  if (in[0].rank() == 0) shape_fail(Softmax::name, "scalar input");
  const std::size_t axis = norm_axis(Softmax::name, op.axis, in[0].rank());
  const AxisSplit s = split_axis(in[0].shape(), axis);
  out.shape = in[0].shape();
  out.data.resize(in[0].numel());
  const auto x = in[0].data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      double mx = x[base];
      for (std::size_t k = 1; k < s.len; ++k) mx = std::max(mx, x[base + k * s.inner]);
      double sum = 0.0;
      for (std::size_t k = 0; k < s.len; ++k) {
        const double e = std::exp(x[base + k * s.inner] - mx);
        out.data[base + k * s.inner] = e;
        sum += e;
      }
      for (std::size_t k = 0; k < s.len; ++k) out.data[base + k * s.inner] /= sum;
    }
  }
}
inline void bwd(const Softmax& op, Node& out) {
  auto gx = grad_slot(*out.inputs[0]);
  if (gx.empty()) return;
  const std::size_t axis = norm_axis(Softmax::name, op.axis, out.shape.size());
  const AxisSplit s = split_axis(out.shape, axis);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      double dot = 0.0;
      for (std::size_t k = 0; k < s.len; ++k) dot += out.grad[base + k * s.inner] * out.data[base + k * s.inner];
      for (std::size_t k = 0; k < s.len; ++k) {
        const std::size_t j = base + k * s.inner;
        gx[j] += out.data[j] * (out.grad[j] - dot);
      }
    }
  }
}

inline void fwd(const InstanceNorm& op, Inputs in, Node& out) {
  expect_arity(InstanceNorm::name, in, 1, 1);
  if (in[0].rank() < 2) shape_fail(InstanceNorm::name, "input needs a channel axis and at least one more axis");
  const std::size_t C = in[0].dim(0);
  const std::size_t M = in[0].numel() / C;
  out.shape = in[0].shape();
  out.data.resize(in[0].numel());
  out.saved.resize(C);
  const auto x = in[0].data();
  for (std::size_t c = 0; c < C; ++c) {
    const double* xc = x.data() + c * M;
    double mean = 0.0;
    for (std::size_t i = 0; i < M; ++i) mean += xc[i];
    mean /= static_cast<double>(M);
    double var = 0.0;
    for (std::size_t i = 0; i < M; ++i) var += (xc[i] - mean) * (xc[i] - mean);
    var /= static_cast<double>(M);
    const double inv = 1.0 / std::sqrt(var + op.eps);
    out.saved[c] = inv;
    double* yc = out.data.data() + c * M;
    for (std::size_t i = 0; i < M; ++i) yc[i] = (xc[i] - mean) * inv;
  }
}
inline void bwd(const InstanceNorm&, Node& out) {
  auto gx = grad_slot(*out.inputs[0]);
  if (gx.empty()) return;
  const std::size_t C = out.shape[0];
  const std::size_t M = out.data.size() / C;
  for (std::size_t c = 0; c < C; ++c) {
    const double* y = out.data.data() + c * M;
    const double* g = out.grad.data() + c * M;
    double mg = 0.0, mgy = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
      mg += g[i];
      mgy += g[i] * y[i];
    }
    mg /= static_cast<double>(M);
    mgy /= static_cast<double>(M);
    const double inv = out.saved[c];
    double* gc = gx.data() + c * M;
    for (std::size_t i = 0; i < M; ++i) gc[i] += inv * (g[i] - mg - y[i] * mgy);
  }
}

// ---------------------------------------------------------------------------
// Data movement

inline void fwd(const Concat& op, Inputs in, Node& out) {
  if (in.empty()) shape_fail(Concat::name, "no inputs");
  const Shape& first = in[0].shape();
  if (first.empty()) shape_fail(Concat::name, "scalar input");
  const std::size_t axis = norm_axis(Concat::name, op.axis, first.size());
  std::size_t total = 0;
  for (const auto& t : in) {
    if (t.rank() != first.size()) shape_fail(Concat::name, "rank mismatch " + to_string(t.shape()));
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (i != axis && t.dim(i) != first[i]) {
        shape_fail(Concat::name, "non-concat dims differ: " + to_string(first) + " vs " + to_string(t.shape()));
      }
    }
    total += t.dim(axis);
  }
  out.shape = first;
  out.shape[axis] = total;
  out.data.resize(numel(out.shape));
  const AxisSplit s = split_axis(out.shape, axis);
  std::size_t offset = 0;
  for (const auto& t : in) {
    const std::size_t chunk = t.dim(axis) * s.inner;
    const auto src = t.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(src.begin() + static_cast<long>(o * chunk), chunk,
                  out.data.begin() + static_cast<long>(o * s.len * s.inner + offset));
    }
    offset += chunk;
  }
}
inline void bwd(const Concat& op, Node& out) {
  const std::size_t axis = norm_axis(Concat::name, op.axis, out.shape.size());
  const AxisSplit s = split_axis(out.shape, axis);
  std::size_t offset = 0;
  for (auto& p : out.inputs) {
    const std::size_t chunk = p->shape[axis] * s.inner;
    auto g = grad_slot(*p);
    if (!g.empty()) {
      for (std::size_t o = 0; o < s.outer; ++o) {
        const double* src = out.grad.data() + o * s.len * s.inner + offset;
        double* dst = g.data() + o * chunk;
        for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
      }
    }
    offset += chunk;
  }
}

inline void fwd(const Reshape& op, Inputs in, Node& out) {
  expect_arity(Reshape::name, in, 1, 1);
  if (numel(op.shape) != in[0].numel()) {
    shape_fail(Reshape::name, "cannot reshape " + to_string(in[0].shape()) + " to " + to_string(op.shape));
  }
  out.shape = op.shape;
  out.data.assign(in[0].data().begin(), in[0].data().end());
}
inline void bwd(const Reshape&, Node& out) {
  auto g = grad_slot(*out.inputs[0]);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
}

// For each output linear index, the matching input linear index.
inline std::vector<std::size_t> permute_map(const Shape& in_shape, const std::vector<std::size_t>& axes) {
  const std::size_t r = in_shape.size();
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in_shape[i];
  Shape out_shape(r);
  std::vector<std::size_t> stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in_shape[axes[i]];
    stride[i] = in_stride[axes[i]];
  }
  const std::size_t n = numel(in_shape);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < n; ++o) {
    map[o] = src;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      src += stride[d];
      if (idx[d] < out_shape[d]) break;
      src -= stride[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  return map;
}

inline void fwd(const Permute& op, Inputs in, Node& out) {
  expect_arity(Permute::name, in, 1, 1);
  const std::size_t r = in[0].rank();
  std::vector<bool> seen(r, false);
  if (op.axes.size() != r) shape_fail(Permute::name, "axes length does not match rank " + std::to_string(r));
  for (std::size_t a : op.axes) {
    if (a >= r || seen[a]) shape_fail(Permute::name, "axes are not a permutation");
    seen[a] = true;
  }
  out.shape.resize(r);
  for (std::size_t i = 0; i < r; ++i) out.shape[i] = in[0].dim(op.axes[i]);
  const auto map = permute_map(in[0].shape(), op.axes);
  const auto x = in[0].data();
  out.data.resize(map.size());
  for (std::size_t o = 0; o < map.size(); ++o) out.data[o] = x[map[o]];
}
inline void bwd(const Permute& op, Node& out) {
  auto g = grad_slot(*out.inputs[0]);
  if (g.empty()) return;
  const auto map = permute_map(out.inputs[0]->shape, op.axes);
  for (std::size_t o = 0; o < map.size(); ++o) g[map[o]] += out.grad[o];
}

// ---------------------------------------------------------------------------
// Reductions and losses

inline void fwd(const Mean&, Inputs in, Node& out) {
  expect_arity(Mean::name, in, 1, 1);
  if (in[0].numel() == 0) shape_fail(Mean::name, "empty input");
  const auto x = in[0].data();
  out.shape = {};
  out.data = {std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size())};
}
inline void bwd(const Mean&, Node& out) {
  auto g = grad_slot(*out.inputs[0]);
  const double v = out.grad[0] / static_cast<double>(g.size());
  for (auto& gi : g) gi += v;
}

inline void fwd(const MseLoss&, Inputs in, Node& out) {
  expect_arity(MseLoss::name, in, 2, 2);
  expect_same(MseLoss::name, in[0], in[1]);
  if (in[0].numel() == 0) shape_fail(MseLoss::name, "empty input");
  const auto a = in[0].data(), b = in[1].data();
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += (a[i] - b[i]) * (a[i] - b[i]);
  out.shape = {};
  out.data = {sum / static_cast<double>(a.size())};
}
inline void bwd(const MseLoss&, Node& out) {
  const auto& a = out.inputs[0]->data;
  const auto& b = out.inputs[1]->data;
  const double scale = 2.0 * out.grad[0] / static_cast<double>(a.size());
  auto ga = grad_slot(*out.inputs[0]);
  for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += scale * (a[i] - b[i]);
  auto gb = grad_slot(*out.inputs[1]);
  for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= scale * (a[i] - b[i]);
}

inline void fwd(const StraightThrough&, Inputs in, Node& out) {
  expect_arity(StraightThrough::name, in, 2, 2);
  expect_same(StraightThrough::name, in[0], in[1]);
  out.shape = in[1].shape();
  out.data.assign(in[1].data().begin(), in[1].data().end());
}
inline void bwd(const StraightThrough&, Node& out) {
  auto g = grad_slot(*out.inputs[0]);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
}

inline void fwd(const LinearMap& op, Inputs in, Node& out) {
  expect_arity(LinearMap::name, in, 1, 1);
  if (!op.forward || !op.adjoint) shape_fail(LinearMap::name, "missing forward or adjoint");
  out.shape = op.out_shape;
  out.data.assign(numel(op.out_shape), 0.0);
  op.forward(in[0].data(), out.data);
}
inline void bwd(const LinearMap& op, Node& out) {
  auto g = grad_slot(*out.inputs[0]);
  if (g.empty()) return;
  std::vector<double> tmp(g.size(), 0.0);
  op.adjoint(out.grad, tmp);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += tmp[i];
}

}  // namespace bpct::ad::detail
