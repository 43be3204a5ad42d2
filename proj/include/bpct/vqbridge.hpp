#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bpct/autodiff.hpp"
#include "bpct/nn.hpp"

namespace bpct::vq {

using ad::Shape;
using ad::Tensor;

struct Codebook {
  Tensor entries;                      // (K, D), trainable
  std::vector<std::uint64_t> usage;    // diagnostic hit counts

  std::size_t size() const { return entries ? entries.dim(0) : 0; }
  std::size_t dim() const { return entries ? entries.dim(1) : 0; }

  void record(std::span<const std::size_t> indices) {
    for (std::size_t i : indices) ++usage.at(i);
  }
};

inline void validate(const Codebook& book) {
  if (!book.entries || book.entries.rank() != 2) throw ValidationError("codebook: entries must be a K x D matrix");
  if (book.size() < 2) throw ValidationError("codebook: K must be at least 2");
  if (book.dim() < 1) throw ValidationError("codebook: D must be at least 1");
  if (book.usage.size() != book.size()) throw ValidationError("codebook: usage count length differs from K");
  for (double v : book.entries.data()) {
    if (!std::isfinite(v)) throw ValidationError("codebook: non-finite entry");
  }
}

inline Codebook make_codebook(std::size_t k, std::size_t d, Rng& rng, nn::ParamStore* store = nullptr) {
  std::vector<double> v(k * d);
  const double bound = 1.0 / static_cast<double>(k);
  for (auto& x : v) x = rng.uniform(-bound, bound);
  Codebook book;
  book.entries = store ? store->add("codebook", {k, d}, std::move(v)) : Tensor::parameter({k, d}, std::move(v));
  book.usage.assign(k, 0);
  validate(book);
  return book;
}

inline Codebook make_codebook(std::size_t k, std::size_t d, std::vector<double> values) {
  Codebook book;
  book.entries = Tensor::parameter({k, d}, std::move(values));
  book.usage.assign(k, 0);
  validate(book);
  return book;
}

struct QuantizeResult {
  Tensor z_q;  // selected entries, same shape as z_e; differentiable w.r.t. the codebook
  Tensor z_st;  // straight_through(z_e, z_q), the tensor consumers should use
  std::vector<std::size_t> indices;
  Tensor codebook_loss;
  Tensor commitment_loss;
  double perplexity = 1.0;
};

// Records the code assignment and the stop-gradient operands of each quantize
// call, then replays them. Under replay every stop-gradient input is a
// constant from the recorded pass, so finite differences of the replayed loss
// reproduce the straight-through gradient exactly.
struct QuantizeTrace {
  enum class Mode { Record, Replay } mode = Mode::Record;
  struct Entry {
    std::vector<std::size_t> indices;
    Tensor z_e;
    Tensor z_q;
  };
  std::vector<Entry> entries;
  std::size_t cursor = 0;

  void start_replay() {
    mode = Mode::Replay;
    cursor = 0;
  }
};

// Nearest entry by squared distance; ties go to the lowest index.
inline std::size_t nearest_code(std::span<const double> z, std::span<const double> entries, std::size_t d) {
  const std::size_t k = entries.size() / d;
  std::size_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < k; ++j) {
    double dist = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double diff = z[i] - entries[j * d + i];
      dist += diff * diff;
    }
    if (dist < best_dist) {
      best_dist = dist;
      best = j;
    }
  }
  return best;
}

// exp of the entropy of the empirical code histogram.
inline double perplexity(std::span<const std::size_t> indices, std::size_t k) {
  if (indices.empty()) return 1.0;
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i : indices) ++counts.at(i);
  double h = 0.0;
  const double n = static_cast<double>(indices.size());
  for (std::size_t c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return std::exp(h);
}

// Value of z_q, gradient of the identity onto z_e, nothing onto z_q.
inline Tensor straight_through(const Tensor& z_e, const Tensor& z_q) {
  if (z_e.shape() != z_q.shape()) {
    throw ShapeError("straight_through: shapes " + ad::to_string(z_e.shape()) + " and " + ad::to_string(z_q.shape()));
  }
  return ad::straight_through_op(z_e, z_q);
}

inline QuantizeResult quantize(const Tensor& z_e, const Codebook& book, double beta = 0.25,
                               QuantizeTrace* trace = nullptr) {
  if (book.size() == 0) throw ValidationError("quantize: empty codebook");
  const std::size_t d = book.dim(), k = book.size();
  if (z_e.rank() == 0 || z_e.shape().back() != d) {
    throw ShapeError("quantize: last dim of z_e " + ad::to_string(z_e.shape()) + " must equal codebook D=" +
                     std::to_string(d));
  }
  const std::size_t p = z_e.numel() / d;
  const bool replay = trace && trace->mode == QuantizeTrace::Mode::Replay;
  const QuantizeTrace::Entry* recorded = nullptr;
  QuantizeResult r;
  if (replay) {
    if (trace->cursor >= trace->entries.size()) throw ValidationError("quantize: trace has no entry to replay");
    recorded = &trace->entries[trace->cursor++];
    if (recorded->indices.size() != p) throw ShapeError("quantize: replayed index count does not match input");
    r.indices = recorded->indices;
  } else {
    r.indices.resize(p);
    const auto z = z_e.data();
    const auto e = book.entries.data();
    for (std::size_t i = 0; i < p; ++i) r.indices[i] = nearest_code(z.subspan(i * d, d), e, d);
  }
  std::vector<double> onehot(p * k, 0.0);
  for (std::size_t i = 0; i < p; ++i) onehot[i * k + r.indices[i]] = 1.0;
  const Tensor selected = ad::matmul(Tensor::constant({p, k}, std::move(onehot)), book.entries);
  r.z_q = ad::reshape(selected, z_e.shape());
  const Tensor ze_const = replay ? recorded->z_e : z_e.detach();
  const Tensor zq_const = replay ? recorded->z_q : r.z_q.detach();
  r.codebook_loss = ad::mse_loss(ze_const, r.z_q);
  r.commitment_loss = ad::mul_scalar(ad::mse_loss(z_e, zq_const), beta);
  r.z_st = replay ? ad::add(z_e, ad::sub(zq_const, ze_const)) : straight_through(z_e, r.z_q);
  r.perplexity = perplexity(r.indices, k);
  if (trace && !replay) trace->entries.push_back({r.indices, ze_const, zq_const});
  return r;
}

struct LiftTarget {
  std::size_t depth = 0;     // D3
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;  // C3
};

// (C,H,W) -> (C3,D3,H,W); element (c,y,x) lands at (c mod C3, c div C3, y, x).
inline Tensor lift_2d_to_3d(const Tensor& f2d, const LiftTarget& t) {
  if (f2d.rank() != 3) throw ShapeError("lift_2d_to_3d: input must be (C,H,W), got " + ad::to_string(f2d.shape()));
  if (f2d.dim(0) != t.depth * t.channels) {
    throw ShapeError("lift_2d_to_3d: " + std::to_string(f2d.dim(0)) + " channels cannot factor into D3=" +
                     std::to_string(t.depth) + " x C3=" + std::to_string(t.channels));
  }
  if (f2d.dim(1) != t.height || f2d.dim(2) != t.width) {
    throw ShapeError("lift_2d_to_3d: spatial dims " + ad::to_string(f2d.shape()) + " differ from target");
  }
  const Tensor split = ad::reshape(f2d, {t.depth, t.channels, t.height, t.width});
  return ad::permute(split, {1, 0, 2, 3});
}

inline Tensor unlift_3d_to_2d(const Tensor& f3d) {
  if (f3d.rank() != 4) throw ShapeError("unlift_3d_to_2d: input must be (C3,D3,H,W), got " + ad::to_string(f3d.shape()));
  const Tensor swapped = ad::permute(f3d, {1, 0, 2, 3});
  return ad::reshape(swapped, {f3d.dim(0) * f3d.dim(1), f3d.dim(2), f3d.dim(3)});
}

// Lateral features are lifted as (C, width, height, depth); this reorders them
// into volume coordinates (C, depth, height, width).
inline Tensor align_lateral(const Tensor& lat) {
  if (lat.rank() != 4) throw ShapeError("align_lateral: input must be rank 4, got " + ad::to_string(lat.shape()));
  return ad::permute(lat, {0, 3, 2, 1});
}

inline Tensor fuse_branches(const Tensor& front, const Tensor& lat) {
  if (front.shape() != lat.shape()) {
    throw ShapeError("fuse_branches: shapes " + ad::to_string(front.shape()) + " and " + ad::to_string(lat.shape()));
  }
  return ad::mul_scalar(ad::add(front, lat), 0.5);
}

}  // namespace bpct::vq
