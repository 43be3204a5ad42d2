#pragma once

#include <string>
#include <utility>
#include <vector>

#include "bpct/autodiff.hpp"
#include "bpct/nn.hpp"

namespace bpct::attention {

using ad::Shape;
using ad::Tensor;

// scales[s] has shape (C_s, H/2^s, W/2^s).
struct MultiScaleFeatures {
  std::vector<Tensor> scales;
};

// Upsamples every scale to the scale-0 grid, concatenates them (F_MS) and
// appends the upsampled last scale once more. Output channels: sum C_s + C_last.
inline Tensor multiscale_fuse(const MultiScaleFeatures& ms) {
  if (ms.scales.size() < 2) throw ShapeError("multiscale_fuse: at least 2 scales required");
  const Shape& base = ms.scales.front().shape();
  if (base.size() != 3) throw ShapeError("multiscale_fuse: scales must be (C,H,W), got " + ad::to_string(base));
  std::vector<Tensor> parts;
  for (std::size_t s = 0; s < ms.scales.size(); ++s) {
    const Tensor& t = ms.scales[s];
    if (t.rank() != 3) throw ShapeError("multiscale_fuse: scale " + std::to_string(s) + " is not (C,H,W)");
    const std::size_t f = std::size_t{1} << s;
    if (t.dim(1) * f != base[1] || t.dim(2) * f != base[2]) {
      throw ShapeError("multiscale_fuse: scale " + std::to_string(s) + " has shape " + ad::to_string(t.shape()) +
                       ", expected spatial " + std::to_string(base[1] / f) + "x" + std::to_string(base[2] / f));
    }
    parts.push_back(s == 0 ? t : ad::upsample2d(t, static_cast<int>(f)));
  }
  parts.push_back(parts.back());
  return ad::concat(parts, 0);
}

struct PamParams {
  nn::ConvLayer query;
  nn::ConvLayer key;
  nn::ConvLayer value;
  Tensor gamma;  // scalar, starts at 0
};

struct CamParams {
  Tensor gamma;  // scalar, starts at 0
};

inline PamParams make_pam(nn::ParamStore& store, const std::string& prefix, std::size_t channels,
                          std::size_t reduction, Rng& rng) {
  if (reduction == 0 || channels < reduction) {
    throw ShapeError("pam: channel count " + std::to_string(channels) + " below reduction " + std::to_string(reduction));
  }
  const std::size_t qk = channels / reduction;
  PamParams p;
  p.query = nn::conv2d_layer(store, prefix + ".query", channels, qk, 1, 1, 0, rng, 1.0);
  p.key = nn::conv2d_layer(store, prefix + ".key", channels, qk, 1, 1, 0, rng, 1.0);
  p.value = nn::conv2d_layer(store, prefix + ".value", channels, channels, 1, 1, 0, rng, 1.0);
  p.gamma = store.zeros(prefix + ".gamma", {1});
  return p;
}

inline CamParams make_cam(nn::ParamStore& store, const std::string& prefix) {
  return CamParams{store.zeros(prefix + ".gamma", {1})};
}

// S = softmax_rows(Q^T K) over the N = H*W positions; out = gamma * (V S^T) + F.
inline Tensor pam(const PamParams& p, const Tensor& f) {
  if (f.rank() != 3) throw ShapeError("pam: input must be (C,H,W), got " + ad::to_string(f.shape()));
  const std::size_t c = f.dim(0), n = f.dim(1) * f.dim(2);
  if (p.value.weight.dim(0) != c || c < 8) {
    throw ShapeError("pam: input has " + std::to_string(c) + " channels, block expects " +
                     std::to_string(p.value.weight.dim(0)) + " (minimum 8)");
  }
  const std::size_t qk = p.query.weight.dim(0);
  const Tensor q = ad::reshape(p.query(f), {qk, n});
  const Tensor k = ad::reshape(p.key(f), {qk, n});
  const Tensor v = ad::reshape(p.value(f), {c, n});
  const Tensor s = ad::softmax(ad::matmul(ad::transpose(q), k), -1);
  const Tensor attended = ad::reshape(ad::matmul(v, ad::transpose(s)), f.shape());
  return ad::add(ad::scale_by(attended, p.gamma), f);
}

// X = softmax_rows(F F^T) over channels; out = gamma * (X F) + F.
inline Tensor cam(const CamParams& p, const Tensor& f) {
  if (f.rank() != 3) throw ShapeError("cam: input must be (C,H,W), got " + ad::to_string(f.shape()));
  const std::size_t c = f.dim(0), n = f.dim(1) * f.dim(2);
  const Tensor flat = ad::reshape(f, {c, n});
  const Tensor x = ad::softmax(ad::matmul(flat, ad::transpose(flat)), -1);
  const Tensor attended = ad::reshape(ad::matmul(x, flat), f.shape());
  return ad::add(ad::scale_by(attended, p.gamma), f);
}

struct GuidedAttentionBlock {
  std::size_t channels = 0;
  PamParams pam1, pam2;
  CamParams cam1, cam2;
  // semantic encoder C -> C/2 -> C/4 (stride 2 each), decoder back up
  nn::ConvLayer enc1, enc2, dec1, dec2;
  double lambda_rec = 0.1;
  // Replaces the semantic autoencoder by the identity map.
  bool identity_autoencoder = false;
};

inline GuidedAttentionBlock make_guided_block(nn::ParamStore& store, const std::string& prefix, std::size_t channels,
                                              Rng& rng, std::size_t reduction = 8, double lambda_rec = 0.1) {
  if (channels < 8 || channels % 4 != 0) {
    throw ShapeError("guided block: channels must be a multiple of 4 and at least 8, got " + std::to_string(channels));
  }
  GuidedAttentionBlock b;
  b.channels = channels;
  b.lambda_rec = lambda_rec;
  b.pam1 = make_pam(store, prefix + ".pam1", channels, reduction, rng);
  b.cam1 = make_cam(store, prefix + ".cam1");
  b.enc1 = nn::conv2d_layer(store, prefix + ".sem_enc1", channels, channels / 2, 3, 2, 1, rng);
  b.enc2 = nn::conv2d_layer(store, prefix + ".sem_enc2", channels / 2, channels / 4, 3, 2, 1, rng);
  b.dec1 = nn::conv2d_layer(store, prefix + ".sem_dec1", channels / 4, channels / 2, 3, 1, 1, rng);
  b.dec2 = nn::conv2d_layer(store, prefix + ".sem_dec2", channels / 2, channels, 3, 1, 1, rng, 1.0);
  b.pam2 = make_pam(store, prefix + ".pam2", channels, reduction, rng);
  b.cam2 = make_cam(store, prefix + ".cam2");
  return b;
}

inline Tensor semantic_path(const GuidedAttentionBlock& b, const Tensor& f) {
  if (b.identity_autoencoder) return f;
  if (f.dim(1) % 4 != 0 || f.dim(2) % 4 != 0) {
    throw ShapeError("guided block: spatial dims must be multiples of 4, got " + ad::to_string(f.shape()));
  }
  const Tensor z = ad::leaky_relu(b.enc2(ad::leaky_relu(b.enc1(f))));
  const Tensor u = ad::leaky_relu(b.dec1(ad::upsample2d(z, 2)));
  return b.dec2(ad::upsample2d(u, 2));
}

// Position-wise combination of the attended map A and semantic map B, each
// (C,H,W): with a_p, b_p the C-vectors at position p,
//   M_p = (b_p b_p^T) a_p / C = b_p (b_p . a_p) / C.
inline Tensor combine_guided(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("combine_guided: shapes " + ad::to_string(a.shape()) + " and " + ad::to_string(b.shape()));
  }
  const std::size_t c = a.dim(0), n = a.dim(1) * a.dim(2);
  const Tensor ap = ad::permute(ad::reshape(a, {c, n}), {1, 0});
  const Tensor bp = ad::permute(ad::reshape(b, {c, n}), {1, 0});
  const Tensor dots = ad::bmm(ad::reshape(bp, {n, 1, c}), ad::reshape(ap, {n, c, 1}));  // (N,1,1)
  const Tensor m = ad::bmm(ad::reshape(bp, {n, c, 1}), dots);                             // (N,C,1)
  const Tensor back = ad::permute(ad::reshape(m, {n, c}), {1, 0});
  return ad::mul_scalar(ad::reshape(back, a.shape()), 1.0 / static_cast<double>(c));
}

struct GuidedOutput {
  Tensor f_sa;
  Tensor recon_loss;
};

inline GuidedOutput guided_forward(const GuidedAttentionBlock& b, const Tensor& f) {
  const Tensor path_a = cam(b.cam1, pam(b.pam1, f));
  const Tensor path_b = semantic_path(b, f);
  const Tensor m = combine_guided(path_a, path_b);
  GuidedOutput out;
  out.f_sa = cam(b.cam2, pam(b.pam2, m));
  out.recon_loss = ad::mul_scalar(ad::mse_loss(path_b, f), b.lambda_rec);
  return out;
}

}  // namespace bpct::attention
