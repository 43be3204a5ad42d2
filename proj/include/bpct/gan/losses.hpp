#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "bpct/autodiff.hpp"
#include "bpct/nn.hpp"
#include "bpct/projector.hpp"

namespace bpct::gan {

using ad::Shape;
using ad::Tensor;

// LSGAN with targets a = 0 (fake), b = 1 (real), c = 1 (generator).
inline Tensor lsgan_d_loss(const Tensor& real_scores, const Tensor& fake_scores) {
  if (real_scores.numel() == 0 || fake_scores.numel() == 0) throw ShapeError("lsgan_d_loss: empty score tensor");
  const Tensor real_term = ad::mse_loss(real_scores, Tensor::full(real_scores.shape(), 1.0));
  const Tensor fake_term = ad::mse_loss(fake_scores, Tensor::zeros(fake_scores.shape()));
  return ad::mul_scalar(ad::add(real_term, fake_term), 0.5);
}

inline Tensor lsgan_g_loss(const Tensor& fake_scores) {
  if (fake_scores.numel() == 0) throw ShapeError("lsgan_g_loss: empty score tensor");
  return ad::mul_scalar(ad::mse_loss(fake_scores, Tensor::full(fake_scores.shape(), 1.0)), 0.5);
}

inline Tensor reconstruction_loss(const Tensor& pred, const Tensor& gt) { return ad::mse_loss(pred, gt); }

// Volume tensors are (1, D, H, W) or (D, H, W).
inline Dims3 volume_dims(const Tensor& t) {
  const auto& s = t.shape();
  if (s.size() == 4 && s[0] == 1) return {s[1], s[2], s[3]};
  if (s.size() == 3) return {s[0], s[1], s[2]};
  throw ShapeError("expected a (1,D,H,W) or (D,H,W) volume, got " + ad::to_string(s));
}

// Differentiable mean-intensity projection; the backward pass is project_adjoint.
inline Tensor project_tensor(const Tensor& vol, View view) {
  const Dims3 dims = volume_dims(vol);
  const Dims2 face = face_dims(dims, view);
  ad::LinearMap op;
  op.label = std::string("project_") + to_string(view);
  op.out_shape = {face.height, face.width};
  op.forward = [dims, view](std::span<const double> x, std::span<double> y) {
    project_mean<double, double>(x, dims, view, y);
  };
  op.adjoint = [dims, view](std::span<const double> g, std::span<double> r) {
    const auto back = project_adjoint<double>(g, view, dims);
    std::copy(back.begin(), back.end(), r.begin());
  };
  return ad::linear_map(vol, std::move(op));
}

inline Tensor projection_loss(const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape()) {
    throw ShapeError("projection_loss: shapes " + ad::to_string(pred.shape()) + " and " + ad::to_string(gt.shape()));
  }
  const Tensor front = ad::mse_loss(project_tensor(pred, View::Frontal), project_tensor(gt, View::Frontal));
  const Tensor lat = ad::mse_loss(project_tensor(pred, View::Lateral), project_tensor(gt, View::Lateral));
  return ad::mul_scalar(ad::add(front, lat), 0.5);
}

// Frozen random feature extractor for the perceptual loss: conv3x3(1->8) ReLU,
// conv3x3(8->8) ReLU, applied to every axial slice (fixed height index).
class FeatNet {
 public:
  explicit FeatNet(std::uint64_t seed, std::size_t width = 8) {
    Rng rng(seed);
    auto frozen = [&rng](Shape shape, std::size_t fan_in) {
      std::vector<double> v(ad::numel(shape));
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (auto& x : v) x = rng.uniform(-bound, bound);
      return Tensor::constant(std::move(shape), std::move(v));
    };
    w1_ = frozen({width, 1, 3, 3}, 9);
    w2_ = frozen({width, width, 3, 3}, 9 * width);
  }

  // vol (1, D, H, W) -> activations (H, width, D, W)
  Tensor features(const Tensor& vol) const {
    const Dims3 d = volume_dims(vol);
    const Tensor v = ad::reshape(vol, {1, d.depth, d.height, d.width});
    const Tensor slices = ad::permute(v, {2, 0, 1, 3});  // (H, 1, D, W)
    return ad::relu(ad::conv2d(ad::relu(ad::conv2d(slices, w1_, 1, 1)), w2_, 1, 1));
  }

  const Tensor& w1() const { return w1_; }
  const Tensor& w2() const { return w2_; }

 private:
  Tensor w1_, w2_;
};

inline Tensor perceptual_loss(const Tensor& pred, const Tensor& gt, const FeatNet& net) {
  if (pred.shape() != gt.shape()) {
    throw ShapeError("perceptual_loss: shapes " + ad::to_string(pred.shape()) + " and " + ad::to_string(gt.shape()));
  }
  return ad::mse_loss(net.features(pred), net.features(gt));
}

struct LossWeights {
  double recon = 10.0;
  double proj = 10.0;
  double adv = 1.0;
  double perc = 0.1;
  double vq = 1.0;
  double rec_attn = 0.1;
};

inline void validate(const LossWeights& w) {
  for (double v : {w.recon, w.proj, w.adv, w.perc, w.vq, w.rec_attn}) {
    if (!std::isfinite(v) || v < 0.0) throw ValidationError("loss weights must be finite and >= 0");
  }
}

// Absent parts contribute nothing.
struct LossParts {
  Tensor recon, proj, adv, perc, codebook, commit, attn_recon;
};

inline Tensor total_g_loss(const LossParts& p, const LossWeights& w) {
  validate(w);
  Tensor total = Tensor::scalar(0.0);
  auto term = [&total](const Tensor& part, double weight) {
    if (!part) return;
    if (part.numel() != 1) throw ShapeError("total_g_loss: loss parts must be scalars");
    const Tensor scaled = ad::mul_scalar(part, weight);
    total = ad::add(total, scaled.rank() == 0 ? scaled : ad::reshape(scaled, {}));
  };
  term(p.recon, w.recon);
  term(p.proj, w.proj);
  term(p.adv, w.adv);
  term(p.perc, w.perc);
  term(p.codebook, w.vq);
  term(p.commit, w.vq);
  term(p.attn_recon, w.rec_attn);
  return total;
}

}  // namespace bpct::gan
