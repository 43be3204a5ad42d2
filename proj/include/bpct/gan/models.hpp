#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "bpct/attention.hpp"
#include "bpct/autodiff.hpp"
#include "bpct/nn.hpp"
#include "bpct/projector.hpp"
#include "bpct/volcore.hpp"
#include "bpct/vqbridge.hpp"

namespace bpct::gan {

using ad::Shape;
using ad::Tensor;

enum class ModelKind { GA, VQ, NoAttnBaseline };

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::GA: return "GA";
    case ModelKind::VQ: return "VQ";
    case ModelKind::NoAttnBaseline: return "NoAttnBaseline";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "GA") return ModelKind::GA;
  if (s == "VQ") return ModelKind::VQ;
  if (s == "NoAttnBaseline") return ModelKind::NoAttnBaseline;
  throw ValidationError("unknown model '" + std::string(s) + "' (expected GA, VQ or NoAttnBaseline)");
}

struct ModelConfig {
  ModelKind kind = ModelKind::GA;
  std::size_t vol_dim = 16;
  std::size_t base_channels = 8;
  std::size_t attn_reduction = 8;
  double attn_lambda_rec = 0.1;
  std::size_t vq_k = 128;
  std::size_t vq_d = 32;
  double vq_beta = 0.25;
  std::uint64_t seed = 0;
};

inline void validate(const ModelConfig& c) {
  if (c.vol_dim > 256) throw ValidationError("vol_dim must be <= 256");
  if (c.base_channels > 64) throw ValidationError("model.base_channels must be <= 64");
  if (c.vq_k > 65536 || c.vq_d > 1024) throw ValidationError("vq.K must be <= 65536 and vq.D <= 1024");
  if (c.base_channels < 2 || c.base_channels % 2 != 0) throw ValidationError("model.base_channels must be even and >= 2");
  const std::size_t step = c.kind == ModelKind::VQ ? 8 : 16;
  if (c.vol_dim < step || c.vol_dim % step != 0) {
    throw ValidationError("vol_dim " + std::to_string(c.vol_dim) + " must be a positive multiple of " +
                          std::to_string(step) + " for model " + std::string(to_string(c.kind)));
  }
  if (c.kind != ModelKind::VQ) {
    const std::size_t fused = 14 * c.base_channels;
    if (c.attn_reduction == 0 || fused < c.attn_reduction || fused < 8) {
      throw ValidationError("attention.reduction too large for the fused channel count");
    }
  }
  if (!(c.attn_lambda_rec >= 0.0)) throw ValidationError("attention.lambda_rec must be >= 0");
  if (c.vq_k < 2) throw ValidationError("vq.K must be >= 2");
  if (c.vq_d < 1) throw ValidationError("vq.D must be >= 1");
  if (!(c.vq_beta >= 0.0)) throw ValidationError("vq.beta must be >= 0");
}

struct GeneratorOutput {
  Tensor volume;  // (1, N, N, N), values in (0, 1)
  Tensor attn_recon;
  Tensor codebook_loss;
  Tensor commitment_loss;
  std::vector<std::size_t> codes;
  double perplexity = 0.0;
};

// DRR pixels as a (1, H, W) constant.
inline Tensor drr_tensor(const DrrImage& img) {
  std::vector<double> v(img.pixels().begin(), img.pixels().end());
  return Tensor::constant({1, img.dims().height, img.dims().width}, std::move(v));
}

inline Tensor volume_tensor(const CtVolume& vol) {
  std::vector<double> v(vol.voxels().begin(), vol.voxels().end());
  return Tensor::constant({1, vol.dims().depth, vol.dims().height, vol.dims().width}, std::move(v));
}

inline CtVolume to_volume(const Tensor& t) {
  if (t.rank() != 4 || t.dim(0) != 1) throw ShapeError("to_volume: expected (1,D,H,W), got " + ad::to_string(t.shape()));
  std::vector<float> v(t.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::clamp(static_cast<float>(t.data()[i]), 0.0f, 1.0f);
  return CtVolume({t.dim(1), t.dim(2), t.dim(3)}, std::move(v));
}

class Generator {
 public:
  virtual ~Generator() = default;

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }
  virtual vq::Codebook* codebook() { return nullptr; }

  // front: (1, N, N) frontal DRR; lat: (1, N, N) lateral DRR (rows = height, columns = depth).
  virtual GeneratorOutput forward(const Tensor& front, const Tensor& lat, vq::QuantizeTrace* trace = nullptr) const = 0;

  GeneratorOutput forward(const DrrImage& front, const DrrImage& lat, vq::QuantizeTrace* trace = nullptr) const {
    if (front.view() != View::Frontal || lat.view() != View::Lateral) {
      throw ValidationError("generator needs one frontal and one lateral DRR");
    }
    return forward(drr_tensor(front), drr_tensor(lat), trace);
  }

 protected:
  explicit Generator(ModelConfig cfg) : cfg_(cfg), rng_(cfg.seed) { validate(cfg_); }

  void check_input(const Tensor& t, const char* which) const {
    const std::size_t n = cfg_.vol_dim;
    if (t.rank() != 3 || t.dim(0) != 1 || t.dim(1) != n || t.dim(2) != n) {
      throw ShapeError(std::string("generator: ") + which + " DRR has shape " + ad::to_string(t.shape()) +
                       ", expected (1," + std::to_string(n) + "," + std::to_string(n) + ")");
    }
  }

  ModelConfig cfg_;
  nn::ParamStore store_;
  Rng rng_;
};

namespace detail {

inline Tensor in_lrelu(const Tensor& x) { return ad::leaky_relu(ad::instance_norm(x), 0.2); }
inline Tensor in_relu(const Tensor& x) { return ad::relu(ad::instance_norm(x)); }

// sigmoid(-2) ~ 0.12, close to the mostly empty phantom background.
inline void bias_toward_background(nn::ConvLayer& head) {
  for (double& b : head.bias.mutable_data()) b = -2.0;
}

// Broadcasts a 2D map (C, a, b) along a new axis of length n -> (C, n, a, b).
// Lateral maps come out as (C, width, height, depth) and are realigned.
inline Tensor skip_volume(const Tensor& map2d, std::size_t n, bool lateral) {
  const Tensor rep = ad::repeat_new_axis1(map2d, n);
  return lateral ? vq::align_lateral(rep) : rep;
}

}  // namespace detail

// Guided-attention generator. With attention disabled the same network skips
// the guided block (NoAttnBaseline).
//
// Per branch, for N = vol_dim and c = base_channels:
//   e1 c@N/2, e2 2c@N/4, e3 4c@N/8, e4 4c@N/16     (stride-2 conv3x3)
//   F = multiscale_fuse(e2, e3, e4)                 14c @ N/4
//   guided block on F, stride-2 conv to (N/8)*4c, lift to (4c, N/8, N/8, N/8)
// Branches are fused by averaging; the decoder upsamples three times with
// broadcast skips from e2, e1 and the input DRRs of both branches.
class GeneratorGA : public Generator {
 public:
  explicit GeneratorGA(ModelConfig cfg) : Generator(cfg) {
    const bool attn = cfg_.kind == ModelKind::GA;
    if (cfg_.kind == ModelKind::VQ) throw ValidationError("GeneratorGA cannot be built for model VQ");
    const std::size_t c = cfg_.base_channels, n = cfg_.vol_dim;
    c3_ = 4 * c;
    d3_ = n / 8;
    for (int b = 0; b < 2; ++b) {
      const std::string p = b == 0 ? "front" : "lat";
      auto& br = branch_[b];
      br.e1 = nn::conv2d_layer(store_, p + ".enc1", 1, c, 3, 2, 1, rng_);
      br.e2 = nn::conv2d_layer(store_, p + ".enc2", c, 2 * c, 3, 2, 1, rng_);
      br.e3 = nn::conv2d_layer(store_, p + ".enc3", 2 * c, 4 * c, 3, 2, 1, rng_);
      br.e4 = nn::conv2d_layer(store_, p + ".enc4", 4 * c, 4 * c, 3, 2, 1, rng_);
      if (attn) {
        br.guided = attention::make_guided_block(store_, p + ".guided", 14 * c, rng_, cfg_.attn_reduction,
                                                 cfg_.attn_lambda_rec);
      }
      br.reduce = nn::conv2d_layer(store_, p + ".reduce", 14 * c, d3_ * c3_, 3, 2, 1, rng_);
    }
    dec1_ = nn::conv3d_layer(store_, "dec1", 8 * c, 2 * c, 3, 1, 1, rng_);
    dec2_ = nn::conv3d_layer(store_, "dec2", 4 * c, c, 3, 1, 1, rng_);
    dec3_ = nn::conv3d_layer(store_, "dec3", c + 2, c, 3, 1, 1, rng_);
    head_ = nn::conv3d_layer(store_, "head", c, 1, 1, 1, 0, rng_, 1.0);
    detail::bias_toward_background(head_);
  }

  bool attention_enabled() const { return cfg_.kind == ModelKind::GA; }

  using Generator::forward;
  GeneratorOutput forward(const Tensor& front, const Tensor& lat, vq::QuantizeTrace* = nullptr) const override {
    check_input(front, "frontal");
    check_input(lat, "lateral");
    const std::size_t n = cfg_.vol_dim;
    struct Encoded {
      Tensor e1, e2, lifted, recon;
    } enc[2];
    for (int b = 0; b < 2; ++b) {
      const auto& br = branch_[b];
      const Tensor x = b == 0 ? front : lat;
      Encoded& e = enc[b];
      e.e1 = detail::in_lrelu(br.e1(x));
      e.e2 = detail::in_lrelu(br.e2(e.e1));
      const Tensor e3 = detail::in_lrelu(br.e3(e.e2));
      const Tensor e4 = ad::leaky_relu(br.e4(e3), 0.2);
      Tensor f = attention::multiscale_fuse({{e.e2, e3, e4}});
      if (attention_enabled()) {
        auto g = attention::guided_forward(br.guided, f);
        f = g.f_sa;
        e.recon = g.recon_loss;
      }
      const Tensor r = ad::leaky_relu(br.reduce(f), 0.2);
      const Tensor lifted = vq::lift_2d_to_3d(r, {.depth = d3_, .height = n / 8, .width = n / 8, .channels = c3_});
      e.lifted = b == 0 ? lifted : vq::align_lateral(lifted);
    }
    Tensor v = vq::fuse_branches(enc[0].lifted, enc[1].lifted);
    v = ad::upsample3d(v, 2);  // N/4
    v = ad::concat({v, detail::skip_volume(enc[0].e2, n / 4, false), detail::skip_volume(enc[1].e2, n / 4, true)}, 0);
    v = detail::in_relu(dec1_(v));
    v = ad::upsample3d(v, 2);  // N/2
    v = ad::concat({v, detail::skip_volume(enc[0].e1, n / 2, false), detail::skip_volume(enc[1].e1, n / 2, true)}, 0);
    v = detail::in_relu(dec2_(v));
    v = ad::upsample3d(v, 2);  // N
    v = ad::concat({v, detail::skip_volume(front, n, false), detail::skip_volume(lat, n, true)}, 0);
    v = detail::in_relu(dec3_(v));
    GeneratorOutput out;
    out.volume = ad::sigmoid(head_(v));
    if (attention_enabled()) out.attn_recon = ad::mul_scalar(ad::add(enc[0].recon, enc[1].recon), 0.5);
    return out;
  }

 private:
  struct Branch {
    nn::ConvLayer e1, e2, e3, e4, reduce;
    attention::GuidedAttentionBlock guided;
  };
  Branch branch_[2];
  nn::ConvLayer dec1_, dec2_, dec3_, head_;
  std::size_t c3_ = 0, d3_ = 0;
};

// VQ generator. Per branch: three stride-2 conv stages to N/8, a 1x1 conv to
// (N/8)*D channels, lift to (D, N/8, N/8, N/8), quantize each D-vector against
// the shared codebook, straight-through, and a per-branch 3D conv. Branches are
// averaged and upsample-convolved three times.
class GeneratorVQ : public Generator {
 public:
  explicit GeneratorVQ(ModelConfig cfg) : Generator(cfg) {
    if (cfg_.kind != ModelKind::VQ) throw ValidationError("GeneratorVQ requires model VQ");
    const std::size_t c = cfg_.base_channels, n = cfg_.vol_dim, d = cfg_.vq_d;
    d3_ = n / 8;
    for (int b = 0; b < 2; ++b) {
      const std::string p = b == 0 ? "front" : "lat";
      auto& br = branch_[b];
      br.e1 = nn::conv2d_layer(store_, p + ".enc1", 1, c, 3, 2, 1, rng_);
      br.e2 = nn::conv2d_layer(store_, p + ".enc2", c, 2 * c, 3, 2, 1, rng_);
      br.e3 = nn::conv2d_layer(store_, p + ".enc3", 2 * c, 4 * c, 3, 2, 1, rng_);
      br.embed = nn::conv2d_layer(store_, p + ".embed", 4 * c, d3_ * d, 1, 1, 0, rng_, 1.0);
      br.dec = nn::conv3d_layer(store_, p + ".dec3d", d, 4 * c, 3, 1, 1, rng_);
    }
    book_ = vq::make_codebook(cfg_.vq_k, d, rng_, &store_);
    up1_ = nn::conv3d_layer(store_, "up1", 4 * c, 2 * c, 3, 1, 1, rng_);
    up2_ = nn::conv3d_layer(store_, "up2", 2 * c, c, 3, 1, 1, rng_);
    up3_ = nn::conv3d_layer(store_, "up3", c, c / 2, 3, 1, 1, rng_);
    head_ = nn::conv3d_layer(store_, "head", c / 2, 1, 1, 1, 0, rng_, 1.0);
    detail::bias_toward_background(head_);
  }

  vq::Codebook* codebook() override { return &book_; }
  const vq::Codebook& book() const { return book_; }

  using Generator::forward;
  GeneratorOutput forward(const Tensor& front, const Tensor& lat, vq::QuantizeTrace* trace = nullptr) const override {
    check_input(front, "frontal");
    check_input(lat, "lateral");
    const std::size_t d = cfg_.vq_d, s = cfg_.vol_dim / 8, p = d3_ * s * s;
    GeneratorOutput out;
    Tensor branch_vol[2];
    Tensor cb_loss, commit;
    double perp = 0.0;
    for (int b = 0; b < 2; ++b) {
      const auto& br = branch_[b];
      const Tensor x = b == 0 ? front : lat;
      Tensor h = detail::in_lrelu(br.e1(x));
      h = detail::in_lrelu(br.e2(h));
      h = ad::leaky_relu(br.e3(h), 0.2);
      const Tensor z2d = br.embed(h);
      const Tensor lifted = vq::lift_2d_to_3d(z2d, {.depth = d3_, .height = s, .width = s, .channels = d});
      const Tensor z_e = ad::permute(ad::reshape(lifted, {d, p}), {1, 0});  // (P, D)
      const auto q = vq::quantize(z_e, book_, cfg_.vq_beta, trace);
      out.codes.insert(out.codes.end(), q.indices.begin(), q.indices.end());
      perp += 0.5 * q.perplexity;
      cb_loss = b == 0 ? q.codebook_loss : ad::add(cb_loss, q.codebook_loss);
      commit = b == 0 ? q.commitment_loss : ad::add(commit, q.commitment_loss);
      Tensor v = ad::reshape(ad::permute(q.z_st, {1, 0}), {d, d3_, s, s});
      if (b == 1) v = vq::align_lateral(v);
      branch_vol[b] = ad::leaky_relu(br.dec(v), 0.2);
    }
    Tensor v = vq::fuse_branches(branch_vol[0], branch_vol[1]);
    v = detail::in_relu(up1_(ad::upsample3d(v, 2)));
    v = detail::in_relu(up2_(ad::upsample3d(v, 2)));
    v = detail::in_relu(up3_(ad::upsample3d(v, 2)));
    out.volume = ad::sigmoid(head_(v));
    out.codebook_loss = ad::mul_scalar(cb_loss, 0.5);
    out.commitment_loss = ad::mul_scalar(commit, 0.5);
    out.perplexity = perp;
    return out;
  }

 private:
  struct Branch {
    nn::ConvLayer e1, e2, e3, embed, dec;
  };
  Branch branch_[2];
  vq::Codebook book_;
  nn::ConvLayer up1_, up2_, up3_, head_;
  std::size_t d3_ = 0;
};

inline std::unique_ptr<Generator> make_generator(const ModelConfig& cfg) {
  if (cfg.kind == ModelKind::VQ) return std::make_unique<GeneratorVQ>(cfg);
  return std::make_unique<GeneratorGA>(cfg);
}

inline GeneratorOutput generator_forward(const Generator& gen, const DrrImage& front, const DrrImage& lat,
                                         vq::QuantizeTrace* trace = nullptr) {
  return gen.forward(front, lat, trace);
}

// Spatial size after one stride-2, pad-1, 3-tap conv.
inline std::size_t halve_ceil(std::size_t s) { return (s + 1) / 2; }

inline Dims3 score_grid_dims(const Dims3& in) {
  Dims3 d = in;
  for (int i = 0; i < 4; ++i) d = {halve_ceil(d.depth), halve_ceil(d.height), halve_ceil(d.width)};
  return d;
}

// Least-squares patch discriminator: four stride-2 conv stages with
// LeakyReLU, then a 1x1x1 conv to a single-channel score grid.
class Discriminator3D {
 public:
  Discriminator3D(std::size_t base_channels, std::uint64_t seed) : rng_(seed) {
    const std::size_t c = base_channels;
    const std::size_t chans[5] = {1, c, 2 * c, 4 * c, 4 * c};
    for (int i = 0; i < 4; ++i) {
      stages_[i] = nn::conv3d_layer(store_, "disc.stage" + std::to_string(i + 1), chans[i], chans[i + 1], 3, 2, 1, rng_);
    }
    head_ = nn::conv3d_layer(store_, "disc.head", 4 * c, 1, 1, 1, 0, rng_, 1.0);
  }

  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }

  // vol: (1, D, H, W) -> (1, d', h', w') per score_grid_dims.
  Tensor operator()(const Tensor& vol) const {
    if (vol.rank() != 4 || vol.dim(0) != 1) {
      throw ShapeError("discriminator: expected (1,D,H,W), got " + ad::to_string(vol.shape()));
    }
    Tensor h = vol;
    for (const auto& s : stages_) h = ad::leaky_relu(s(h), 0.2);
    return head_(h);
  }

 private:
  Rng rng_;
  nn::ParamStore store_;
  nn::ConvLayer stages_[4];
  nn::ConvLayer head_;
};

}  // namespace bpct::gan
