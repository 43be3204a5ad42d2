#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "bpct/attention.hpp"
#include "bpct/autodiff.hpp"
#include "bpct/gan.hpp"
#include "bpct/rng.hpp"

// Finite-difference regression harness shared by the CLI and the acceptance run.
namespace bpct::gradsuite {

using ad::Shape;
using ad::Tensor;

struct CaseResult {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;
  std::size_t entries = 0;
  bool passed() const { return max_error < tolerance; }
};

struct Case {
  std::string name;
  double tolerance;
  std::function<CaseResult()> run;
};

// Moves biases off zero so units fed by all-zero regions are not pinned at a
// ReLU kink, where central differences average the two one-sided slopes.
inline void jitter_biases(const nn::ParamStore& store, Rng& rng, double scale = 0.05) {
  for (const auto& [name, t] : store.entries()) {
    if (name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0) {
      for (auto& v : t.mutable_data()) v = rng.uniform(-scale, scale);
    }
  }
}

namespace detail {

inline Tensor rand_tensor(Shape shape, Rng& rng, bool grad, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::leaf(std::move(shape), std::move(v), grad);
}

inline Tensor off_kink(Tensor t) {
  for (auto& v : t.mutable_data()) {
    if (std::abs(v) < 0.05) v = v < 0 ? -0.05 : 0.05;
  }
  return t;
}

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

// One OpKind: leaves from a random shape, a loss built by weighting the op
// output with a fixed random tensor. Checked on five shapes.
inline Case op_case(std::string name, std::uint64_t seed,
                    std::function<std::vector<Tensor>(Rng&)> leaves,
                    std::function<Tensor(std::span<const Tensor>)> op) {
  auto run = [name, seed, leaves, op] {
    CaseResult r{name, 0.0, 1e-4, 0};
    Rng rng(seed);
    for (int trial = 0; trial < 5; ++trial) {
      const auto ls = leaves(rng);
      const Tensor probe = op(ls);
      const Tensor w = rand_tensor(probe.shape(), rng, false);
      const auto rep = ad::grad_check_report(
          [&](std::span<const Tensor> l) {
            const Tensor y = op(l);
            return y.numel() == 1 && y.rank() == 0 ? y : ad::mean(ad::hadamard(y, w));
          },
          ls);
      r.max_error = std::max(r.max_error, rep.max_rel_error);
      r.entries += rep.entries_checked;
    }
    return r;
  };
  return {name, 1e-4, run};
}

}  // namespace detail

inline std::vector<Case> op_cases() {
  using detail::pick;
  using detail::rand_tensor;
  std::vector<Case> c;
  auto p = [](Shape s, Rng& r) { return rand_tensor(std::move(s), r, true); };
  c.push_back(detail::op_case("Add", 1, [&](Rng& r) { Shape s{pick(r, 1, 4), pick(r, 1, 4)}; return std::vector{p(s, r), p(s, r)}; },
                              [](auto l) { return ad::add(l[0], l[1]); }));
  c.push_back(detail::op_case("Sub", 2, [&](Rng& r) { Shape s{pick(r, 1, 6)}; return std::vector{p(s, r), p(s, r)}; },
                              [](auto l) { return ad::sub(l[0], l[1]); }));
  c.push_back(detail::op_case("MulScalar", 3, [&](Rng& r) { return std::vector{p({pick(r, 1, 3), pick(r, 1, 4)}, r)}; },
                              [](auto l) { return ad::mul_scalar(l[0], 1.3); }));
  c.push_back(detail::op_case("HadamardMul", 4, [&](Rng& r) { Shape s{pick(r, 1, 5), 2}; return std::vector{p(s, r), p(s, r)}; },
                              [](auto l) { return ad::hadamard(l[0], l[1]); }));
  c.push_back(detail::op_case("MatMul", 5, [&](Rng& r) { const auto m = pick(r, 1, 4), k = pick(r, 1, 4), n = pick(r, 1, 4);
                                return std::vector{p({m, k}, r), p({k, n}, r)}; },
                              [](auto l) { return ad::matmul(l[0], l[1]); }));
  c.push_back(detail::op_case("BatchedMatMul", 6, [&](Rng& r) { const auto b = pick(r, 1, 3), m = pick(r, 1, 3), k = pick(r, 1, 3), n = pick(r, 1, 3);
                                return std::vector{p({b, m, k}, r), p({b, k, n}, r)}; },
                              [](auto l) { return ad::bmm(l[0], l[1]); }));
  c.push_back(detail::op_case("Conv2d", 7, [&](Rng& r) { const auto ci = pick(r, 1, 3), co = pick(r, 1, 3);
                                return std::vector{p({ci, pick(r, 2, 6), pick(r, 2, 6)}, r), p({co, ci, 3, 3}, r), p({co}, r)}; },
                              [](auto l) { return ad::conv2d(l[0], l[1], l[2], 2, 1); }));
  c.push_back(detail::op_case("Conv3d", 8, [&](Rng& r) { const auto ci = pick(r, 1, 2), co = pick(r, 1, 2);
                                return std::vector{p({ci, pick(r, 2, 4), pick(r, 2, 4), pick(r, 2, 4)}, r), p({co, ci, 3, 3, 3}, r), p({co}, r)}; },
                              [](auto l) { return ad::conv3d(l[0], l[1], l[2], 1, 1); }));
  c.push_back(detail::op_case("Upsample2dBilinear", 9, [&](Rng& r) { return std::vector{p({pick(r, 1, 2), pick(r, 1, 4), pick(r, 1, 4)}, r)}; },
                              [](auto l) { return ad::upsample2d(l[0], 2); }));
  c.push_back(detail::op_case("Upsample3dTrilinear", 10, [&](Rng& r) { return std::vector{p({pick(r, 1, 2), pick(r, 1, 3), pick(r, 1, 3), pick(r, 1, 3)}, r)}; },
                              [](auto l) { return ad::upsample3d(l[0], 2); }));
  c.push_back(detail::op_case("Relu", 11, [&](Rng& r) { return std::vector{detail::off_kink(p({pick(r, 2, 9)}, r))}; },
                              [](auto l) { return ad::relu(l[0]); }));
  c.push_back(detail::op_case("LeakyRelu", 12, [&](Rng& r) { return std::vector{detail::off_kink(p({pick(r, 2, 9)}, r))}; },
                              [](auto l) { return ad::leaky_relu(l[0], 0.2); }));
  c.push_back(detail::op_case("Sigmoid", 13, [&](Rng& r) { return std::vector{rand_tensor({pick(r, 1, 8)}, r, true, -4, 4)}; },
                              [](auto l) { return ad::sigmoid(l[0]); }));
  c.push_back(detail::op_case("Softmax", 14, [&](Rng& r) { return std::vector{rand_tensor({pick(r, 1, 4), pick(r, 2, 5)}, r, true, -3, 3)}; },
                              [](auto l) { return ad::softmax(l[0], -1); }));
  c.push_back(detail::op_case("InstanceNorm", 15, [&](Rng& r) { return std::vector{p({pick(r, 1, 3), pick(r, 2, 4), pick(r, 2, 4)}, r)}; },
                              [](auto l) { return ad::instance_norm(l[0]); }));
  c.push_back(detail::op_case("Concat", 16, [&](Rng& r) { const auto a = pick(r, 1, 3); return std::vector{p({a, 2}, r), p({a, 3}, r)}; },
                              [](auto l) { return ad::concat({l[0], l[1]}, 1); }));
  c.push_back(detail::op_case("Reshape", 17, [&](Rng& r) { return std::vector{p({2, pick(r, 1, 4), 3}, r)}; },
                              [](auto l) { return ad::reshape(l[0], {l[0].numel()}); }));
  c.push_back(detail::op_case("Mean", 18, [&](Rng& r) { return std::vector{p({pick(r, 1, 5), pick(r, 1, 5)}, r)}; },
                              [](auto l) { return ad::mean(l[0]); }));
  c.push_back(detail::op_case("MseLoss", 19, [&](Rng& r) { Shape s{pick(r, 1, 7)}; return std::vector{p(s, r), p(s, r)}; },
                              [](auto l) { return ad::mse_loss(l[0], l[1]); }));
  c.push_back(detail::op_case("Permute", 20, [&](Rng& r) { return std::vector{p({pick(r, 1, 3), pick(r, 1, 3), pick(r, 1, 3)}, r)}; },
                              [](auto l) { return ad::permute(l[0], {2, 0, 1}); }));
  c.push_back(detail::op_case("StraightThrough", 21, [&](Rng& r) { return std::vector{p({pick(r, 1, 6)}, r)}; },
                              [](auto l) { return ad::straight_through_op(l[0], l[0].detach()); }));
  c.push_back(detail::op_case("LinearMap", 22, [&](Rng& r) { return std::vector{p({pick(r, 2, 4), pick(r, 2, 4), pick(r, 2, 4)}, r)}; },
                              [](auto l) { return gan::project_tensor(l[0], View::Lateral); }));
  return c;
}

inline std::vector<Case> composite_cases() {
  std::vector<Case> c;
  c.push_back({"pam", 1e-4, [] {
                 nn::ParamStore store;
                 Rng rng(101);
                 const auto p = attention::make_pam(store, "pam", 8, 8, rng);
                 p.gamma.mutable_data()[0] = 0.8;
                 jitter_biases(store, rng);
                 auto leaves = store.tensors();
                 leaves.push_back(detail::rand_tensor({8, 3, 3}, rng, true));
                 const Tensor w = detail::rand_tensor({8, 3, 3}, rng, false);
                 const auto rep = ad::grad_check_report(
                     [&](auto l) { return ad::mean(ad::hadamard(attention::pam(p, l.back()), w)); }, leaves);
                 return CaseResult{"pam", rep.max_rel_error, 1e-4, rep.entries_checked};
               }});
  c.push_back({"cam", 1e-4, [] {
                 nn::ParamStore store;
                 Rng rng(102);
                 const auto p = attention::make_cam(store, "cam");
                 p.gamma.mutable_data()[0] = 0.6;
                 std::vector<Tensor> leaves{p.gamma, detail::rand_tensor({4, 3, 3}, rng, true)};
                 const Tensor w = detail::rand_tensor({4, 3, 3}, rng, false);
                 const auto rep = ad::grad_check_report(
                     [&](auto l) { return ad::mean(ad::hadamard(attention::cam(p, l[1]), w)); }, leaves);
                 return CaseResult{"cam", rep.max_rel_error, 1e-4, rep.entries_checked};
               }});
  c.push_back({"guided_block", 1e-4, [] {
                 nn::ParamStore store;
                 Rng rng(103);
                 const auto b = attention::make_guided_block(store, "g", 8, rng);
                 for (const auto& g : {b.pam1.gamma, b.cam1.gamma, b.pam2.gamma, b.cam2.gamma}) g.mutable_data()[0] = 0.5;
                 jitter_biases(store, rng);
                 auto leaves = store.tensors();
                 leaves.push_back(detail::rand_tensor({8, 4, 4}, rng, true));
                 const Tensor w = detail::rand_tensor({8, 4, 4}, rng, false);
                 const auto rep = ad::grad_check_report(
                     [&](auto l) {
                       const auto out = attention::guided_forward(b, l.back());
                       return ad::add(ad::mean(ad::hadamard(out.f_sa, w)), out.recon_loss);
                     },
                     leaves, {.eps = 1e-4, .max_entries_per_leaf = 32, .seed = 3});
                 return CaseResult{"guided_block", rep.max_rel_error, 1e-4, rep.entries_checked};
               }});
  c.push_back({"projection_loss", 1e-4, [] {
                 Rng rng(104);
                 const Tensor gt = detail::rand_tensor({1, 8, 8, 8}, rng, false, 0, 1);
                 const std::vector<Tensor> leaves{detail::rand_tensor({1, 8, 8, 8}, rng, true, 0, 1)};
                 const auto rep = ad::grad_check_report([&](auto l) { return gan::projection_loss(l[0], gt); }, leaves);
                 return CaseResult{"projection_loss", rep.max_rel_error, 1e-4, rep.entries_checked};
               }});
  c.push_back({"perceptual_loss", 1e-4, [] {
                 Rng rng(105);
                 const gan::FeatNet net(7);
                 const Tensor gt = detail::rand_tensor({1, 8, 8, 8}, rng, false, 0, 1);
                 const std::vector<Tensor> leaves{detail::rand_tensor({1, 8, 8, 8}, rng, true, 0, 1)};
                 const auto rep = ad::grad_check_report([&](auto l) { return gan::perceptual_loss(l[0], gt, net); },
                                                        leaves, {.eps = 1e-4, .max_entries_per_leaf = 256, .seed = 5});
                 return CaseResult{"perceptual_loss", rep.max_rel_error, 1e-4, rep.entries_checked};
               }});
  c.push_back({"vq_generator_step", 1e-3, [] {
                 gan::ModelConfig cfg;
                 cfg.kind = gan::ModelKind::VQ;
                 cfg.vol_dim = 16;
                 cfg.vq_k = 32;
                 cfg.vq_d = 8;
                 cfg.seed = 106;
                 auto gen = gan::make_generator(cfg);
                 const gan::Discriminator3D disc(cfg.base_channels, 107);
                 const gan::FeatNet net(108);
                 Rng rng(109);
                 jitter_biases(gen->params(), rng);
                 jitter_biases(disc.params(), rng);
                 PhantomSpec spec;
                 spec.seed = 110;
                 const CtVolume vol = make_phantom(spec);
                 const Tensor gt = gan::volume_tensor(vol);
                 const Tensor f = gan::drr_tensor(project(vol, View::Frontal));
                 const Tensor l = gan::drr_tensor(project(vol, View::Lateral));
                 vq::QuantizeTrace trace;
                 auto g_loss = [&] {
                   trace.cursor = 0;
                   const auto out = gen->forward(f, l, &trace);
                   gan::LossParts parts;
                   parts.recon = gan::reconstruction_loss(out.volume, gt);
                   parts.proj = gan::projection_loss(out.volume, gt);
                   parts.adv = gan::lsgan_g_loss(disc(out.volume));
                   parts.perc = gan::perceptual_loss(out.volume, gt, net);
                   parts.codebook = out.codebook_loss;
                   parts.commit = out.commitment_loss;
                   return gan::total_g_loss(parts, {});
                 };
                 (void)g_loss();
                 trace.start_replay();
                 const auto gen_leaves = gen->params().tensors();
                 const auto rg = ad::grad_check_report([&](auto) { return g_loss(); }, gen_leaves,
                                                       {.eps = 1e-4, .max_entries_per_leaf = 3, .seed = 111});
                 trace.cursor = 0;
                 const Tensor fake = gen->forward(f, l, &trace).volume.detach();
                 const auto disc_leaves = disc.params().tensors();
                 const auto rd = ad::grad_check_report(
                     [&](auto) { return gan::lsgan_d_loss(disc(gt), disc(fake)); }, disc_leaves,
                     {.eps = 1e-4, .max_entries_per_leaf = 8, .seed = 112});
                 return CaseResult{"vq_generator_step", std::max(rg.max_rel_error, rd.max_rel_error), 1e-3,
                                   rg.entries_checked + rd.entries_checked};
               }});
  return c;
}

inline std::vector<Case> all_cases() {
  auto c = op_cases();
  auto more = composite_cases();
  c.insert(c.end(), more.begin(), more.end());
  return c;
}

}  // namespace bpct::gradsuite
