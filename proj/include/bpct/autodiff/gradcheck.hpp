#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "bpct/autodiff/engine.hpp"
#include "bpct/rng.hpp"

namespace bpct::ad {

using LossBuilder = std::function<Tensor(std::span<const Tensor>)>;

struct GradCheckOptions {
  double eps = 1e-4;
  // 0 checks every entry; otherwise a seeded sample of at most this many per leaf.
  std::size_t max_entries_per_leaf = 0;
  std::uint64_t seed = 0;
  // Probes replay the Relu/LeakyRelu masks of the unperturbed pass, so a probe
  // that would cross a kink still differences the same linear piece.
  bool freeze_activation_masks = true;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_leaf = 0;
  std::size_t worst_entry = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t entries_checked = 0;
};

namespace detail {
class MaskScope {
 public:
  explicit MaskScope(MaskTape* tape) : saved_(mask_tape()) { mask_tape() = tape; }
  ~MaskScope() { mask_tape() = saved_; }
  MaskScope(const MaskScope&) = delete;
  MaskScope& operator=(const MaskScope&) = delete;

 private:
  MaskTape* saved_;
};
}  // namespace detail

// Compares backward() against central differences. Error per entry is
// |analytic - numeric| / max(1, |analytic|, |numeric|). Runs in F64.
inline GradCheckReport grad_check_report(const LossBuilder& builder, std::span<const Tensor> leaves,
                                         const GradCheckOptions& opts = {}) {
  if (!(opts.eps > 0.0 && opts.eps <= 1e-2)) throw ValidationError("grad_check eps must lie in (0, 1e-2]");
  PrecisionScope scope(Precision::F64);
  for (const auto& leaf : leaves) {
    if (!leaf.is_leaf() || !leaf.requires_grad()) throw ValidationError("grad_check leaves must be trainable leaves");
    leaf.zero_grad();
  }
  detail::MaskTape tape;
  const bool freeze = opts.freeze_activation_masks;
  Tensor loss;
  {
    detail::MaskScope scope(freeze ? &tape : nullptr);
    loss = builder(leaves);
  }
  backward(loss);
  tape.mode = detail::MaskTape::Mode::Replay;
  auto probe = [&]() {
    detail::MaskScope scope(freeze ? &tape : nullptr);
    tape.cursor = 0;
    const double v = builder(leaves).item();
    if (freeze && tape.cursor != tape.signs.size()) throw Error("grad_check: probe graph differs from the base graph");
    return v;
  };

  GradCheckReport report;
  Rng rng(opts.seed);
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    const Tensor& leaf = leaves[li];
    const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
    std::vector<std::size_t> entries(leaf.numel());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (opts.max_entries_per_leaf != 0 && entries.size() > opts.max_entries_per_leaf) {
      // partial Fisher-Yates
      for (std::size_t i = 0; i < opts.max_entries_per_leaf; ++i) {
        const std::size_t j = i + rng.below(entries.size() - i);
        std::swap(entries[i], entries[j]);
      }
      entries.resize(opts.max_entries_per_leaf);
      std::sort(entries.begin(), entries.end());
    }
    auto data = leaf.mutable_data();
    for (std::size_t e : entries) {
      const double orig = data[e];
      data[e] = orig + opts.eps;
      const double plus = probe();
      data[e] = orig - opts.eps;
      const double minus = probe();
      data[e] = orig;
      const double numeric = (plus - minus) / (2.0 * opts.eps);
      const double a = analytic[e];
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      ++report.entries_checked;
      if (err > report.max_rel_error || report.entries_checked == 1) {
        report.max_rel_error = err;
        report.worst_leaf = li;
        report.worst_entry = e;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

inline double grad_check(const LossBuilder& builder, std::span<const Tensor> leaves, double eps = 1e-4) {
  return grad_check_report(builder, leaves, {.eps = eps}).max_rel_error;
}

}  // namespace bpct::ad
