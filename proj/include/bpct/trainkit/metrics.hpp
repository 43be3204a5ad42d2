#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "bpct/error.hpp"
#include "bpct/volcore.hpp"

namespace bpct::train {

inline void require_same_dims(const CtVolume& a, const CtVolume& b, const char* what) {
  if (!(a.dims() == b.dims())) throw ShapeError(std::string(what) + ": volume dims differ");
}

inline double mse(const CtVolume& a, const CtVolume& b) {
  require_same_dims(a, b, "mse");
  const auto x = a.voxels();
  const auto y = b.voxels();
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
    s += d * d;
  }
  return s / static_cast<double>(x.size());
}

// Identical volumes give +infinity.
inline double psnr(const CtVolume& a, const CtVolume& b, double peak = 1.0) {
  const double e = mse(a, b);
  if (e == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / e);
}

inline constexpr std::size_t kSsimWindow = 7;

namespace detail {

// Inclusive 3D prefix sums with a zero border: table index (d+1, h+1, w+1).
class Integral3 {
 public:
  template <typename Fn>
  Integral3(const Dims3& dims, Fn&& value) : D_(dims.depth + 1), H_(dims.height + 1), W_(dims.width + 1) {
    t_.assign(D_ * H_ * W_, 0.0);
    for (std::size_t d = 1; d < D_; ++d) {
      for (std::size_t h = 1; h < H_; ++h) {
        for (std::size_t w = 1; w < W_; ++w) {
          t_[at(d, h, w)] = value(d - 1, h - 1, w - 1) + t_[at(d - 1, h, w)] + t_[at(d, h - 1, w)] +
                            t_[at(d, h, w - 1)] - t_[at(d - 1, h - 1, w)] - t_[at(d - 1, h, w - 1)] -
                            t_[at(d, h - 1, w - 1)] + t_[at(d - 1, h - 1, w - 1)];
        }
      }
    }
  }

  // Sum over [d0, d0+kd) x [h0, h0+kh) x [w0, w0+kw).
  double box(std::size_t d0, std::size_t h0, std::size_t w0, std::size_t kd, std::size_t kh, std::size_t kw) const {
    const std::size_t d1 = d0 + kd, h1 = h0 + kh, w1 = w0 + kw;
    return t_[at(d1, h1, w1)] - t_[at(d0, h1, w1)] - t_[at(d1, h0, w1)] - t_[at(d1, h1, w0)] + t_[at(d0, h0, w1)] +
           t_[at(d0, h1, w0)] + t_[at(d1, h0, w0)] - t_[at(d0, h0, w0)];
  }

 private:
  std::size_t at(std::size_t d, std::size_t h, std::size_t w) const { return (d * H_ + h) * W_ + w; }
  std::size_t D_, H_, W_;
  std::vector<double> t_;
};

inline double ssim_window(double mu_a, double mu_b, double var_a, double var_b, double cov, double peak) {
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  return ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
}

}  // namespace detail

// Mean SSIM over every fully contained uniform window of side min(7, dim) per
// axis. Variances are population variances. Clamped to [-1, 1].
inline double ssim(const CtVolume& a, const CtVolume& b, double peak = 1.0) {
  require_same_dims(a, b, "ssim");
  const Dims3 dims = a.dims();
  const auto x = a.voxels();
  const auto y = b.voxels();
  auto idx = [&](std::size_t d, std::size_t h, std::size_t w) { return (d * dims.height + h) * dims.width + w; };
  auto xa = [&](std::size_t d, std::size_t h, std::size_t w) { return static_cast<double>(x[idx(d, h, w)]); };
  auto yb = [&](std::size_t d, std::size_t h, std::size_t w) { return static_cast<double>(y[idx(d, h, w)]); };
  const detail::Integral3 sa(dims, xa), sb(dims, yb);
  const detail::Integral3 saa(dims, [&](auto d, auto h, auto w) { return xa(d, h, w) * xa(d, h, w); });
  const detail::Integral3 sbb(dims, [&](auto d, auto h, auto w) { return yb(d, h, w) * yb(d, h, w); });
  const detail::Integral3 sab(dims, [&](auto d, auto h, auto w) { return xa(d, h, w) * yb(d, h, w); });

  const std::size_t kd = std::min(kSsimWindow, dims.depth);
  const std::size_t kh = std::min(kSsimWindow, dims.height);
  const std::size_t kw = std::min(kSsimWindow, dims.width);
  const double n = static_cast<double>(kd * kh * kw);
  double total = 0.0;
  std::size_t windows = 0;
  for (std::size_t d = 0; d + kd <= dims.depth; ++d) {
    for (std::size_t h = 0; h + kh <= dims.height; ++h) {
      for (std::size_t w = 0; w + kw <= dims.width; ++w) {
        const double mu_a = sa.box(d, h, w, kd, kh, kw) / n;
        const double mu_b = sb.box(d, h, w, kd, kh, kw) / n;
        const double var_a = std::max(0.0, saa.box(d, h, w, kd, kh, kw) / n - mu_a * mu_a);
        const double var_b = std::max(0.0, sbb.box(d, h, w, kd, kh, kw) / n - mu_b * mu_b);
        const double cov = sab.box(d, h, w, kd, kh, kw) / n - mu_a * mu_b;
        total += detail::ssim_window(mu_a, mu_b, var_a, var_b, cov, peak);
        ++windows;
      }
    }
  }
  return std::clamp(total / static_cast<double>(windows), -1.0, 1.0);
}

}  // namespace bpct::train
