#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "bpct/bytes.hpp"
#include "bpct/error.hpp"
#include "bpct/rng.hpp"

namespace bpct {

struct Dims3 {
  std::size_t depth = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t count() const { return depth * height * width; }
  static Dims3 cube(std::size_t n) { return {n, n, n}; }
  friend bool operator==(const Dims3&, const Dims3&) = default;
};

struct Dims2 {
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t count() const { return height * width; }
  friend bool operator==(const Dims2&, const Dims2&) = default;
};

namespace detail {
inline void check_unit_range(std::span<const float> values, const char* what) {
  for (float v : values) {
    if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError(std::string(what) + " value outside [0, 1]");
  }
}
}  // namespace detail

// Row-major (depth, height, width) scalar field, width fastest. Values in [0, 1].
class CtVolume {
 public:
  CtVolume() = default;

  CtVolume(Dims3 dims, std::vector<float> voxels, std::array<double, 3> spacing_mm = {1.0, 1.0, 1.0})
      : dims_(dims), voxels_(std::move(voxels)), spacing_mm_(spacing_mm) {
    if (dims_.depth == 0 || dims_.height == 0 || dims_.width == 0) throw ValidationError("volume dims must be positive");
    if (voxels_.size() != dims_.count()) throw ValidationError("voxel count does not match dims");
    for (double s : spacing_mm_) {
      if (!(s > 0.0)) throw ValidationError("voxel spacing must be positive");
    }
    detail::check_unit_range(voxels_, "voxel");
  }

  static CtVolume filled(Dims3 dims, float value) { return CtVolume(dims, std::vector<float>(dims.count(), value)); }

  const Dims3& dims() const { return dims_; }
  std::span<const float> voxels() const { return voxels_; }
  const std::array<double, 3>& spacing_mm() const { return spacing_mm_; }

  std::size_t index(std::size_t d, std::size_t h, std::size_t w) const {
    return (d * dims_.height + h) * dims_.width + w;
  }
  float at(std::size_t d, std::size_t h, std::size_t w) const { return voxels_[index(d, h, w)]; }

  friend bool operator==(const CtVolume& a, const CtVolume& b) {
    return a.dims_ == b.dims_ && a.voxels_ == b.voxels_;
  }

 private:
  Dims3 dims_;
  std::vector<float> voxels_;
  std::array<double, 3> spacing_mm_{1.0, 1.0, 1.0};
};

enum class View : std::uint8_t { Frontal = 0, Lateral = 1 };

inline const char* to_string(View v) { return v == View::Frontal ? "frontal" : "lateral"; }

// Frontal images are (height, width) of the volume; lateral images are
// (height, depth). Rows always run along the volume's height axis.
class DrrImage {
 public:
  DrrImage() = default;

  DrrImage(Dims2 dims, std::vector<float> pixels, View view)
      : dims_(dims), pixels_(std::move(pixels)), view_(view) {
    if (dims_.height == 0 || dims_.width == 0) throw ValidationError("image dims must be positive");
    if (pixels_.size() != dims_.count()) throw ValidationError("pixel count does not match dims");
    if (view_ != View::Frontal && view_ != View::Lateral) throw ValidationError("unknown view");
    detail::check_unit_range(pixels_, "pixel");
  }

  const Dims2& dims() const { return dims_; }
  std::span<const float> pixels() const { return pixels_; }
  View view() const { return view_; }
  float at(std::size_t y, std::size_t x) const { return pixels_[y * dims_.width + x]; }

  friend bool operator==(const DrrImage& a, const DrrImage& b) {
    return a.dims_ == b.dims_ && a.view_ == b.view_ && a.pixels_ == b.pixels_;
  }

 private:
  Dims2 dims_;
  std::vector<float> pixels_;
  View view_ = View::Frontal;
};

// ---------------------------------------------------------------------------
// Phantoms

inline constexpr std::size_t kMinPhantomDim = 4;
inline constexpr std::size_t kMaxPhantomDim = 256;

struct PhantomSpec {
  std::uint64_t seed = 0;
  int n_ellipsoids = 4;
  double intensity_lo = 0.2;
  double intensity_hi = 1.0;
  Dims3 dims = Dims3::cube(16);
};

// Centers and radii are in normalized coordinates, each axis mapped to (-1, 1).
// yaw rotates the ellipsoid in the depth/width plane.
struct Ellipsoid {
  std::array<double, 3> center{};
  std::array<double, 3> radii{};
  double yaw = 0.0;
  double intensity = 0.0;
};

inline void validate(const PhantomSpec& spec) {
  for (std::size_t d : {spec.dims.depth, spec.dims.height, spec.dims.width}) {
    if (d < kMinPhantomDim || d > kMaxPhantomDim) {
      throw ValidationError("phantom dims must lie in [4, 256], got " + std::to_string(d));
    }
  }
  if (spec.n_ellipsoids < 1 || spec.n_ellipsoids > 16) throw ValidationError("n_ellipsoids must lie in [1, 16]");
  if (!(spec.intensity_lo >= 0.0 && spec.intensity_lo <= spec.intensity_hi && spec.intensity_hi <= 1.0)) {
    throw ValidationError("intensity range must satisfy 0 <= lo <= hi <= 1");
  }
}

inline std::vector<Ellipsoid> phantom_ellipsoids(const PhantomSpec& spec) {
  validate(spec);
  Rng rng(spec.seed);
  std::vector<Ellipsoid> out(static_cast<std::size_t>(spec.n_ellipsoids));
  for (auto& e : out) {
    for (auto& c : e.center) c = rng.uniform(-0.45, 0.45);
    for (auto& r : e.radii) r = rng.uniform(0.15, 0.55);
    e.yaw = rng.uniform(0.0, std::numbers::pi);
    e.intensity = rng.uniform(spec.intensity_lo, spec.intensity_hi);
  }
  return out;
}

// Voxel centre of index i along an axis of length n, in (-1, 1).
inline double normalized_coord(std::size_t i, std::size_t n) {
  return (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(n) - 1.0;
}

inline CtVolume make_phantom(const PhantomSpec& spec) {
  const auto shapes = phantom_ellipsoids(spec);
  const Dims3 dims = spec.dims;
  std::vector<float> voxels(dims.count(), 0.0f);

  struct Prepared {
    double cd, ch, cw, inv_rd2, inv_rh2, inv_rw2, cos_y, sin_y, intensity;
  };
  std::vector<Prepared> prep;
  prep.reserve(shapes.size());
  for (const auto& e : shapes) {
    prep.push_back({e.center[0], e.center[1], e.center[2], 1.0 / (e.radii[0] * e.radii[0]),
                    1.0 / (e.radii[1] * e.radii[1]), 1.0 / (e.radii[2] * e.radii[2]), std::cos(e.yaw),
                    std::sin(e.yaw), e.intensity});
  }

  std::size_t idx = 0;
  for (std::size_t d = 0; d < dims.depth; ++d) {
    const double pd = normalized_coord(d, dims.depth);
    for (std::size_t h = 0; h < dims.height; ++h) {
      const double ph = normalized_coord(h, dims.height);
      for (std::size_t w = 0; w < dims.width; ++w, ++idx) {
        const double pw = normalized_coord(w, dims.width);
        double best = 0.0;
        for (const auto& p : prep) {
          const double dd = pd - p.cd;
          const double dw = pw - p.cw;
          const double dh = ph - p.ch;
          const double rd = p.cos_y * dd + p.sin_y * dw;
          const double rw = -p.sin_y * dd + p.cos_y * dw;
          const double q = rd * rd * p.inv_rd2 + dh * dh * p.inv_rh2 + rw * rw * p.inv_rw2;
          best = std::max(best, p.intensity * std::max(0.0, 1.0 - q));
        }
        voxels[idx] = static_cast<float>(std::clamp(best, 0.0, 1.0));
      }
    }
  }
  return CtVolume(dims, std::move(voxels));
}

// ---------------------------------------------------------------------------
// Intensity windowing

template <std::floating_point T>
std::vector<T> normalize_window(std::span<const T> raw, T lo, T hi) {
  if (!(lo < hi)) throw ValidationError("normalize_window requires lo < hi");
  std::vector<T> out(raw.size());
  const T range = hi - lo;
  std::transform(raw.begin(), raw.end(), out.begin(),
                 [&](T v) { return std::clamp((v - lo) / range, T(0), T(1)); });
  return out;
}

// ---------------------------------------------------------------------------
// File IO. Layouts are little-endian:
//   ctvol: "CTVOL1\0\0", u32 depth, u32 height, u32 width, f32 voxels (w fastest)
//   drr:   "DRRIMG1\0", u32 height, u32 width, u8 view (0 frontal, 1 lateral), f32 pixels

inline constexpr std::string_view kVolumeMagic{"CTVOL1\0\0", 8};
inline constexpr std::string_view kDrrMagic{"DRRIMG1\0", 8};
inline constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 30;

inline std::vector<char> encode_volume(const CtVolume& vol) {
  bytes::Writer w;
  w.raw(kVolumeMagic);
  w.u32(static_cast<std::uint32_t>(vol.dims().depth));
  w.u32(static_cast<std::uint32_t>(vol.dims().height));
  w.u32(static_cast<std::uint32_t>(vol.dims().width));
  w.f32s(vol.voxels());
  return w.data();
}

inline CtVolume decode_volume(std::span<const char> buf, const std::string& where) {
  bytes::Reader r(buf, where);
  if (!r.expect(kVolumeMagic)) throw FormatError(FormatErrc::BadMagic, where);
  const std::uint64_t d = r.u32(), h = r.u32(), w = r.u32();
  if (d == 0 || h == 0 || w == 0 || d * h * w > kMaxElements) throw FormatError(FormatErrc::DimOverflow, where);
  std::vector<float> voxels(static_cast<std::size_t>(d * h * w));
  r.f32s(voxels);
  r.finish();
  return CtVolume({d, h, w}, std::move(voxels));
}

inline void save_volume(const CtVolume& vol, const std::filesystem::path& path) {
  bytes::write_file(path, encode_volume(vol));
}

inline CtVolume load_volume(const std::filesystem::path& path) {
  const auto buf = bytes::read_file(path);
  return decode_volume(buf, path.string());
}

inline std::vector<char> encode_drr(const DrrImage& img) {
  bytes::Writer w;
  w.raw(kDrrMagic);
  w.u32(static_cast<std::uint32_t>(img.dims().height));
  w.u32(static_cast<std::uint32_t>(img.dims().width));
  w.u8(static_cast<std::uint8_t>(img.view()));
  w.f32s(img.pixels());
  return w.data();
}

inline DrrImage decode_drr(std::span<const char> buf, const std::string& where) {
  bytes::Reader r(buf, where);
  if (!r.expect(kDrrMagic)) throw FormatError(FormatErrc::BadMagic, where);
  const std::uint64_t h = r.u32(), w = r.u32();
  if (h == 0 || w == 0 || h * w > kMaxElements) throw FormatError(FormatErrc::DimOverflow, where);
  const std::uint8_t code = r.u8();
  if (code > 1) throw FormatError(FormatErrc::BadViewCode, where);
  std::vector<float> pixels(static_cast<std::size_t>(h * w));
  r.f32s(pixels);
  r.finish();
  return DrrImage({h, w}, std::move(pixels), static_cast<View>(code));
}

inline void save_drr(const DrrImage& img, const std::filesystem::path& path) {
  bytes::write_file(path, encode_drr(img));
}

inline DrrImage load_drr(const std::filesystem::path& path) {
  const auto buf = bytes::read_file(path);
  return decode_drr(buf, path.string());
}

// 8-bit binary PGM preview; values are clamped to [0, 1] and scaled to 0..255.
inline void save_pgm(std::span<const float> pixels, Dims2 dims, const std::filesystem::path& path) {
  bytes::Writer w;
  w.raw("P5\n" + std::to_string(dims.width) + " " + std::to_string(dims.height) + "\n255\n");
  for (float v : pixels) {
    w.u8(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
  }
  w.save(path);
}

}  // namespace bpct
