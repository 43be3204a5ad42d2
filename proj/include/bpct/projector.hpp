#pragma once

#include <cmath>
#include <concepts>
#include <span>
#include <variant>
#include <vector>

#include "bpct/error.hpp"
#include "bpct/volcore.hpp"

namespace bpct {

// Parallel-ray projection along one volume axis.
//   Frontal: integrate along depth, image (height, width).
//   Lateral: integrate along width, image (height, depth).

struct MeanIntensity {};

struct BeerLambert {
  double mu_scale = 1.0;
};

using ProjectionModel = std::variant<MeanIntensity, BeerLambert>;

inline void validate(const ProjectionModel& model) {
  if (const auto* bl = std::get_if<BeerLambert>(&model); bl != nullptr && !(bl->mu_scale > 0.0)) {
    throw ValidationError("BeerLambert mu_scale must be positive");
  }
}

inline Dims2 face_dims(const Dims3& dims, View view) {
  return view == View::Frontal ? Dims2{dims.height, dims.width} : Dims2{dims.height, dims.depth};
}

inline std::size_t ray_length(const Dims3& dims, View view) {
  return view == View::Frontal ? dims.depth : dims.width;
}

// Mean along the view axis. out must hold face_dims(dims, view).count() values.
template <std::floating_point In, std::floating_point Out>
void project_mean(std::span<const In> vol, const Dims3& dims, View view, std::span<Out> out) {
  if (vol.size() != dims.count()) throw ShapeError("project: volume size does not match dims");
  const Dims2 face = face_dims(dims, view);
  if (out.size() != face.count()) throw ShapeError("project: output size does not match face dims");
  const std::size_t D = dims.depth, H = dims.height, W = dims.width;
  if (view == View::Frontal) {
    const double len = static_cast<double>(D);
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t w = 0; w < W; ++w) {
        double sum = 0.0;
        for (std::size_t d = 0; d < D; ++d) sum += static_cast<double>(vol[(d * H + h) * W + w]);
        out[h * W + w] = static_cast<Out>(sum / len);
      }
    }
  } else {
    const double len = static_cast<double>(W);
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t d = 0; d < D; ++d) {
        const In* row = vol.data() + (d * H + h) * W;
        double sum = 0.0;
        for (std::size_t w = 0; w < W; ++w) sum += static_cast<double>(row[w]);
        out[h * D + d] = static_cast<Out>(sum / len);
      }
    }
  }
}

// Transpose of project_mean: each voxel on a ray receives grad_pixel / L.
template <std::floating_point T>
std::vector<T> project_adjoint(std::span<const T> grad_img, View view, const Dims3& dims) {
  const Dims2 face = face_dims(dims, view);
  if (grad_img.size() != face.count()) throw ShapeError("project_adjoint: gradient image does not match face dims");
  std::vector<T> out(dims.count());
  const std::size_t D = dims.depth, H = dims.height, W = dims.width;
  const T len = static_cast<T>(ray_length(dims, view));
  for (std::size_t d = 0; d < D; ++d) {
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t w = 0; w < W; ++w) {
        const T g = view == View::Frontal ? grad_img[h * W + w] : grad_img[h * D + d];
        out[(d * H + h) * W + w] = g / len;
      }
    }
  }
  return out;
}

inline DrrImage project(const CtVolume& vol, View view, const ProjectionModel& model = MeanIntensity{}) {
  validate(model);
  const Dims2 face = face_dims(vol.dims(), view);
  std::vector<double> mean(face.count());
  project_mean<float, double>(vol.voxels(), vol.dims(), view, mean);
  std::vector<float> pixels(face.count());
  if (const auto* bl = std::get_if<BeerLambert>(&model)) {
    for (std::size_t i = 0; i < mean.size(); ++i) {
      pixels[i] = static_cast<float>(1.0 - std::exp(-bl->mu_scale * mean[i]));
    }
  } else {
    for (std::size_t i = 0; i < mean.size(); ++i) pixels[i] = static_cast<float>(mean[i]);
  }
  return DrrImage(face, std::move(pixels), view);
}

}  // namespace bpct
