#pragma once

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "bpct/gan.hpp"
#include "bpct/parallel.hpp"
#include "bpct/projector.hpp"
#include "bpct/trainkit/config.hpp"
#include "bpct/volcore.hpp"

namespace bpct::train {

// Ground-truth volume plus its two mean-intensity DRRs, as tensors ready for
// the generator.
struct Sample {
  CtVolume volume;
  DrrImage frontal;
  DrrImage lateral;
  ad::Tensor gt;
  ad::Tensor frontal_t;
  ad::Tensor lateral_t;
};

inline Sample make_sample(CtVolume vol) {
  Sample s;
  s.frontal = project(vol, View::Frontal);
  s.lateral = project(vol, View::Lateral);
  s.gt = gan::volume_tensor(vol);
  s.frontal_t = gan::drr_tensor(s.frontal);
  s.lateral_t = gan::drr_tensor(s.lateral);
  s.volume = std::move(vol);
  return s;
}

// Phantoms with seeds first_seed .. first_seed + count - 1. Each phantom is a
// pure function of its seed, so generation runs in parallel.
inline std::vector<Sample> make_phantom_set(std::uint64_t first_seed, std::size_t count, const Dims3& dims,
                                            int ellipsoids) {
  std::vector<Sample> out(count);
  parallel_for(count, [&](std::size_t i) {
    PhantomSpec spec;
    spec.seed = first_seed + i;
    spec.dims = dims;
    spec.n_ellipsoids = ellipsoids;
    out[i] = make_sample(make_phantom(spec));
  });
  return out;
}

inline std::vector<Sample> training_set(const TrainConfig& cfg) {
  return make_phantom_set(cfg.data.seed, cfg.data.count, cfg.vol_dims(), cfg.data.ellipsoids);
}

inline std::vector<Sample> validation_set(const TrainConfig& cfg) {
  return make_phantom_set(cfg.data.seed + cfg.data.count, cfg.data.val_count, cfg.vol_dims(), cfg.data.ellipsoids);
}

// Every *.ctvol in dir, sorted by file name.
inline std::vector<std::filesystem::path> list_volumes(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".ctvol") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

inline std::vector<Sample> load_sample_dir(const std::filesystem::path& dir) {
  std::vector<Sample> out;
  for (const auto& f : list_volumes(dir)) out.push_back(make_sample(load_volume(f)));
  if (out.empty()) throw ValidationError("no .ctvol files in " + dir.string());
  return out;
}

}  // namespace bpct::train
