#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "bpct/autodiff.hpp"
#include "bpct/rng.hpp"

namespace bpct::nn {

using ad::Shape;
using ad::Tensor;

// Ordered collection of trainable leaves. Insertion order is the checkpoint
// order and the optimizer order.
class ParamStore {
 public:
  Tensor add(const std::string& name, Shape shape, std::vector<double> values) {
    if (index_.count(name)) throw Error("duplicate parameter name: " + name);
    Tensor t = Tensor::parameter(std::move(shape), std::move(values));
    index_[name] = entries_.size();
    entries_.emplace_back(name, t);
    return t;
  }

  Tensor uniform(const std::string& name, Shape shape, double bound, Rng& rng) {
    std::vector<double> v(ad::numel(shape));
    for (auto& x : v) x = rng.uniform(-bound, bound);
    return add(name, std::move(shape), std::move(v));
  }

  Tensor zeros(const std::string& name, Shape shape) {
    const std::size_t n = ad::numel(shape);
    return add(name, std::move(shape), std::vector<double>(n, 0.0));
  }

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  Tensor at(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter: " + name);
    return entries_[it->second].second;
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.numel();
    return n;
  }

  void zero_grad() const {
    for (const auto& [_, t] : entries_) t.zero_grad();
  }

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    out.reserve(entries_.size());
    for (const auto& [_, t] : entries_) out.push_back(t);
    return out;
  }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t> index_;
};

struct ConvLayer {
  Tensor weight;
  Tensor bias;
  int stride = 1;
  int pad = 0;
  bool volumetric = false;

  Tensor operator()(const Tensor& x) const {
    return volumetric ? ad::conv3d(x, weight, bias, stride, pad) : ad::conv2d(x, weight, bias, stride, pad);
  }
};

// Weights U(-b, b) with b = gain * sqrt(3 / fan_in); bias zero.
inline ConvLayer conv_layer(ParamStore& store, const std::string& name, std::size_t in_ch, std::size_t out_ch,
                            std::size_t kernel, int stride, int pad, bool volumetric, Rng& rng,
                            double gain = std::sqrt(2.0)) {
  Shape wshape{out_ch, in_ch, kernel, kernel};
  if (volumetric) wshape.push_back(kernel);
  const double fan_in = static_cast<double>(ad::numel(wshape) / out_ch);
  ConvLayer layer;
  layer.weight = store.uniform(name + ".weight", wshape, gain * std::sqrt(3.0 / fan_in), rng);
  layer.bias = store.zeros(name + ".bias", {out_ch});
  layer.stride = stride;
  layer.pad = pad;
  layer.volumetric = volumetric;
  return layer;
}

inline ConvLayer conv2d_layer(ParamStore& store, const std::string& name, std::size_t in_ch, std::size_t out_ch,
                              std::size_t kernel, int stride, int pad, Rng& rng, double gain = std::sqrt(2.0)) {
  return conv_layer(store, name, in_ch, out_ch, kernel, stride, pad, false, rng, gain);
}

inline ConvLayer conv3d_layer(ParamStore& store, const std::string& name, std::size_t in_ch, std::size_t out_ch,
                              std::size_t kernel, int stride, int pad, Rng& rng, double gain = std::sqrt(2.0)) {
  return conv_layer(store, name, in_ch, out_ch, kernel, stride, pad, true, rng, gain);
}

}  // namespace bpct::nn
