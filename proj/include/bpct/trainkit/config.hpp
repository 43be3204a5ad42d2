#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "bpct/bytes.hpp"
#include "bpct/error.hpp"
#include "bpct/gan.hpp"

namespace bpct::train {

struct DatasetSpec {
  std::size_t count = 20;      // training phantoms
  std::size_t val_count = 0;   // held-out phantoms, seeded after the training ones
  std::uint64_t seed = 1000;
  int ellipsoids = 4;
};

struct TrainConfig {
  gan::ModelConfig model;
  std::size_t epochs = 100;
  double lr = 2e-4;
  double weight_decay = 1e-6;
  std::size_t decay_start_epoch = 50;
  double decay_gamma = 0.95;
  double d_lr = 2e-4;
  double d_weight_decay = 1e-6;
  std::size_t batch = 2;
  std::uint64_t seed = 0;
  std::size_t max_steps = 0;            // 0: run every epoch
  std::size_t checkpoint_interval = 0;  // epochs; 0: final checkpoint only
  std::string out_dir = "run";
  gan::LossWeights weights;
  std::uint64_t featnet_seed = 7;
  DatasetSpec data;

  Dims3 vol_dims() const { return Dims3::cube(model.vol_dim); }
  Dims2 drr_dims() const { return {model.vol_dim, model.vol_dim}; }
};

inline void validate(const TrainConfig& c) {
  gan::validate(c.model);
  gan::validate(c.weights);
  if (!(c.lr > 0.0) || !std::isfinite(c.lr)) throw ValidationError("train.lr must be > 0");
  if (!(c.d_lr > 0.0) || !std::isfinite(c.d_lr)) throw ValidationError("train.d_lr must be > 0");
  if (!(c.weight_decay >= 0.0) || !(c.d_weight_decay >= 0.0)) throw ValidationError("weight decay must be >= 0");
  if (c.epochs < 1) throw ValidationError("train.epochs must be >= 1");
  if (c.decay_start_epoch > c.epochs) throw ValidationError("train.decay_start_epoch must be <= train.epochs");
  if (!(c.decay_gamma > 0.0 && c.decay_gamma <= 1.0)) throw ValidationError("train.decay_gamma must be in (0, 1]");
  if (c.batch < 1) throw ValidationError("train.batch must be >= 1");
  if (c.data.count < 1) throw ValidationError("data.count must be >= 1");
  if (c.data.ellipsoids < 1) throw ValidationError("data.ellipsoids must be >= 1");
  if (c.out_dir.empty()) throw ValidationError("train.out_dir must not be empty");
}

// lr for epoch < decay_start, lr * gamma^(epoch - decay_start + 1) afterwards.
inline double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  if (epoch >= cfg.epochs) throw ValidationError("lr_at: epoch out of range");
  if (epoch < cfg.decay_start_epoch) return cfg.lr;
  return cfg.lr * std::pow(cfg.decay_gamma, static_cast<double>(epoch - cfg.decay_start_epoch + 1));
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T v{};
  const auto* end = text.data() + text.size();
  const auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc{} || p != end) {
    throw ValidationError("config key '" + std::string(key) + "': cannot parse '" + std::string(text) + "'");
  }
  return v;
}

using Setter = std::function<void(TrainConfig&, std::string_view key, std::string_view value)>;

template <typename T>
Setter set_number(T TrainConfig::*field) {
  return [field](TrainConfig& c, std::string_view k, std::string_view v) { c.*field = parse_number<T>(k, v); };
}

template <typename S, typename T>
Setter set_nested(S TrainConfig::*outer, T S::*field) {
  return [outer, field](TrainConfig& c, std::string_view k, std::string_view v) {
    (c.*outer).*field = parse_number<T>(k, v);
  };
}

inline const std::map<std::string, Setter, std::less<>>& config_keys() {
  static const std::map<std::string, Setter, std::less<>> keys = {
      {"model", [](TrainConfig& c, std::string_view, std::string_view v) { c.model.kind = gan::parse_model_kind(v); }},
      {"model.vol_dim", set_nested(&TrainConfig::model, &gan::ModelConfig::vol_dim)},
      {"model.base_channels", set_nested(&TrainConfig::model, &gan::ModelConfig::base_channels)},
      {"model.seed", set_nested(&TrainConfig::model, &gan::ModelConfig::seed)},
      {"attention.reduction", set_nested(&TrainConfig::model, &gan::ModelConfig::attn_reduction)},
      {"attention.lambda_rec", set_nested(&TrainConfig::model, &gan::ModelConfig::attn_lambda_rec)},
      {"vq.K", set_nested(&TrainConfig::model, &gan::ModelConfig::vq_k)},
      {"vq.D", set_nested(&TrainConfig::model, &gan::ModelConfig::vq_d)},
      {"vq.beta", set_nested(&TrainConfig::model, &gan::ModelConfig::vq_beta)},
      {"train.epochs", set_number(&TrainConfig::epochs)},
      {"train.lr", set_number(&TrainConfig::lr)},
      {"train.weight_decay", set_number(&TrainConfig::weight_decay)},
      {"train.decay_start_epoch", set_number(&TrainConfig::decay_start_epoch)},
      {"train.decay_gamma", set_number(&TrainConfig::decay_gamma)},
      {"train.d_lr", set_number(&TrainConfig::d_lr)},
      {"train.d_weight_decay", set_number(&TrainConfig::d_weight_decay)},
      {"train.batch", set_number(&TrainConfig::batch)},
      {"train.seed", set_number(&TrainConfig::seed)},
      {"train.max_steps", set_number(&TrainConfig::max_steps)},
      {"train.checkpoint_interval", set_number(&TrainConfig::checkpoint_interval)},
      {"train.out_dir", [](TrainConfig& c, std::string_view, std::string_view v) { c.out_dir = std::string(v); }},
      {"loss.lambda_recon", set_nested(&TrainConfig::weights, &gan::LossWeights::recon)},
      {"loss.lambda_proj", set_nested(&TrainConfig::weights, &gan::LossWeights::proj)},
      {"loss.lambda_adv", set_nested(&TrainConfig::weights, &gan::LossWeights::adv)},
      {"loss.lambda_perc", set_nested(&TrainConfig::weights, &gan::LossWeights::perc)},
      {"loss.lambda_vq", set_nested(&TrainConfig::weights, &gan::LossWeights::vq)},
      {"loss.lambda_rec_attn", set_nested(&TrainConfig::weights, &gan::LossWeights::rec_attn)},
      {"loss.featnet_seed", set_number(&TrainConfig::featnet_seed)},
      {"data.count", set_nested(&TrainConfig::data, &DatasetSpec::count)},
      {"data.val_count", set_nested(&TrainConfig::data, &DatasetSpec::val_count)},
      {"data.seed", set_nested(&TrainConfig::data, &DatasetSpec::seed)},
      {"data.ellipsoids", set_nested(&TrainConfig::data, &DatasetSpec::ellipsoids)},
  };
  return keys;
}

}  // namespace detail

inline std::vector<std::string> config_key_names() {
  std::vector<std::string> out;
  for (const auto& [k, _] : detail::config_keys()) out.push_back(k);
  return out;
}

// Flat `key = value` lines; `#` starts a comment. Unknown or repeated keys
// are errors. Unset keys keep their defaults.
inline TrainConfig parse_config(std::string_view text, const std::string& where = "config") {
  TrainConfig cfg;
  std::map<std::string, std::size_t, std::less<>> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string at = where + ":" + std::to_string(line_no);
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ValidationError(at + ": expected 'key = value'");
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) throw ValidationError(at + ": expected 'key = value'");
    const auto& keys = detail::config_keys();
    const auto it = keys.find(key);
    if (it == keys.end()) throw ValidationError(at + ": unknown config key '" + std::string(key) + "'");
    if (const auto prev = seen.find(key); prev != seen.end()) {
      throw ValidationError(at + ": key '" + std::string(key) + "' already set on line " + std::to_string(prev->second));
    }
    seen.emplace(std::string(key), line_no);
    try {
      it->second(cfg, key, value);
    } catch (const ValidationError& e) {
      throw ValidationError(at + ": " + e.what());
    }
  }
  validate(cfg);
  return cfg;
}

inline TrainConfig load_config(const std::filesystem::path& path) {
  const auto buf = bytes::read_file(path);
  return parse_config(std::string_view(buf.data(), buf.size()), path.string());
}

}  // namespace bpct::train
