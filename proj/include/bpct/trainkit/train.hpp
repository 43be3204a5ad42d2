#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bpct/gan.hpp"
#include "bpct/trainkit/config.hpp"
#include "bpct/trainkit/dataset.hpp"
#include "bpct/trainkit/optim.hpp"

namespace bpct::train {

// Order of the per-step rows in the metrics log.
inline constexpr std::array<std::string_view, 9> kLossParts = {
    "total", "recon", "proj", "adv", "perc", "codebook", "commit", "attn_recon", "d_loss"};

struct StepRecord {
  std::size_t step = 0;  // 1-based
  std::size_t epoch = 0;
  std::array<double, kLossParts.size()> values{};

  double part(std::string_view name) const {
    for (std::size_t i = 0; i < kLossParts.size(); ++i) {
      if (kLossParts[i] == name) return values[i];
    }
    throw Error("unknown loss part " + std::string(name));
  }
};

struct TrainResult {
  std::filesystem::path checkpoint;
  std::filesystem::path metrics;
  std::filesystem::path summary;
  std::vector<std::filesystem::path> checkpoints;
  std::vector<StepRecord> history;
  std::unique_ptr<gan::Generator> generator;
  std::size_t dead_codes = 0;  // VQ only: entries never selected
};

inline std::string shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace detail {

inline void shuffle(std::vector<std::size_t>& order, Rng& rng) {
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
}

inline bool all_finite(const StepRecord& r) {
  for (double v : r.values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

[[noreturn]] inline void diverged(const std::filesystem::path& out_dir, const StepRecord& r, double g_norm,
                                  double d_norm) {
  const auto dump = out_dir / "divergence.txt";
  std::ostringstream s;
  s << "step=" << r.step << "\nepoch=" << r.epoch << "\n";
  for (std::size_t i = 0; i < kLossParts.size(); ++i) s << kLossParts[i] << "=" << shortest(r.values[i]) << "\n";
  s << "generator_grad_norm=" << shortest(g_norm) << "\ndiscriminator_grad_norm=" << shortest(d_norm) << "\n";
  const std::string text = s.str();
  bytes::write_file(dump, std::span<const char>(text.data(), text.size()));
  throw DivergenceError("non-finite loss at step " + std::to_string(r.step) + "; diagnostics in " + dump.string());
}

inline void write_summary(const TrainConfig& cfg, const TrainResult& r) {
  nlohmann::ordered_json j;
  j["model"] = std::string(gan::to_string(cfg.model.kind));
  j["steps"] = r.history.size();
  j["epochs_run"] = r.history.empty() ? 0 : r.history.back().epoch + 1;
  nlohmann::ordered_json last = nlohmann::ordered_json::object();
  if (!r.history.empty()) {
    for (std::size_t i = 0; i < kLossParts.size(); ++i) last[std::string(kLossParts[i])] = r.history.back().values[i];
  }
  j["final_losses"] = last;
  j["metrics"] = r.metrics.filename().string();
  nlohmann::ordered_json ckpts = nlohmann::ordered_json::array();
  for (const auto& c : r.checkpoints) ckpts.push_back(c.filename().string());
  j["checkpoints"] = ckpts;
  if (cfg.model.kind == gan::ModelKind::VQ) j["vq_dead_codes"] = r.dead_codes;
  const std::string text = j.dump(2) + "\n";
  bytes::write_file(r.summary, std::span<const char>(text.data(), text.size()));
}

inline double value_or_zero(const ad::Tensor& t) { return t ? t.item() : 0.0; }

}  // namespace detail

using StepCallback = std::function<void(const StepRecord&)>;

// Per step: generator forward on each sample of the batch, total_g_loss,
// gradients averaged over the batch, one Adam step; then one SGD step of the
// discriminator on (real, detached fake) with the LSGAN loss.
inline TrainResult train(const TrainConfig& cfg, const std::vector<Sample>& data, const StepCallback& on_step = {}) {
  validate(cfg);
  if (data.empty()) throw ValidationError("train: empty dataset");
  for (const auto& s : data) {
    if (!(s.volume.dims() == cfg.vol_dims())) throw ShapeError("train: sample dims do not match model.vol_dim");
  }
  const std::filesystem::path out_dir(cfg.out_dir);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) throw IoError("cannot create output directory " + out_dir.string());

  gan::ModelConfig mc = cfg.model;
  TrainResult result;
  result.generator = gan::make_generator(mc);
  gan::Generator& gen = *result.generator;
  gan::Discriminator3D disc(mc.base_channels, cfg.seed * 2 + 1);
  const gan::FeatNet featnet(cfg.featnet_seed);
  Adam adam(gen.params().tensors());
  Sgd sgd(disc.params().tensors());
  Rng order_rng(cfg.seed);

  result.metrics = out_dir / "metrics.csv";
  std::ofstream log(result.metrics, std::ios::binary | std::ios::trunc);
  if (!log) throw IoError("cannot open for writing: " + result.metrics.string());
  log << "step,epoch,part,value\n";

  const auto& w = cfg.weights;
  const std::vector<ad::Tensor> g_params = gen.params().tensors();
  const std::vector<ad::Tensor> d_params = disc.params().tensors();
  std::vector<std::size_t> order(data.size());
  std::size_t step = 0;
  bool stop = false;
  for (std::size_t epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    const double d_lr = cfg.d_lr * (lr / cfg.lr);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    detail::shuffle(order, order_rng);
    for (std::size_t start = 0; start < order.size() && !stop; start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      const double inv_b = 1.0 / static_cast<double>(end - start);
      StepRecord rec;
      rec.step = ++step;
      rec.epoch = epoch;
      gen.params().zero_grad();
      disc.params().zero_grad();
      std::vector<ad::Tensor> fakes;
      for (std::size_t k = start; k < end; ++k) {
        const Sample& s = data[order[k]];
        const auto out = gen.forward(s.frontal_t, s.lateral_t);
        gan::LossParts parts;
        parts.recon = gan::reconstruction_loss(out.volume, s.gt);
        parts.proj = gan::projection_loss(out.volume, s.gt);
        // Zero-weighted parts are still logged but kept out of the gradient graph.
        const ad::Tensor adv = gan::lsgan_g_loss(disc(w.adv > 0.0 ? out.volume : out.volume.detach()));
        const ad::Tensor perc =
            w.perc > 0.0 ? gan::perceptual_loss(out.volume, s.gt, featnet)
                         : gan::perceptual_loss(out.volume.detach(), s.gt, featnet);
        if (w.adv > 0.0) parts.adv = adv;
        if (w.perc > 0.0) parts.perc = perc;
        parts.codebook = out.codebook_loss;
        parts.commit = out.commitment_loss;
        parts.attn_recon = out.attn_recon;
        const ad::Tensor total = gan::total_g_loss(parts, w);
        const std::array<double, 8> vals = {total.item(),
                                            parts.recon.item(),
                                            parts.proj.item(),
                                            adv.item(),
                                            perc.item(),
                                            detail::value_or_zero(out.codebook_loss),
                                            detail::value_or_zero(out.commitment_loss),
                                            detail::value_or_zero(out.attn_recon)};
        for (std::size_t i = 0; i < vals.size(); ++i) rec.values[i] += vals[i] * inv_b;
        if (!std::isfinite(vals[0])) detail::diverged(out_dir, rec, grad_norm(g_params), grad_norm(d_params));
        ad::backward(ad::mul_scalar(total, inv_b));
        if (auto* book = gen.codebook()) book->record(out.codes);
        fakes.push_back(out.volume.detach());
      }
      adam.step(lr, cfg.weight_decay);

      disc.params().zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        const ad::Tensor d_loss = gan::lsgan_d_loss(disc(data[order[k]].gt), disc(fakes[k - start]));
        rec.values[8] += d_loss.item() * inv_b;
        ad::backward(ad::mul_scalar(d_loss, inv_b));
      }
      if (!detail::all_finite(rec)) detail::diverged(out_dir, rec, grad_norm(g_params), grad_norm(d_params));
      sgd.step(d_lr, cfg.d_weight_decay);

      for (std::size_t i = 0; i < kLossParts.size(); ++i) {
        log << rec.step << ',' << rec.epoch << ',' << kLossParts[i] << ',' << shortest(rec.values[i]) << '\n';
      }
      result.history.push_back(rec);
      if (on_step) on_step(rec);
      if (cfg.max_steps != 0 && step >= cfg.max_steps) stop = true;
    }
    if (cfg.checkpoint_interval != 0 && (epoch + 1) % cfg.checkpoint_interval == 0 && !stop &&
        epoch + 1 != cfg.epochs) {
      const auto path = out_dir / ("checkpoint_epoch" + std::to_string(epoch + 1) + ".bpct");
      gan::save_checkpoint(gen, path);
      result.checkpoints.push_back(path);
    }
  }
  log.flush();
  if (!log) throw IoError("write failed: " + result.metrics.string());
  result.checkpoint = out_dir / "final.bpct";
  gan::save_checkpoint(gen, result.checkpoint);
  result.checkpoints.push_back(result.checkpoint);
  if (const auto* book = gen.codebook()) {
    for (auto u : book->usage) result.dead_codes += u == 0 ? 1 : 0;
  }
  result.summary = out_dir / "summary.json";
  detail::write_summary(cfg, result);
  return result;
}

inline TrainResult train(const TrainConfig& cfg, const StepCallback& on_step = {}) {
  validate(cfg);
  return train(cfg, training_set(cfg), on_step);
}

}  // namespace bpct::train
