#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "bpct/gan.hpp"
#include "bpct/trainkit/dataset.hpp"
#include "bpct/trainkit/metrics.hpp"

namespace bpct::train {

struct MetricsRow {
  std::string method;
  double psnr_db = 0.0;  // +inf when every prediction is exact
  double ssim = 0.0;
  std::size_t n_samples = 0;
};

inline void validate(const MetricsRow& r) {
  if (!(r.ssim >= -1.0 && r.ssim <= 1.0)) throw ValidationError("metrics row: ssim outside [-1, 1]");
  if (std::isnan(r.psnr_db) || r.psnr_db == -std::numeric_limits<double>::infinity()) {
    throw ValidationError("metrics row: psnr must be finite or +inf");
  }
}

// Means over pairs; any exact reconstruction makes the PSNR mean +inf.
inline MetricsRow score_pairs(std::string method, std::span<const CtVolume> pred, std::span<const CtVolume> gt) {
  if (pred.size() != gt.size()) throw ValidationError("evaluate: prediction and ground-truth counts differ");
  if (pred.empty()) throw ValidationError("evaluate: empty dataset");
  MetricsRow row{std::move(method), 0.0, 0.0, pred.size()};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    row.psnr_db += psnr(pred[i], gt[i]);
    row.ssim += ssim(pred[i], gt[i]);
  }
  row.psnr_db /= static_cast<double>(pred.size());
  row.ssim /= static_cast<double>(pred.size());
  validate(row);
  return row;
}

inline CtVolume reconstruct(const gan::Generator& gen, const DrrImage& frontal, const DrrImage& lateral) {
  return gan::to_volume(gen.forward(frontal, lateral).volume);
}

inline std::vector<CtVolume> reconstruct_all(const gan::Generator& gen, std::span<const Sample> data) {
  std::vector<CtVolume> out;
  out.reserve(data.size());
  for (const auto& s : data) out.push_back(gan::to_volume(gen.forward(s.frontal_t, s.lateral_t).volume));
  return out;
}

inline MetricsRow evaluate(const gan::Generator& gen, std::span<const Sample> data, std::string method = {}) {
  if (data.empty()) throw ValidationError("evaluate: empty dataset");
  if (method.empty()) method = std::string(gan::to_string(gen.config().kind));
  const auto pred = reconstruct_all(gen, data);
  std::vector<CtVolume> gt;
  gt.reserve(data.size());
  for (const auto& s : data) gt.push_back(s.volume);
  return score_pairs(std::move(method), pred, gt);
}

inline std::string format_psnr(double v) {
  if (std::isinf(v)) return "inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

inline std::string format_ssim(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string report_csv(std::span<const MetricsRow> rows) {
  std::string out = "method,psnr_db,ssim,n\n";
  for (const auto& r : rows) {
    out += r.method + "," + format_psnr(r.psnr_db) + "," + format_ssim(r.ssim) + "," + std::to_string(r.n_samples) + "\n";
  }
  return out;
}

inline std::string report_table(std::span<const MetricsRow> rows) {
  std::size_t width = 6;
  for (const auto& r : rows) width = std::max(width, r.method.size());
  auto pad = [](std::string s, std::size_t n, bool right) {
    if (s.size() >= n) return s;
    return right ? std::string(n - s.size(), ' ') + s : s + std::string(n - s.size(), ' ');
  };
  std::string out = pad("Method", width, false) + "  " + pad("PSNR(dB)", 10, true) + "  " + pad("SSIM", 8, true) +
                    "  " + pad("n", 5, true) + "\n";
  out += std::string(width + 2 + 10 + 2 + 8 + 2 + 5, '-') + "\n";
  for (const auto& r : rows) {
    char psnr_buf[32], ssim_buf[32];
    if (std::isinf(r.psnr_db)) {
      std::snprintf(psnr_buf, sizeof psnr_buf, "inf");
    } else {
      std::snprintf(psnr_buf, sizeof psnr_buf, "%.2f", r.psnr_db);
    }
    std::snprintf(ssim_buf, sizeof ssim_buf, "%.4f", r.ssim);
    out += pad(r.method, width, false) + "  " + pad(psnr_buf, 10, true) + "  " + pad(ssim_buf, 8, true) + "  " +
           pad(std::to_string(r.n_samples), 5, true) + "\n";
  }
  return out;
}

}  // namespace bpct::train
