#pragma once

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "bpct/gan.hpp"
#include "bpct/gradsuite.hpp"
#include "bpct/projector.hpp"
#include "bpct/trainkit.hpp"
#include "bpct/volcore.hpp"

namespace bpct::cli {

enum ExitCode : int {
  kOk = 0,
  kParseOrIo = 1,
  kValidation = 2,
  kGradcheckFailed = 3,
};

namespace fs = std::filesystem;

namespace detail {

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
}

inline View parse_axis_view(const std::string& s) {
  if (s == "frontal") return View::Frontal;
  if (s == "lateral") return View::Lateral;
  throw ValidationError("unknown view '" + s + "'");
}

// Axis 0/1/2 = depth/height/width.
inline int parse_axis(const std::string& s) {
  if (s == "d" || s == "depth") return 0;
  if (s == "h" || s == "height") return 1;
  if (s == "w" || s == "width") return 2;
  throw ValidationError("unknown axis '" + s + "' (expected depth, height or width)");
}

inline std::vector<float> slice(const CtVolume& vol, int axis, std::size_t index, Dims2& dims) {
  const Dims3& d = vol.dims();
  const std::size_t extent[3] = {d.depth, d.height, d.width};
  if (index >= extent[axis]) {
    throw ValidationError("slice index " + std::to_string(index) + " out of range for axis of length " +
                          std::to_string(extent[axis]));
  }
  std::vector<float> out;
  if (axis == 0) {
    dims = {d.height, d.width};
    for (std::size_t h = 0; h < d.height; ++h)
      for (std::size_t w = 0; w < d.width; ++w) out.push_back(vol.at(index, h, w));
  } else if (axis == 1) {
    dims = {d.depth, d.width};
    for (std::size_t z = 0; z < d.depth; ++z)
      for (std::size_t w = 0; w < d.width; ++w) out.push_back(vol.at(z, index, w));
  } else {
    dims = {d.depth, d.height};
    for (std::size_t z = 0; z < d.depth; ++z)
      for (std::size_t h = 0; h < d.height; ++h) out.push_back(vol.at(z, h, index));
  }
  return out;
}

inline std::string padded(std::size_t i, int width) {
  std::string s = std::to_string(i);
  return s.size() >= static_cast<std::size_t>(width) ? s : std::string(width - s.size(), '0') + s;
}

struct PhantomArgs {
  std::string out;
  std::size_t count = 1;
  std::size_t dims = 16;
  std::uint64_t seed = 0;
  int ellipsoids = 4;
};

inline int cmd_phantom(const PhantomArgs& a, std::ostream& out) {
  PhantomSpec spec;
  spec.dims = Dims3::cube(a.dims);
  spec.n_ellipsoids = a.ellipsoids;
  validate(spec);
  ensure_dir(a.out);
  for (std::size_t i = 0; i < a.count; ++i) {
    spec.seed = a.seed + i;
    const auto path = fs::path(a.out) / ("phantom_" + std::to_string(i) + ".ctvol");
    save_volume(make_phantom(spec), path);
    out << path.string() << "\n";
  }
  return kOk;
}

struct DrrArgs {
  std::string vol, model = "mean", out;
  double mu = 1.0;
  bool pgm = false;
};

inline int cmd_drr(const DrrArgs& a, std::ostream& out) {
  ProjectionModel model;
  if (a.model == "mean") {
    model = MeanIntensity{};
  } else if (a.model == "beer") {
    model = BeerLambert{a.mu};
  } else {
    throw ValidationError("unknown projection model '" + a.model + "' (expected mean or beer)");
  }
  validate(model);
  const CtVolume vol = load_volume(a.vol);
  ensure_dir(a.out);
  const std::string stem = fs::path(a.vol).stem().string();
  for (View v : {View::Frontal, View::Lateral}) {
    const DrrImage img = project(vol, v, model);
    const auto base = fs::path(a.out) / (stem + "_" + to_string(v));
    save_drr(img, base.string() + ".drr");
    out << base.string() << ".drr\n";
    if (a.pgm) {
      save_pgm(img.pixels(), img.dims(), base.string() + ".pgm");
      out << base.string() << ".pgm\n";
    }
  }
  return kOk;
}

struct TrainArgs {
  std::string config, out_dir;
  std::size_t log_every = 10;
  bool quiet = false;
};

inline int cmd_train(const TrainArgs& a, std::ostream& out) {
  train::TrainConfig cfg = train::load_config(a.config);
  if (!a.out_dir.empty()) cfg.out_dir = a.out_dir;
  const auto on_step = [&](const train::StepRecord& r) {
    if (a.quiet || a.log_every == 0 || r.step % a.log_every != 0) return;
    char line[160];
    std::snprintf(line, sizeof line, "step %zu epoch %zu total %.6f recon %.6f d_loss %.6f\n", r.step, r.epoch,
                  r.part("total"), r.part("recon"), r.part("d_loss"));
    out << line << std::flush;
  };
  const auto result = train::train(cfg, on_step);
  out << "metrics: " << result.metrics.string() << "\n";
  out << "checkpoint: " << result.checkpoint.string() << "\n";
  if (result.generator->codebook() != nullptr) {
    out << "vq dead codes: " << result.dead_codes << " of " << cfg.model.vq_k << "\n";
  }
  return kOk;
}

struct EvalArgs {
  std::string ckpt, pred, data, method, csv;
};

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (a.ckpt.empty() == a.pred.empty()) throw ValidationError("eval needs exactly one of --ckpt or --pred");
  train::MetricsRow row;
  if (!a.ckpt.empty()) {
    const auto gen = gan::load_checkpoint(a.ckpt);
    const auto data = train::load_sample_dir(a.data);
    row = train::evaluate(*gen, data, a.method);
  } else {
    std::vector<CtVolume> gt, pred;
    for (const auto& f : train::list_volumes(a.data)) {
      gt.push_back(load_volume(f));
      pred.push_back(load_volume(fs::path(a.pred) / f.filename()));
    }
    if (gt.empty()) throw ValidationError("no .ctvol files in " + a.data);
    row = train::score_pairs(a.method.empty() ? "pred" : a.method, pred, gt);
  }
  const std::vector<train::MetricsRow> rows{row};
  out << train::report_table(rows);
  if (!a.csv.empty()) {
    const std::string csv = train::report_csv(rows);
    bytes::write_file(a.csv, std::span<const char>(csv.data(), csv.size()));
  }
  return kOk;
}

struct ReconstructArgs {
  std::string ckpt, frontal, lateral, out;
};

inline int cmd_reconstruct(const ReconstructArgs& a, std::ostream& out) {
  const auto gen = gan::load_checkpoint(a.ckpt);
  const DrrImage f = load_drr(a.frontal);
  const DrrImage l = load_drr(a.lateral);
  const CtVolume vol = train::reconstruct(*gen, f, l);
  save_volume(vol, a.out);
  out << a.out << "\n";
  return kOk;
}

struct GradcheckArgs {
  std::string suite = "all";
  bool list = false;
};

inline int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  const auto cases = gradsuite::all_cases();
  if (a.list) {
    for (const auto& c : cases) out << c.name << "\n";
    return kOk;
  }
  std::vector<const gradsuite::Case*> chosen;
  for (const auto& c : cases) {
    if (a.suite == "all" || a.suite == c.name) chosen.push_back(&c);
  }
  if (chosen.empty()) throw ValidationError("unknown gradcheck suite '" + a.suite + "' (see --list)");
  char line[160];
  std::snprintf(line, sizeof line, "%-22s %8s %12s %10s  %s\n", "case", "entries", "max_rel_err", "tolerance",
                "status");
  out << line;
  bool ok = true;
  for (const auto* c : chosen) {
    const auto r = c->run();
    ok = ok && r.passed();
    std::snprintf(line, sizeof line, "%-22s %8zu %12.3e %10.1e  %s\n", r.name.c_str(), r.entries, r.max_error,
                  r.tolerance, r.passed() ? "ok" : "FAIL");
    out << line << std::flush;
  }
  return ok ? kOk : kGradcheckFailed;
}

struct SlicesArgs {
  std::string vol, axis = "depth", out;
  std::vector<std::size_t> indices;
};

inline int cmd_slices(const SlicesArgs& a, std::ostream& out) {
  const int axis = parse_axis(a.axis);
  const CtVolume vol = load_volume(a.vol);
  const std::size_t extent[3] = {vol.dims().depth, vol.dims().height, vol.dims().width};
  std::vector<std::size_t> idx = a.indices;
  if (idx.empty()) {
    for (std::size_t i = 0; i < extent[axis]; ++i) idx.push_back(i);
  }
  ensure_dir(a.out);
  static constexpr const char* names[3] = {"depth", "height", "width"};
  for (std::size_t i : idx) {
    Dims2 dims;
    const auto pixels = slice(vol, axis, i, dims);
    const auto path = fs::path(a.out) / (std::string("slice_") + names[axis] + "_" + padded(i, 3) + ".pgm");
    save_pgm(pixels, dims, path);
    out << path.string() << "\n";
  }
  return kOk;
}

}  // namespace detail

// Parses argv and runs one subcommand. Never throws; returns an ExitCode.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"bpct: CT volume reconstruction from biplanar DRRs"};
  app.require_subcommand(1);
  std::function<int()> action;

  detail::PhantomArgs ph;
  auto* phantom = app.add_subcommand("phantom", "Write synthetic ellipsoid phantoms");
  phantom->add_option("--out", ph.out, "Output directory")->required();
  phantom->add_option("--count", ph.count, "Number of phantoms")->capture_default_str();
  phantom->add_option("--dims", ph.dims, "Cube side length (4..256)")->capture_default_str();
  phantom->add_option("--seed", ph.seed, "Seed of the first phantom")->capture_default_str();
  phantom->add_option("--ellipsoids", ph.ellipsoids, "Ellipsoids per phantom")->capture_default_str();
  phantom->callback([&] { action = [&] { return detail::cmd_phantom(ph, out); }; });

  detail::DrrArgs dr;
  auto* drr = app.add_subcommand("drr", "Project a volume to frontal and lateral DRRs");
  drr->add_option("--vol", dr.vol, "Input .ctvol")->required();
  drr->add_option("--model", dr.model, "mean or beer")->capture_default_str();
  drr->add_option("--mu", dr.mu, "Attenuation scale for the beer model")->capture_default_str();
  drr->add_option("--out", dr.out, "Output directory")->required();
  drr->add_flag("--pgm", dr.pgm, "Also write 8-bit PGM previews");
  drr->callback([&] { action = [&] { return detail::cmd_drr(dr, out); }; });

  detail::TrainArgs tr;
  auto* trn = app.add_subcommand("train", "Train a generator from a config file");
  trn->add_option("--config", tr.config, "Flat key = value config")->required();
  trn->add_option("--out", tr.out_dir, "Override train.out_dir");
  trn->add_option("--log-every", tr.log_every, "Print every N steps (0: never)")->capture_default_str();
  trn->add_flag("--quiet", tr.quiet, "No per-step output");
  trn->callback([&] { action = [&] { return detail::cmd_train(tr, out); }; });

  detail::EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "PSNR/SSIM report for a checkpoint or a directory of predictions");
  eval->add_option("--ckpt", ev.ckpt, "Generator checkpoint");
  eval->add_option("--pred", ev.pred, "Directory of predicted .ctvol files named like the ground truth");
  eval->add_option("--data", ev.data, "Directory of ground-truth .ctvol files")->required();
  eval->add_option("--method", ev.method, "Row label (default: model kind, or 'pred')");
  eval->add_option("--csv", ev.csv, "Also write the CSV report here");
  eval->callback([&] { action = [&] { return detail::cmd_eval(ev, out); }; });

  detail::ReconstructArgs rc;
  auto* rec = app.add_subcommand("reconstruct", "Reconstruct one volume from two DRR files");
  rec->add_option("--ckpt", rc.ckpt, "Generator checkpoint")->required();
  rec->add_option("--frontal", rc.frontal, "Frontal .drr")->required();
  rec->add_option("--lateral", rc.lateral, "Lateral .drr")->required();
  rec->add_option("--out", rc.out, "Output .ctvol")->required();
  rec->callback([&] { action = [&] { return detail::cmd_reconstruct(rc, out); }; });

  detail::GradcheckArgs gc;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference checks of every op and composite");
  grad->add_option("--suite", gc.suite, "all or one case name")->capture_default_str();
  grad->add_flag("--list", gc.list, "List case names");
  grad->callback([&] { action = [&] { return detail::cmd_gradcheck(gc, out); }; });

  detail::SlicesArgs sl;
  auto* slices = app.add_subcommand("slices", "Export volume slices as 8-bit PGM");
  slices->add_option("--vol", sl.vol, "Input .ctvol")->required();
  slices->add_option("--axis", sl.axis, "depth, height or width")->capture_default_str();
  slices->add_option("--index", sl.indices, "Slice indices (default: all)");
  slices->add_option("--out", sl.out, "Output directory")->required();
  slices->callback([&] { action = [&] { return detail::cmd_slices(sl, out); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kParseOrIo;
  }
  try {
    return action ? action() : kOk;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kParseOrIo;
  }
}

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<const char*> argv{"bpct"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace bpct::cli
