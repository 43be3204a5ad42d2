// Prints one PASS/FAIL line per acceptance criterion; exit status is nonzero
// if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "../unit/oracles.hpp"
#include "bpct/attention.hpp"
#include "bpct/cli/app.hpp"
#include "bpct/gan.hpp"
#include "bpct/gradsuite.hpp"
#include "bpct/parallel.hpp"
#include "bpct/projector.hpp"
#include "bpct/trainkit.hpp"
#include "bpct/vqbridge.hpp"

using namespace bpct;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<double> uniform_values(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

CtVolume random_volume(const Dims3& dims, Rng& rng) {
  std::vector<float> v(dims.count());
  for (auto& x : v) x = static_cast<float>(rng.uniform());
  return CtVolume(dims, std::move(v));
}

fs::path scratch_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("bpct_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Verdict gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t failed = 0, total = 0;
  std::string worst_name;
  double worst_ratio = 0.0;
  std::string failures;
  for (const auto& c : gradsuite::all_cases()) {
    const auto r = c.run();
    ++total;
    const double ratio = r.max_error / r.tolerance;
    if (ratio > worst_ratio) {
      worst_ratio = ratio;
      worst_name = r.name;
    }
    if (!r.passed() || r.entries == 0) {
      ++failed;
      failures += " " + r.name + "=" + fmt("%.2e", r.max_error);
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  Verdict v;
  v.pass = failed == 0 && secs < 300.0;
  v.detail = std::to_string(total - failed) + "/" + std::to_string(total) + " cases within tolerance, worst " +
             worst_name + " at " + fmt("%.3g", worst_ratio) + "x its tolerance, " + fmt("%.1f", secs) + "s" +
             (failures.empty() ? "" : ";" + failures);
  return v;
}

Verdict oracle_equivalence() {
  Rng rng(2024);
  // Quantize vs brute-force scan.
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = 2 + rng.below(63), d = 1 + rng.below(16), n = 1 + rng.below(8);
    auto bookv = uniform_values(k * d, rng);
    if (trial % 10 == 0) {
      // duplicated rows exercise the lowest-index tie rule
      const std::size_t src = rng.below(k), dst = rng.below(k);
      std::copy_n(bookv.begin() + src * d, d, bookv.begin() + dst * d);
    }
    const auto book = vq::make_codebook(k, d, bookv);
    const auto z = uniform_values(n * d, rng, -1.5, 1.5);
    const auto r = vq::quantize(ad::Tensor::constant({n, d}, z), book);
    for (std::size_t i = 0; i < n; ++i) {
      const std::vector<double> zi(z.begin() + i * d, z.begin() + (i + 1) * d);
      if (r.indices[i] != oracle::brute_nearest(zi, bookv, k, d)) ++mismatches;
    }
  }
  // PSNR / SSIM vs definitional loops.
  double metric_err = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const auto a = random_volume(Dims3::cube(8), rng);
    const auto b = trial == 0 ? a : random_volume(Dims3::cube(8), rng);
    const double p = train::psnr(a, b), po = oracle::loop_psnr(a, b);
    if (!(std::isinf(p) && std::isinf(po))) metric_err = std::max(metric_err, std::abs(p - po));
    metric_err = std::max(metric_err, std::abs(train::ssim(a, b) - oracle::brute_ssim(a, b)));
  }
  // Projection vs triple loop, relative to the largest reference pixel.
  double proj_rel = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    PhantomSpec spec;
    spec.seed = seed;
    spec.dims = Dims3{16, 12, 20};
    const auto vol = make_phantom(spec);
    for (View view : {View::Frontal, View::Lateral}) {
      const auto img = project(vol, view);
      const auto ref = oracle::loop_projection(vol, view);
      double diff = 0.0, scale = 0.0;
      for (std::size_t i = 0; i < ref.size(); ++i) {
        diff = std::max(diff, std::abs(double(img.pixels()[i]) - ref[i]));
        scale = std::max(scale, std::abs(ref[i]));
      }
      proj_rel = std::max(proj_rel, diff / std::max(scale, 1e-300));
    }
  }
  // <P x, g> = <x, P^T g> at 8^3.
  double adjoint_err = 0.0;
  const Dims3 dims = Dims3::cube(8);
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = uniform_values(dims.count(), rng);
    for (View view : {View::Frontal, View::Lateral}) {
      const auto g = uniform_values(face_dims(dims, view).count(), rng);
      std::vector<double> px(g.size());
      project_mean<double, double>(x, dims, view, px);
      const auto ptg = project_adjoint<double>(g, view, dims);
      double lhs = 0.0, rhs = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) lhs += px[i] * g[i];
      for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * ptg[i];
      adjoint_err = std::max(adjoint_err, std::abs(lhs - rhs));
    }
  }
  Verdict v;
  v.pass = mismatches == 0 && metric_err <= 1e-6 && proj_rel <= 1e-6 && adjoint_err <= 1e-10;
  v.detail = "quantize mismatches " + std::to_string(mismatches) + "/1000 cases, psnr/ssim err " +
             fmt("%.2e", metric_err) + ", projection rel err " + fmt("%.2e", proj_rel) + ", adjoint err " +
             fmt("%.2e", adjoint_err);
  return v;
}

Verdict identity_invariants() {
  Rng rng(77);
  nn::ParamStore store;
  const auto blk = attention::make_guided_block(store, "g", 16, rng);  // gammas start at 0
  double attn_err = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const auto f = ad::Tensor::constant({16, 4, 4}, uniform_values(256, rng, -2, 2));
    const auto first = attention::cam(blk.cam1, attention::pam(blk.pam1, f));
    const auto second = attention::cam(blk.cam2, attention::pam(blk.pam2, f));
    for (std::size_t i = 0; i < f.numel(); ++i) {
      attn_err = std::max(attn_err, std::abs(first.data()[i] - f.data()[i]));
      attn_err = std::max(attn_err, std::abs(second.data()[i] - f.data()[i]));
    }
  }
  bool st_exact = true;
  for (int trial = 0; trial < 5; ++trial) {
    const auto book = vq::make_codebook(8, 4, uniform_values(32, rng));
    const auto z_e = ad::Tensor::parameter({6, 4}, uniform_values(24, rng));
    const auto q = vq::quantize(z_e, book);
    for (std::size_t i = 0; i < q.z_q.numel(); ++i) st_exact = st_exact && q.z_st.data()[i] == q.z_q.data()[i];
  }
  bool lift_ok = true;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t d3 = 1 + rng.below(4), c3 = 1 + rng.below(4), h = 1 + rng.below(4), w = 1 + rng.below(4);
    const auto f = ad::Tensor::constant({d3 * c3, h, w}, uniform_values(d3 * c3 * h * w, rng));
    const auto lifted = vq::lift_2d_to_3d(f, {d3, h, w, c3});
    const auto back = vq::unlift_3d_to_2d(lifted);
    auto a = std::vector<double>(f.data().begin(), f.data().end());
    auto b = std::vector<double>(lifted.data().begin(), lifted.data().end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    lift_ok = lift_ok && a == b && back.shape() == f.shape() &&
              std::equal(back.data().begin(), back.data().end(), f.data().begin());
  }
  bool fuse_ok = true;
  for (int trial = 0; trial < 5; ++trial) {
    const auto x = ad::Tensor::constant({2, 3, 3, 3}, uniform_values(54, rng, -3, 3));
    const auto y = vq::fuse_branches(x, x);
    fuse_ok = fuse_ok && std::equal(y.data().begin(), y.data().end(), x.data().begin());
  }
  Verdict v;
  v.pass = attn_err <= 1e-7 && st_exact && lift_ok && fuse_ok;
  v.detail = "zero-gamma attention err " + fmt("%.2e", attn_err) + ", straight-through forward " +
             (st_exact ? "exact" : "differs") + ", lift inverse " + (lift_ok ? "bijective" : "broken") +
             ", fuse(x,x) " + (fuse_ok ? "= x" : "!= x");
  return v;
}

double mean_recon(const gan::Generator& gen, const std::vector<train::Sample>& data) {
  double s = 0.0;
  for (const auto& d : data) s += gan::reconstruction_loss(gen.forward(d.frontal_t, d.lateral_t).volume, d.gt).item();
  return s / static_cast<double>(data.size());
}

Verdict overfit() {
  const auto t0 = std::chrono::steady_clock::now();
  train::TrainConfig c;
  c.model.kind = gan::ModelKind::GA;
  c.data.count = 2;
  c.batch = 1;
  c.epochs = 100;
  c.decay_start_epoch = 100;
  c.max_steps = 200;
  c.lr = 5e-3;
  c.weights.adv = 0.0;
  c.out_dir = scratch_dir("overfit").string();
  const auto data = train::training_set(c);
  const double initial = mean_recon(*gan::make_generator(c.model), data);
  const auto r = train::train(c, data);
  const double final_recon = mean_recon(*r.generator, data);
  const auto row = train::evaluate(*r.generator, data);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  Verdict v;
  v.pass = r.history.size() == 200 && final_recon < 0.25 * initial && row.psnr_db >= 28.0;
  v.detail = "recon " + fmt("%.5f", initial) + " -> " + fmt("%.5f", final_recon) + " (" +
             fmt("%.1f", 100.0 * final_recon / initial) + "% of initial), train PSNR " +
             fmt("%.2f", row.psnr_db) + " dB, " + std::to_string(r.history.size()) + " steps, " + fmt("%.0f", secs) +
             "s";
  return v;
}

Verdict comparative() {
  train::TrainConfig c;
  c.data.count = 20;
  c.data.val_count = 5;
  c.epochs = 5;
  c.decay_start_epoch = 5;
  const auto data = train::training_set(c);
  const auto val = train::validation_set(c);
  double ssim[2];
  const gan::ModelKind kinds[2] = {gan::ModelKind::GA, gan::ModelKind::NoAttnBaseline};
  for (int i = 0; i < 2; ++i) {
    c.model.kind = kinds[i];
    c.out_dir = scratch_dir(std::string("cmp_") + std::string(gan::to_string(kinds[i]))).string();
    ssim[i] = train::evaluate(*train::train(c, data).generator, val).ssim;
  }
  Verdict v;
  v.pass = ssim[0] >= ssim[1] - 0.02;
  v.detail = "validation SSIM GA " + fmt("%.4f", ssim[0]) + " vs NoAttnBaseline " + fmt("%.4f", ssim[1]) +
             " (margin " + fmt("%+.4f", ssim[0] - ssim[1]) + ")";
  return v;
}

Verdict determinism() {
  set_thread_cap(1);
  bool same = true;
  std::string detail;
  for (const char* model : {"GA", "VQ"}) {
    const auto dir = scratch_dir(std::string("det_") + model);
    std::string files[2][2];
    for (int run = 0; run < 2; ++run) {
      const auto out = dir / ("run" + std::to_string(run));
      const auto cfg_path = dir / ("run" + std::to_string(run) + ".cfg");
      std::ofstream(cfg_path) << "model = " << model << "\ntrain.epochs = 2\ntrain.decay_start_epoch = 1\n"
                              << "data.count = 4\nvq.K = 32\nvq.D = 8\ntrain.out_dir = " << out.string() << "\n";
      std::ostringstream sink;
      const std::string cfg = cfg_path.string();
      const char* argv[] = {"bpct", "train", "--quiet", "--config", cfg.c_str()};
      if (cli::run(5, argv, sink, sink) != cli::kOk) return {false, std::string(model) + " train failed: " + sink.str()};
      files[run][0] = slurp(out / "metrics.csv");
      files[run][1] = slurp(out / "final.bpct");
    }
    const bool ok = files[0][0] == files[1][0] && files[0][1] == files[1][1] && !files[0][0].empty();
    same = same && ok;
    detail += std::string(detail.empty() ? "" : ", ") + model + " metrics " + std::to_string(files[0][0].size()) +
              "B + checkpoint " + std::to_string(files[0][1].size()) + "B " + (ok ? "identical" : "DIFFER");
  }
  set_thread_cap(0);
  return {same, detail};
}

template <typename Fn>
bool expect_code(Fn&& fn, FormatErrc code) {
  try {
    fn();
  } catch (const FormatError& e) {
    return e.code() == code;
  }
  return false;
}

Verdict format_round_trips() {
  const auto dir = scratch_dir("formats");
  bool ok = true;
  std::vector<std::string> notes;
  PhantomSpec spec;
  spec.seed = 7;
  const auto vol = make_phantom(spec);
  save_volume(vol, dir / "v.ctvol");
  const auto vol_bytes = slurp(dir / "v.ctvol");
  const auto vol_back = load_volume(dir / "v.ctvol");
  save_volume(vol_back, dir / "v2.ctvol");
  const bool vol_ok = vol_back == vol && slurp(dir / "v2.ctvol") == vol_bytes;
  ok = ok && vol_ok;
  notes.push_back(std::string("ctvol ") + (vol_ok ? "ok" : "FAIL"));

  bool drr_ok = true;
  for (View view : {View::Frontal, View::Lateral}) {
    const auto img = project(vol, view);
    const auto enc = encode_drr(img);
    const auto back = decode_drr(enc, "drr");
    drr_ok = drr_ok && back == img && encode_drr(back) == enc;
  }
  ok = ok && drr_ok;
  notes.push_back(std::string("drr ") + (drr_ok ? "ok" : "FAIL"));

  bool ckpt_ok = true;
  for (auto kind : {gan::ModelKind::GA, gan::ModelKind::VQ, gan::ModelKind::NoAttnBaseline}) {
    gan::ModelConfig mc;
    mc.kind = kind;
    mc.vq_k = 16;
    mc.vq_d = 8;
    auto gen = gan::make_generator(mc);
    if (auto* book = gen->codebook()) book->usage[2] = 5;
    const auto path = dir / ("g_" + std::string(gan::to_string(kind)) + ".bpct");
    gan::save_checkpoint(*gen, path);
    const auto bytes = slurp(path);
    auto back = gan::load_checkpoint(path);
    const auto again = gan::encode_checkpoint(*back);
    ckpt_ok = ckpt_ok && std::string(again.begin(), again.end()) == bytes && back->config().kind == kind;
  }
  ok = ok && ckpt_ok;
  notes.push_back(std::string("checkpoint ") + (ckpt_ok ? "ok" : "FAIL"));

  auto corrupt = [](std::string bytes) {
    bytes[0] ^= 0x5a;
    return std::vector<char>(bytes.begin(), bytes.end());
  };
  const auto bad_vol = corrupt(vol_bytes);
  const auto drr_enc = encode_drr(project(vol, View::Frontal));
  const auto bad_drr = corrupt(std::string(drr_enc.begin(), drr_enc.end()));
  const auto bad_ckpt = corrupt(slurp(dir / "g_GA.bpct"));
  const bool magic_ok = expect_code([&] { decode_volume(bad_vol, "v"); }, FormatErrc::BadMagic) &&
                        expect_code([&] { decode_drr(bad_drr, "d"); }, FormatErrc::BadMagic) &&
                        expect_code([&] { gan::decode_checkpoint(bad_ckpt, "c"); }, FormatErrc::BadMagic);
  const std::vector<char> short_vol(vol_bytes.begin(), vol_bytes.end() - 3);
  const bool trunc_ok = expect_code([&] { decode_volume(short_vol, "v"); }, FormatErrc::Truncated);
  ok = ok && magic_ok && trunc_ok;
  notes.push_back(std::string("corrupted magic -> BadMagic ") + (magic_ok ? "ok" : "FAIL"));
  notes.push_back(std::string("truncated -> Truncated ") + (trunc_ok ? "ok" : "FAIL"));
  std::string detail;
  for (const auto& n : notes) detail += (detail.empty() ? "" : ", ") + n;
  return {ok, detail};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
      {"gradient-suite", gradient_suite},
      {"oracle-equivalence", oracle_equivalence},
      {"identity-invariants", identity_invariants},
      {"overfit-sanity", overfit},
      {"comparative-smoke", comparative},
      {"determinism", determinism},
      {"format-round-trips", format_round_trips},
  };
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += v.pass ? 0 : 1;
    std::printf("%s %s: %s\n", v.pass ? "PASS" : "FAIL", name, v.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
