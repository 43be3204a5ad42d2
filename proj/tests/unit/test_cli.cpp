#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "bpct/cli/app.hpp"
#include "test_util.hpp"

using namespace bpct;
using bpct::test::TempDir;

namespace {

struct Result {
  int code = -1;
  std::string output;
};

// Runs the real executable; stderr is folded into the captured output.
Result run_cli(const std::string& args) {
  const std::string cmd = std::string(BPCT_CLI_PATH) + " " + args + " 2>&1";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::string tiny_config(const std::filesystem::path& out_dir) {
  return "model = GA\n"
         "model.base_channels = 4\n"
         "attention.reduction = 4\n"
         "train.epochs = 1\n"
         "train.decay_start_epoch = 1\n"
         "train.batch = 1\n"
         "data.count = 2\n"
         "train.out_dir = " + out_dir.string() + "\n";
}

}  // namespace

TEST(Cli, HelpForEverySubcommand) {
  EXPECT_EQ(run_cli("--help").code, 0);
  for (const char* sub : {"phantom", "drr", "train", "eval", "reconstruct", "gradcheck", "slices"}) {
    const auto r = run_cli(std::string(sub) + " --help");
    EXPECT_EQ(r.code, 0) << sub;
    EXPECT_NE(r.output.find("Usage"), std::string::npos) << sub;
  }
}

TEST(Cli, ParseErrorsExitOne) {
  TempDir dir;
  EXPECT_EQ(run_cli("").code, 1);
  EXPECT_EQ(run_cli("frobnicate").code, 1);
  EXPECT_EQ(run_cli("phantom --out " + dir.path().string() + " --colour blue").code, 1);
  EXPECT_EQ(run_cli("phantom --count 1").code, 1);  // --out missing
  EXPECT_EQ(run_cli("phantom --out x --count many").code, 1);
}

TEST(Cli, PhantomWritesRequestedFilesDeterministically) {
  TempDir dir;
  const auto a = dir / "a", b = dir / "b";
  ASSERT_EQ(run_cli("phantom --out " + a.string() + " --count 1 --dims 8 --seed 4").code, 0);
  EXPECT_EQ(std::distance(std::filesystem::directory_iterator(a), std::filesystem::directory_iterator{}), 1);
  ASSERT_EQ(run_cli("phantom --out " + b.string() + " --count 1 --dims 8 --seed 4").code, 0);
  EXPECT_EQ(slurp(a / "phantom_0.ctvol"), slurp(b / "phantom_0.ctvol"));
  PhantomSpec spec;
  spec.seed = 4;
  spec.dims = Dims3::cube(8);
  EXPECT_EQ(load_volume(a / "phantom_0.ctvol"), make_phantom(spec));
}

TEST(Cli, PhantomRejectsTinyDims) {
  TempDir dir;
  const auto r = run_cli("phantom --out " + dir.path().string() + " --dims 3");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("error"), std::string::npos);
}

TEST(Cli, DrrOfUniformVolumeIsConstant) {
  TempDir dir;
  save_volume(CtVolume::filled(Dims3{4, 6, 5}, 0.25f), dir / "u.ctvol");
  ASSERT_EQ(run_cli("drr --vol " + (dir / "u.ctvol").string() + " --out " + dir.path().string() + " --pgm").code, 0);
  const auto f = load_drr(dir / "u_frontal.drr");
  const auto l = load_drr(dir / "u_lateral.drr");
  EXPECT_EQ(f.dims(), (Dims2{6, 5}));
  EXPECT_EQ(l.dims(), (Dims2{6, 4}));
  for (float p : f.pixels()) EXPECT_FLOAT_EQ(p, 0.25f);
  for (float p : l.pixels()) EXPECT_FLOAT_EQ(p, 0.25f);
  EXPECT_TRUE(std::filesystem::exists(dir / "u_frontal.pgm"));
  EXPECT_EQ(slurp(dir / "u_lateral.pgm").substr(0, 9), "P5\n4 6\n25");
}

TEST(Cli, DrrMatchesProjectorBytes) {
  TempDir dir;
  PhantomSpec spec;
  spec.seed = 9;
  const auto vol = make_phantom(spec);
  save_volume(vol, dir / "p.ctvol");
  ASSERT_EQ(run_cli("drr --vol " + (dir / "p.ctvol").string() + " --model beer --mu 2 --out " + dir.path().string())
                .code,
            0);
  const auto expect = encode_drr(project(vol, View::Lateral, BeerLambert{2.0}));
  EXPECT_EQ(slurp(dir / "p_lateral.drr"), std::string(expect.begin(), expect.end()));
}

TEST(Cli, DrrMissingInputNamesPath) {
  TempDir dir;
  const auto missing = (dir / "nope.ctvol").string();
  const auto r = run_cli("drr --vol " + missing + " --out " + dir.path().string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find(missing), std::string::npos) << r.output;
  EXPECT_EQ(run_cli("drr --vol " + missing + " --model laser --out " + dir.path().string()).code, 2);
}

TEST(Cli, CorruptVolumeIsFormatError) {
  TempDir dir;
  write_text(dir / "bad.ctvol", "XXXXXXXXXXXXXXXXXXXXXXXX");
  const auto r = run_cli("drr --vol " + (dir / "bad.ctvol").string() + " --out " + dir.path().string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("bad magic"), std::string::npos) << r.output;
}

TEST(Cli, TrainReconstructEvalPipeline) {
  TempDir dir;
  write_text(dir / "run.cfg", tiny_config(dir / "run"));
  const auto t = run_cli("train --config " + (dir / "run.cfg").string() + " --log-every 1");
  ASSERT_EQ(t.code, 0) << t.output;
  EXPECT_NE(t.output.find("step 2 epoch 0"), std::string::npos) << t.output;
  const auto ckpt = dir / "run/final.bpct";
  ASSERT_TRUE(std::filesystem::exists(ckpt));

  ASSERT_EQ(run_cli("phantom --out " + (dir / "gt").string() + " --count 2 --dims 16 --seed 50").code, 0);
  ASSERT_EQ(run_cli("drr --vol " + (dir / "gt/phantom_0.ctvol").string() + " --out " + dir.path().string()).code, 0);
  const auto rec = run_cli("reconstruct --ckpt " + ckpt.string() + " --frontal " +
                           (dir / "phantom_0_frontal.drr").string() + " --lateral " +
                           (dir / "phantom_0_lateral.drr").string() + " --out " + (dir / "rec.ctvol").string());
  ASSERT_EQ(rec.code, 0) << rec.output;
  const auto vol = load_volume(dir / "rec.ctvol");
  EXPECT_EQ(vol.dims(), Dims3::cube(16));
  for (float v : vol.voxels()) {
    ASSERT_GT(v, 0.0f);
    ASSERT_LT(v, 1.0f);
  }
  const auto e1 = run_cli("eval --ckpt " + ckpt.string() + " --data " + (dir / "gt").string() + " --csv " +
                          (dir / "r.csv").string());
  ASSERT_EQ(e1.code, 0) << e1.output;
  EXPECT_NE(e1.output.find("GA"), std::string::npos);
  const auto e2 = run_cli("eval --ckpt " + ckpt.string() + " --data " + (dir / "gt").string());
  EXPECT_EQ(e1.output, e2.output);
  EXPECT_EQ(slurp(dir / "r.csv").substr(0, 22), "method,psnr_db,ssim,n\n");
  EXPECT_EQ(run_cli("eval --data " + (dir / "gt").string()).code, 2);
}

TEST(Cli, TrainIsByteReproducible) {
  TempDir dir;
  write_text(dir / "a.cfg", tiny_config(dir / "a"));
  write_text(dir / "b.cfg", tiny_config(dir / "b"));
  ASSERT_EQ(run_cli("train --quiet --config " + (dir / "a.cfg").string()).code, 0);
  ASSERT_EQ(run_cli("train --quiet --config " + (dir / "b.cfg").string()).code, 0);
  EXPECT_EQ(slurp(dir / "a/metrics.csv"), slurp(dir / "b/metrics.csv"));
  EXPECT_EQ(slurp(dir / "a/final.bpct"), slurp(dir / "b/final.bpct"));
}

TEST(Cli, TrainConfigErrors) {
  TempDir dir;
  write_text(dir / "bad.cfg", "loss.lambda_prj = 3\n");
  const auto r = run_cli("train --config " + (dir / "bad.cfg").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("lambda_prj"), std::string::npos);
  EXPECT_EQ(run_cli("train --config " + (dir / "missing.cfg").string()).code, 1);
}

TEST(Cli, EvalIdentityFixtureGivesPerfectRow) {
  TempDir dir;
  ASSERT_EQ(run_cli("phantom --out " + (dir / "gt").string() + " --count 2 --dims 8").code, 0);
  const auto r = run_cli("eval --pred " + (dir / "gt").string() + " --data " + (dir / "gt").string() +
                         " --csv " + (dir / "id.csv").string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("inf"), std::string::npos);
  EXPECT_EQ(slurp(dir / "id.csv"), "method,psnr_db,ssim,n\npred,inf,1.000000,2\n");
}

TEST(Cli, GradcheckSingleCaseAndUnknownName) {
  const auto r = run_cli("gradcheck --suite Relu");
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("max_rel_err"), std::string::npos);
  EXPECT_NE(r.output.find("Relu"), std::string::npos);
  EXPECT_EQ(run_cli("gradcheck --suite NotAnOp").code, 2);
  EXPECT_NE(run_cli("gradcheck --list").output.find("vq_generator_step"), std::string::npos);
}

TEST(Cli, SlicesWritePgmPerIndex) {
  TempDir dir;
  save_volume(CtVolume::filled(Dims3{4, 6, 5}, 1.0f), dir / "v.ctvol");
  const auto r =
      run_cli("slices --vol " + (dir / "v.ctvol").string() + " --axis height --index 0 --index 5 --out " +
              (dir / "s").string());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto pgm = slurp(dir / "s/slice_height_005.pgm");
  EXPECT_EQ(pgm, "P5\n5 4\n255\n" + std::string(20, '\xff'));
  EXPECT_TRUE(std::filesystem::exists(dir / "s/slice_height_000.pgm"));
  EXPECT_EQ(run_cli("slices --vol " + (dir / "v.ctvol").string() + " --axis diagonal --out " + (dir / "s").string())
                .code,
            2);
  EXPECT_EQ(run_cli("slices --vol " + (dir / "v.ctvol").string() + " --axis width --index 5 --out " +
                    (dir / "s").string())
                .code,
            2);
}

TEST(Cli, InProcessRunMatchesExitCodes) {
  std::ostringstream out, err;
  EXPECT_EQ(cli::run({"gradcheck", "--suite", "Add"}, out, err), cli::kOk);
  EXPECT_NE(out.str().find("Add"), std::string::npos);
  EXPECT_EQ(cli::run({"phantom", "--bogus"}, out, err), cli::kParseOrIo);
}
