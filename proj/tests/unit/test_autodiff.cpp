#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "bpct/autodiff.hpp"
#include "test_util.hpp"

using namespace bpct;
using namespace bpct::ad;
using bpct::test::random_const;
using bpct::test::random_param;

namespace {

// Scalar reduction that weights every output entry differently, so the
// upstream gradient fed to the op under test is not uniform.
Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  auto w = random_const(y.shape(), gen);
  return mean(hadamard(y, w));
}

void nudge_off_zero(const Tensor& t, double margin = 0.05) {
  for (auto& v : t.mutable_data()) {
    if (std::abs(v) < margin) v = v < 0 ? -margin : margin;
  }
}

struct Case {
  std::string name;
  std::function<std::vector<Tensor>(std::mt19937_64&)> make_leaves;
  std::function<Tensor(std::span<const Tensor>)> build;
};

std::vector<Case> op_cases() {
  std::vector<Case> cases;
  auto dims = [](std::mt19937_64& g, std::size_t lo, std::size_t hi) { return lo + g() % (hi - lo + 1); };

  cases.push_back({"Add", [&](auto& g) { Shape s{dims(g, 1, 4), dims(g, 1, 5)}; return std::vector{random_param(s, g), random_param(s, g)}; },
                   [](auto l) { return weighted_sum(add(l[0], l[1]), 1); }});
  cases.push_back({"Sub", [&](auto& g) { Shape s{dims(g, 1, 6)}; return std::vector{random_param(s, g), random_param(s, g)}; },
                   [](auto l) { return weighted_sum(sub(l[0], l[1]), 2); }});
  cases.push_back({"MulScalar", [&](auto& g) { return std::vector{random_param({dims(g, 1, 3), dims(g, 1, 3), 2}, g)}; },
                   [](auto l) { return weighted_sum(mul_scalar(l[0], -1.7), 3); }});
  cases.push_back({"HadamardMul", [&](auto& g) { Shape s{dims(g, 1, 4), 3}; return std::vector{random_param(s, g), random_param(s, g)}; },
                   [](auto l) { return weighted_sum(hadamard(l[0], l[1]), 4); }});
  cases.push_back({"MatMul", [&](auto& g) { const auto m = dims(g, 1, 4), k = dims(g, 1, 4), n = dims(g, 1, 4);
                     return std::vector{random_param({m, k}, g), random_param({k, n}, g)}; },
                   [](auto l) { return weighted_sum(matmul(l[0], l[1]), 5); }});
  cases.push_back({"BatchedMatMul", [&](auto& g) { const auto b = dims(g, 1, 3), m = dims(g, 1, 3), k = dims(g, 1, 3), n = dims(g, 1, 3);
                     return std::vector{random_param({b, m, k}, g), random_param({b, k, n}, g)}; },
                   [](auto l) { return weighted_sum(bmm(l[0], l[1]), 6); }});
  cases.push_back({"Conv2d", [&](auto& g) { const auto ci = dims(g, 1, 3), co = dims(g, 1, 3);
                     return std::vector{random_param({ci, dims(g, 3, 6), dims(g, 3, 6)}, g), random_param({co, ci, 3, 3}, g), random_param({co}, g)}; },
                   [](auto l) { return weighted_sum(conv2d(l[0], l[1], l[2], 2, 1), 7); }});
  cases.push_back({"Conv3d", [&](auto& g) { const auto ci = dims(g, 1, 2), co = dims(g, 1, 2);
                     return std::vector{random_param({ci, dims(g, 2, 4), dims(g, 2, 4), dims(g, 2, 4)}, g), random_param({co, ci, 3, 3, 3}, g), random_param({co}, g)}; },
                   [](auto l) { return weighted_sum(conv3d(l[0], l[1], l[2], 1, 1), 8); }});
  cases.push_back({"Upsample2dBilinear", [&](auto& g) { return std::vector{random_param({dims(g, 1, 2), dims(g, 1, 4), dims(g, 1, 4)}, g)}; },
                   [](auto l) { return weighted_sum(upsample2d(l[0], 2), 9); }});
  cases.push_back({"Upsample3dTrilinear", [&](auto& g) { return std::vector{random_param({dims(g, 1, 2), dims(g, 1, 3), dims(g, 1, 3), dims(g, 1, 3)}, g)}; },
                   [](auto l) { return weighted_sum(upsample3d(l[0], 2), 10); }});
  cases.push_back({"Relu", [&](auto& g) { auto t = random_param({dims(g, 2, 9)}, g); nudge_off_zero(t); return std::vector{t}; },
                   [](auto l) { return weighted_sum(relu(l[0]), 11); }});
  cases.push_back({"LeakyRelu", [&](auto& g) { auto t = random_param({dims(g, 2, 9)}, g); nudge_off_zero(t); return std::vector{t}; },
                   [](auto l) { return weighted_sum(leaky_relu(l[0], 0.2), 12); }});
  cases.push_back({"Sigmoid", [&](auto& g) { return std::vector{random_param({dims(g, 1, 8)}, g, -4, 4)}; },
                   [](auto l) { return weighted_sum(sigmoid(l[0]), 13); }});
  cases.push_back({"Softmax", [&](auto& g) { return std::vector{random_param({dims(g, 1, 4), dims(g, 2, 5)}, g, -3, 3)}; },
                   [](auto l) { return weighted_sum(softmax(l[0], 0), 14); }});
  cases.push_back({"InstanceNorm", [&](auto& g) { return std::vector{random_param({dims(g, 1, 3), dims(g, 2, 4), dims(g, 2, 4)}, g)}; },
                   [](auto l) { return weighted_sum(instance_norm(l[0]), 15); }});
  cases.push_back({"Concat", [&](auto& g) { const auto a = dims(g, 1, 3);
                     return std::vector{random_param({a, 2, 3}, g), random_param({a, 1, 3}, g)}; },
                   [](auto l) { return weighted_sum(concat({l[0], l[1]}, 1), 16); }});
  cases.push_back({"Reshape", [&](auto& g) { return std::vector{random_param({2, dims(g, 1, 4), 3}, g)}; },
                   [](auto l) { return weighted_sum(reshape(l[0], {l[0].numel()}), 17); }});
  cases.push_back({"Mean", [&](auto& g) { return std::vector{random_param({dims(g, 1, 5), dims(g, 1, 5)}, g)}; },
                   [](auto l) { return mean(l[0]); }});
  cases.push_back({"MseLoss", [&](auto& g) { Shape s{dims(g, 1, 7)}; return std::vector{random_param(s, g), random_param(s, g)}; },
                   [](auto l) { return mse_loss(l[0], l[1]); }});
  cases.push_back({"Permute", [&](auto& g) { return std::vector{random_param({dims(g, 1, 3), dims(g, 1, 3), dims(g, 1, 3)}, g)}; },
                   [](auto l) { return weighted_sum(permute(l[0], {2, 0, 1}), 18); }});
  cases.push_back({"StraightThrough", [&](auto& g) { Shape s{dims(g, 1, 6)}; return std::vector{random_param(s, g)}; },
                   [](auto l) { auto q = l[0].detach(); return weighted_sum(straight_through_op(l[0], q), 19); }});
  return cases;
}

}  // namespace

TEST(Autodiff, EveryOpPassesGradCheckOnFiveShapes) {
  for (const auto& c : op_cases()) {
    std::mt19937_64 gen(std::hash<std::string>{}(c.name));
    for (int trial = 0; trial < 5; ++trial) {
      const auto leaves = c.make_leaves(gen);
      const double err = grad_check(c.build, leaves, 1e-4);
      EXPECT_LT(err, 1e-4) << c.name << " trial " << trial;
    }
  }
}

TEST(Autodiff, SoftmaxUniformLogits) {
  const auto y = softmax(Tensor::zeros({3}));
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Autodiff, SoftmaxRowsSumToOne) {
  std::mt19937_64 gen(2);
  for (int axis : {0, 1, 2, -1}) {
    const auto x = random_const({3, 4, 5}, gen, -10, 10);
    const auto y = softmax(x, axis);
    const std::size_t ax = axis < 0 ? 2 : static_cast<std::size_t>(axis);
    const std::size_t len = x.dim(ax);
    const std::size_t inner = ax == 2 ? 1 : (ax == 1 ? 5 : 20);
    const std::size_t outer = 60 / (len * inner);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < inner; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < len; ++k) {
          const double v = y.data()[o * len * inner + k * inner + i];
          EXPECT_GE(v, 0.0);
          s += v;
        }
        EXPECT_NEAR(s, 1.0, 1e-6);
      }
  }
}

TEST(Autodiff, MatMulIdentity) {
  std::mt19937_64 gen(3);
  std::vector<double> eye(9, 0.0);
  eye[0] = eye[4] = eye[8] = 1.0;
  const auto a = random_const({3, 3}, gen);
  const auto y = matmul(Tensor::constant({3, 3}, eye), a);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(y.data()[i], a.data()[i]);
}

TEST(Autodiff, MatMulShapeErrorNamesOp) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("MatMul"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("(2,3)"), std::string::npos);
  }
}

TEST(Autodiff, Conv3dMatchesLoopOracle) {
  // 1x1x2x2x2 input, 2x2x2 kernel with a dominant centre tap, no padding:
  // the single output is the kernel-weighted sum of the input.
  std::mt19937_64 gen(4);
  const auto x = random_const({1, 1, 2, 2, 2}, gen);
  auto wv = test::random_values(8, gen, -0.1, 0.1);
  wv[0] = 1.0;
  const auto w = Tensor::constant({1, 1, 2, 2, 2}, wv);
  const auto y = conv3d(x, w, 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1, 1}));
  double expect = 0.0;
  for (std::size_t i = 0; i < 8; ++i) expect += x.data()[i] * wv[i];
  EXPECT_NEAR(y.item(), expect, 1e-15);
}

TEST(Autodiff, Conv2dStridedPaddedMatchesLoopOracle) {
  std::mt19937_64 gen(5);
  const std::size_t ci = 2, co = 3, H = 7, W = 6, k = 3;
  const int stride = 2, pad = 1;
  const auto x = random_const({ci, H, W}, gen);
  const auto w = random_const({co, ci, k, k}, gen);
  const auto b = random_const({co}, gen);
  const auto y = conv2d(x, w, b, stride, pad);
  const std::size_t Ho = (H + 2 * pad - k) / stride + 1, Wo = (W + 2 * pad - k) / stride + 1;
  ASSERT_EQ(y.shape(), (Shape{co, Ho, Wo}));
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        double s = b.data()[o];
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long iy = static_cast<long>(oy * stride + ky) - pad;
              const long ix = static_cast<long>(ox * stride + kx) - pad;
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
              s += w.data()[((o * ci + c) * k + ky) * k + kx] * x.data()[(c * H + iy) * W + ix];
            }
        EXPECT_NEAR(y.data()[(o * Ho + oy) * Wo + ox], s, 1e-12);
      }
}

TEST(Autodiff, BatchedConvMatchesPerSample) {
  std::mt19937_64 gen(6);
  const auto x = random_const({2, 2, 4, 4}, gen);
  const auto w = random_const({3, 2, 3, 3}, gen);
  const auto y = conv2d(x, w, 1, 1);
  for (std::size_t b = 0; b < 2; ++b) {
    std::vector<double> xs(x.data().begin() + b * 32, x.data().begin() + (b + 1) * 32);
    const auto yb = conv2d(Tensor::constant({2, 4, 4}, xs), w, 1, 1);
    for (std::size_t i = 0; i < 48; ++i) EXPECT_EQ(y.data()[b * 48 + i], yb.data()[i]);
  }
}

TEST(Autodiff, MeanGradientIsUniform) {
  auto x = Tensor::parameter({2, 5}, std::vector<double>(10, 3.0));
  backward(mean(x));
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 0.1);
}

TEST(Autodiff, BackwardAccumulatesOnRepeat) {
  auto x = Tensor::parameter({4}, {1, 2, 3, 4});
  const auto loss = mean(x);
  backward(loss);
  backward(loss);
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 0.5);
  x.zero_grad();
  backward(loss);
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 0.25);
}

TEST(Autodiff, MseOfSelfHasZeroGradient) {
  std::mt19937_64 gen(7);
  auto x = random_param({3, 3}, gen);
  backward(mse_loss(x, x));
  for (double g : x.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Autodiff, BackwardRejectsNonScalar) {
  auto x = Tensor::parameter({2}, {1, 2});
  EXPECT_THROW(backward(mul_scalar(x, 2.0)), ShapeError);
}

TEST(Autodiff, InstanceNormStatistics) {
  std::mt19937_64 gen(8);
  const auto x = random_const({4, 5, 6}, gen, -3, 7);
  const auto y = instance_norm(x, 1e-5);
  for (std::size_t c = 0; c < 4; ++c) {
    double mu = 0.0, var = 0.0;
    for (std::size_t i = 0; i < 30; ++i) mu += y.data()[c * 30 + i];
    mu /= 30;
    for (std::size_t i = 0; i < 30; ++i) var += (y.data()[c * 30 + i] - mu) * (y.data()[c * 30 + i] - mu);
    var /= 30;
    EXPECT_LT(std::abs(mu), 1e-5);
    EXPECT_NEAR(var, 1.0, 1e-4);
  }
}

TEST(Autodiff, ApplyNeverMutatesInputs) {
  std::mt19937_64 gen(9);
  for (const auto& c : op_cases()) {
    const auto leaves = c.make_leaves(gen);
    std::vector<std::vector<double>> before;
    for (const auto& l : leaves) before.emplace_back(l.data().begin(), l.data().end());
    const auto loss = c.build(leaves);
    backward(loss);
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      EXPECT_TRUE(std::equal(before[i].begin(), before[i].end(), leaves[i].data().begin())) << c.name;
    }
  }
}

TEST(Autodiff, UpsamplePartitionOfUnity) {
  for (int f : {1, 2, 3, 4}) {
    const auto y = upsample2d(Tensor::full({2, 3, 5}, 0.37), f);
    ASSERT_EQ(y.shape(), (Shape{2, 3u * f, 5u * f}));
    for (double v : y.data()) EXPECT_NEAR(v, 0.37, 1e-15);
    const auto z = upsample3d(Tensor::full({1, 2, 3, 2}, -1.25), f);
    for (double v : z.data()) EXPECT_NEAR(v, -1.25, 1e-15);
  }
}

TEST(Autodiff, PermuteMovesIndices) {
  std::vector<double> v(24);
  for (std::size_t i = 0; i < 24; ++i) v[i] = static_cast<double>(i);
  const auto x = Tensor::constant({2, 3, 4}, v);
  const auto y = permute(x, {2, 0, 1});
  ASSERT_EQ(y.shape(), (Shape{4, 2, 3}));
  for (std::size_t a = 0; a < 2; ++a)
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(y.data()[(c * 2 + a) * 3 + b], v[(a * 3 + b) * 4 + c]);
  EXPECT_THROW(permute(x, {0, 0, 1}), ShapeError);
}

TEST(Autodiff, ConcatRejectsMismatch) {
  EXPECT_THROW(concat({Tensor::zeros({2, 3}), Tensor::zeros({3, 3})}, 1), ShapeError);
}

TEST(Autodiff, LinearMapUsesAdjoint) {
  // y = [x0 + x1, 2 x1]
  LinearMap op{.label = "test", .out_shape = {2},
               .forward = [](auto x, auto y) { y[0] = x[0] + x[1]; y[1] = 2 * x[1]; },
               .adjoint = [](auto g, auto r) { r[0] = g[0]; r[1] = g[0] + 2 * g[1]; }};
  auto x = Tensor::parameter({2}, {0.3, -0.4});
  const auto leaves = std::vector{x};
  EXPECT_LT(grad_check([&](auto l) { return weighted_sum(linear_map(l[0], op), 3); }, leaves), 1e-9);
}

TEST(Autodiff, F32ModeRoundsOutputs) {
  PrecisionScope scope(Precision::F32);
  const auto y = mul_scalar(Tensor::constant({1}, {1.0}), 0.1);
  EXPECT_EQ(y.data()[0], static_cast<double>(0.1f));
}

TEST(GradCheck, MeanIsExact) {
  std::mt19937_64 gen(10);
  const auto leaves = std::vector{random_param({4, 4}, gen)};
  EXPECT_LT(grad_check([](auto l) { return mean(l[0]); }, leaves), 1e-10);
}

TEST(GradCheck, SoftmaxMseChain) {
  std::mt19937_64 gen(11);
  const auto target = random_const({3, 5}, gen, 0, 1);
  const auto leaves = std::vector{random_param({3, 5}, gen, -2, 2)};
  EXPECT_LT(grad_check([&](auto l) { return mse_loss(softmax(l[0], -1), target); }, leaves), 1e-5);
}

TEST(GradCheck, Conv3dReluMean) {
  std::mt19937_64 gen(12);
  const auto x = random_const({2, 4, 4, 4}, gen);
  auto w = random_param({3, 2, 3, 3, 3}, gen, -0.5, 0.5);
  const auto leaves = std::vector{w};
  // keep pre-activations away from the kink
  auto pre = conv3d(x, w.detach(), 1, 1);
  double closest = 1e9;
  for (double v : pre.data()) closest = std::min(closest, std::abs(v));
  ASSERT_GT(closest, 1e-3);
  EXPECT_LT(grad_check([&](auto l) { return mean(relu(conv3d(x, l[0], 1, 1))); }, leaves), 1e-4);
}

TEST(GradCheck, RejectsBadEps) {
  auto x = Tensor::parameter({1}, {1.0});
  const auto leaves = std::vector{x};
  EXPECT_THROW(grad_check([](auto l) { return mean(l[0]); }, leaves, 0.5), ValidationError);
  EXPECT_THROW(grad_check([](auto l) { return mean(l[0]); }, leaves, 0.0), ValidationError);
}

TEST(GradCheck, DetectsWrongGradient) {
  // A LinearMap whose adjoint is deliberately wrong must be caught.
  LinearMap op{.label = "broken", .out_shape = {1},
               .forward = [](auto x, auto y) { y[0] = 3 * x[0]; },
               .adjoint = [](auto g, auto r) { r[0] = 2 * g[0]; }};
  auto x = Tensor::parameter({1}, {0.5});
  const auto leaves = std::vector{x};
  EXPECT_GT(grad_check([&](auto l) { return mean(linear_map(l[0], op)); }, leaves), 0.1);
}

TEST(GradCheck, FrozenMasksDifferenceOneSideOfAKink) {
  // 3e-5 sits inside the +-1e-4 probe interval of the kink at 0.
  auto x = Tensor::parameter({2}, {3e-5, -3e-5});
  const auto leaves = std::vector{x};
  const LossBuilder f = [](auto l) { return mean(leaky_relu(relu(l[0]), 0.2)); };
  const auto frozen = grad_check_report(f, leaves);
  EXPECT_LT(frozen.max_rel_error, 1e-10);
  EXPECT_EQ(frozen.entries_checked, 2u);
  const auto live = grad_check_report(f, leaves, {.freeze_activation_masks = false});
  EXPECT_GT(live.max_rel_error, 0.1);
}

TEST(GradCheck, MaskReplayRejectsDifferentGraph) {
  auto x = Tensor::parameter({1}, {0.5});
  const auto leaves = std::vector{x};
  int calls = 0;
  const LossBuilder f = [&](auto l) { return ++calls == 1 ? mean(relu(l[0])) : mean(relu(relu(l[0]))); };
  EXPECT_THROW(grad_check_report(f, leaves), Error);
}
