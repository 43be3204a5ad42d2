#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "bpct/projector.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace bpct;

using bpct::oracle::loop_projection;

TEST(Project, UniformVolumeGivesConstantImage) {
  const auto vol = CtVolume::filled(Dims3::cube(8), 0.3f);
  for (View view : {View::Frontal, View::Lateral}) {
    const auto img = project(vol, view);
    for (float p : img.pixels()) EXPECT_FLOAT_EQ(p, 0.3f);
  }
}

TEST(Project, ImpulseResponse) {
  std::vector<float> v(512, 0.0f);
  v[(2 * 8 + 5) * 8 + 3] = 1.0f;  // d=2, h=5, w=3
  const CtVolume vol(Dims3::cube(8), v);
  const auto front = project(vol, View::Frontal);
  const auto lat = project(vol, View::Lateral);
  int hits = 0;
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) {
      const float fe = (y == 5 && x == 3) ? 0.125f : 0.0f;
      const float le = (y == 5 && x == 2) ? 0.125f : 0.0f;
      EXPECT_EQ(front.at(y, x), fe);
      EXPECT_EQ(lat.at(y, x), le);
      hits += front.at(y, x) != 0.0f;
    }
  EXPECT_EQ(hits, 1);
  // axis-swap guard: the two views of an asymmetric volume disagree
  EXPECT_FALSE(front.pixels()[5 * 8 + 3] == lat.pixels()[5 * 8 + 3]);
}

TEST(Project, FaceDims) {
  const auto vol = CtVolume::filled({4, 6, 10}, 0.0f);
  EXPECT_EQ(project(vol, View::Frontal).dims(), (Dims2{6, 10}));
  EXPECT_EQ(project(vol, View::Lateral).dims(), (Dims2{6, 4}));
  EXPECT_EQ(project(vol, View::Lateral).view(), View::Lateral);
}

TEST(Project, MatchesTripleLoopOracleOnPhantom) {
  const auto vol = make_phantom({.seed = 7, .n_ellipsoids = 4, .dims = Dims3::cube(16)});
  for (View view : {View::Frontal, View::Lateral}) {
    const auto img = project(vol, view);
    const auto ref = loop_projection(vol, view);
    for (std::size_t i = 0; i < ref.size(); ++i) {
      EXPECT_LE(std::abs(img.pixels()[i] - ref[i]), 1e-6 * std::max(1.0, std::abs(ref[i])));
    }
  }
}

TEST(Project, BeerLambertModel) {
  const auto vol = CtVolume::filled(Dims3::cube(4), 0.5f);
  const auto img = project(vol, View::Frontal, BeerLambert{2.0});
  for (float p : img.pixels()) EXPECT_FLOAT_EQ(p, static_cast<float>(1.0 - std::exp(-1.0)));
  EXPECT_THROW(project(vol, View::Frontal, BeerLambert{0.0}), ValidationError);
}

TEST(Project, LinearityProperty) {
  std::mt19937_64 gen(17);
  for (int trial = 0; trial < 10; ++trial) {
    const Dims3 dims{3 + gen() % 6, 3 + gen() % 6, 3 + gen() % 6};
    const auto v1 = test::random_values(dims.count(), gen, 0, 1);
    const auto v2 = test::random_values(dims.count(), gen, 0, 1);
    const double a = 0.7, b = -1.3;
    std::vector<double> mix(dims.count());
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * v1[i] + b * v2[i];
    for (View view : {View::Frontal, View::Lateral}) {
      const std::size_t n = face_dims(dims, view).count();
      std::vector<double> p1(n), p2(n), pm(n);
      project_mean<double, double>(v1, dims, view, p1);
      project_mean<double, double>(v2, dims, view, p2);
      project_mean<double, double>(mix, dims, view, pm);
      for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(pm[i], a * p1[i] + b * p2[i], 1e-12);
    }
  }
}

TEST(ProjectAdjoint, ZeroAndOneHot) {
  const Dims3 dims = Dims3::cube(2);
  const std::vector<double> zeros(4, 0.0);
  for (double g : project_adjoint<double>(zeros, View::Frontal, dims)) EXPECT_EQ(g, 0.0);

  std::vector<double> onehot(4, 0.0);
  onehot[1 * 2 + 0] = 1.0;  // h=1, x=0
  const auto front = project_adjoint<double>(onehot, View::Frontal, dims);
  // frontal ray (h=1, w=0) covers d = 0, 1
  for (std::size_t d = 0; d < 2; ++d)
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t w = 0; w < 2; ++w) {
        EXPECT_EQ(front[(d * 2 + h) * 2 + w], (h == 1 && w == 0) ? 0.5 : 0.0);
      }
  const auto lat = project_adjoint<double>(onehot, View::Lateral, dims);
  // lateral ray (h=1, d=0) covers w = 0, 1
  for (std::size_t d = 0; d < 2; ++d)
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t w = 0; w < 2; ++w) {
        EXPECT_EQ(lat[(d * 2 + h) * 2 + w], (h == 1 && d == 0) ? 0.5 : 0.0);
      }
}

TEST(ProjectAdjoint, DimMismatch) {
  const std::vector<double> g(5, 1.0);
  EXPECT_THROW(project_adjoint<double>(g, View::Frontal, Dims3::cube(2)), ShapeError);
}

TEST(ProjectAdjoint, InnerProductIdentity) {
  std::mt19937_64 gen(23);
  for (int trial = 0; trial < 20; ++trial) {
    const Dims3 dims = trial == 0 ? Dims3::cube(8) : Dims3{2 + gen() % 9, 2 + gen() % 9, 2 + gen() % 9};
    const auto v = test::random_values(dims.count(), gen);
    for (View view : {View::Frontal, View::Lateral}) {
      const std::size_t n = face_dims(dims, view).count();
      const auto g = test::random_values(n, gen);
      std::vector<double> pv(n);
      project_mean<double, double>(v, dims, view, pv);
      const auto atg = project_adjoint<double>(g, view, dims);
      double lhs = 0.0, rhs = 0.0;
      for (std::size_t i = 0; i < n; ++i) lhs += pv[i] * g[i];
      for (std::size_t i = 0; i < v.size(); ++i) rhs += v[i] * atg[i];
      EXPECT_LE(std::abs(lhs - rhs), 1e-10) << "trial " << trial;
    }
  }
}
