#include <gtest/gtest.h>

#include "bdce/models.hpp"
#include "bdce/selfcheck.hpp"
#include "test_util.hpp"

using namespace bdce;

namespace {

template <typename Net>
ParamStore<float> init(const Net& net, std::uint64_t seed, bool zero_out = false) {
  auto p = net.make_params();
  Rng rng(seed);
  kaiming_init(p, rng);
  for (auto& e : p)
    if (e.value.rank() == 1)
      for (auto& v : e.value.data()) v = static_cast<float>(rng.uniform(-0.1, 0.1));
  if (zero_out) zero_head(p, net.head());
  return p;
}

CurveMap<float> random_curves(std::size_t h, std::size_t w, Rng& rng, double scale = 1.0) {
  CurveMap<float> c = CurveMap<float>::chw(kCurveChannels, h, w);
  for (auto& v : c.data()) v = static_cast<float>(rng.uniform(-scale, scale));
  return c;
}

}  // namespace

TEST(CurveNet, ZeroHeadGivesZeroCurves) {
  CurveNet<float> net;
  const auto p = init(net, 1, true);
  Rng rng(2);
  const auto out = net.forward(p, test::random_image(16, 16, rng));
  EXPECT_EQ(out.dims(), (Shape{kCurveChannels, 16, 16}));
  for (auto v : out.data()) EXPECT_EQ(v, 0.0f);
}

TEST(CurveNet, OutputStrictlyInsideUnitInterval) {
  CurveNet<double> net(CurveNetSpec{8});
  auto p = net.make_params();
  Rng rng(3);
  kaiming_init(p, rng);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor<double> x = Tensor<double>::chw(3, 6, 10);
    for (auto& v : x.data()) v = rng.uniform();
    for (auto v : net.forward(p, x).data()) EXPECT_LT(std::abs(v), 1.0);
  }
}

TEST(CurveNet, WrongInputThrows) {
  CurveNet<float> net(CurveNetSpec{4});
  const auto p = init(net, 1);
  EXPECT_THROW(net.forward(p, Image::chw(4, 8, 8)), ShapeError);
}

TEST(CurveNet, SevenLayersOfConfiguredWidth) {
  CurveNet<float> net;
  const auto p = net.make_params();
  std::size_t convs = 0;
  for (const auto& e : p)
    if (e.value.rank() == 4) {
      ++convs;
      EXPECT_EQ(e.value.dim(2), 3u);
    }
  EXPECT_EQ(convs, 7u);
  EXPECT_EQ(p.value(p.index("conv1.weight")).dim(0), 32u);
  EXPECT_EQ(p.value(net.head().first).dim(0), kCurveChannels);
}

TEST(NoiseNet, ZeroHeadGivesZero) {
  NoiseNet<float> net(NoiseNetSpec{8});
  const auto p = init(net, 4, true);
  Rng rng(5);
  const auto out = net.forward(p, random_curves(8, 8, rng, 2.0), test::random_image(8, 8, rng), random_curves(8, 8, rng),
                               17, 100);
  EXPECT_EQ(out.dims(), (Shape{kCurveChannels, 8, 8}));
  for (auto v : out.data()) EXPECT_EQ(v, 0.0f);
}

TEST(NoiseNet, FiftyOneInputChannels) {
  NoiseNet<float> net(NoiseNetSpec{8});
  const auto p = net.make_params();
  EXPECT_EQ(p.value(p.index("in.weight")).dim(1), 51u);
  EXPECT_EQ(kNoiseNetInputChannels, 51u);
  EXPECT_EQ(p.value(net.head().first).dim(0), kCurveChannels);
}

TEST(NoiseNet, TimestepChangesOutput) {
  NoiseNet<float> net(NoiseNetSpec{8});
  const auto p = init(net, 6);
  Rng rng(7);
  const auto x = random_curves(8, 8, rng, 2.0);
  const auto img = test::random_image(8, 8, rng);
  const auto cond = random_curves(8, 8, rng);
  const auto a = net.forward(p, x, img, cond, 1, 100);
  const auto b = net.forward(p, x, img, cond, 50, 100);
  const auto c = net.forward(p, x, img, cond, 100, 100);
  EXPECT_GT(max_abs_diff(a, b), 1e-6);
  EXPECT_GT(max_abs_diff(b, c), 1e-6);
  EXPECT_GT(max_abs_diff(a, c), 1e-6);
}

TEST(NoiseNet, InputErrors) {
  NoiseNet<float> net(NoiseNetSpec{4});
  const auto p = init(net, 1);
  Rng rng(8);
  const auto x = random_curves(8, 8, rng);
  const auto img = test::random_image(8, 8, rng);
  EXPECT_THROW(net.forward(p, x, img, x, 0, 100), ShapeError);
  EXPECT_THROW(net.forward(p, x, img, x, 101, 100), ShapeError);
  EXPECT_THROW(net.forward(p, x, test::random_image(8, 4, rng), x, 5, 100), ShapeError);
  EXPECT_THROW(net.forward(p, random_curves(6, 6, rng), test::random_image(6, 6, rng), random_curves(6, 6, rng), 5, 100),
               ShapeError);  // two 2x downsamplings need a multiple of 4
}

TEST(Denoiser, ZeroWeightsAreIdentity) {
  Denoiser<float> net;
  auto p = net.make_params();
  Rng rng(9);
  const auto x = test::random_image(12, 10, rng);
  EXPECT_EQ(net.forward(p, x).vec(), x.vec());
}

TEST(Denoiser, ResolutionAgnostic) {
  Denoiser<float> net;
  const auto p = init(net, 10);
  Rng rng(11);
  EXPECT_EQ(net.forward(p, test::random_image(16, 16, rng)).dims(), (Shape{3, 16, 16}));
  EXPECT_EQ(net.forward(p, test::random_image(64, 64, rng)).dims(), (Shape{3, 64, 64}));
  EXPECT_EQ(net.forward(p, test::random_image(5, 9, rng)).dims(), (Shape{3, 5, 9}));
}

TEST(Denoiser, DefaultArchitecture) {
  Denoiser<float> net;
  const auto p = net.make_params();
  std::size_t blocks = 0;
  for (const auto& e : p)
    if (e.name.find(".conv1.weight") != std::string::npos) {
      ++blocks;
      EXPECT_EQ(e.value.dim(0), 16u);
    }
  EXPECT_EQ(blocks, 3u);
}

TEST(Models, ParameterCountsDeterministic) {
  for (std::size_t w : {4u, 8u, 32u}) {
    EXPECT_EQ(CurveNet<float>(CurveNetSpec{w}).make_params().parameter_count(),
              CurveNet<float>(CurveNetSpec{w}).make_params().parameter_count());
  }
  // DCE-Net at width 32: 3->32, 32->32 x3, 64->32 x2, 64->24, all 3x3 with bias
  const std::size_t expect = (3 * 32 * 9 + 32) + 3 * (32 * 32 * 9 + 32) + 2 * (64 * 32 * 9 + 32) + (64 * 24 * 9 + 24);
  EXPECT_EQ(CurveNet<float>().make_params().parameter_count(), expect);
  EXPECT_LT(NoiseNet<float>(NoiseNetSpec{4}).make_params().parameter_count(),
            NoiseNet<float>(NoiseNetSpec{8}).make_params().parameter_count());
}

TEST(Models, CurveEstimateCostIndependentOfSourceSize) {
  CurveNet<float> net(CurveNetSpec{8});
  const auto p = init(net, 12);
  Rng rng(13);
  std::uint64_t macs[2];
  int i = 0;
  for (std::size_t side : {64u, 256u}) {
    const auto low_bar = resize(test::random_image(side, side, rng), ResampleMethod::bilinear, 16, 16);
    const auto before = mac_counter();
    net.forward(p, low_bar);
    macs[i++] = mac_counter() - before;
  }
  EXPECT_EQ(macs[0], macs[1]);
  EXPECT_GT(macs[0], 0u);
}

TEST(Models, GradientsTwentySeeds) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (const auto& o : {grad_check_curve_net(seed), grad_check_noise_net(seed), grad_check_denoiser(seed)})
      EXPECT_TRUE(o.passed) << "seed " << seed << " " << o.name << ": " << o.detail;
  }
}

TEST(Models, CurveNetGradientOnFourByFour) {
  CurveNet<double> net(CurveNetSpec{4});
  Rng rng(14);
  auto p = net.make_params();
  kaiming_init(p, rng);
  for (auto& e : p)
    if (e.value.rank() == 1)
      for (auto& v : e.value.data()) v = rng.uniform(-0.1, 0.1);
  Tensor<double> x = Tensor<double>::chw(3, 4, 4), r = Tensor<double>::chw(kCurveChannels, 4, 4);
  for (auto& v : x.data()) v = rng.uniform();
  for (auto& v : r.data()) v = rng.uniform(-1, 1);
  const auto res = grad_check(p, [&](ParamStore<double>& s, bool g) {
    typename CurveNet<double>::Cache c;
    const auto y = net.forward(s, x, &c);
    if (g) net.backward(s, r, c);
    double l = 0;
    for (std::size_t i = 0; i < y.size(); ++i) l += y[i] * r[i];
    return l;
  });
  EXPECT_LT(res.max_rel_error, 1e-5) << res.worst_param;
}
