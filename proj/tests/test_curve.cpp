#include <gtest/gtest.h>

#include "bdce/curve.hpp"
#include "bdce/selfcheck.hpp"
#include "test_util.hpp"

using namespace bdce;

namespace {

CurveMap<float> random_curves(std::size_t h, std::size_t w, Rng& rng) {
  CurveMap<float> c = CurveMap<float>::chw(kCurveChannels, h, w);
  for (auto& v : c.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return c;
}

double scalar_recurrence(double y, const CurveMap<float>& c, std::size_t ch, std::size_t py, std::size_t px) {
  for (std::size_t s = 0; s < kCurveStages; ++s) {
    const double k = c.at(3 * s + ch, py, px);
    y = y + k * y * (1.0 - y);
  }
  return y;
}

Denoiser<float> identity_denoiser(ParamStore<float>& p, Rng& rng) {
  Denoiser<float> d(DenoiserSpec{4, 2});
  p = d.make_params();
  kaiming_init(p, rng);
  zero_head(p, d.head());
  return d;
}

}  // namespace

TEST(LeStep, Examples) {
  Rng rng(1);
  const auto y = test::random_image(4, 4, rng);
  EXPECT_EQ(le_step(y, Image(y.dims())).vec(), y.vec());
  const auto half = le_step(Image::chw(3, 1, 1, 0.5f), Image::chw(3, 1, 1, 1.0f));
  EXPECT_FLOAT_EQ(half[0], 0.75f);
  for (float fixed : {0.0f, 1.0f}) {
    const auto c = test::random_image(2, 2, rng, -1.0f, 1.0f);
    for (auto v : le_step(Image::chw(3, 2, 2, fixed), c).data()) EXPECT_EQ(v, fixed);
  }
  EXPECT_THROW(le_step(Image::chw(3, 2, 2), Image::chw(3, 2, 3)), ShapeError);
}

TEST(LeStep, RangeAndMonotonicityFuzz) {
  for (std::uint64_t seed : {1u, 2u}) {
    const auto o = check_curve_invariants(seed, 200000);
    for (const auto& r : o) EXPECT_TRUE(r.passed) << r.name << ": " << r.detail;
  }
}

TEST(LeApply, ZeroCurvesIdentity) {
  Rng rng(2);
  const auto img = test::random_image(5, 6, rng);
  EXPECT_EQ(le_apply(img, CurveMap<float>::chw(kCurveChannels, 5, 6)).vec(), img.vec());
}

TEST(LeApply, EightStepRecurrenceFromHalf) {
  double y = 0.5;
  for (int i = 0; i < 8; ++i) y = y + y * (1 - y);
  const auto out = le_apply(Image::chw(3, 2, 2, 0.5f), CurveMap<float>::chw(kCurveChannels, 2, 2, 1.0f));
  for (auto v : out.data()) EXPECT_NEAR(v, y, 1e-6);
}

TEST(LeApply, MatchesPerPixelScalarOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto img = test::random_image(4, 4, rng);
    const auto c = random_curves(4, 4, rng);
    const auto out = le_apply(img, c);
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x)
          EXPECT_NEAR(out.at(ch, y, x), scalar_recurrence(img.at(ch, y, x), c, ch, y, x), 1e-6);
  }
  const auto one = test::random_image(1, 1, rng);
  const auto c1 = random_curves(1, 1, rng);
  EXPECT_NEAR(le_apply(one, c1)[1], scalar_recurrence(one[1], c1, 1, 0, 0), 1e-6);
}

TEST(LeApply, Locality) {
  Rng rng(4);
  const auto img = test::random_image(6, 6, rng, 0.1f, 0.9f);
  auto c = random_curves(6, 6, rng);
  const auto base = le_apply(img, c);
  c.at(5, 2, 3) = c.at(5, 2, 3) > 0 ? -0.9f : 0.9f;  // stage 2, channel 2
  const auto changed = le_apply(img, c);
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t y = 0; y < 6; ++y)
      for (std::size_t x = 0; x < 6; ++x) {
        if (ch == 2 && y == 2 && x == 3)
          EXPECT_NE(changed.at(ch, y, x), base.at(ch, y, x));
        else
          EXPECT_EQ(changed.at(ch, y, x), base.at(ch, y, x));
      }
}

TEST(LeApply, DimMismatchThrows) {
  EXPECT_THROW(le_apply(Image::chw(3, 4, 4), CurveMap<float>::chw(kCurveChannels, 4, 5)), ShapeError);
  EXPECT_THROW(le_apply(Image::chw(3, 4, 4), CurveMap<float>::chw(3, 4, 4)), ShapeError);
}

TEST(UpsampleCurve, ConstantAndIdentity) {
  const auto c = CurveMap<float>::chw(kCurveChannels, 4, 4, -0.35f);
  for (auto v : upsample_curve(c, 16, 12).data()) EXPECT_NEAR(v, -0.35f, 1e-6);
  Rng rng(5);
  const auto r = random_curves(5, 7, rng);
  EXPECT_EQ(upsample_curve(r, 5, 7).vec(), r.vec());
}

TEST(UpsampleCurve, StaysInRange) {
  Rng rng(6);
  auto r = random_curves(4, 4, rng);
  for (auto& v : r.data()) v = v > 0 ? 1.0f : -1.0f;
  for (auto v : upsample_curve(r, 13, 9).data()) {
    EXPECT_GE(v, -1.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(UpsampleCurve, BlockConstantAgreesWithNearestInBlockInteriors) {
  // 2x2 map of distinct constants, 4x upsample: pixels away from block
  // boundaries see only their own block in both methods.
  CurveMap<float> c = CurveMap<float>::chw(kCurveChannels, 2, 2);
  for (std::size_t ch = 0; ch < kCurveChannels; ++ch)
    for (std::size_t i = 0; i < 4; ++i) c.at(ch, i / 2, i % 2) = 0.1f * static_cast<float>(i) - 0.15f;
  const auto bil = upsample_curve(c, 8, 8);
  const auto near = resize(c, ResampleMethod::nearest, 8, 8);
  for (std::size_t ch = 0; ch < kCurveChannels; ++ch)
    for (std::size_t y : {0u, 1u, 6u, 7u})
      for (std::size_t x : {0u, 1u, 6u, 7u}) EXPECT_FLOAT_EQ(bil.at(ch, y, x), near.at(ch, y, x));
}

TEST(LeApplyDenoised, IdentityDenoiserMatchesPlain) {
  Rng rng(7);
  ParamStore<float> p;
  const auto d = identity_denoiser(p, rng);
  const auto img = test::random_image(8, 8, rng);
  const auto c = random_curves(8, 8, rng);
  const auto res = le_apply_denoised(img, c, d, p);
  EXPECT_EQ(res.final.vec(), le_apply(img, c).vec());
  const auto zero = le_apply_denoised(img, CurveMap<float>::chw(kCurveChannels, 8, 8), d, p);
  EXPECT_EQ(zero.final.vec(), img.vec());
}

TEST(LeApplyDenoised, IntermediatesStructure) {
  Rng rng(8);
  Denoiser<float> d(DenoiserSpec{4, 2});
  auto p = d.make_params();
  kaiming_init(p, rng);
  for (auto& e : p)
    for (auto& v : e.value.data()) v *= 3.0f;  // push outputs past [0,1]
  const auto img = test::random_image(8, 8, rng);
  const auto res = le_apply_denoised(img, random_curves(8, 8, rng), d, p);
  ASSERT_EQ(res.intermediates.size(), kCurveStages);
  EXPECT_EQ(res.intermediates.back().vec(), res.final.vec());
  for (const auto& im : res.intermediates)
    for (auto v : im.data()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  EXPECT_THROW(le_apply_denoised(img, CurveMap<float>::chw(kCurveChannels, 8, 7), d, p), ShapeError);
}

TEST(CurveChain, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto o = grad_check_curve_chain(seed);
    EXPECT_TRUE(o.passed) << o.detail;
  }
}
