#include <gtest/gtest.h>
#include <png.h>

#include <cmath>
#include <cstdio>
#include <limits>

#include "bdce/metrics.hpp"
#include "bdce/png_io.hpp"
#include "bdce/resample.hpp"
#include "test_util.hpp"

using namespace bdce;

namespace {

// Minimal libpng writer for colour types the library itself never writes.
void write_raw_png(const std::string& path, int w, int h, int color_type, int depth,
                   const std::vector<unsigned char>& rows) {
  FILE* f = std::fopen(path.c_str(), "wb");
  ASSERT_NE(f, nullptr);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  png_init_io(png, f);
  png_set_IHDR(png, info, w, h, depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = rows.size() / static_cast<std::size_t>(h);
  for (int y = 0; y < h; ++y) png_write_row(png, rows.data() + static_cast<std::size_t>(y) * stride);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(f);
}

}  // namespace

TEST(Png, RoundTripWithinQuantisation) {
  test::TempDir dir;
  Rng rng(1);
  const auto img = test::random_image(13, 17, rng);
  save_png(img, dir.file("a.png"));
  const auto back = load_png(dir.file("a.png"));
  ASSERT_EQ(back.dims(), img.dims());
  EXPECT_LE(max_abs_diff(img, back), 1.0 / 255.0 + 1e-6);
}

TEST(Png, BlackAndWhitePixels) {
  test::TempDir dir;
  save_png(Image::chw(3, 1, 1, 0.0f), dir.file("k.png"));
  save_png(Image::chw(3, 1, 1, 1.0f), dir.file("w.png"));
  for (auto v : load_png(dir.file("k.png")).data()) EXPECT_EQ(v, 0.0f);
  for (auto v : load_png(dir.file("w.png")).data()) EXPECT_EQ(v, 1.0f);
}

TEST(Png, RoundsToNearestLevel) {
  test::TempDir dir;
  Image img = Image::chw(3, 1, 2);
  img.at(0, 0, 0) = 0.501f / 255.0f;
  img.at(0, 0, 1) = 0.499f / 255.0f;
  save_png(img, dir.file("h.png"));
  const auto back = load_png(dir.file("h.png"));
  EXPECT_FLOAT_EQ(back.at(0, 0, 0), 1.0f / 255.0f);
  EXPECT_EQ(back.at(0, 0, 1), 0.0f);
}

TEST(Png, RgbaDropsAlphaAndSixteenBit) {
  test::TempDir dir;
  write_raw_png(dir.file("rgba.png"), 1, 1, PNG_COLOR_TYPE_RGB_ALPHA, 8, {255, 0, 51, 7});
  const auto a = load_png(dir.file("rgba.png"));
  ASSERT_EQ(a.dims(), (Shape{3, 1, 1}));
  EXPECT_EQ(a[0], 1.0f);
  EXPECT_EQ(a[1], 0.0f);
  EXPECT_FLOAT_EQ(a[2], 0.2f);
  write_raw_png(dir.file("16.png"), 1, 1, PNG_COLOR_TYPE_RGB, 16, {0xff, 0xff, 0x80, 0x00, 0x00, 0x00});
  const auto b = load_png(dir.file("16.png"));
  EXPECT_EQ(b[0], 1.0f);
  EXPECT_NEAR(b[1], 32768.0 / 65535.0, 1e-6);
  EXPECT_EQ(b[2], 0.0f);
}

TEST(Png, Errors) {
  test::TempDir dir;
  EXPECT_THROW(load_png(dir.file("missing.png")), IoError);
  write_raw_png(dir.file("gray.png"), 1, 1, PNG_COLOR_TYPE_GRAY, 8, {9});
  EXPECT_THROW(load_png(dir.file("gray.png")), IoError);
  {
    std::FILE* f = std::fopen(dir.file("junk.png").c_str(), "wb");
    std::fputs("not a png", f);
    std::fclose(f);
  }
  EXPECT_THROW(load_png(dir.file("junk.png")), IoError);
}

TEST(Resize, ConstantPreservedByEveryMethod) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const float v = static_cast<float>(rng.uniform());
    const Tensor<float> x = Tensor<float>::chw(3, 8, 12, v);
    for (auto m : kAllResampleMethods) {
      const auto y = resize(x, m, 4, 6);
      for (auto o : y.data()) ASSERT_NEAR(o, v, 1e-6) << method_name(m);
    }
  }
  const Tensor<float> x = Tensor<float>::chw(2, 5, 7, 0.3f);
  for (auto m : {ResampleMethod::nearest, ResampleMethod::bilinear, ResampleMethod::bicubic, ResampleMethod::lanczos3})
    for (auto o : resize(x, m, 11, 3).data()) EXPECT_NEAR(o, 0.3f, 1e-6);
}

TEST(Resize, PoolingExamples) {
  Tensor<float> x({1, 2, 2}, std::vector<float>{0, 1, 1, 0});
  EXPECT_FLOAT_EQ(resize(x, ResampleMethod::avgpool2, 1, 1)[0], 0.5f);
  EXPECT_FLOAT_EQ(resize(x, ResampleMethod::maxpool2, 1, 1)[0], 1.0f);
}

TEST(Resize, PoolingNeedsIntegerFactor) {
  const Tensor<float> x = Tensor<float>::chw(1, 5, 4);
  EXPECT_THROW(resize(x, ResampleMethod::avgpool2, 2, 2), ShapeError);
  EXPECT_THROW(resize(x, ResampleMethod::maxpool2, 3, 2), ShapeError);
  EXPECT_THROW(resize(x, ResampleMethod::bilinear, 0, 2), ShapeError);
}

TEST(Resize, NearestIdentityAtSameSize) {
  Rng rng(3);
  const auto x = test::random_image(9, 7, rng);
  EXPECT_EQ(resize(x, ResampleMethod::nearest, 9, 7).vec(), x.vec());
  EXPECT_EQ(resize(x, ResampleMethod::bilinear, 9, 7).vec(), x.vec());
}

TEST(Resize, ChannelsPreservedAndRangeKept) {
  Rng rng(4);
  Tensor<float> x = Tensor<float>::chw(5, 16, 16);
  for (auto& v : x.data()) v = rng.uniform() < 0.5 ? 0.0f : 1.0f;  // hard edges provoke ringing
  for (auto m : kAllResampleMethods) {
    const auto y = resize(x, m, 8, 8);
    EXPECT_EQ(y.channels(), 5u);
    for (auto v : y.data()) {
      EXPECT_GE(v, 0.0f) << method_name(m);
      EXPECT_LE(v, 1.0f) << method_name(m);
    }
  }
  for (auto m : {ResampleMethod::bicubic, ResampleMethod::lanczos3})
    for (auto v : resize(x, m, 37, 23).data()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
}

TEST(Resize, HalfPixelBilinear) {
  // 1 x 1 x 2 row [0, 1] upsampled to 4: centres at 0.25, 0.75, 1.25, 1.75 minus 0.5.
  Tensor<float> x({1, 1, 2}, std::vector<float>{0.0f, 1.0f});
  const auto y = resize(x, ResampleMethod::bilinear, 1, 4);
  EXPECT_FLOAT_EQ(y[0], 0.0f);
  EXPECT_FLOAT_EQ(y[1], 0.25f);
  EXPECT_FLOAT_EQ(y[2], 0.75f);
  EXPECT_FLOAT_EQ(y[3], 1.0f);
}

TEST(Resize, MethodNamesRoundTrip) {
  for (auto m : kAllResampleMethods) EXPECT_EQ(parse_method(method_name(m)), m);
  EXPECT_FALSE(parse_method("area").has_value());
}

TEST(Psnr, Examples) {
  const Image a = Image::chw(3, 4, 4, 0.0f);
  EXPECT_EQ(psnr(a, a), std::numeric_limits<double>::infinity());
  EXPECT_NEAR(psnr(a, Image::chw(3, 4, 4, 0.5f)), 10.0 * std::log10(4.0), 1e-6);
  EXPECT_NEAR(psnr(a, Image::chw(3, 4, 4, 1.0f)), 0.0, 1e-6);
  EXPECT_THROW(psnr(a, Image::chw(3, 4, 5)), ShapeError);
}

TEST(Psnr, Symmetric) {
  Rng rng(5);
  const auto a = test::random_image(12, 12, rng), b = test::random_image(12, 12, rng);
  EXPECT_EQ(psnr(a, b), psnr(b, a));
}

TEST(Ssim, Examples) {
  Rng rng(6);
  const auto a = test::random_image(16, 16, rng);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-9);
  EXPECT_NEAR(ssim(Image::chw(3, 11, 11, 0.2f), Image::chw(3, 11, 11, 0.2f)), 1.0, 1e-9);
  const double c1 = 0.01 * 0.01;
  const double expect = (2 * 0.25 * 0.75 + c1) / (0.25 * 0.25 + 0.75 * 0.75 + c1);
  EXPECT_NEAR(ssim(Image::chw(3, 12, 12, 0.25f), Image::chw(3, 12, 12, 0.75f)), expect, 1e-6);
}

TEST(Ssim, SymmetricBoundedAndErrors) {
  Rng rng(7);
  const auto a = test::random_image(20, 14, rng), b = test::random_image(20, 14, rng);
  EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
  EXPECT_LE(ssim(a, b), 1.0);
  EXPECT_GE(ssim(a, b), -1.0);
  EXPECT_THROW(ssim(Image::chw(3, 10, 20), Image::chw(3, 10, 20)), ShapeError);
  EXPECT_THROW(ssim(a, Image::chw(3, 20, 15)), ShapeError);
}

TEST(LinearFit, ExactLine) {
  const auto f = linear_fit({1, 2, 3, 4}, {3, 5, 7, 9});
  EXPECT_NEAR(f.slope, 2.0, 1e-12);
  EXPECT_NEAR(f.intercept, 1.0, 1e-12);
  EXPECT_NEAR(f.r2, 1.0, 1e-12);
}
