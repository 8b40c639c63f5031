#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "pneunet/error.h"
#include "pneunet/image.h"

using namespace pneunet;

namespace {

std::span<const std::uint8_t> bytes_of(const std::string& s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

ImageBuffer gray(std::size_t w, std::size_t h, std::vector<std::uint8_t> px) {
  ImageBuffer img(w, h, 1);
  img.pixels = std::move(px);
  return img;
}

}  // namespace

TEST(Image, PgmDecodesKnownPixels) {
  const std::string pgm = std::string("P5\n# comment\n2 2\n255\n") + std::string("\x00\x55\xaa\xff", 4);
  const ImageBuffer img = decode_image(pgm);
  EXPECT_EQ(img.width, 2u);
  EXPECT_EQ(img.channels, 1u);
  EXPECT_EQ(img.pixels, (std::vector<std::uint8_t>{0, 85, 170, 255}));
  EXPECT_EQ(detect_format(bytes_of(pgm)), ImageFormat::kPgm);
}

TEST(Image, TruncatedInputThrows) {
  const std::string pgm = std::string("P5 2 2 255\n") + std::string("\x00\x55", 2);
  EXPECT_THROW(decode_image(pgm), FormatError);
  const std::string png = encode_png(gray(4, 4, std::vector<std::uint8_t>(16, 9)));
  EXPECT_THROW(decode_image(png.substr(0, png.size() / 2)), FormatError);
  ImageBuffer big(32, 32, 1, 128);
  const std::string jpg = encode_jpeg(big);
  EXPECT_THROW(decode_image(jpg.substr(0, jpg.size() / 2)), FormatError);
  EXPECT_THROW(decode_image(std::string("GIF89a")), FormatError);
}

TEST(Image, PngRoundTripIsLossless) {
  ImageBuffer rgb(3, 2, 3);
  for (std::size_t i = 0; i < rgb.pixels.size(); ++i) rgb.pixels[i] = static_cast<std::uint8_t>(i * 13);
  EXPECT_EQ(decode_image(encode_png(rgb)), rgb);
  const ImageBuffer g = gray(2, 2, {1, 2, 3, 4});
  EXPECT_EQ(decode_image(encode_png(g)), g);
  EXPECT_EQ(decode_image(encode_pgm(g)), g);
}

TEST(Image, JpegUniformGrayWithinTwoLevels) {
  const ImageBuffer img(16, 16, 1, 128);
  const ImageBuffer back = decode_image(encode_jpeg(img));
  ASSERT_EQ(back.width, 16u);
  for (auto v : back.pixels) EXPECT_NEAR(v, 128, 2);
}

TEST(Image, ResizeMatchesHalfPixelOracle) {
  // 2x2 [[0,2],[2,4]] -> 4x4. Destination x maps to src = (x + 0.5)/2 - 0.5,
  // i.e. -0.25, 0.25, 0.75, 1.25, clamped to [0, 1].
  const ImageBuffer src = gray(2, 2, {0, 2, 2, 4});
  std::vector<float> grid{0, 2, 2, 4};
  const std::vector<float> up = resize_bilinear(std::span<const float>(grid), 2, 2, 4, 4);
  const double pos[4] = {0.0, 0.25, 0.75, 1.0};
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      // f(u, v) = 2u + 2v on the unit square.
      EXPECT_NEAR(up[y * 4 + x], 2 * pos[x] + 2 * pos[y], 1e-6) << x << "," << y;
    }
  }
  const ImageBuffer out = resize_bilinear(src, 4, 4);
  EXPECT_EQ(out.pixels[0], 0);
  EXPECT_EQ(out.pixels[5], 1);   // 1.0
  EXPECT_EQ(out.pixels[15], 4);
  EXPECT_EQ(out.at(2, 1), 2);    // 1.5 + 0.5 = 2.0
}

TEST(Image, ResizeIdentityAndDownscale) {
  const ImageBuffer src = gray(3, 2, {10, 20, 30, 40, 50, 60});
  EXPECT_EQ(resize_bilinear(src, 3, 2), src);
  const ImageBuffer one = resize_bilinear(gray(2, 2, {0, 100, 100, 200}), 1, 1);
  EXPECT_EQ(one.pixels[0], 100);
}

TEST(Image, HflipAndRotate) {
  const ImageBuffer src = gray(3, 2, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(hflip(src).pixels, (std::vector<std::uint8_t>{3, 2, 1, 6, 5, 4}));
  EXPECT_EQ(hflip(hflip(src)), src);
  EXPECT_EQ(rotate(src, 0.0), src);
  const ImageBuffer sq = gray(3, 3, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  EXPECT_EQ(rotate(sq, 180.0).pixels, (std::vector<std::uint8_t>{9, 8, 7, 6, 5, 4, 3, 2, 1}));
  // 90 degrees counter-clockwise: the top row becomes the left column, read upwards.
  EXPECT_EQ(rotate(sq, 90.0).pixels, (std::vector<std::uint8_t>{3, 6, 9, 2, 5, 8, 1, 4, 7}));
}

TEST(Image, AugmentTakesTwoDrawsAndIsSeeded) {
  const ImageBuffer src(8, 8, 1, 77);
  Rng a(3), b(3);
  const ImageBuffer x = augment(src, {}, a);
  const ImageBuffer y = augment(src, {}, b);
  EXPECT_EQ(x, y);
  Rng c(3);
  c.next();
  c.next();
  EXPECT_EQ(a.next(), c.next());
  EXPECT_THROW((AugmentationConfig{1.5, 10}.validate()), ConfigError);
}

TEST(Image, ToTensorScalesAndReplicates) {
  const ImageBuffer img(2, 2, 1, 128);
  const Tensor t = to_tensor(img, 3);
  EXPECT_EQ(t.shape(), (Shape{3, 2, 2}));
  for (float v : t.data()) EXPECT_FLOAT_EQ(v, 128.0f / 255.0f);
  EXPECT_THROW(to_tensor(ImageBuffer(2, 2, 3), 2), ShapeError);
  ImageBuffer rgb(1, 1, 3);
  rgb.pixels = {255, 0, 0};
  // 0.299 * 255 = 76.245 -> 76
  EXPECT_FLOAT_EQ(to_tensor(rgb, 1)[0], 76.0f / 255.0f);
}

TEST(Image, FileRoundTripByExtension) {
  const auto dir = std::filesystem::temp_directory_path();
  const ImageBuffer g = gray(2, 2, {5, 6, 7, 8});
  for (const char* ext : {".png", ".pgm"}) {
    const auto p = dir / (std::string("pneunet_img") + ext);
    write_image(p, g);
    EXPECT_EQ(read_image(p), g);
    std::filesystem::remove(p);
  }
  EXPECT_THROW(read_image(dir / "pneunet_missing.png"), IoError);
}
