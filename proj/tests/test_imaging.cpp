#include <png.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>

#include "bsrkit/error.hpp"
#include "bsrkit/homography.hpp"
#include "bsrkit/image.hpp"
#include "doctest.h"

using namespace bsrkit;
namespace fs = std::filesystem;

namespace {

Image random_image(int c, int h, int w, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(c, h, w);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) img.set(ch, y, x, u(rng));
  return img;
}

Image smooth_image(int h, int w) {
  Image img(3, h, w);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        img.set(c, y, x,
                0.5 + 0.2 * std::sin(0.21 * x + 0.5 * c) * std::cos(0.17 * y) + 0.15 * std::sin(0.11 * (x + y) + c));
  return img;
}

void write_png16(const fs::path& path) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  REQUIRE(f != nullptr);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  png_init_io(png, f);
  png_set_IHDR(png, info, 2, 2, 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_byte row[4] = {0x12, 0x34, 0x56, 0x78};
  png_write_row(png, row);
  png_write_row(png, row);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(f);
}

}  // namespace

TEST_CASE("image clamps on write") {
  Image img(1, 2, 2);
  img.set(0, 0, 0, 1.7);
  img.set(0, 0, 1, -0.3);
  CHECK(img.at(0, 0, 0) == 1.0);
  CHECK(img.at(0, 0, 1) == 0.0);
  CHECK_THROWS_AS(Image(2, 4, 4), DimensionError);
}

TEST_CASE("identity warp is bit exact") {
  auto img = random_image(3, 17, 23, 1);
  CHECK(warp(img, Homography::identity()) == img);
  CHECK(warp(img, Homography::identity(), Interpolation::bicubic) == img);
}

TEST_CASE("integer translation round trip is exact in the interior") {
  auto img = random_image(1, 20, 20, 2);
  auto back = warp(warp(img, Homography::translation(1, 0)), Homography::translation(-1, 0));
  for (int y = 0; y < 20; ++y)
    for (int x = 1; x < 19; ++x) CHECK(std::abs(back.at(0, y, x) - img.at(0, y, x)) < 1e-9);
}

TEST_CASE("half-pixel shift of a ramp is exact under bilinear") {
  const int w = 16;
  Image ramp(1, 4, w);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < w; ++x) ramp.set(0, y, x, x / double(w - 1));
  auto out = warp(ramp, Homography::translation(0.5, 0));
  for (int y = 0; y < 4; ++y)
    for (int x = 1; x < w; ++x) CHECK(std::abs(out.at(0, y, x) - (x - 0.5) / double(w - 1)) < 1e-9);
}

TEST_CASE("forward then inverse warp restores the interior") {
  auto img = smooth_image(48, 48);
  auto h = Homography::rigid(2.0, 1.3, -0.8, 24, 24);
  for (auto [interp, tol] : {std::pair{Interpolation::bilinear, 2e-2}, std::pair{Interpolation::bicubic, 5e-3}}) {
    auto back = warp(warp(img, h, interp), h.inverse(), interp);
    CHECK(mean_abs_diff(back, img, 4) < tol);
  }
}

TEST_CASE("singular homography is rejected") {
  Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
  m(2, 2) = 1;
  CHECK_THROWS_AS(Homography{m}, TransformError);
}

TEST_CASE("homography scale conversion") {
  // A 4 px HR translation is 1 LR px at s = 4.
  auto lr = Homography::translation(4, -2).to_lr(4);
  CHECK(lr(0, 2) == doctest::Approx(1.0));
  CHECK(lr(1, 2) == doctest::Approx(-0.5));
  // Rotation about an HR point is rotation about the matching LR point.
  auto r = Homography::rigid(0.3, 0, 0, 31.5, 31.5).to_lr(4);
  auto d = r.displacement_at({7.5, 7.5});
  CHECK(d.norm() < 1e-12);
}

TEST_CASE("downsample") {
  Image c(3, 16, 16, 0.3);
  auto d = downsample(c, 4);
  CHECK(d.height() == 4);
  for (double v : d.pixels()) CHECK(v == doctest::Approx(0.3).epsilon(1e-15));

  Image blk(1, 2, 2);
  blk.set(0, 0, 1, 1.0);
  blk.set(0, 1, 0, 1.0);
  CHECK(downsample(blk, 2).at(0, 0, 0) == 0.5);

  auto r = random_image(3, 12, 10, 5);
  auto dr = downsample(r, 2);
  double mean_in = 0, mean_out = 0;
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 5; ++x) {
        const double want = (r.at(ch, 2 * y, 2 * x) + r.at(ch, 2 * y + 1, 2 * x) + r.at(ch, 2 * y, 2 * x + 1) +
                             r.at(ch, 2 * y + 1, 2 * x + 1)) / 4.0;
        CHECK(std::abs(dr.at(ch, y, x) - want) < 1e-12);
      }
  for (double v : r.pixels()) mean_in += v / r.pixels().size();
  for (double v : dr.pixels()) mean_out += v / dr.pixels().size();
  CHECK(std::abs(mean_in - mean_out) < 1e-12);
  CHECK_THROWS_AS(downsample(r, 4), DimensionError);
}

TEST_CASE("bicubic upsample of a constant is constant") {
  Image c(1, 5, 5, 0.42);
  auto u = upsample_bicubic(c, 4);
  CHECK(u.height() == 20);
  for (double v : u.pixels()) CHECK(v == doctest::Approx(0.42).epsilon(1e-12));
}

TEST_CASE("png round trips") {
  auto dir = fs::temp_directory_path() / "bsrkit_png_test";
  fs::create_directories(dir);
  auto img = random_image(3, 9, 7, 8);
  write_png(img, dir / "rgb.png");
  auto back = read_png(dir / "rgb.png");
  REQUIRE(back.channels() == 3);
  for (std::size_t i = 0; i < img.pixels().size(); ++i) CHECK(std::abs(back.pixels()[i] - img.pixels()[i]) <= 1.0 / 255.0);
  write_png(back, dir / "rgb2.png");
  CHECK(read_png(dir / "rgb2.png") == back);

  Image black(1, 4, 4);
  write_png(black, dir / "black.png");
  const auto black_back = read_png(dir / "black.png");
  for (double v : black_back.pixels()) CHECK(v == 0.0);

  write_png16(dir / "deep.png");
  CHECK_THROWS_AS(read_png(dir / "deep.png"), FormatError);
  CHECK_THROWS_AS(read_png(dir / "missing.png"), IoError);
  fs::remove_all(dir);
}
