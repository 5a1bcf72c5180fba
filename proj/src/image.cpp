#include "bsrkit/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "bsrkit/error.hpp"

namespace bsrkit {

Image::Image(int channels, int height, int width, double fill)
    : channels_(channels), height_(height), width_(width) {
  if (channels != 1 && channels != 3) throw DimensionError("image must have 1 or 3 channels");
  if (height <= 0 || width <= 0) throw DimensionError("image extents must be positive");
  pixels_.assign(static_cast<std::size_t>(channels) * height * width, std::clamp(fill, 0.0, 1.0));
}

Image Image::from_planes(const std::vector<Plane>& planes) {
  if (planes.empty()) throw DimensionError("no planes");
  Image img(static_cast<int>(planes.size()), static_cast<int>(planes[0].rows()), static_cast<int>(planes[0].cols()));
  for (int c = 0; c < img.channels_; ++c) {
    if (planes[c].rows() != img.height_ || planes[c].cols() != img.width_) throw DimensionError("plane sizes differ");
    for (int y = 0; y < img.height_; ++y)
      for (int x = 0; x < img.width_; ++x) img.set(c, y, x, planes[c](y, x));
  }
  return img;
}

Image Image::from_tensor(const Tensor& t) {
  if (t.rank() != 3) throw DimensionError("image tensor must be [C,H,W], got " + to_string(t.shape()));
  Image img(static_cast<int>(t.dim(0)), static_cast<int>(t.dim(1)), static_cast<int>(t.dim(2)));
  const auto& v = t.values();
  for (std::size_t i = 0; i < v.size(); ++i) img.pixels_[i] = std::clamp(v[i], 0.0, 1.0);
  return img;
}

void Image::set(int c, int y, int x, double v) {
  pixels_[index(c, y, x)] = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;
}

double Image::at_clamped(int c, int y, int x) const {
  return at(c, std::clamp(y, 0, height_ - 1), std::clamp(x, 0, width_ - 1));
}

Plane Image::plane(int c) const {
  Plane p(height_, width_);
  std::copy_n(pixels_.begin() + static_cast<std::ptrdiff_t>(index(c, 0, 0)), static_cast<std::size_t>(height_) * width_, p.data());
  return p;
}

Tensor Image::to_tensor(bool requires_grad) const {
  return Tensor({static_cast<std::size_t>(channels_), static_cast<std::size_t>(height_), static_cast<std::size_t>(width_)},
                pixels_, requires_grad);
}

Plane luma_plane(const Image& img) {
  if (img.channels() == 1) return img.plane(0);
  return 0.299 * img.plane(0) + 0.587 * img.plane(1) + 0.114 * img.plane(2);
}

Image to_luma(const Image& img) { return Image::from_planes({luma_plane(img)}); }

Image crop(const Image& img, int y0, int x0, int height, int width) {
  if (y0 < 0 || x0 < 0 || height <= 0 || width <= 0 || y0 + height > img.height() || x0 + width > img.width())
    throw DimensionError("crop window outside image");
  Image out(img.channels(), height, width);
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) out.set(c, y, x, img.at(c, y0 + y, x0 + x));
  return out;
}

Image downsample(const Image& img, int s) {
  if (s <= 0) throw DimensionError("scale factor must be positive");
  if (img.height() % s != 0 || img.width() % s != 0)
    throw DimensionError("image size " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                         " not divisible by " + std::to_string(s));
  const int h = img.height() / s, w = img.width() / s;
  Image out(img.channels(), h, w);
  const double inv = 1.0 / (s * s);
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int dy = 0; dy < s; ++dy)
          for (int dx = 0; dx < s; ++dx) acc += img.at(c, y * s + dy, x * s + dx);
        out.set(c, y, x, acc * inv);
      }
  return out;
}

namespace {

double cubic_weight(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

}  // namespace

Image upsample_bicubic(const Image& img, int s) {
  if (s <= 0) throw DimensionError("scale factor must be positive");
  const int h = img.height() * s, w = img.width() * s;
  Image out(img.channels(), h, w);
  // Separable: the same 4 taps serve every row/column at a given phase.
  for (int c = 0; c < img.channels(); ++c) {
    Plane rows(img.height(), w);
    for (int x = 0; x < w; ++x) {
      const double sx = (x + 0.5) / s - 0.5;
      const int x0 = static_cast<int>(std::floor(sx));
      const double f = sx - x0;
      for (int y = 0; y < img.height(); ++y) {
        double acc = 0.0;
        for (int k = -1; k <= 2; ++k) acc += cubic_weight(k - f) * img.at_clamped(c, y, x0 + k);
        rows(y, x) = acc;
      }
    }
    for (int y = 0; y < h; ++y) {
      const double sy = (y + 0.5) / s - 0.5;
      const int y0 = static_cast<int>(std::floor(sy));
      const double f = sy - y0;
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int k = -1; k <= 2; ++k) acc += cubic_weight(k - f) * rows(std::clamp(y0 + k, 0, img.height() - 1), x);
        out.set(c, y, x, acc);
      }
    }
  }
  return out;
}

Plane gaussian_blur(const Plane& in, double sigma) {
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * r + 1);
  double total = 0.0;
  for (int i = -r; i <= r; ++i) total += (k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma)));
  for (auto& v : k) v /= total;
  const int h = static_cast<int>(in.rows()), w = static_cast<int>(in.cols());
  Plane tmp(h, w), out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * in(y, std::clamp(x + i, 0, w - 1));
      tmp(y, x) = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp(std::clamp(y + i, 0, h - 1), x);
      out(y, x) = acc;
    }
  return out;
}


double mean_abs_diff(const Image& a, const Image& b, int border) {
  if (a.channels() != b.channels() || a.height() != b.height() || a.width() != b.width())
    throw DimensionError("images differ in shape");
  double acc = 0.0;
  std::size_t n = 0;
  for (int c = 0; c < a.channels(); ++c)
    for (int y = border; y < a.height() - border; ++y)
      for (int x = border; x < a.width() - border; ++x) {
        acc += std::abs(a.at(c, y, x) - b.at(c, y, x));
        ++n;
      }
  if (n == 0) throw DimensionError("border leaves no interior pixels");
  return acc / static_cast<double>(n);
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_error_fn(png_structp png, png_const_charp msg) {
  auto* err = static_cast<std::string*>(png_get_error_ptr(png));
  if (err) *err = msg;
  png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

}  // namespace

Image read_png(const std::filesystem::path& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) throw FormatError(path.string() + " is not a PNG");
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  png_infop info = png_create_info_struct(png);
  Image img;
  std::vector<png_byte> buf;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("PNG decode failed for " + path.string() + ": " + err);
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int type = png_get_color_type(png, info);
  int channels = 0;
  if (type == PNG_COLOR_TYPE_GRAY) channels = 1;
  if (type == PNG_COLOR_TYPE_RGB) channels = 3;
  if (depth != 8 || channels == 0) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path.string() + ": only 8-bit grayscale or RGB PNG is supported (bit depth " +
                      std::to_string(depth) + ", color type " + std::to_string(type) + ")");
  }
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const std::size_t stride = static_cast<std::size_t>(w) * channels;
  buf.resize(stride * h);
  rows.resize(h);
  for (int y = 0; y < h; ++y) rows[y] = buf.data() + stride * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  img = Image(channels, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c) img.set(c, y, x, buf[stride * y + static_cast<std::size_t>(x) * channels + c] / 255.0);
  return img;
}

void write_png(const Image& img, const std::filesystem::path& path) {
  if (img.empty()) throw DimensionError("cannot write an empty image");
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  const int channels = img.channels(), w = img.width(), h = img.height();
  const std::size_t stride = static_cast<std::size_t>(w) * channels;
  std::vector<png_byte> buf(stride * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        buf[stride * y + static_cast<std::size_t>(x) * channels + c] =
            static_cast<png_byte>(std::lround(std::clamp(img.at(c, y, x), 0.0, 1.0) * 255.0));
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = buf.data() + stride * y;
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encode failed for " + path.string() + ": " + err);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace bsrkit
