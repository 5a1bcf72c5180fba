#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <vector>

#include "bsrkit/tensor.hpp"

namespace bsrkit {

using Plane = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Channel-planar image with values clamped to [0,1] on every write.
class Image {
 public:
  Image() = default;
  Image(int channels, int height, int width, double fill = 0.0);
  static Image from_planes(const std::vector<Plane>& planes);
  // Accepts [C,H,W] with C in {1,3}; values are clamped.
  static Image from_tensor(const Tensor& t);

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  bool empty() const { return pixels_.empty(); }

  double at(int c, int y, int x) const { return pixels_[index(c, y, x)]; }
  void set(int c, int y, int x, double v);
  // Sample with coordinates clamped to the image (replicate border).
  double at_clamped(int c, int y, int x) const;

  Plane plane(int c) const;
  const std::vector<double>& pixels() const { return pixels_; }
  Tensor to_tensor(bool requires_grad = false) const;

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }
  int channels_ = 0, height_ = 0, width_ = 0;
  std::vector<double> pixels_;
};

// Rec.601 luma; single-channel images pass through.
Image to_luma(const Image& img);
Plane luma_plane(const Image& img);
Image crop(const Image& img, int y0, int x0, int height, int width);

// Area-average pooling over s x s blocks.
Image downsample(const Image& img, int s);
// Keys (a = -0.5) bicubic resize by an integer factor, pixel-center aligned.
Image upsample_bicubic(const Image& img, int s);

// Separable Gaussian filter, replicate border, radius ceil(3 sigma).
Plane gaussian_blur(const Plane& in, double sigma);

double mean_abs_diff(const Image& a, const Image& b, int border = 0);

// 8-bit grayscale or RGB PNG.
Image read_png(const std::filesystem::path& path);
void write_png(const Image& img, const std::filesystem::path& path);

}  // namespace bsrkit
