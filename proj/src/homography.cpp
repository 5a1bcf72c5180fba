#include "bsrkit/homography.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <numbers>

#include "bsrkit/error.hpp"

namespace bsrkit {

Homography::Homography(const Eigen::Matrix3d& m) {
  if (!m.allFinite()) throw TransformError("homography has non-finite entries");
  if (std::abs(m(2, 2)) < 1e-12) throw TransformError("homography with m(2,2) == 0 cannot be normalized");
  m_ = m / m(2, 2);
  if (std::abs(m_.determinant()) < 1e-12) throw TransformError("homography is singular");
}

Homography Homography::translation(double tx, double ty) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(0, 2) = tx;
  m(1, 2) = ty;
  return Homography(m);
}

Homography Homography::rigid(double degrees, double tx, double ty, double cx, double cy) {
  const double th = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(0, 0) = c;
  m(0, 1) = -s;
  m(1, 0) = s;
  m(1, 1) = c;
  // R (p - center) + center + t
  m(0, 2) = cx - c * cx + s * cy + tx;
  m(1, 2) = cy - s * cx - c * cy + ty;
  return Homography(m);
}

Homography Homography::inverse() const { return Homography(m_.inverse()); }

Eigen::Vector2d Homography::apply(const Eigen::Vector2d& p) const {
  const Eigen::Vector3d q = m_ * p.homogeneous();
  return q.hnormalized();
}

Homography Homography::to_lr(int s) const {
  // HR coordinate of an LR pixel center: x_hr = s * x_lr + (s - 1) / 2.
  Eigen::Matrix3d up = Eigen::Matrix3d::Identity();
  up(0, 0) = up(1, 1) = s;
  up(0, 2) = up(1, 2) = (s - 1) / 2.0;
  return Homography(up.inverse() * m_ * up);
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

double sample_bilinear(const Image& img, int c, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(img.width() - 1));
  y = std::clamp(y, 0.0, static_cast<double>(img.height() - 1));
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0, fy = y - y0;
  const double top = img.at_clamped(c, y0, x0) * (1.0 - fx) + img.at_clamped(c, y0, x0 + 1) * fx;
  const double bot = img.at_clamped(c, y0 + 1, x0) * (1.0 - fx) + img.at_clamped(c, y0 + 1, x0 + 1) * fx;
  return top * (1.0 - fy) + bot * fy;
}

double sample_bicubic(const Image& img, int c, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(img.width() - 1));
  y = std::clamp(y, 0.0, static_cast<double>(img.height() - 1));
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0, fy = y - y0;
  double acc = 0.0;
  for (int j = -1; j <= 2; ++j) {
    double row = 0.0;
    for (int i = -1; i <= 2; ++i) row += cubic_weight(i - fx) * img.at_clamped(c, y0 + j, x0 + i);
    acc += cubic_weight(j - fy) * row;
  }
  return acc;
}

Image warp(const Image& img, const Homography& h, Interpolation interp) {
  const Eigen::Matrix3d inv = h.inverse().matrix();
  Image out(img.channels(), img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const Eigen::Vector3d q = inv * Eigen::Vector3d(x, y, 1.0);
      const double sx = q.x() / q.z(), sy = q.y() / q.z();
      for (int c = 0; c < img.channels(); ++c)
        out.set(c, y, x, interp == Interpolation::bilinear ? sample_bilinear(img, c, sx, sy) : sample_bicubic(img, c, sx, sy));
    }
  return out;
}

}  // namespace bsrkit
