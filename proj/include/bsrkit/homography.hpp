#pragma once

#include <Eigen/Core>

#include "bsrkit/image.hpp"

namespace bsrkit {

// 3x3 projective transform, normalized so that m(2,2) == 1.
class Homography {
 public:
  Homography() : m_(Eigen::Matrix3d::Identity()) {}
  explicit Homography(const Eigen::Matrix3d& m);

  static Homography identity() { return {}; }
  static Homography translation(double tx, double ty);
  // Rotation by `degrees` about (cx, cy) followed by translation (tx, ty).
  static Homography rigid(double degrees, double tx, double ty, double cx, double cy);

  const Eigen::Matrix3d& matrix() const { return m_; }
  double operator()(int r, int c) const { return m_(r, c); }
  Homography inverse() const;
  Eigen::Vector2d apply(const Eigen::Vector2d& p) const;
  // Displacement of the point p under this transform.
  Eigen::Vector2d displacement_at(const Eigen::Vector2d& p) const { return apply(p) - p; }
  // Re-expresses a transform in coordinates scaled by 1/s (HR -> LR, pixel
  // centers of an area-averaged grid).
  Homography to_lr(int s) const;
  double max_abs_diff(const Homography& other) const { return (m_ - other.m_).cwiseAbs().maxCoeff(); }

  friend Homography operator*(const Homography& a, const Homography& b) { return Homography(a.m_ * b.m_); }

 private:
  Eigen::Matrix3d m_;
};

enum class Interpolation { bilinear, bicubic };

// Inverse-mapping warp: out(p) = img(h^-1 p), replicate border, same size.
Image warp(const Image& img, const Homography& h, Interpolation interp = Interpolation::bilinear);

double sample_bilinear(const Image& img, int c, double x, double y);
double sample_bicubic(const Image& img, int c, double x, double y);

}  // namespace bsrkit
