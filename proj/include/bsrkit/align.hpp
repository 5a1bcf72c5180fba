#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "bsrkit/burst.hpp"
#include "bsrkit/error.hpp"
#include "bsrkit/homography.hpp"

namespace bsrkit {

enum class MotionModel { translation, euclidean, affine, homography };

struct EccConfig {
  MotionModel motion_model = MotionModel::homography;
  int max_iterations = 100;
  double epsilon = 1e-6;
  int pyramid_levels = 3;
  double gaussian_blur_sigma = 1.0;
  Interpolation warp_interpolation = Interpolation::bilinear;

  void validate() const;
};

struct AlignmentResult {
  // Registers the frame onto the base: warp(frame, homography) ~ base.
  Homography homography;
  // Zero-mean normalized correlation of base vs. registered frame.
  double final_ecc = 1.0;
  int iterations_used = 0;
  bool converged = true;
  // Accepted objective values at the finest pyramid level.
  std::vector<double> ecc_trace;
  // Set when estimation failed and the identity fallback was used.
  std::string error;

  // Motion of the frame relative to the base (inverse of `homography`).
  Homography motion() const { return homography.inverse(); }
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, Homography last_valid)
      : Error(what), last_valid_(std::move(last_valid)) {}
  int code() const noexcept override { return 31; }
  const char* kind() const noexcept override { return "convergence"; }
  const Homography& last_valid() const { return last_valid_; }

 private:
  Homography last_valid_;
};

// Forward-additive ECC maximization, coarse to fine, on luma.
AlignmentResult estimate_transform(const Image& frame, const Image& base, const EccConfig& cfg = {});

// Zero-mean normalized correlation over all pixels.
double correlation_coefficient(const Plane& a, const Plane& b);

struct AlignedBurst {
  Burst burst;
  std::vector<AlignmentResult> results;
};

// Frame 0 is untouched; frames 1.. are warped onto it. A frame that fails
// to register keeps the identity with converged = false.
AlignedBurst align_burst(const Burst& burst, const EccConfig& cfg = {});

// LR-pixel displacement of the image center for frames 1..N-1.
std::vector<Eigen::Vector2d> measure_shifts(const Burst& burst, const EccConfig& cfg = {});

struct ShiftHistogram {
  std::vector<double> magnitudes_lr;
  // Fractions in [0,1), [1,2), [2,inf) HR px.
  std::array<double, 3> bucket_fractions{};
  std::vector<double> fine_edges_hr;
  std::vector<std::size_t> fine_counts;
};

ShiftHistogram shift_histogram(const std::vector<Eigen::Vector2d>& shifts_lr, int scale, double fine_bin_hr = 0.25,
                               double fine_max_hr = 5.0);

nlohmann::json to_json(const AlignmentResult& r);
nlohmann::json to_json(const ShiftHistogram& h);
MotionModel motion_model_from_string(const std::string& s);
std::string to_string(MotionModel m);

}  // namespace bsrkit
