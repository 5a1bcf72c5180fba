#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "bsrkit/homography.hpp"
#include "bsrkit/image.hpp"

namespace bsrkit {

// N aligned-or-not LR frames of one scene; frame 0 is the base frame.
struct Burst {
  std::vector<Image> frames;
  int scale = 1;
  // Motion of each frame relative to the base, at LR scale:
  // frame_i ~ warp(base, true_transforms[i]).
  std::optional<std::vector<Homography>> true_transforms;
  double noise_sigma = 0.0;

  std::size_t size() const { return frames.size(); }
  const Image& base() const { return frames.front(); }
  // Throws DimensionError unless the burst is non-empty and uniform.
  void validate() const;
};

// Shift magnitude buckets, in HR pixels: [0,1), [1,2), [2, max_shift].
struct ShiftDistribution {
  std::array<double, 3> bucket_probs{0.50, 0.25, 0.25};
  double max_shift = 4.0;
  double rotation_jitter_deg = 0.3;
  // All frames identical to the base ("copies" condition).
  bool zero_shift = false;

  static ShiftDistribution zero();
  void validate() const;
  double sample_magnitude(std::mt19937_64& rng) const;
};

// Which [0,1), [1,2), [2,inf) bucket a magnitude falls in.
int shift_bucket(double magnitude_hr);

struct GeneratedBurst {
  Burst burst;
  Image ground_truth;
};

// Frame 0 = downsample(hr); frame i = downsample(warp(hr, T_i)) + N(0, sigma^2)
// with T_i a rotation-jittered translation about the image center.
GeneratedBurst generate_burst(const Image& hr, int n, int s, const ShiftDistribution& dist, double noise_sigma,
                              std::uint64_t seed);

// Tiles the burst into LR patches of `patch` px (HR patches of patch*s px).
std::vector<GeneratedBurst> crop_patch_pairs(const Burst& burst, const Image& hr, int patch, int stride);

// Keeps the first n frames.
Burst take_frames(const Burst& burst, int n);

enum class SceneKind { mixed, shapes, stripes, checker, blurred_noise, smooth };

// Procedural HR test scene, antialiased by supersampling.
Image synthesize_scene(int height, int width, std::uint64_t seed, SceneKind kind = SceneKind::mixed,
                       int channels = 3);

// Burst directory layout: frame_NNN.png, optional gt.png, burst.json sidecar.
void write_burst(const std::filesystem::path& dir, const Burst& burst, const Image* ground_truth,
                 const nlohmann::json& extra = {});
struct LoadedBurst {
  Burst burst;
  std::optional<Image> ground_truth;
  nlohmann::json sidecar;
};
LoadedBurst read_burst(const std::filesystem::path& dir);

nlohmann::json to_json(const Homography& h);
Homography homography_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ShiftDistribution& d);
ShiftDistribution shift_distribution_from_json(const nlohmann::json& j);

}  // namespace bsrkit
