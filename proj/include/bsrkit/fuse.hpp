#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bsrkit/burst.hpp"
#include "bsrkit/params.hpp"
#include "bsrkit/tensor.hpp"

namespace bsrkit {

// conv1 (in -> C, 3x3) -> GELU -> conv2 (C -> C, 3x3), padding 1.
struct ExtractorParams {
  Tensor conv1_w, conv1_b, conv2_w, conv2_b;
  std::string version = "init";

  static ExtractorParams init(std::size_t channels = 16, std::size_t in_channels = 3, std::uint64_t seed = 0);
  std::size_t channels() const { return conv1_w.dim(0); }
  std::size_t in_channels() const { return conv1_w.dim(1); }
  NamedTensors named() const;
};

struct FeatureStack {
  std::vector<Tensor> features;  // N x [C,H,W]
  std::string produced_by;

  std::size_t size() const { return features.size(); }
};

FeatureStack extract_features(const std::vector<Tensor>& frames, const ExtractorParams& params);
FeatureStack extract_features(const Burst& burst, const ExtractorParams& params);

// Frame indices are 0-based; index 0 is the base frame.
Tensor affinity(const FeatureStack& fs, std::size_t i, std::size_t j);          // [H,W]
Tensor difference_map(const FeatureStack& fs, std::size_t i);                   // [H,W]

enum class FusionMode { vaf, faf, faf_star };
FusionMode fusion_mode_from_string(const std::string& s);
std::string to_string(FusionMode m);

Tensor fuse_vaf(const FeatureStack& fs);
// Difference-map form: A_00*F_0 + sum_i (A_0i - A_00)*F_i.
Tensor fuse_faf(const FeatureStack& fs);
// Factored form: A_00*F_0 + sum_i ((F_i - F_0).F_0)*F_i.
Tensor fuse_faf_factored(const FeatureStack& fs);
Tensor fuse_faf_star(const FeatureStack& fs);

// Per-frame maps W_i with M = sum_i W_i * F_i. With `normalize`, the maps
// are softmax-normalized across frames (ablation only).
std::vector<Tensor> fusion_weight_maps(const FeatureStack& fs, FusionMode mode, bool normalize = false);

// Dispatches on mode; normalize=false reproduces the raw fusion exactly.
Tensor fuse(const FeatureStack& fs, FusionMode mode, bool normalize = false);

// Sum_i maps[i] * F_i, broadcasting each [H,W] map over channels.
Tensor apply_weight_maps(const FeatureStack& fs, const std::vector<Tensor>& maps);

}  // namespace bsrkit
