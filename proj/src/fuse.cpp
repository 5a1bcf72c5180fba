#include "bsrkit/fuse.hpp"

#include <cmath>

#include "bsrkit/error.hpp"
#include "bsrkit/ops.hpp"

namespace bsrkit {

ExtractorParams ExtractorParams::init(std::size_t channels, std::size_t in_channels, std::uint64_t seed) {
  if (channels == 0 || in_channels == 0) throw DimensionError("extractor channel counts must be positive");
  std::mt19937_64 rng(seed);
  ExtractorParams p;
  const double b1 = 1.0 / std::sqrt(9.0 * in_channels), b2 = 1.0 / std::sqrt(9.0 * channels);
  p.conv1_w = uniform_param({channels, in_channels, 3, 3}, b1, rng);
  p.conv1_b = uniform_param({channels}, b1, rng);
  p.conv2_w = uniform_param({channels, channels, 3, 3}, b2, rng);
  p.conv2_b = uniform_param({channels}, b2, rng);
  return p;
}

NamedTensors ExtractorParams::named() const {
  return {{"extractor.conv1.weight", conv1_w},
          {"extractor.conv1.bias", conv1_b},
          {"extractor.conv2.weight", conv2_w},
          {"extractor.conv2.bias", conv2_b}};
}

FeatureStack extract_features(const std::vector<Tensor>& frames, const ExtractorParams& params) {
  if (frames.empty()) throw DimensionError("feature extraction needs at least one frame");
  FeatureStack fs;
  fs.produced_by = params.version;
  for (const auto& f : frames) {
    if (f.rank() != 3 || f.dim(0) != params.in_channels())
      throw DimensionError("frame shape " + to_string(f.shape()) + " does not match extractor input channels " +
                           std::to_string(params.in_channels()));
    if (f.shape() != frames.front().shape()) throw DimensionError("burst frames differ in shape");
    fs.features.push_back(conv2d(gelu(conv2d(f, params.conv1_w, params.conv1_b, 1)), params.conv2_w, params.conv2_b, 1));
  }
  return fs;
}

FeatureStack extract_features(const Burst& burst, const ExtractorParams& params) {
  burst.validate();
  std::vector<Tensor> frames;
  for (const auto& f : burst.frames) frames.push_back(f.to_tensor());
  return extract_features(frames, params);
}

namespace {

void check_stack(const FeatureStack& fs) {
  if (fs.features.empty()) throw DimensionError("empty feature stack");
  for (const auto& f : fs.features) {
    if (f.rank() != 3) throw DimensionError("features must be [C,H,W]");
    if (f.shape() != fs.features.front().shape()) throw DimensionError("features differ in shape");
  }
}

void check_index(const FeatureStack& fs, std::size_t i) {
  if (i >= fs.size())
    throw IndexError("frame index " + std::to_string(i) + " out of range for " + std::to_string(fs.size()) + " frames");
}

// [H,W] map times [C,H,W] features.
Tensor weigh(const Tensor& map, const Tensor& f) {
  return mul(reshape(map, {1, map.dim(0), map.dim(1)}), f);
}

}  // namespace

Tensor affinity(const FeatureStack& fs, std::size_t i, std::size_t j) {
  check_stack(fs);
  check_index(fs, i);
  check_index(fs, j);
  return sum_axis(mul(fs.features[i], fs.features[j]), 0, false);
}

Tensor difference_map(const FeatureStack& fs, std::size_t i) {
  const Tensor a00 = affinity(fs, 0, 0);
  check_index(fs, i);
  if (i == 0) return a00;
  return sub(affinity(fs, 0, i), a00);
}

FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "vaf") return FusionMode::vaf;
  if (s == "faf") return FusionMode::faf;
  if (s == "faf_star") return FusionMode::faf_star;
  throw ConfigError("unknown fusion mode: " + s);
}

std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::vaf: return "vaf";
    case FusionMode::faf: return "faf";
    case FusionMode::faf_star: return "faf_star";
  }
  return "?";
}

Tensor apply_weight_maps(const FeatureStack& fs, const std::vector<Tensor>& maps) {
  check_stack(fs);
  if (maps.size() != fs.size()) throw DimensionError("one weight map per frame is required");
  Tensor m = weigh(maps[0], fs.features[0]);
  for (std::size_t i = 1; i < fs.size(); ++i) m = add(m, weigh(maps[i], fs.features[i]));
  return m;
}

Tensor fuse_vaf(const FeatureStack& fs) { return apply_weight_maps(fs, fusion_weight_maps(fs, FusionMode::vaf)); }

Tensor fuse_faf(const FeatureStack& fs) { return apply_weight_maps(fs, fusion_weight_maps(fs, FusionMode::faf)); }

Tensor fuse_faf_factored(const FeatureStack& fs) {
  check_stack(fs);
  const Tensor& f0 = fs.features[0];
  Tensor m = weigh(sum_axis(mul(f0, f0), 0, false), f0);
  for (std::size_t i = 1; i < fs.size(); ++i)
    m = add(m, weigh(sum_axis(mul(sub(fs.features[i], f0), f0), 0, false), fs.features[i]));
  return m;
}

Tensor fuse_faf_star(const FeatureStack& fs) {
  return apply_weight_maps(fs, fusion_weight_maps(fs, FusionMode::faf_star));
}

std::vector<Tensor> fusion_weight_maps(const FeatureStack& fs, FusionMode mode, bool normalize) {
  check_stack(fs);
  const std::size_t n = fs.size();
  std::vector<Tensor> maps;
  switch (mode) {
    case FusionMode::vaf:
      for (std::size_t i = 0; i < n; ++i) maps.push_back(affinity(fs, 0, i));
      break;
    case FusionMode::faf:
      for (std::size_t i = 0; i < n; ++i) maps.push_back(difference_map(fs, i));
      break;
    case FusionMode::faf_star: {
      // Coefficient of F_i summed over every reference k:
      // A_ii + sum_{k != i} (A_ki - A_kk).
      std::vector<Tensor> self(n);
      for (std::size_t k = 0; k < n; ++k) self[k] = affinity(fs, k, k);
      for (std::size_t i = 0; i < n; ++i) {
        Tensor w = self[i];
        for (std::size_t k = 0; k < n; ++k)
          if (k != i) w = add(w, sub(affinity(fs, k, i), self[k]));
        maps.push_back(w);
      }
      break;
    }
  }
  if (normalize) {
    const std::size_t h = maps[0].dim(0), w = maps[0].dim(1);
    std::vector<Tensor> stacked;
    for (const auto& m : maps) stacked.push_back(reshape(m, {1, h, w}));
    const Tensor soft = softmax(concat(stacked, 0), 0);
    for (std::size_t i = 0; i < n; ++i) maps[i] = reshape(slice(soft, 0, i, i + 1), {h, w});
  }
  return maps;
}

Tensor fuse(const FeatureStack& fs, FusionMode mode, bool normalize) {
  return apply_weight_maps(fs, fusion_weight_maps(fs, mode, normalize));
}

}  // namespace bsrkit
