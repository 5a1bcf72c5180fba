#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "bsrkit/burst.hpp"
#include "bsrkit/decode.hpp"
#include "bsrkit/fuse.hpp"

namespace bsrkit {

// Extractor + fusion + decoder. Extractor width equals decoder embed_dim.
struct Model {
  DecoderConfig decoder_config;
  FusionMode fusion_mode = FusionMode::faf;
  bool normalize_weights = false;
  ExtractorParams extractor;
  DecoderParams decoder;

  static Model init(const DecoderConfig& cfg, FusionMode mode, std::uint64_t seed, bool zero_terminal = true);
  NamedTensors named() const;
  // frames: N x [3,H,W], base first. Returns [3,sH,sW].
  Tensor forward(const std::vector<Tensor>& frames) const;
  Image superresolve(const Burst& burst) const;
  nlohmann::json config_json() const;
};

// Manifest JSON plus one .bft per named parameter.
void save_checkpoint(const std::filesystem::path& dir, const Model& model, std::size_t step);
struct LoadedModel {
  Model model;
  std::size_t step = 0;
};
LoadedModel load_checkpoint(const std::filesystem::path& dir);

}  // namespace bsrkit
