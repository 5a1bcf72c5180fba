#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "bsrkit/image.hpp"
#include "bsrkit/params.hpp"
#include "bsrkit/tensor.hpp"

namespace bsrkit {

struct DecoderConfig {
  std::size_t embed_dim = 16;
  std::size_t window = 4;
  std::size_t heads = 2;
  std::size_t blocks_per_stage = 3;
  std::size_t stages = 2;
  std::size_t scale = 4;
  std::size_t leff_hidden_ratio = 2;

  void validate() const;
  // Throws DimensionError unless an LR map of h x w can be decoded.
  void check_input(std::size_t h, std::size_t w) const;
};

struct LeWinParams {
  Tensor ln1_g, ln1_b, qkv_w, qkv_b, proj_w, proj_b;
  Tensor ln2_g, ln2_b, ff1_w, ff1_b, dw_w, dw_b, ff2_w, ff2_b;
};

struct HourglassParams {
  std::vector<LeWinParams> encoder, decoder;
  LeWinParams bottleneck;
  Tensor down_w, down_b;  // [C,C,3,3], stride 2
  Tensor up_w, up_b;      // [C,C,2,2], transposed stride 2
};

struct DecoderParams {
  std::vector<HourglassParams> stages;
  Tensor head_w, head_b;  // [3 s^2, C, 3, 3]

  // Random weights; with `zero_terminal`, every residual branch ends in a
  // zero projection and the head is zero, so decode() starts as the skip.
  static DecoderParams init(const DecoderConfig& cfg, std::uint64_t seed, bool zero_terminal = true);
  NamedTensors named() const;
};

LeWinParams init_lewin(const DecoderConfig& cfg, std::mt19937_64& rng, bool zero_terminal);

// Softmax attention weights [windows*heads, w*w, w*w] of the block's first
// LayerNorm output.
Tensor window_attention_weights(const Tensor& x, const LeWinParams& p, const DecoderConfig& cfg);
// Windowed multi-head self-attention branch (without residual) on [C,H,W].
Tensor wmsa(const Tensor& x, const LeWinParams& p, const DecoderConfig& cfg);
Tensor lewin_block(const Tensor& x, const LeWinParams& p, const DecoderConfig& cfg);
Tensor hourglass_stage(const Tensor& x, const HourglassParams& p, const DecoderConfig& cfg);

// out[c, r*i+a, r*j+b] = in[c*r*r + a*r + b, i, j].
Tensor pixel_shuffle(const Tensor& x, std::size_t r);
Tensor pixel_unshuffle(const Tensor& x, std::size_t r);

// Fused map [C,H,W] plus base frame [3,H,W] -> SR estimate [3,sH,sW],
// clamped to [0,1].
Tensor decode(const Tensor& m, const Tensor& base, const DecoderParams& p, const DecoderConfig& cfg);

nlohmann::json to_json(const DecoderConfig& c);
DecoderConfig decoder_config_from_json(const nlohmann::json& j);

}  // namespace bsrkit
