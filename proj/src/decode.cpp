#include "bsrkit/decode.hpp"

#include <cmath>

#include "bsrkit/error.hpp"
#include "bsrkit/ops.hpp"

namespace bsrkit {

void DecoderConfig::validate() const {
  if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0)
    throw ConfigError("embed_dim must be a positive multiple of heads");
  if (window == 0) throw ConfigError("window must be positive");
  if (scale == 0) throw ConfigError("scale must be positive");
  if (leff_hidden_ratio == 0) throw ConfigError("leff_hidden_ratio must be positive");
}

void DecoderConfig::check_input(std::size_t h, std::size_t w) const {
  const std::size_t unit = stages > 0 ? 2 * window : window;
  if (h % unit != 0 || w % unit != 0)
    throw DimensionError("decoder input " + std::to_string(h) + "x" + std::to_string(w) + " is not divisible by " +
                         std::to_string(unit));
}

LeWinParams init_lewin(const DecoderConfig& cfg, std::mt19937_64& rng, bool zero_terminal) {
  const std::size_t c = cfg.embed_dim, hid = c * cfg.leff_hidden_ratio;
  const double bc = 1.0 / std::sqrt(double(c)), bh = 1.0 / std::sqrt(double(hid));
  LeWinParams p;
  p.ln1_g = Tensor::ones({c}, true);
  p.ln1_b = Tensor::zeros({c}, true);
  p.qkv_w = uniform_param({c, 3 * c}, bc, rng);
  p.qkv_b = Tensor::zeros({3 * c}, true);
  p.proj_w = zero_terminal ? Tensor::zeros({c, c}, true) : uniform_param({c, c}, bc, rng);
  p.proj_b = zero_terminal ? Tensor::zeros({c}, true) : uniform_param({c}, bc, rng);
  p.ln2_g = Tensor::ones({c}, true);
  p.ln2_b = Tensor::zeros({c}, true);
  p.ff1_w = uniform_param({c, hid}, bc, rng);
  p.ff1_b = Tensor::zeros({hid}, true);
  p.dw_w = uniform_param({hid, 1, 3, 3}, 1.0 / 3.0, rng);
  p.dw_b = Tensor::zeros({hid}, true);
  p.ff2_w = zero_terminal ? Tensor::zeros({hid, c}, true) : uniform_param({hid, c}, bh, rng);
  p.ff2_b = zero_terminal ? Tensor::zeros({c}, true) : uniform_param({c}, bh, rng);
  return p;
}

DecoderParams DecoderParams::init(const DecoderConfig& cfg, std::uint64_t seed, bool zero_terminal) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const std::size_t c = cfg.embed_dim;
  DecoderParams p;
  for (std::size_t s = 0; s < cfg.stages; ++s) {
    HourglassParams h;
    for (std::size_t b = 0; b < cfg.blocks_per_stage; ++b) h.encoder.push_back(init_lewin(cfg, rng, zero_terminal));
    h.down_w = uniform_param({c, c, 3, 3}, 1.0 / std::sqrt(9.0 * c), rng);
    h.down_b = Tensor::zeros({c}, true);
    h.bottleneck = init_lewin(cfg, rng, zero_terminal);
    h.up_w = zero_terminal ? Tensor::zeros({c, c, 2, 2}, true) : uniform_param({c, c, 2, 2}, 1.0 / std::sqrt(4.0 * c), rng);
    h.up_b = zero_terminal ? Tensor::zeros({c}, true) : uniform_param({c}, 0.1, rng);
    for (std::size_t b = 0; b < cfg.blocks_per_stage; ++b) h.decoder.push_back(init_lewin(cfg, rng, zero_terminal));
    p.stages.push_back(std::move(h));
  }
  const std::size_t out = 3 * cfg.scale * cfg.scale;
  const double bound = 1.0 / std::sqrt(9.0 * c);
  p.head_w = zero_terminal ? Tensor::zeros({out, c, 3, 3}, true) : uniform_param({out, c, 3, 3}, bound, rng);
  p.head_b = zero_terminal ? Tensor::zeros({out}, true) : uniform_param({out}, bound, rng);
  return p;
}

namespace {

void add_lewin(NamedTensors& out, const std::string& prefix, const LeWinParams& p) {
  const std::pair<const char*, const Tensor*> fields[] = {
      {"ln1.gamma", &p.ln1_g}, {"ln1.beta", &p.ln1_b}, {"qkv.weight", &p.qkv_w}, {"qkv.bias", &p.qkv_b},
      {"proj.weight", &p.proj_w}, {"proj.bias", &p.proj_b}, {"ln2.gamma", &p.ln2_g}, {"ln2.beta", &p.ln2_b},
      {"ff1.weight", &p.ff1_w}, {"ff1.bias", &p.ff1_b}, {"dw.weight", &p.dw_w}, {"dw.bias", &p.dw_b},
      {"ff2.weight", &p.ff2_w}, {"ff2.bias", &p.ff2_b}};
  for (const auto& [name, t] : fields) out.emplace_back(prefix + name, *t);
}

// [H,W,C] tokens -> [nW, w*w, C].
Tensor partition(const Tensor& t, std::size_t w) {
  const std::size_t h = t.dim(0), wd = t.dim(1), c = t.dim(2);
  const Tensor r = reshape(t, {h / w, w, wd / w, w, c});
  return reshape(permute(r, {0, 2, 1, 3, 4}), {(h / w) * (wd / w), w * w, c});
}

Tensor unpartition(const Tensor& t, std::size_t w, std::size_t h, std::size_t wd) {
  const std::size_t c = t.dim(2);
  const Tensor r = reshape(t, {h / w, wd / w, w, w, c});
  return reshape(permute(r, {0, 2, 1, 3, 4}), {h, wd, c});
}

// [nW, T, C] -> [nW*heads, T, d].
Tensor split_heads(const Tensor& t, std::size_t heads) {
  const std::size_t nw = t.dim(0), n = t.dim(1), d = t.dim(2) / heads;
  return reshape(permute(reshape(t, {nw, n, heads, d}), {0, 2, 1, 3}), {nw * heads, n, d});
}

Tensor merge_heads(const Tensor& t, std::size_t heads) {
  const std::size_t nw = t.dim(0) / heads, n = t.dim(1), d = t.dim(2);
  return reshape(permute(reshape(t, {nw, heads, n, d}), {0, 2, 1, 3}), {nw, n, heads * d});
}

struct Attention {
  Tensor weights, v;
  std::size_t h, w;
};

Attention attend(const Tensor& x, const LeWinParams& p, const DecoderConfig& cfg) {
  if (x.rank() != 3 || x.dim(0) != cfg.embed_dim)
    throw DimensionError("LeWin input must be [" + std::to_string(cfg.embed_dim) + ",H,W], got " + to_string(x.shape()));
  const std::size_t h = x.dim(1), w = x.dim(2), c = cfg.embed_dim, win = cfg.window;
  if (h % win != 0 || w % win != 0)
    throw DimensionError("spatial size " + std::to_string(h) + "x" + std::to_string(w) + " is not divisible by window " +
                         std::to_string(win));
  const Tensor tokens = layer_norm(permute(x, {1, 2, 0}), p.ln1_g, p.ln1_b, 2);
  const Tensor qkv = linear(partition(tokens, win), p.qkv_w, p.qkv_b);
  const Tensor q = split_heads(slice(qkv, 2, 0, c), cfg.heads);
  const Tensor k = split_heads(slice(qkv, 2, c, 2 * c), cfg.heads);
  const Tensor v = split_heads(slice(qkv, 2, 2 * c, 3 * c), cfg.heads);
  const double inv = 1.0 / std::sqrt(double(c / cfg.heads));
  return {softmax(scale(matmul(q, transpose_last(k)), inv), 2), v, h, w};
}

}  // namespace

NamedTensors DecoderParams::named() const {
  NamedTensors out;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const auto& h = stages[s];
    const std::string pre = "decoder.stage" + std::to_string(s) + ".";
    for (std::size_t b = 0; b < h.encoder.size(); ++b) add_lewin(out, pre + "enc" + std::to_string(b) + ".", h.encoder[b]);
    out.emplace_back(pre + "down.weight", h.down_w);
    out.emplace_back(pre + "down.bias", h.down_b);
    add_lewin(out, pre + "mid.", h.bottleneck);
    out.emplace_back(pre + "up.weight", h.up_w);
    out.emplace_back(pre + "up.bias", h.up_b);
    for (std::size_t b = 0; b < h.decoder.size(); ++b) add_lewin(out, pre + "dec" + std::to_string(b) + ".", h.decoder[b]);
  }
  out.emplace_back("decoder.head.weight", head_w);
  out.emplace_back("decoder.head.bias", head_b);
  return out;
}

Tensor window_attention_weights(const Tensor& x, const LeWinParams& p, const DecoderConfig& cfg) {
  return attend(x, p, cfg).weights;
}

Tensor wmsa(const Tensor& x, const LeWinParams& p, const DecoderConfig& cfg) {
  const Attention a = attend(x, p, cfg);
  const Tensor out = linear(merge_heads(matmul(a.weights, a.v), cfg.heads), p.proj_w, p.proj_b);
  return permute(unpartition(out, cfg.window, a.h, a.w), {2, 0, 1});
}

Tensor lewin_block(const Tensor& x, const LeWinParams& p, const DecoderConfig& cfg) {
  const Tensor y = add(x, wmsa(x, p, cfg));
  const Tensor t = layer_norm(permute(y, {1, 2, 0}), p.ln2_g, p.ln2_b, 2);
  const Tensor hidden = gelu(linear(t, p.ff1_w, p.ff1_b));                       // [H,W,hid]
  const Tensor local = gelu(depthwise_conv2d(permute(hidden, {2, 0, 1}), p.dw_w, p.dw_b, 1));
  const Tensor ff = linear(permute(local, {1, 2, 0}), p.ff2_w, p.ff2_b);          // [H,W,C]
  return add(y, permute(ff, {2, 0, 1}));
}

Tensor hourglass_stage(const Tensor& x, const HourglassParams& p, const DecoderConfig& cfg) {
  cfg.check_input(x.dim(1), x.dim(2));
  Tensor e = x;
  for (const auto& b : p.encoder) e = lewin_block(e, b, cfg);
  Tensor mid = lewin_block(conv2d(e, p.down_w, p.down_b, 1, 2), p.bottleneck, cfg);
  Tensor d = add(conv_transpose2d(mid, p.up_w, p.up_b, 2), e);
  for (const auto& b : p.decoder) d = lewin_block(d, b, cfg);
  return d;
}

Tensor pixel_shuffle(const Tensor& x, std::size_t r) {
  if (x.rank() != 3 || r == 0 || x.dim(0) % (r * r) != 0)
    throw DimensionError("pixel_shuffle needs [c*r*r,H,W], got " + to_string(x.shape()) + " with r=" + std::to_string(r));
  const std::size_t c = x.dim(0) / (r * r), h = x.dim(1), w = x.dim(2);
  std::vector<std::size_t> idx(x.size());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t a = 0; a < r; ++a)
        for (std::size_t j = 0; j < w; ++j)
          for (std::size_t b = 0; b < r; ++b)
            idx[(ch * h * r + i * r + a) * w * r + j * r + b] = ((ch * r * r + a * r + b) * h + i) * w + j;
  return gather(x, {c, h * r, w * r}, std::move(idx));
}

Tensor pixel_unshuffle(const Tensor& x, std::size_t r) {
  if (x.rank() != 3 || r == 0 || x.dim(1) % r != 0 || x.dim(2) % r != 0)
    throw DimensionError("pixel_unshuffle needs spatial dims divisible by r");
  const std::size_t c = x.dim(0), h = x.dim(1) / r, w = x.dim(2) / r;
  std::vector<std::size_t> idx(x.size());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t a = 0; a < r; ++a)
      for (std::size_t b = 0; b < r; ++b)
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < w; ++j)
            idx[((ch * r * r + a * r + b) * h + i) * w + j] = (ch * h * r + i * r + a) * w * r + j * r + b;
  return gather(x, {c * r * r, h, w}, std::move(idx));
}

Tensor decode(const Tensor& m, const Tensor& base, const DecoderParams& p, const DecoderConfig& cfg) {
  cfg.validate();
  if (m.rank() != 3 || m.dim(0) != cfg.embed_dim)
    throw DimensionError("fused map must be [" + std::to_string(cfg.embed_dim) + ",H,W], got " + to_string(m.shape()));
  if (base.rank() != 3 || base.dim(0) != 3 || base.dim(1) != m.dim(1) || base.dim(2) != m.dim(2))
    throw DimensionError("base frame must be [3,H,W] matching the fused map");
  cfg.check_input(m.dim(1), m.dim(2));
  if (p.stages.size() != cfg.stages) throw ConfigError("decoder params do not match the configured stage count");
  Tensor x = m;
  for (const auto& s : p.stages) x = hourglass_stage(x, s, cfg);
  const Tensor residual = pixel_shuffle(conv2d(x, p.head_w, p.head_b, 1), cfg.scale);
  const Tensor skip = upsample_bicubic(Image::from_tensor(base), static_cast<int>(cfg.scale)).to_tensor();
  return clamp(add(residual, skip), 0.0, 1.0);
}

nlohmann::json to_json(const DecoderConfig& c) {
  return {{"embed_dim", c.embed_dim}, {"window", c.window}, {"heads", c.heads}, {"blocks_per_stage", c.blocks_per_stage},
          {"stages", c.stages}, {"scale", c.scale}, {"leff_hidden_ratio", c.leff_hidden_ratio}};
}

DecoderConfig decoder_config_from_json(const nlohmann::json& j) {
  DecoderConfig c;
  for (const auto& [k, v] : j.items()) {
    if (k == "embed_dim") c.embed_dim = v.get<std::size_t>();
    else if (k == "window") c.window = v.get<std::size_t>();
    else if (k == "heads") c.heads = v.get<std::size_t>();
    else if (k == "blocks_per_stage") c.blocks_per_stage = v.get<std::size_t>();
    else if (k == "stages") c.stages = v.get<std::size_t>();
    else if (k == "scale") c.scale = v.get<std::size_t>();
    else if (k == "leff_hidden_ratio") c.leff_hidden_ratio = v.get<std::size_t>();
    else throw ConfigError("unknown decoder key: " + k);
  }
  c.validate();
  return c;
}

}  // namespace bsrkit
