#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <random>

#include "bsrkit/decode.hpp"
#include "bsrkit/error.hpp"
#include "bsrkit/model.hpp"
#include "bsrkit/ops.hpp"
#include "gradcheck.hpp"

using namespace bsrkit;
using bsrkit::testing::gradcheck;
using bsrkit::testing::NamedLeaf;
using bsrkit::testing::random_tensor;

namespace {

double max_abs(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a.data()[k] - b.data()[k]));
  return m;
}

DecoderConfig small(std::size_t c = 4, std::size_t heads = 2) {
  DecoderConfig cfg;
  cfg.embed_dim = c;
  cfg.heads = heads;
  cfg.window = 4;
  cfg.scale = 2;
  return cfg;
}

std::vector<NamedLeaf> leaves_of(const NamedTensors& named) {
  std::vector<NamedLeaf> out;
  for (const auto& [n, t] : named) out.push_back({n, t});
  return out;
}

// Swaps window (0,0) with window (wy,wx) on a [C,H,W] tensor.
Tensor swap_windows(const Tensor& x, std::size_t win, std::size_t wy, std::size_t wx) {
  Tensor y = x.clone();
  auto d = y.mutable_data();
  const std::size_t h = x.dim(1), w = x.dim(2);
  for (std::size_t c = 0; c < x.dim(0); ++c)
    for (std::size_t i = 0; i < win; ++i)
      for (std::size_t j = 0; j < win; ++j)
        std::swap(d[(c * h + i) * w + j], d[(c * h + wy * win + i) * w + wx * win + j]);
  return y;
}

}  // namespace

TEST_CASE("pixel shuffle definition and round trip") {
  const Tensor x({4, 1, 1}, {1, 2, 3, 4});
  const Tensor y = pixel_shuffle(x, 2);
  CHECK(y.shape() == Shape{1, 2, 2});
  CHECK(y.values() == std::vector<double>{1, 2, 3, 4});
  std::mt19937_64 rng(1);
  const Tensor r = random_tensor({12, 3, 5}, rng, -1, 1, false);
  CHECK(max_abs(pixel_shuffle(r, 1), r) == 0.0);
  CHECK(max_abs(pixel_shuffle(pixel_unshuffle(pixel_shuffle(r, 2), 2), 2), pixel_shuffle(r, 2)) == 0.0);
  CHECK(max_abs(pixel_unshuffle(pixel_shuffle(r, 2), 2), r) == 0.0);
  CHECK_THROWS_AS(pixel_shuffle(r, 4), DimensionError);
}

TEST_CASE("pixel shuffle index formula") {
  std::mt19937_64 rng(2);
  const std::size_t r = 3;
  const Tensor x = random_tensor({2 * r * r, 2, 3}, rng, -1, 1, false);
  const Tensor y = pixel_shuffle(x, r);
  for (std::size_t ch = 0; ch < 2; ++ch)
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t a = 0; a < r; ++a)
          for (std::size_t b = 0; b < r; ++b) CHECK(y.at({ch, r * i + a, r * j + b}) == x.at({ch * r * r + a * r + b, i, j}));
}

TEST_CASE("zero terminal projections make a block the identity") {
  const auto cfg = small();
  std::mt19937_64 rng(3);
  const auto p = init_lewin(cfg, rng, true);
  const Tensor x = random_tensor({4, 8, 8}, rng, -1, 1, false);
  CHECK(max_abs(lewin_block(x, p, cfg), x) == 0.0);
  const auto q = init_lewin(cfg, rng, false);
  const Tensor y = lewin_block(x, q, cfg);
  CHECK(y.shape() == x.shape());
  CHECK(max_abs(y, x) > 0.0);
  CHECK_THROWS_AS(lewin_block(random_tensor({4, 6, 8}, rng, -1, 1, false), q, cfg), DimensionError);
}

TEST_CASE("attention rows sum to one") {
  const auto cfg = small();
  std::mt19937_64 rng(4);
  const auto p = init_lewin(cfg, rng, false);
  const Tensor a = window_attention_weights(random_tensor({4, 8, 12}, rng, -1, 1, false), p, cfg);
  CHECK(a.shape() == Shape{6 * 2, 16, 16});
  for (std::size_t b = 0; b < a.dim(0); ++b)
    for (std::size_t i = 0; i < 16; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 16; ++j) s += a.at({b, i, j});
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
}

TEST_CASE("window attention is local to windows") {
  const auto cfg = small();
  std::mt19937_64 rng(5);
  const auto p = init_lewin(cfg, rng, false);
  const Tensor x = random_tensor({4, 8, 12}, rng, -1, 1, false);
  const Tensor a = swap_windows(wmsa(x, p, cfg), 4, 1, 2);
  const Tensor b = wmsa(swap_windows(x, 4, 1, 2), p, cfg);
  CHECK(max_abs(a, b) < 1e-14);
}

TEST_CASE("hourglass with zero terminal layers is the identity") {
  const auto cfg = small();
  const auto p = DecoderParams::init(cfg, 6, true);
  std::mt19937_64 rng(6);
  const Tensor x = random_tensor({4, 8, 16}, rng, -1, 1, false);
  CHECK(max_abs(hourglass_stage(x, p.stages[0], cfg), x) == 0.0);
  const auto q = DecoderParams::init(cfg, 7, false);
  CHECK(hourglass_stage(x, q.stages[0], cfg).shape() == x.shape());
  CHECK_THROWS_AS(hourglass_stage(random_tensor({4, 4, 8}, rng, -1, 1, false), q.stages[0], cfg), DimensionError);
}

TEST_CASE("hourglass gradients match finite differences") {
  for (std::size_t c : {1u, 4u}) {
    const auto cfg = small(c, c == 1 ? 1 : 2);
    const auto p = DecoderParams::init(cfg, 8, false);
    std::mt19937_64 rng(8);
    const Tensor x = random_tensor({c, 8, 8}, rng, -1, 1, true);
    const Tensor target = random_tensor({c, 8, 8}, rng, -1, 1, false);
    auto f = [&] { return sum(square(sub(hourglass_stage(x, p.stages[0], cfg), target))); };
    auto leaves = leaves_of(p.named());
    leaves.erase(std::remove_if(leaves.begin(), leaves.end(),
                                [](const NamedLeaf& l) { return l.name.find("stage0") == std::string::npos; }),
                 leaves.end());
    leaves.push_back({"x", x});
    const auto rep = gradcheck(f, leaves, 1e-5, 6, 1);
    INFO("C=", c, " worst leaf ", rep.worst_leaf, " err ", rep.worst_rel_error);
    CHECK(rep.worst_rel_error < 1e-4);
  }
}

TEST_CASE("decode shape and bicubic skip") {
  const auto cfg = small();
  std::mt19937_64 rng(9);
  const Tensor m = random_tensor({4, 8, 8}, rng, -1, 1, false);
  const Tensor base = random_tensor({3, 8, 8}, rng, 0, 1, false);
  const Tensor skip = upsample_bicubic(Image::from_tensor(base), 2).to_tensor();
  CHECK(max_abs(decode(m, base, DecoderParams::init(cfg, 1, true), cfg), skip) == 0.0);
  const Tensor out = decode(m, base, DecoderParams::init(cfg, 1, false), cfg);
  CHECK(out.shape() == Shape{3, 16, 16});
  for (double v : out.values()) CHECK((v >= 0.0 && v <= 1.0));
  CHECK(max_abs(out, decode(m, base, DecoderParams::init(cfg, 1, false), cfg)) == 0.0);
}

TEST_CASE("parameter count is a function of the config") {
  const auto cfg = small();
  CHECK(parameter_count(DecoderParams::init(cfg, 1).named()) == parameter_count(DecoderParams::init(cfg, 2).named()));
  auto wider = cfg;
  wider.embed_dim = 8;
  CHECK(parameter_count(DecoderParams::init(wider, 1).named()) > parameter_count(DecoderParams::init(cfg, 1).named()));
}

TEST_CASE("checkpoint round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "bsrkit_test_ckpt";
  std::filesystem::remove_all(dir);
  const Model m = Model::init(small(), FusionMode::faf_star, 3, false);
  save_checkpoint(dir, m, 17);
  const auto back = load_checkpoint(dir);
  CHECK(back.step == 17);
  CHECK(back.model.fusion_mode == FusionMode::faf_star);
  const auto a = m.named(), b = back.model.named();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].second.values() == b[i].second.values());
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(load_checkpoint(dir), IoError);
}

TEST_CASE("desk-scale step timing" * doctest::skip(std::getenv("BSRKIT_TIMING") == nullptr)) {
  DecoderConfig cfg;
  const Model m = Model::init(cfg, FusionMode::faf, 1, false);
  std::mt19937_64 rng(1);
  std::vector<Tensor> frames;
  for (int i = 0; i < 8; ++i) frames.push_back(random_tensor({3, 32, 32}, rng, 0, 1, false));
  const auto t0 = std::chrono::steady_clock::now();
  const Tensor out = m.forward(frames);
  const auto t1 = std::chrono::steady_clock::now();
  backward(mean(out));
  const auto t2 = std::chrono::steady_clock::now();
  MESSAGE("forward ", std::chrono::duration<double>(t1 - t0).count(), " s, backward ",
          std::chrono::duration<double>(t2 - t1).count(), " s, params ", parameter_count(m.named()));
}
