#include <doctest.h>

#include <random>

#include "bsrkit/error.hpp"
#include "bsrkit/fuse.hpp"
#include "bsrkit/ops.hpp"
#include "gradcheck.hpp"

using namespace bsrkit;
using bsrkit::testing::gradcheck;
using bsrkit::testing::random_tensor;

namespace {

FeatureStack random_stack(std::size_t n, std::size_t c, std::size_t h, std::size_t w, unsigned seed) {
  std::mt19937_64 rng(seed);
  FeatureStack fs;
  for (std::size_t i = 0; i < n; ++i) fs.features.push_back(random_tensor({c, h, w}, rng, -1.0, 1.0, false));
  return fs;
}

double aff(const FeatureStack& fs, std::size_t i, std::size_t j, std::size_t y, std::size_t x) {
  double s = 0.0;
  for (std::size_t c = 0; c < fs.features[0].dim(0); ++c) s += fs.features[i].at({c, y, x}) * fs.features[j].at({c, y, x});
  return s;
}

double max_abs(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a.data()[k] - b.data()[k]));
  return m;
}

double rel_err(const Tensor& a, const Tensor& b) {
  double d = 0.0, n = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    d += (a.data()[k] - b.data()[k]) * (a.data()[k] - b.data()[k]);
    n += b.data()[k] * b.data()[k];
  }
  return std::sqrt(d) / std::max(std::sqrt(n), 1e-300);
}

FeatureStack copies(const Tensor& f, std::size_t n) {
  FeatureStack fs;
  for (std::size_t i = 0; i < n; ++i) fs.features.push_back(f);
  return fs;
}

}  // namespace

TEST_CASE("hand example gives 14") {
  FeatureStack fs;
  fs.features = {Tensor({1, 1, 1}, {2.0}), Tensor({1, 1, 1}, {3.0})};
  CHECK(affinity(fs, 0, 0).item() == 4.0);
  CHECK(affinity(fs, 0, 1).item() == 6.0);
  CHECK(difference_map(fs, 1).item() == 2.0);
  CHECK(fuse_faf(fs).item() == 14.0);
  CHECK(fuse_faf_factored(fs).item() == 14.0);
}

TEST_CASE("affinity examples and loop oracle") {
  const std::size_t h = 3, w = 4;
  FeatureStack ones = copies(Tensor::ones({16, h, w}), 2);
  for (double v : affinity(ones, 0, 1).values()) CHECK(v == 16.0);

  Tensor a = Tensor::zeros({2, h, w}), b = Tensor::zeros({2, h, w});
  for (std::size_t p = 0; p < h * w; ++p) {
    a.mutable_data()[p] = 1.0 + p;
    b.mutable_data()[h * w + p] = 2.0 - p;
  }
  FeatureStack orth;
  orth.features = {a, b};
  for (double v : affinity(orth, 0, 1).values()) CHECK(v == 0.0);

  const auto fs = random_stack(3, 5, h, w, 7);
  const Tensor m = affinity(fs, 1, 2);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) CHECK(std::abs(m.at({y, x}) - aff(fs, 1, 2, y, x)) < 1e-12);
  CHECK_THROWS_AS(affinity(fs, 0, 3), IndexError);
}

TEST_CASE("VAF against loop oracle") {
  const auto fs = random_stack(3, 4, 5, 6, 11);
  const Tensor m = fuse_vaf(fs);
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t x = 0; x < 6; ++x) {
        double e = 0.0;
        for (std::size_t i = 0; i < 3; ++i) e += aff(fs, 0, i, y, x) * fs.features[i].at({c, y, x});
        CHECK(std::abs(m.at({c, y, x}) - e) < 1e-12);
      }
}

TEST_CASE("FAF star against quadruple loop oracle") {
  const auto fs = random_stack(3, 4, 5, 6, 12);
  const Tensor m = fuse_faf_star(fs);
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t x = 0; x < 6; ++x) {
        double e = 0.0;
        for (std::size_t k = 0; k < 3; ++k) {
          e += aff(fs, k, k, y, x) * fs.features[k].at({c, y, x});
          for (std::size_t i = 0; i < 3; ++i)
            if (i != k) e += (aff(fs, k, i, y, x) - aff(fs, k, k, y, x)) * fs.features[i].at({c, y, x});
        }
        CHECK(std::abs(m.at({c, y, x}) - e) < 1e-12);
      }
}

TEST_CASE("difference-map and factored FAF agree on 20 seeds") {
  for (unsigned seed = 0; seed < 20; ++seed) {
    const auto fs = random_stack(2 + seed % 6, 8, 6, 5, 100 + seed);
    CHECK(rel_err(fuse_faf(fs), fuse_faf_factored(fs)) < 1e-9);
  }
}

TEST_CASE("single frame and copies reductions") {
  const auto one = random_stack(1, 4, 3, 3, 5);
  const Tensor base = mul(reshape(affinity(one, 0, 0), {1, 3, 3}), one.features[0]);
  CHECK(max_abs(fuse_vaf(one), base) == 0.0);
  CHECK(max_abs(fuse_faf(one), base) == 0.0);
  CHECK(max_abs(fuse_faf_star(one), base) == 0.0);

  for (std::size_t n : {2u, 5u, 14u}) {
    const auto fs = copies(one.features[0], n);
    CHECK(max_abs(fuse_faf(fs), base) == 0.0);
    CHECK(max_abs(fuse_vaf(fs), scale(base, double(n))) < 1e-12);
    CHECK(max_abs(fuse_faf_star(fs), scale(base, double(n))) < 1e-12);
    const auto maps = fusion_weight_maps(fs, FusionMode::faf);
    for (std::size_t i = 1; i < n; ++i)
      for (double v : maps[i].values()) CHECK(v == 0.0);
  }
}

TEST_CASE("weight maps recompose the fusion") {
  const auto fs = random_stack(4, 3, 4, 4, 21);
  CHECK(max_abs(fusion_weight_maps(fs, FusionMode::vaf)[0], affinity(fs, 0, 0)) == 0.0);
  for (auto mode : {FusionMode::vaf, FusionMode::faf, FusionMode::faf_star})
    CHECK(max_abs(apply_weight_maps(fs, fusion_weight_maps(fs, mode)), fuse(fs, mode)) < 1e-12);
  CHECK(max_abs(apply_weight_maps(fs, fusion_weight_maps(fs, FusionMode::faf)), fuse_faf(fs)) < 1e-12);
}

TEST_CASE("difference maps are signed") {
  FeatureStack fs;
  fs.features = {Tensor({1, 1, 2}, {2.0, 2.0}), Tensor({1, 1, 2}, {1.0, 3.0})};
  const Tensor d = difference_map(fs, 1);
  CHECK(d.data()[0] == -2.0);
  CHECK(d.data()[1] == 2.0);
}

TEST_CASE("normalization toggle makes maps a partition of unity") {
  const auto fs = random_stack(3, 2, 3, 3, 31);
  const auto maps = fusion_weight_maps(fs, FusionMode::faf, true);
  for (std::size_t p = 0; p < 9; ++p)
    CHECK(maps[0].data()[p] + maps[1].data()[p] + maps[2].data()[p] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("extractor contracts") {
  const auto params = ExtractorParams::init(16, 3, 1);
  std::mt19937_64 rng(2);
  const Tensor frame = random_tensor({3, 6, 7}, rng, 0.0, 1.0, false);
  const auto fs = extract_features({frame, frame, frame}, params);
  REQUIRE(fs.size() == 3);
  CHECK(fs.features[0].shape() == Shape{16, 6, 7});
  CHECK(max_abs(fs.features[0], fs.features[2]) == 0.0);
  CHECK(extract_features({frame}, params).size() == 1);

  auto zero = ExtractorParams::init(16, 3, 1);
  for (auto& [name, t] : zero.named())
    if (name.find("bias") != std::string::npos)
      for (auto& v : t.mutable_data()) v = 0.0;
  for (double v : extract_features({Tensor::zeros({3, 4, 4})}, zero).features[0].values()) CHECK(v == 0.0);
  CHECK_THROWS_AS(extract_features({Tensor::zeros({1, 4, 4})}, params), DimensionError);
}

TEST_CASE("fusion gradients match finite differences") {
  for (auto mode : {FusionMode::vaf, FusionMode::faf, FusionMode::faf_star}) {
    for (unsigned seed = 0; seed < 3; ++seed) {
      const auto params = ExtractorParams::init(4, 3, seed);
      std::mt19937_64 rng(seed + 50);
      std::vector<Tensor> frames;
      for (int i = 0; i < 3; ++i) frames.push_back(random_tensor({3, 5, 5}, rng, 0.0, 1.0, false));
      auto f = [&] { return sum(square(fuse(extract_features(frames, params), mode))); };
      std::vector<bsrkit::testing::NamedLeaf> leaves;
      for (auto& [name, t] : params.named()) leaves.push_back({name, t});
      const auto rep = gradcheck(f, leaves, 1e-5, 20, seed);
      INFO(to_string(mode), " worst leaf ", rep.worst_leaf);
      CHECK(rep.worst_rel_error < 1e-4);
    }
  }
}
