#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "bsrkit/error.hpp"
#include "bsrkit/evalstats.hpp"
#include "bsrkit/ops.hpp"
#include "bsrkit/train.hpp"
#include "gradcheck.hpp"

using namespace bsrkit;
using bsrkit::testing::gradcheck;
using bsrkit::testing::random_tensor;

namespace {

DecoderConfig tiny_decoder(std::size_t scale = 2) {
  DecoderConfig c;
  c.embed_dim = 4;
  c.heads = 2;
  c.window = 4;
  c.scale = scale;
  return c;
}

std::vector<TrainSample> tiny_set(std::size_t count, int lr_size, int s, int n, std::uint64_t seed) {
  std::vector<TrainSample> out;
  for (std::size_t k = 0; k < count; ++k) {
    const Image hr = synthesize_scene(lr_size * s, lr_size * s, seed + k);
    out.push_back(to_sample(generate_burst(hr, n, s, {}, 0.0, seed + 100 + k)));
  }
  return out;
}

}  // namespace

TEST_CASE("mae examples and oracle") {
  std::mt19937_64 rng(1);
  const Tensor a = random_tensor({3, 4, 5}, rng, 0, 1, false);
  CHECK(mae_loss(a, a).item() == 0.0);
  CHECK(std::abs(mae_loss(add_scalar(a, 0.1), a).item() - 0.1) < 1e-12);
  const Tensor b = random_tensor({3, 4, 5}, rng, 0, 1, false);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a.data()[i] - b.data()[i]);
  CHECK(std::abs(mae_loss(a, b).item() - s / a.size()) < 1e-12);
  CHECK_THROWS_AS(mae_loss(a, Tensor::zeros({3, 4, 4})), DimensionError);
}

TEST_CASE("gw loss reductions") {
  std::mt19937_64 rng(2);
  const Tensor a = random_tensor({3, 6, 5}, rng, 0, 1, false), b = random_tensor({3, 6, 5}, rng, 0, 1, false);
  CHECK(gw_loss(a, a, 4.0).item() == 0.0);
  CHECK(std::abs(gw_loss(add_scalar(a, 0.05), a, 4.0).item() - mae_loss(add_scalar(a, 0.05), a).item()) < 1e-12);
  CHECK(std::abs(gw_loss(a, b, 0.0).item() - mae_loss(a, b).item()) < 1e-12);
  CHECK(gw_loss(a, b, 4.0).item() > mae_loss(a, b).item());
}

TEST_CASE("gw loss oracle and gradient") {
  std::mt19937_64 rng(3);
  const Tensor sr = random_tensor({2, 5, 6}, rng, 0, 1, true), gt = random_tensor({2, 5, 6}, rng, 0, 1, false);
  double acc = 0.0;
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t x = 0; x < 6; ++x) {
        auto dx = [&](const Tensor& t) { return x + 1 < 6 ? t.at({c, y, x + 1}) - t.at({c, y, x}) : 0.0; };
        auto dy = [&](const Tensor& t) { return y + 1 < 5 ? t.at({c, y + 1, x}) - t.at({c, y, x}) : 0.0; };
        const double gx = std::abs(std::abs(dx(gt)) - std::abs(dx(sr)));
        const double gy = std::abs(std::abs(dy(gt)) - std::abs(dy(sr)));
        acc += (1 + 4 * gx) * (1 + 4 * gy) * std::abs(sr.at({c, y, x}) - gt.at({c, y, x}));
      }
  CHECK(std::abs(gw_loss(sr, gt, 4.0).item() - acc / 60) < 1e-12);
  const auto rep = gradcheck([&] { return gw_loss(sr, gt, 4.0); }, {{"sr", sr}}, 1e-6);
  CHECK(rep.worst_rel_error < 1e-4);
}

TEST_CASE("cosine schedule") {
  TrainConfig c;
  c.steps = 1000;
  CHECK(cosine_lr(0, c) == 1e-4);
  CHECK(std::abs(cosine_lr(1000, c)) < 1e-20);
  CHECK(std::abs(cosine_lr(500, c) - 5e-5) < 1e-18);
  CHECK_THROWS_AS(cosine_lr(1001, c), ContractError);
}

TEST_CASE("adamw basics") {
  TrainConfig c;
  c.weight_decay = 0.0;
  Tensor x({1}, {2.0}, true);
  const NamedTensors p{{"x", x}};
  AdamState st;
  x.zero_grad();
  backward(sum(scale(x, 0.0)));
  adamw_step(p, st, 0.1, c);
  CHECK(x.item() == 2.0);

  AdamState fresh;
  x.zero_grad();
  backward(sum(x));
  adamw_step(p, fresh, 0.1, c);
  CHECK(std::abs(x.item() - 1.9) < 1e-6);
}

TEST_CASE("adamw minimizes a quadratic bowl") {
  TrainConfig c;
  c.steps = 200;
  c.lr0 = 0.1;
  c.weight_decay = 0.0;
  const Tensor target({3}, {0.5, -1.25, 2.0});
  Tensor x({3}, {0.0, 0.0, 0.0}, true);
  AdamState st;
  for (std::size_t s = 0; s < c.steps; ++s) {
    x.zero_grad();
    backward(sum(square(sub(x, target))));
    adamw_step({{"x", x}}, st, cosine_lr(s, c), c);
  }
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(x.data()[i] - target.data()[i]) < 1e-3);
}

TEST_CASE("non-finite gradients are rejected") {
  TrainConfig c;
  Tensor x({1}, {1.0}, true);
  x.zero_grad();
  backward(sum(x));
  auto handle = x;
  AdamState st;
  // Poison the gradient through a second leaf sharing the name list.
  Tensor y({1}, {1.0}, true);
  backward(sum(scale(y, 1e308)));
  backward(sum(scale(y, 1e308)));
  CHECK_THROWS_AS(adamw_step({{"x", x}, {"y", y}}, st, 0.1, c), TrainingError);
}

TEST_CASE("zero steps leave the model unchanged") {
  Model m = Model::init(tiny_decoder(), FusionMode::faf, 1, false);
  const auto before = m.named();
  std::vector<std::vector<double>> vals;
  for (const auto& [n, t] : before) vals.push_back(t.values());
  TrainConfig c;
  c.steps = 0;
  const auto rep = train(m, tiny_set(2, 8, 2, 3, 1), {}, c);
  CHECK(rep.loss_trace.empty());
  const auto after = m.named();
  for (std::size_t k = 0; k < after.size(); ++k) CHECK(after[k].second.values() == vals[k]);
}

TEST_CASE("training is deterministic and the lr trace is the closed form") {
  const auto data = tiny_set(3, 8, 2, 3, 5);
  TrainConfig c;
  c.steps = 6;
  c.batch = 2;
  c.lr0 = 1e-3;
  c.seed = 9;
  Model a = Model::init(tiny_decoder(), FusionMode::faf_star, 2, false);
  Model b = Model::init(tiny_decoder(), FusionMode::faf_star, 2, false);
  const auto ra = train(a, data, data, c), rb = train(b, data, data, c);
  CHECK(ra.loss_trace == rb.loss_trace);
  CHECK(to_json(ra).dump() == to_json(rb).dump());
  REQUIRE(ra.lr_trace.size() == 6);
  for (std::size_t s = 0; s < 6; ++s) CHECK(ra.lr_trace[s] == cosine_lr(s, c));
  CHECK(ra.epochs.size() == 3);
}

TEST_CASE("overflowing loss aborts with the last good parameters checkpointed") {
  auto data = tiny_set(1, 8, 2, 2, 7);
  auto bad = data;
  bad[0].gt = Tensor(bad[0].gt.shape(), std::vector<double>(bad[0].gt.size(), 1e308));
  const auto dir = std::filesystem::temp_directory_path() / "bsrkit_test_abort";
  std::filesystem::remove_all(dir);
  TrainConfig c;
  c.steps = 3;
  c.checkpoint_dir = dir;
  Model m = Model::init(tiny_decoder(), FusionMode::faf, 3, false);
  std::vector<std::vector<double>> vals;
  for (const auto& [n, t] : m.named()) vals.push_back(t.values());
  CHECK_THROWS_AS(train(m, bad, {}, c), TrainingError);
  const auto back = load_checkpoint(dir);
  const auto named = back.model.named();
  for (std::size_t k = 0; k < named.size(); ++k) CHECK(named[k].second.values() == vals[k]);
  std::filesystem::remove_all(dir);
}

TEST_CASE("overfitting one pair exceeds 40 dB with a falling loss") {
  const Image hr = synthesize_scene(32, 32, 11);
  const auto sample = to_sample(generate_burst(hr, 4, 4, {}, 0.0, 12));
  DecoderConfig dc;
  dc.scale = 4;
  Model m = Model::init(dc, FusionMode::faf, 13);
  TrainConfig c;
  c.steps = 2000;
  c.lr0 = 1e-3;
  c.weight_decay = 0.0;
  c.loss = LossKind::mae;
  const auto rep = train(m, {sample}, {sample}, c);
  MESSAGE("train PSNR ", rep.final_val_psnr, " dB, first epoch ", rep.epochs.front().val_psnr);
  CHECK(rep.final_val_psnr > 40.0);
  for (std::size_t w = 50; w + 50 <= rep.loss_trace.size(); w += 50) {
    double prev = 0.0, cur = 0.0;
    for (std::size_t i = 0; i < 50; ++i) {
      prev += rep.loss_trace[w - 50 + i];
      cur += rep.loss_trace[w + i];
    }
    CHECK(cur <= prev * 1.0 + 1e-12);
  }
}
