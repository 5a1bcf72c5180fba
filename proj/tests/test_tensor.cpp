#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>
#include <unordered_set>

#include "bsrkit/bft.hpp"
#include "bsrkit/error.hpp"
#include "bsrkit/ops.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

using namespace bsrkit;
using bsrkit::testing::gradcheck;
using bsrkit::testing::random_tensor;

namespace {

std::vector<double> conv_oracle(const Tensor& in, const Tensor& k, const Tensor& b, std::size_t pad) {
  const std::size_t ci = in.dim(0), h = in.dim(1), w = in.dim(2), co = k.dim(0), ks = k.dim(2);
  const std::size_t ho = h + 2 * pad - ks + 1, wo = w + 2 * pad - ks + 1;
  std::vector<double> out(co * ho * wo);
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t y = 0; y < ho; ++y)
      for (std::size_t x = 0; x < wo; ++x) {
        double acc = b.at({o});
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t ky = 0; ky < ks; ++ky)
            for (std::size_t kx = 0; kx < ks; ++kx) {
              const long iy = static_cast<long>(y + ky) - static_cast<long>(pad);
              const long ix = static_cast<long>(x + kx) - static_cast<long>(pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
              acc += in.at({c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)}) * k.at({o, c, ky, kx});
            }
        out[(o * ho + y) * wo + x] = acc;
      }
  return out;
}

}  // namespace

TEST_CASE("elementwise examples") {
  auto r = add(Tensor({2}, {1, 2}), Tensor({2}, {3, 4}));
  CHECK(r.values() == std::vector<double>{4, 6});
  CHECK(relu(Tensor({3}, {-1, 0, 2})).values() == std::vector<double>{0, 0, 2});

  Tensor x({3}, {1.5, -2.0, 0.25}, true);
  auto zeros = Tensor::zeros({3});
  auto prod = mul(x, zeros);
  CHECK(prod.values() == std::vector<double>{0, 0, 0});
  backward(sum(prod));
  CHECK(x.grad() == std::vector<double>{0, 0, 0});

  CHECK(elementwise(ElementwiseOp::sub, Tensor({1}, {5}), Tensor({1}, {2})).item() == 3);
  CHECK_THROWS_AS(elementwise(ElementwiseOp::add, Tensor({1}, {5})), ContractError);
}

TEST_CASE("broadcasting") {
  auto a = Tensor({2, 1}, {1, 2});
  auto b = Tensor({3}, {10, 20, 30});
  auto r = add(a, b);
  CHECK(r.shape() == Shape{2, 3});
  CHECK(r.values() == std::vector<double>{11, 21, 31, 12, 22, 32});
  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({4})), DimensionError);
}

TEST_CASE("conv2d examples") {
  auto ones = Tensor::ones({1, 3, 3});
  auto k = Tensor({1, 1, 1, 1}, {2});
  auto out = conv2d(ones, k, Tensor::zeros({1}), 0);
  CHECK(out.shape() == Shape{1, 3, 3});
  for (double v : out.values()) CHECK(v == 2.0);

  std::mt19937_64 rng(3);
  auto img = random_tensor({1, 3, 3}, rng, 0, 1, false);
  std::vector<double> delta(9, 0.0);
  delta[4] = 1.0;
  auto id = conv2d(img, Tensor({1, 1, 3, 3}, delta), Tensor::zeros({1}), 1);
  CHECK(id.values() == img.values());

  CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 2, 2}), Tensor::zeros({1, 1, 3, 3}), Tensor::zeros({1}), 0), DimensionError);
  CHECK_THROWS_AS(conv2d(Tensor::zeros({2, 4, 4}), Tensor::zeros({1, 1, 3, 3}), Tensor::zeros({1}), 0), DimensionError);
}

TEST_CASE("conv2d matches nested-loop oracle") {
  for (unsigned seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    auto in = random_tensor({2, 5, 5}, rng, -1, 1, false);
    auto k = random_tensor({3, 2, 3, 3}, rng, -1, 1, false);
    auto b = random_tensor({3}, rng, -1, 1, false);
    for (std::size_t pad : {0u, 1u}) {
      auto got = conv2d(in, k, b, pad).values();
      auto want = conv_oracle(in, k, b, pad);
      REQUIRE(got.size() == want.size());
      for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) < 1e-12);
    }
  }
}

TEST_CASE("matmul examples and oracle") {
  auto eye = Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  std::mt19937_64 rng(1);
  auto m = random_tensor({3, 3}, rng, -1, 1, false);
  CHECK(matmul(eye, m).values() == m.values());
  CHECK(matmul(Tensor({2, 2}, {1, 2, 3, 4}), Tensor({2, 1}, {0, 1})).values() == std::vector<double>{2, 4});
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);

  auto a = random_tensor({2, 4, 5}, rng, -1, 1, false);
  auto b = random_tensor({2, 5, 3}, rng, -1, 1, false);
  auto c = matmul(a, b);
  for (std::size_t bi = 0; bi < 2; ++bi)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < 5; ++k) acc += a.at({bi, i, k}) * b.at({bi, k, j});
        CHECK(std::abs(c.at({bi, i, j}) - acc) < 1e-12);
      }
}

TEST_CASE("softmax examples") {
  auto s = softmax(Tensor({3}, {2.5, 2.5, 2.5}), 0);
  for (double v : s.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  auto t = softmax(Tensor({2}, {0.0, std::log(2.0)}), 0);
  CHECK(t.values()[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(t.values()[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

  std::mt19937_64 rng(9);
  auto x = random_tensor({4, 5}, rng, -3, 3, false);
  auto a = softmax(x, 1);
  auto b = softmax(add_scalar(x, 100.0), 1);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a.values()[i] - b.values()[i]) < 1e-12);
  auto rows = sum_axis(a, 1);
  for (double v : rows.values()) CHECK(std::abs(v - 1.0) < 1e-9);
  // Large magnitudes stay finite thanks to max subtraction.
  CHECK_NOTHROW(softmax(Tensor({2}, {1000.0, 999.0}), 0));
}

TEST_CASE("layer_norm examples and direct-formula oracle") {
  auto y = layer_norm(Tensor({3}, {1, 2, 3}), Tensor::ones({3}), Tensor::zeros({3}), 0);
  double m = 0, v = 0;
  for (double e : y.values()) m += e / 3;
  for (double e : y.values()) v += (e - m) * (e - m) / 3;
  CHECK(std::abs(m) < 1e-12);
  CHECK(std::abs(v - 1.0) < 1e-4);  // eps = 1e-5 shrinks variance slightly

  auto c = layer_norm(Tensor({4}, {0.7, 0.7, 0.7, 0.7}), Tensor::ones({4}), Tensor::zeros({4}), 0);
  for (double e : c.values()) CHECK(e == 0.0);

  std::mt19937_64 rng(4);
  auto x = random_tensor({3, 6, 2}, rng, -2, 2, false);
  auto g = random_tensor({6}, rng, 0.5, 1.5, false);
  auto b = random_tensor({6}, rng, -0.5, 0.5, false);
  auto out = layer_norm(x, g, b, 1);
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t i = 0; i < 2; ++i) {
      double mu = 0, var = 0;
      for (std::size_t k = 0; k < 6; ++k) mu += x.at({o, k, i}) / 6;
      for (std::size_t k = 0; k < 6; ++k) var += (x.at({o, k, i}) - mu) * (x.at({o, k, i}) - mu) / 6;
      for (std::size_t k = 0; k < 6; ++k) {
        const double want = g.at({k}) * (x.at({o, k, i}) - mu) / std::sqrt(var + 1e-5) + b.at({k});
        CHECK(std::abs(out.at({o, k, i}) - want) < 1e-9);
      }
    }
  CHECK_THROWS_AS(layer_norm(x, Tensor::ones({5}), Tensor::zeros({6}), 1), DimensionError);
}

TEST_CASE("backward examples") {
  Tensor x({4}, {1, -2, 3, 0.5}, true);
  backward(sum(x));
  CHECK(x.grad() == std::vector<double>{1, 1, 1, 1});
  x.zero_grad();
  backward(sum(mul(x, x)));
  CHECK(x.grad() == std::vector<double>{2, -4, 6, 1});
  CHECK_THROWS_AS(backward(mul(x, x)), ContractError);
}

TEST_CASE("backward twice accumulates exactly twice") {
  std::mt19937_64 rng(11);
  auto w = random_tensor({3, 2, 3, 3}, rng);
  auto in = random_tensor({2, 6, 6}, rng, -1, 1, false);
  auto loss = mean(square(gelu(conv2d(in, w, Tensor::zeros({3}), 1))));
  backward(loss);
  const auto once = w.grad();
  backward(loss);
  const auto twice = w.grad();
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(twice[i] == 2.0 * once[i]);
}

TEST_CASE("tape is topologically ordered and visits each op once") {
  Tensor a({2}, {1, 2}, true), b({2}, {3, 4}, true);
  auto c = mul(a, b);
  auto d = add(c, a);
  auto loss = sum(mul(d, c));
  auto tape = ComputationTape::record(loss);
  std::unordered_set<const detail::Node*> produced{a.id(), b.id()};
  std::unordered_set<const detail::Node*> outputs;
  for (const auto& e : tape.entries()) {
    for (auto* in : e.inputs) CHECK(produced.count(in) == 1);
    CHECK(outputs.insert(e.output).second);
    produced.insert(e.output);
  }
  CHECK(tape.entries().size() == 4);
}

TEST_CASE("finite differences agree with tape gradients for every op") {
  for (unsigned seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    auto a = random_tensor({2, 3, 4}, rng);
    auto b = random_tensor({3, 4}, rng);
    auto k = random_tensor({3, 2, 3, 3}, rng);
    auto kb = random_tensor({3}, rng);
    auto dw = random_tensor({2, 1, 3, 3}, rng);
    auto tk = random_tensor({2, 3, 2, 2}, rng);
    auto m2 = random_tensor({2, 4, 5}, rng);
    auto lw = random_tensor({4, 3}, rng);
    auto lb = random_tensor({3}, rng);
    auto g = random_tensor({4}, rng, 0.5, 1.5);
    auto be = random_tensor({4}, rng);
    auto weights = random_tensor({2, 3, 4}, rng, -1, 1, false);

    auto f = [&] {
      auto e = gelu(a) + relu(a) * b - b;  // broadcast [2,3,4] with [3,4]
      auto s = softmax(e, 2);
      auto ln = layer_norm(e, g, be, 2);
      auto mm = matmul(ln, m2);                   // [2,3,5]
      auto lin = linear(s, lw, lb);               // [2,3,3]
      auto conv = conv2d(e, k, kb, 1);            // [3,3,4]
      auto conv_s = conv2d(e, k, kb, 1, 2);       // [3,2,2]
      auto dwc = depthwise_conv2d(e, dw, Tensor::zeros({1}), 1);  // [2,3,4]
      auto up = conv_transpose2d(e, tk, Tensor::zeros({1}), 2);   // [3,6,8]
      auto perm = permute(conv, {2, 0, 1});
      auto cat = concat({slice(mm, 2, 0, 2), lin}, 2);
      return sum(weights * dwc) + mean(square(perm)) + mean(cat * cat) + mean(abs(add_scalar(up, 10.0))) +
             sum(sum_axis(conv_s, 1)) * 0.1 + sum(clamp(scale(ln, 0.1), -0.5, 0.5));
    };
    auto report = gradcheck(f, {{"a", a}, {"b", b}, {"k", k}, {"kb", kb}, {"dw", dw}, {"tk", tk}, {"m2", m2},
                                {"lw", lw}, {"lb", lb}, {"g", g}, {"be", be}});
    INFO("seed " << seed << " worst leaf " << report.worst_leaf);
    CHECK(report.worst_rel_error < 1e-4);
  }
}

TEST_CASE("ops are deterministic") {
  std::mt19937_64 r1(5), r2(5);
  auto x1 = random_tensor({2, 8, 8}, r1), x2 = random_tensor({2, 8, 8}, r2);
  auto k1 = random_tensor({4, 2, 3, 3}, r1), k2 = random_tensor({4, 2, 3, 3}, r2);
  auto y1 = softmax(conv2d(x1, k1, Tensor::zeros({4}), 1), 0);
  auto y2 = softmax(conv2d(x2, k2, Tensor::zeros({4}), 1), 0);
  CHECK(y1.values() == y2.values());
}

TEST_CASE("non-finite data is rejected") {
  CHECK_THROWS_AS(Tensor({1}, {std::nan("")}), NumericError);
  CHECK_THROWS_AS(Tensor({2}, {1.0}), DimensionError);
  CHECK_THROWS_AS(scale(Tensor({1}, {1e300}), 1e300), NumericError);
}

TEST_CASE("bft round trip is bit exact") {
  std::mt19937_64 rng(2);
  auto t = random_tensor({2, 3, 5}, rng, -1e6, 1e6, false);
  auto path = std::filesystem::temp_directory_path() / "bsrkit_test_roundtrip.bft";
  write_bft(t, path);
  auto back = read_bft(path);
  CHECK(back.shape() == t.shape());
  CHECK(std::memcmp(back.values().data(), t.values().data(), t.size() * 8) == 0);
  std::filesystem::remove(path);

  auto bytes = encode_bft(Tensor({2}, {1.0, -2.0}));
  REQUIRE(bytes.size() == 4 + 1 + 1 + 4 + 16);
  CHECK(bytes[0] == 'B');
  CHECK(bytes[3] == '1');
  CHECK(bytes[4] == 0);
  CHECK(bytes[5] == 1);
  CHECK(bytes[6] == 2);
  CHECK(bytes[7] == 0);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_bft(bad), FormatError);
  bad = bytes;
  bad[4] = 1;
  CHECK_THROWS_AS(decode_bft(bad), FormatError);
  bad = bytes;
  bad.pop_back();
  CHECK_THROWS_AS(decode_bft(bad), FormatError);
}
