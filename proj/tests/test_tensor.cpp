#include <cmath>
#include <vector>

#include "doctest.h"
#include "dci/error.hpp"
#include "dci/rng.hpp"
#include "dci/tensor.hpp"
#include "oracles.hpp"

using namespace dci;

namespace {

Tensor random_tensor(Shape shape, SplitMix64& rng, double s = 1.0) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  std::vector<double> v(n);
  for (double& x : v) x = rng.symmetric(s);
  return Tensor(std::move(shape), std::move(v));
}

Tensor sum_squares(const Tensor& x) { return sum(mul(x, x)); }

// Weighted sum with fixed pseudo-random weights, so every output element
// contributes a distinct gradient.
Tensor probe(const Tensor& y) {
  std::vector<double> w(y.numel());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.3 + 0.17 * static_cast<double>(i % 7) - 0.05 * static_cast<double>(i % 3);
  return sum(mul(y, Tensor(y.shape(), w)));
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("construction validates shape") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor({0, 2}, {}), DimensionError);
  const Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.at(1, 2) == 6);
}

TEST_CASE("matmul examples") {
  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  const Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
  CHECK(matmul(a, eye) == a);
  CHECK(matmul(a, Tensor::matrix({{1}, {1}})) == Tensor::matrix({{3}, {7}}));
  CHECK_THROWS_AS(matmul(a, Tensor::matrix({{1, 2, 3}})), DimensionError);
  try {
    matmul(a, Tensor::matrix({{1, 2, 3}}));
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x2]") != std::string::npos);
    CHECK(msg.find("[1x3]") != std::string::npos);
  }
}

TEST_CASE("matmul against a triple-loop oracle") {
  SplitMix64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng.below(5), k = 1 + rng.below(5), n = 1 + rng.below(5);
    const Tensor a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng);
    std::vector<std::vector<double>> va(m, std::vector<double>(k)), vb(k, std::vector<double>(n));
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < k; ++j) va[i][j] = a.at(i, j);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < n; ++j) vb[i][j] = b.at(i, j);
    const auto expect = oracle::matmul(va, vb);
    const Tensor c = matmul(a, b);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) CHECK(c.at(i, j) == doctest::Approx(expect[i][j]).epsilon(1e-14));
  }
}

TEST_CASE("gradient of sum(a b) with b = I is all ones") {
  Tape tape;
  const Tensor a = tape.leaf(Tensor::matrix({{1, 2}, {3, 4}}));
  const Tensor b = Tensor::matrix({{1, 0}, {0, 1}});
  const Tensor loss = sum(matmul(a, b));
  tape.backward(loss);
  CHECK(tape.grad(a) == Tensor::filled({2, 2}, 1.0));

  auto report = grad_check([&](const Tensor& x) { return sum(matmul(x, b)); }, Tensor::matrix({{1, 2}, {3, 4}}));
  CHECK(report.passed);
  for (double g : report.numeric) CHECK(g == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("reduce_mean examples and errors") {
  const Tensor x({2, 2}, {1, -2, 3.5, 0.25});
  const std::vector<Tensor> one = {x};
  CHECK(reduce_mean(one) == x);
  const std::vector<Tensor> four = {Tensor::vector({1}), Tensor::vector({2}), Tensor::vector({3}), Tensor::vector({4})};
  CHECK(reduce_mean(four)[0] == 2.5);
  CHECK_THROWS_AS(reduce_mean(std::span<const Tensor>{}), EmptyReductionError);
  const std::vector<Tensor> mixed = {Tensor::vector({1, 2}), Tensor::vector({1})};
  CHECK_THROWS_AS(reduce_mean(mixed), DimensionError);
}

TEST_CASE("reduce_mean of copies is exact for powers of two") {
  SplitMix64 rng(3);
  const Tensor x = random_tensor({3, 4}, rng);
  for (std::size_t n : {1u, 2u, 4u, 8u, 16u}) {
    std::vector<Tensor> copies(n, x);
    CHECK(reduce_mean(copies) == x);
  }
  for (std::size_t n : {3u, 5u, 7u, 12u}) {
    std::vector<Tensor> copies(n, x);
    const Tensor m = reduce_mean(copies);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(std::abs(m[i] - x[i]) <= 1e-12);
  }
}

TEST_CASE("concat_channels examples") {
  const Tensor a({2, 2}, {1, 2, 3, 4});
  const std::vector<Tensor> one = {a};
  CHECK(concat_channels(one) == a);
  const std::vector<Tensor> three = {Tensor({1, 1}, {1.5}), Tensor({1, 1}, {3.5}), Tensor({1, 1}, {4.0})};
  CHECK(concat_channels(three) == Tensor({1, 3}, {1.5, 3.5, 4.0}));
  const std::vector<Tensor> widths = {Tensor::zeros({5, 8}), Tensor::zeros({5, 8}), Tensor::zeros({5, 16})};
  CHECK(concat_channels(widths).shape() == Shape{5, 32});
  const std::vector<Tensor> bad = {Tensor::zeros({2, 3}), Tensor::zeros({3, 3})};
  CHECK_THROWS_AS(concat_channels(bad), DimensionError);
}

TEST_CASE("concat then slice reconstructs inputs bit-identically") {
  SplitMix64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t t = 1 + rng.below(6);
    std::vector<Tensor> parts;
    for (std::size_t k = 0, n = 1 + rng.below(5); k < n; ++k) parts.push_back(random_tensor({t, 1 + rng.below(7)}, rng));
    const Tensor whole = concat_channels(parts);
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
      CHECK(slice_channels(whole, offset, offset + p.cols()) == p);
      offset += p.cols();
    }
  }
}

TEST_CASE("layer_norm examples") {
  const Tensor ones = Tensor::filled({3}, 1.0), zeros = Tensor::zeros({3});
  const Tensor y = layer_norm(Tensor({1, 3}, {1, 2, 3}), ones, zeros, 0.0);
  CHECK(y[0] == doctest::Approx(-1.224745).epsilon(1e-6));
  CHECK(y[1] == doctest::Approx(0.0));
  CHECK(y[2] == doctest::Approx(1.224745).epsilon(1e-6));
  CHECK(layer_norm(Tensor::filled({2, 3}, 4.2), ones, zeros) == Tensor::zeros({2, 3}));
  const Tensor fives = layer_norm(Tensor({1, 3}, {1, 7, -2}), zeros, Tensor::filled({3}, 5.0));
  CHECK(fives == Tensor::filled({1, 3}, 5.0));
}

TEST_CASE("layer_norm normalizes each token") {
  SplitMix64 rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t t = 1 + rng.below(4), d = 2 + rng.below(14);
    const Tensor x = random_tensor({t, d}, rng, 3.0);
    const Tensor y = layer_norm(x, Tensor::filled({d}, 1.0), Tensor::zeros({d}), 0.0);
    for (std::size_t r = 0; r < t; ++r) {
      double mean = 0, in_mean = 0, in_var = 0;
      for (std::size_t c = 0; c < d; ++c) in_mean += x.at(r, c) / static_cast<double>(d);
      for (std::size_t c = 0; c < d; ++c) in_var += std::pow(x.at(r, c) - in_mean, 2) / static_cast<double>(d);
      if (in_var <= 1e-3) continue;
      for (std::size_t c = 0; c < d; ++c) mean += y.at(r, c) / static_cast<double>(d);
      double var = 0;
      for (std::size_t c = 0; c < d; ++c) var += std::pow(y.at(r, c) - mean, 2) / static_cast<double>(d);
      CHECK(std::abs(mean) < 1e-9);
      CHECK(std::abs(var - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("elementwise examples") {
  const Tensor x = Tensor::vector({1, -3});
  CHECK(add(x, Tensor::zeros({2})) == x);
  CHECK(scale(x, 2.0) == Tensor::vector({2, -6}));
  CHECK(gelu(Tensor::scalar(0.0)).item() == 0.0);
  CHECK(relu(x) == Tensor::vector({1, 0}));
  CHECK_THROWS_AS(add(x, Tensor::zeros({3})), DimensionError);
  // tanh approximation at 1: 0.5 (1 + tanh(c (1 + 0.044715)))
  const double expect = 0.5 * (1.0 + std::tanh(0.7978845608 * 1.044715));
  CHECK(gelu(Tensor::scalar(1.0)).item() == doctest::Approx(expect).epsilon(1e-15));
}

TEST_CASE("softmax_cross_entropy examples") {
  const std::vector<int> target = {7}, all = {1};
  CHECK(softmax_cross_entropy(Tensor::zeros({1, 10}), target, all).item() == doctest::Approx(std::log(10.0)).epsilon(1e-12));

  Tensor big = Tensor::zeros({1, 10});
  big[7] = 1000.0;
  CHECK(softmax_cross_entropy(big, target, all).item() < 1e-6);

  SplitMix64 rng(2);
  const Tensor logits = random_tensor({2, 5}, rng, 2.0);
  const std::vector<int> targets = {3, 1}, mask = {0, 1};
  const std::vector<int> second = {1}, one = {1};
  const double masked = softmax_cross_entropy(logits, targets, mask).item();
  const double single = softmax_cross_entropy(slice_rows(logits, 1, 2), second, one).item();
  CHECK(masked == doctest::Approx(single).epsilon(1e-15));

  const std::vector<int> none = {0, 0};
  CHECK_THROWS_AS(softmax_cross_entropy(logits, targets, none), EmptyReductionError);
  const std::vector<int> out_of_range = {5, 0};
  CHECK_THROWS_AS(softmax_cross_entropy(logits, out_of_range, mask), IndexError);
}

TEST_CASE("backward examples") {
  Tape tape;
  const Tensor x = tape.leaf(Tensor::vector({1, 2}));
  tape.backward(sum_squares(x));
  CHECK(tape.grad(x) == Tensor::vector({2, 4}));

  Tape t2;
  const Tensor y = t2.leaf(Tensor::vector({1, 2}));
  const Tensor c = t2.leaf(Tensor::scalar(3.0));
  t2.backward(sum(c));
  CHECK(t2.grad(y) == Tensor::zeros({2}));

  Tape t3;
  const Tensor z = t3.leaf(Tensor::vector({1, 2}));
  CHECK_THROWS_AS(t3.backward(mul(z, z)), ContractError);
  CHECK_THROWS_AS(backward(Tensor::scalar(1.0)), ContractError);
}

TEST_CASE("fan-out gradients accumulate") {
  Tape tape;
  const Tensor x = tape.leaf(Tensor::vector({0.5, -1.5}));
  tape.backward(sum(add(add(x, x), scale(x, 3.0))));
  CHECK(tape.grad(x) == Tensor::vector({5, 5}));
}

TEST_CASE("mixing tapes is rejected") {
  Tape a, b;
  const Tensor x = a.leaf(Tensor::vector({1}));
  const Tensor y = b.leaf(Tensor::vector({1}));
  CHECK_THROWS_AS(add(x, y), ContractError);
}

TEST_CASE("tape nodes are topologically ordered and gradients match shapes") {
  Tape tape;
  SplitMix64 rng(4);
  const Tensor w = tape.leaf(random_tensor({3, 4}, rng));
  const Tensor x = tape.leaf(random_tensor({2, 3}, rng));
  const Tensor h = gelu(matmul(x, w));
  const Tensor loss = probe(softmax_rows(h));
  for (NodeId id = 0; id < tape.size(); ++id)
    for (NodeId in : tape.inputs(id))
      if (in != std::numeric_limits<NodeId>::max()) CHECK(in < id);
  tape.backward(loss);
  CHECK(tape.grad(w).shape() == w.shape());
  CHECK(tape.grad(x).shape() == x.shape());
  CHECK(tape.grad(h).shape() == h.shape());
}

TEST_CASE("grad_check examples") {
  auto r1 = grad_check(sum_squares, Tensor::vector({1, 2, 3}), 1e-5);
  CHECK(r1.max_rel_error < 1e-7);
  auto r2 = grad_check([](const Tensor& x) { return sum(scale(x, 3.0)); }, Tensor::vector({0.1, -0.7, 2.0}));
  CHECK(r2.max_rel_error < 1e-9);
  const Tensor g = Tensor::vector({1.2, 0.8, 1.0, 0.5}), b = Tensor::vector({0.1, -0.2, 0.0, 0.3});
  auto r3 = grad_check([&](const Tensor& x) { return probe(gelu(layer_norm(x, g, b))); },
                       Tensor({2, 4}, {0.3, -0.9, 0.4, 0.8, -0.2, 0.5, 0.1, -0.6}), 1e-5, 1e-4);
  CHECK(r3.passed);
}

TEST_CASE("every differentiable op passes grad_check on random inputs") {
  SplitMix64 rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t t = 1 + rng.below(4), d = 1 + rng.below(8);
    const Tensor x = random_tensor({t, d}, rng);
    const Tensor other = random_tensor({t, d}, rng);
    const Tensor w = random_tensor({d, 3}, rng);
    const Tensor bias = random_tensor({d}, rng);
    const Tensor gamma = random_tensor({d}, rng), beta = random_tensor({d}, rng);
    const Tensor square = random_tensor({t, t}, rng);
    std::vector<int> targets(t), mask(t, 1);
    for (auto& v : targets) v = static_cast<int>(rng.below(d));

    const std::vector<std::pair<const char*, std::function<Tensor(const Tensor&)>>> cases = {
        {"matmul", [&](const Tensor& v) { return probe(matmul(v, w)); }},
        {"matmul rhs", [&](const Tensor& v) { return probe(matmul(transpose(w), transpose(v))); }},
        {"add", [&](const Tensor& v) { return probe(add(v, other)); }},
        {"sub", [&](const Tensor& v) { return probe(sub(other, v)); }},
        {"mul", [&](const Tensor& v) { return probe(mul(v, other)); }},
        {"scale", [&](const Tensor& v) { return probe(scale(v, -1.7)); }},
        {"gelu", [&](const Tensor& v) { return probe(gelu(v)); }},
        {"add_row_bias", [&](const Tensor& v) { return probe(add_row_bias(v, bias)); }},
        {"layer_norm", [&](const Tensor& v) { return probe(layer_norm(v, gamma, beta)); }},
        {"softmax_rows", [&](const Tensor& v) { return probe(softmax_rows(v)); }},
        {"softmax_rows causal", [&](const Tensor& v) { return probe(softmax_rows(matmul(v, transpose(v)), true)); }},
        {"cross_entropy", [&](const Tensor& v) { return softmax_cross_entropy(v, targets, mask); }},
        {"concat/slice", [&](const Tensor& v) {
           const std::vector<Tensor> parts = {v, other, v};
           return probe(slice_channels(concat_channels(parts), d / 2, 2 * d + 1));
         }},
        {"concat_rows/slice_rows", [&](const Tensor& v) {
           const std::vector<Tensor> parts = {other, v};
           return probe(slice_rows(concat_rows(parts), t / 2, 2 * t));
         }},
        {"reduce_mean", [&](const Tensor& v) {
           const std::vector<Tensor> parts = {v, mul(v, v), other};
           return probe(reduce_mean(parts));
         }},
        {"attention-like", [&](const Tensor& v) { return probe(matmul(softmax_rows(square), v)); }},
    };
    for (const auto& [name, f] : cases) {
      INFO(name);
      auto report = grad_check(f, x, 1e-5, 1e-4);
      CHECK(report.passed);
    }
    // relu away from its kink
    Tensor shifted = x;
    for (double& v : shifted.data()) v += v >= 0 ? 0.05 : -0.05;
    CHECK(grad_check([&](const Tensor& v) { return probe(relu(v)); }, shifted).passed);
  }
}

TEST_CASE("forward ops are deterministic") {
  SplitMix64 rng(8);
  const Tensor x = random_tensor({3, 5}, rng), g = random_tensor({5}, rng), b = random_tensor({5}, rng);
  auto run = [&] { return softmax_rows(gelu(layer_norm(x, g, b)), true); };
  CHECK(run() == run());
}

TEST_CASE("forward ops keep values finite") {
  SplitMix64 rng(12);
  const Tensor x = random_tensor({4, 6}, rng, 50.0);
  const Tensor y = softmax_rows(matmul(gelu(x), transpose(x)), true);
  for (double v : y.data()) CHECK(std::isfinite(v));
}

TEST_CASE("gather_elements and embedding") {
  const Tensor table({3, 2}, {0, 1, 10, 11, 20, 21});
  const std::vector<int> ids = {2, 0, 2};
  CHECK(embedding(table, ids) == Tensor({3, 2}, {20, 21, 0, 1, 20, 21}));
  const std::vector<int> bad = {3};
  CHECK_THROWS_AS(embedding(table, bad), IndexError);
  CHECK(gather_elements(table, {5, 0}, {1, 2}) == Tensor({1, 2}, {21, 0}));
  CHECK_THROWS_AS(gather_elements(table, {6}, {1}), IndexError);

  Tape tape;
  const Tensor tr = tape.leaf(table);
  tape.backward(sum(embedding(tr, ids)));
  CHECK(tape.grad(tr) == Tensor({3, 2}, {1, 1, 0, 0, 2, 2}));
}

}  // TEST_SUITE
