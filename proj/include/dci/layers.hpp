#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dci/rng.hpp"
#include "dci/tensor.hpp"

namespace dci {

struct Linear {
  Tensor weight;  // in x out
  Tensor bias;    // out
};

struct Norm {
  Tensor gamma;
  Tensor beta;
};

/// Pre-norm transformer block: x + attn(ln1(x)), then h + mlp(ln2(h)).
struct Block {
  Norm ln1;
  Linear query, key, value, out;
  Norm ln2;
  Linear fc1, fc2;
};

/// Weights uniform in (-s, s) with s = 1/sqrt(fan_in); bias zero.
Linear init_linear(std::size_t in, std::size_t out, SplitMix64& rng);
/// gamma = 1, beta = 0.
Norm init_norm(std::size_t width);
/// MLP hidden width is 4 * width.
Block init_block(std::size_t width, SplitMix64& rng);

Tensor apply(const Linear& layer, const Tensor& x);
Tensor apply(const Norm& norm, const Tensor& x, double eps = 1e-5);

/// Multi-head scaled dot-product self-attention over the rows of x.
Tensor self_attention(const Block& block, const Tensor& x, std::size_t heads, bool causal);
Tensor apply(const Block& block, const Tensor& x, std::size_t heads, bool causal);

// Parameter visitation. `f(name, tensor)` is called for every parameter in a
// fixed order; the order defines the params.bin layout and the optimizer
// state layout.

template <class L, class F>
void visit_linear(L& layer, const std::string& prefix, F& f) {
  f(prefix + ".weight", layer.weight);
  f(prefix + ".bias", layer.bias);
}

template <class N, class F>
void visit_norm(N& norm, const std::string& prefix, F& f) {
  f(prefix + ".gamma", norm.gamma);
  f(prefix + ".beta", norm.beta);
}

template <class B, class F>
void visit_block(B& block, const std::string& prefix, F& f) {
  visit_norm(block.ln1, prefix + ".ln1", f);
  visit_linear(block.query, prefix + ".query", f);
  visit_linear(block.key, prefix + ".key", f);
  visit_linear(block.value, prefix + ".value", f);
  visit_linear(block.out, prefix + ".out", f);
  visit_norm(block.ln2, prefix + ".ln2", f);
  visit_linear(block.fc1, prefix + ".fc1", f);
  visit_linear(block.fc2, prefix + ".fc2", f);
}

}  // namespace dci
