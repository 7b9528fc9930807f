#include "dci/layers.hpp"

#include <cmath>

#include "dci/error.hpp"

namespace dci {

Linear init_linear(std::size_t in, std::size_t out, SplitMix64& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(in));
  std::vector<double> w(in * out);
  for (double& v : w) v = rng.symmetric(s);
  return Linear{Tensor({in, out}, std::move(w)), Tensor::zeros({out})};
}

Norm init_norm(std::size_t width) { return Norm{Tensor::filled({width}, 1.0), Tensor::zeros({width})}; }

Block init_block(std::size_t width, SplitMix64& rng) {
  Block b;
  b.ln1 = init_norm(width);
  b.query = init_linear(width, width, rng);
  b.key = init_linear(width, width, rng);
  b.value = init_linear(width, width, rng);
  b.out = init_linear(width, width, rng);
  b.ln2 = init_norm(width);
  b.fc1 = init_linear(width, 4 * width, rng);
  b.fc2 = init_linear(4 * width, width, rng);
  return b;
}

Tensor apply(const Linear& layer, const Tensor& x) { return linear(x, layer.weight, layer.bias); }

Tensor apply(const Norm& norm, const Tensor& x, double eps) { return layer_norm(x, norm.gamma, norm.beta, eps); }

Tensor self_attention(const Block& block, const Tensor& x, std::size_t heads, bool causal) {
  const std::size_t width = x.cols();
  if (heads == 0 || width % heads != 0) {
    throw ConfigError("self_attention: width " + std::to_string(width) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  const std::size_t head_dim = width / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  Tensor q = apply(block.query, x);
  Tensor k = apply(block.key, x);
  Tensor v = apply(block.value, x);
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t b = h * head_dim, e = b + head_dim;
    Tensor qh = slice_channels(q, b, e);
    Tensor kh = slice_channels(k, b, e);
    Tensor vh = slice_channels(v, b, e);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    outs.push_back(matmul(softmax_rows(scores, causal), vh));
  }
  return apply(block.out, heads == 1 ? outs.front() : concat_channels(outs));
}

Tensor apply(const Block& block, const Tensor& x, std::size_t heads, bool causal) {
  Tensor h = add(x, self_attention(block, apply(block.ln1, x), heads, causal));
  Tensor mlp = apply(block.fc2, gelu(apply(block.fc1, apply(block.ln2, h))));
  return add(h, mlp);
}

}  // namespace dci
