#include "dci/vision.hpp"

#include <cmath>
#include <string>

#include "dci/error.hpp"

namespace dci {

void VisionConfig::validate() const {
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    throw ConfigError("vision: image_size " + std::to_string(image_size) + " not divisible by patch_size " +
                      std::to_string(patch_size));
  }
  if (channels == 0) throw ConfigError("vision: channels must be positive");
  if (layers < 1) throw ConfigError("vision: at least one encoder layer is required");
  if (heads == 0 || width == 0 || width % heads != 0) {
    throw ConfigError("vision: width " + std::to_string(width) + " not divisible by heads " + std::to_string(heads));
  }
}

Tensor patchify(const Tensor& image, const VisionConfig& cfg) {
  const std::size_t n = cfg.image_size, c = cfg.channels;
  const Shape expected = c == 1 ? Shape{n, n} : Shape{n, n, c};
  if (image.shape() != expected) {
    throw DimensionError("patchify: image " + shape_to_string(image.shape()) + " does not match expected " +
                         shape_to_string(expected));
  }
  const std::size_t p = cfg.patch_size, grid = cfg.grid();
  std::vector<std::size_t> index;
  index.reserve(cfg.tokens() * cfg.patch_values());
  for (std::size_t gy = 0; gy < grid; ++gy)
    for (std::size_t gx = 0; gx < grid; ++gx)
      for (std::size_t py = 0; py < p; ++py)
        for (std::size_t px = 0; px < p; ++px) {
          const std::size_t y = gy * p + py, x = gx * p + px;
          for (std::size_t ch = 0; ch < c; ++ch) index.push_back((y * n + x) * c + ch);
        }
  return gather_elements(image, std::move(index), {cfg.tokens(), cfg.patch_values()});
}

VisionParams init_vision_params(const VisionConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SplitMix64 rng(seed);
  VisionParams params;
  params.patch_embed = init_linear(cfg.patch_values(), cfg.width, rng);
  const double s = 1.0 / std::sqrt(static_cast<double>(cfg.width));
  std::vector<double> pos(cfg.tokens() * cfg.width);
  for (double& v : pos) v = rng.symmetric(s);
  params.position = Tensor({cfg.tokens(), cfg.width}, std::move(pos));
  for (std::size_t i = 0; i < cfg.layers; ++i) params.blocks.push_back(init_block(cfg.width, rng));
  return params;
}

LayerFeatureStack encode_all_layers(const Tensor& image, const VisionConfig& cfg, const VisionParams& params) {
  cfg.validate();
  if (params.blocks.size() != cfg.layers) {
    throw ConfigError("encode_all_layers: " + std::to_string(params.blocks.size()) + " parameter blocks for " +
                      std::to_string(cfg.layers) + " layers");
  }
  Tensor x = add(apply(params.patch_embed, patchify(image, cfg)), params.position);
  LayerFeatureStack stack;
  stack.features.reserve(cfg.layers);
  for (const Block& block : params.blocks) {
    x = apply(block, x, cfg.heads, /*causal=*/false);
    stack.features.push_back(x);
  }
  return stack;
}

}  // namespace dci
