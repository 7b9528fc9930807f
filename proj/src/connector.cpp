#include "dci/connector.hpp"

#include <string>

#include "dci/error.hpp"

namespace dci {

void ConnectorConfig::validate() const {
  if (groups < 1 || groups > layers) {
    throw ConfigError("connector: groups G=" + std::to_string(groups) + " must satisfy 1 <= G <= L=" +
                      std::to_string(layers));
  }
  if (layers % groups != 0) {
    throw ConfigError("connector: L=" + std::to_string(layers) + " is not divisible by G=" + std::to_string(groups));
  }
  if (width == 0 || hidden == 0 || lm_width == 0) throw ConfigError("connector: widths must be positive");
}

std::vector<Tensor> fuse_groups(const LayerFeatureStack& stack, const ConnectorConfig& cfg) {
  cfg.validate();
  if (stack.layers() != cfg.layers) {
    throw ConfigError("fuse_groups: stack has " + std::to_string(stack.layers()) + " layers, config expects " +
                      std::to_string(cfg.layers));
  }
  const std::size_t m = cfg.group_size();
  std::span<const Tensor> all(stack.features);
  std::vector<Tensor> means;
  means.reserve(cfg.groups);
  for (std::size_t g = 0; g < cfg.groups; ++g) means.push_back(reduce_mean(all.subspan(g * m, m)));
  return means;
}

VisionEmbedding assemble_embedding(std::span<const Tensor> group_means, const Tensor& v_last,
                                   const ConnectorConfig& cfg) {
  if (group_means.size() != cfg.groups) {
    throw ConfigError("assemble_embedding: " + std::to_string(group_means.size()) + " group means for G=" +
                      std::to_string(cfg.groups));
  }
  std::vector<Tensor> parts(group_means.begin(), group_means.end());
  parts.push_back(v_last);
  for (const Tensor& p : parts) {
    if (p.shape() != v_last.shape()) {
      throw DimensionError("assemble_embedding: shape mismatch " + shape_to_string(p.shape()) + " vs " +
                           shape_to_string(v_last.shape()));
    }
  }
  return VisionEmbedding{concat_channels(parts)};
}

VisionEmbedding vision_embedding(const LayerFeatureStack& stack, const ConnectorConfig& cfg) {
  cfg.validate();
  if (stack.layers() == 0) throw ConfigError("vision_embedding: empty feature stack");
  if (!cfg.dci_enabled) return VisionEmbedding{stack.last()};
  return assemble_embedding(fuse_groups(stack, cfg), stack.last(), cfg);
}

ProjectorParams init_projector(const ConnectorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SplitMix64 rng(seed);
  ProjectorParams p;
  p.fc1 = init_linear(cfg.input_width(), cfg.hidden, rng);
  p.fc2 = init_linear(cfg.hidden, cfg.lm_width, rng);
  return p;
}

Tensor project(const Tensor& x, const ProjectorParams& params) { return apply(params.fc2, gelu(apply(params.fc1, x))); }

Tensor connect(const LayerFeatureStack& stack, const ConnectorConfig& cfg, const ProjectorParams& params) {
  cfg.validate();
  if (params.fc1.weight.rank() != 2 || params.fc1.weight.shape()[0] != cfg.input_width()) {
    throw ConfigError("connect: projector expects input width " +
                      (params.fc1.weight.rank() == 2 ? std::to_string(params.fc1.weight.shape()[0]) : std::string("?")) +
                      " but the connector produces " + std::to_string(cfg.input_width()) +
                      (cfg.dci_enabled ? " (DCI enabled)" : " (DCI disabled)"));
  }
  return connect(stack, cfg, [&params](const Tensor& x) { return project(x, params); });
}

Tensor connect(const LayerFeatureStack& stack, const ConnectorConfig& cfg,
               const std::function<Tensor(const Tensor&)>& projector) {
  return projector(vision_embedding(stack, cfg).ev);
}

ConnectorParamCount connector_param_count(const ConnectorConfig& cfg) {
  cfg.validate();
  const auto d = static_cast<long long>(cfg.width);
  const auto h = static_cast<long long>(cfg.hidden);
  const auto e = static_cast<long long>(cfg.lm_width);
  const auto g = static_cast<long long>(cfg.groups);
  ConnectorParamCount count;
  count.base = d * h + h + h * e + e;
  count.with_dci = (g + 1) * d * h + h + h * e + e;
  count.delta = count.with_dci - count.base;
  return count;
}

}  // namespace dci
