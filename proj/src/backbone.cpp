#include "ldcbm/backbone.hpp"

#include <cmath>

#include "ldcbm/autodiff/ops.hpp"
#include "ldcbm/error.hpp"

namespace ldcbm {

void BackboneConfig::validate(std::size_t groups) const {
  if (input_height == 0 || input_width == 0 || input_channels == 0) {
    throw ConfigError("backbone input dimensions must be positive");
  }
  if (stages.empty()) throw ConfigError("backbone needs at least one convolution stage");
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const auto& st = stages[s];
    if (st.filters == 0 || st.kernel == 0 || st.stride == 0) {
      throw ConfigError("backbone stage " + std::to_string(s) +
                        ": filters, kernel and stride must be positive");
    }
  }
  if (grouped_layer_index >= stages.size()) {
    throw ConfigError("grouped_layer_index " + std::to_string(grouped_layer_index) +
                      " does not address one of the " + std::to_string(stages.size()) +
                      " stages");
  }
  // Also checks every stage keeps a non-empty map.
  for (std::size_t s = 0; s <= grouped_layer_index; ++s) (void)stage_output(s);
  if (grouped_filters() < groups) {
    throw ConfigError("grouped layer has " + std::to_string(grouped_filters()) +
                      " filters, fewer than K = " + std::to_string(groups));
  }
}

MapDims BackboneConfig::stage_output(std::size_t stage) const {
  if (stage >= stages.size()) throw ConfigError("no backbone stage " + std::to_string(stage));
  MapDims dims{input_height, input_width, input_channels};
  for (std::size_t s = 0; s <= stage; ++s) {
    const auto& st = stages[s];
    const std::size_t pad = st.kernel / 2;
    if (dims.height + 2 * pad < st.kernel || dims.width + 2 * pad < st.kernel) {
      throw ConfigError("backbone stage " + std::to_string(s) + " kernel exceeds its input map");
    }
    dims.height = (dims.height + 2 * pad - st.kernel) / st.stride + 1;
    dims.width = (dims.width + 2 * pad - st.kernel) / st.stride + 1;
    dims.channels = st.filters;
  }
  return dims;
}

std::string backbone_weight_name(std::size_t stage) {
  return "backbone." + std::to_string(stage) + ".weight";
}

std::string backbone_bias_name(std::size_t stage) {
  return "backbone." + std::to_string(stage) + ".bias";
}

void init_backbone(const BackboneConfig& config, ad::ParameterStore& params, std::mt19937_64& rng) {
  std::size_t cin = config.input_channels;
  for (std::size_t s = 0; s <= config.grouped_layer_index; ++s) {
    const auto& st = config.stages[s];
    const double fan_in = static_cast<double>(st.kernel * st.kernel * cin);
    const double fan_out = static_cast<double>(st.kernel * st.kernel * st.filters);
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-a, a);
    ad::Tensor w(ad::Shape{st.kernel, st.kernel, cin, st.filters});
    for (auto& v : w.values()) v = dist(rng);
    params.add(backbone_weight_name(s), std::move(w));
    params.add(backbone_bias_name(s), ad::Tensor(ad::Shape{st.filters}, 0.0));
    cin = st.filters;
  }
}

FeatureMapBatch extract_features(const BackboneConfig& config, const ad::Var& images,
                                 const ad::BoundParameters& params) {
  const auto& shape = images.shape();
  if (shape.size() != 4 || shape[1] != config.input_height || shape[2] != config.input_width ||
      shape[3] != config.input_channels) {
    throw ShapeError("extract_features: expected images N x " +
                     std::to_string(config.input_height) + " x " +
                     std::to_string(config.input_width) + " x " +
                     std::to_string(config.input_channels) + ", got " + ad::shape_string(shape));
  }
  ad::Var x = images;
  for (std::size_t s = 0; s <= config.grouped_layer_index; ++s) {
    const auto& st = config.stages[s];
    x = ad::conv2d(x, params[backbone_weight_name(s)], params[backbone_bias_name(s)],
                   ad::Conv2dOptions{st.stride, st.kernel / 2});
    x = ad::relu(x);
  }
  return FeatureMapBatch{x, config.grouped_layer_index};
}

}  // namespace ldcbm
