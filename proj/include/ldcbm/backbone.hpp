#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "ldcbm/autodiff/parameters.hpp"
#include "ldcbm/autodiff/tape.hpp"

namespace ldcbm {

struct ConvStage {
  std::size_t filters = 32;
  std::size_t kernel = 3;
  std::size_t stride = 2;

  friend bool operator==(const ConvStage&, const ConvStage&) = default;
};

struct MapDims {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;

  friend bool operator==(const MapDims&, const MapDims&) = default;
};

/// Convolution stack (ReLU after every stage, "same"-style padding of kernel/2).
struct BackboneConfig {
  std::size_t input_height = 32;
  std::size_t input_width = 32;
  std::size_t input_channels = 3;
  std::vector<ConvStage> stages{{32, 3, 2}, {32, 3, 2}, {32, 3, 2}};
  /// Zero-based stage whose output is the grouped feature map.
  std::size_t grouped_layer_index = 2;

  /// Throws ConfigError. `groups` is the largest K the grouped layer must support.
  void validate(std::size_t groups = 1) const;

  [[nodiscard]] MapDims stage_output(std::size_t stage) const;
  [[nodiscard]] MapDims grouped_dims() const { return stage_output(grouped_layer_index); }
  [[nodiscard]] std::size_t grouped_filters() const { return grouped_dims().channels; }

  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

/// Activations of the grouped layer, shape N x H_l x W_l x C_l.
struct FeatureMapBatch {
  ad::Var activations;
  std::size_t layer_index = 0;
};

std::string backbone_weight_name(std::size_t stage);
std::string backbone_bias_name(std::size_t stage);

/// Glorot-uniform weights (a = sqrt(6 / (fan_in + fan_out))), zero biases.
void init_backbone(const BackboneConfig& config, ad::ParameterStore& params, std::mt19937_64& rng);

/// Runs stages 0..grouped_layer_index on an N x H x W x Cin image batch.
FeatureMapBatch extract_features(const BackboneConfig& config, const ad::Var& images,
                                 const ad::BoundParameters& params);

}  // namespace ldcbm
