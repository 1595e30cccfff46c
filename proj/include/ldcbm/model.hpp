#pragma once

#include <cstddef>
#include <filesystem>
#include <span>

#include <nlohmann/json.hpp>

#include "ldcbm/autodiff/parameters.hpp"
#include "ldcbm/backbone.hpp"
#include "ldcbm/grouping.hpp"
#include "ldcbm/heads.hpp"
#include "ldcbm/synth_data.hpp"

namespace ldcbm {

/// Dataset dimensions a model was built for.
struct DataShape {
  std::size_t image_height = 0;
  std::size_t image_width = 0;
  std::size_t image_channels = 0;
  std::size_t parts = 0;
  std::size_t concepts = 0;
  std::size_t classes = 0;

  static DataShape of(const DatasetSpec& spec);
  /// Throws DimensionError when `spec` does not match.
  void check_compatible(const DatasetSpec& spec) const;

  friend bool operator==(const DataShape&, const DataShape&) = default;
};

/// Everything a checkpoint holds: architecture, filter groups, concept-to-group
/// table and the trainable parameters.
struct Model {
  BackboneConfig backbone;
  DataShape data;
  GroupAssignment assignment;
  ConceptHeads heads;
  ad::ParameterStore params;
};

struct ForwardPass {
  ad::Var responses;       // N x C_l pooled filter responses
  ad::Var concept_probs;   // N x M
  ad::Var class_logits;    // N x Y
};

ForwardPass forward(const Model& model, const ad::BoundParameters& params, const ad::Var& images);

/// Gradient-free outputs for a set of samples.
struct Predictions {
  ad::Tensor responses;
  ad::Tensor concept_probs;
  ad::Tensor class_logits;
};

Predictions predict(const Model& model, const DatasetBundle& data, const Split& split,
                    std::span<const std::size_t> indices, std::size_t chunk = 100);
Predictions predict_split(const Model& model, const DatasetBundle& data, const Split& split);

/// Class head applied to given concept values (probabilities or hard 0/1).
ad::Tensor class_logits_for(const Model& model, const ad::Tensor& concepts);

void save_model(const std::filesystem::path& manifest, const Model& model,
                const nlohmann::json& extra = nlohmann::json::object());
Model load_model(const std::filesystem::path& manifest);

}  // namespace ldcbm
