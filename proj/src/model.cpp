#include "ldcbm/model.hpp"

#include <algorithm>
#include <numeric>

#include "ldcbm/autodiff/ops.hpp"
#include "ldcbm/config.hpp"
#include "ldcbm/error.hpp"
#include "ldcbm/filter_stats.hpp"

namespace ldcbm {

DataShape DataShape::of(const DatasetSpec& spec) {
  return DataShape{spec.image_height, spec.image_width, spec.image_channels,
                   spec.parts,        spec.concepts,    spec.classes};
}

void DataShape::check_compatible(const DatasetSpec& spec) const {
  if (!(DataShape::of(spec) == *this)) {
    throw DimensionError(
        "checkpoint was built for " + std::to_string(image_height) + "x" +
        std::to_string(image_width) + "x" + std::to_string(image_channels) + " images, M=" +
        std::to_string(concepts) + ", Y=" + std::to_string(classes) + ", P=" +
        std::to_string(parts) + " but the dataset has " + std::to_string(spec.image_height) +
        "x" + std::to_string(spec.image_width) + "x" + std::to_string(spec.image_channels) +
        " images, M=" + std::to_string(spec.concepts) + ", Y=" + std::to_string(spec.classes) +
        ", P=" + std::to_string(spec.parts));
  }
}

ForwardPass forward(const Model& model, const ad::BoundParameters& params, const ad::Var& images) {
  const FeatureMapBatch features = extract_features(model.backbone, images, params);
  const ad::Var responses = ad::global_avg_pool(features.activations);
  const ad::Var probs = predict_concepts(responses, model.assignment, model.heads, params);
  return ForwardPass{responses, probs, predict_class(probs, params)};
}

Predictions predict(const Model& model, const DatasetBundle& data, const Split& split,
                    std::span<const std::size_t> indices, std::size_t chunk) {
  const std::size_t n = indices.size();
  const std::size_t c = model.backbone.grouped_filters();
  Predictions out{ad::Tensor(ad::Shape{n, c}), ad::Tensor(ad::Shape{n, model.data.concepts}),
                  ad::Tensor(ad::Shape{n, model.data.classes})};
  for (std::size_t start = 0; start < n; start += chunk) {
    const auto part = indices.subspan(start, std::min(chunk, n - start));
    ad::Tape tape;
    const ad::BoundParameters params(tape, model.params, false);
    const ForwardPass pass = forward(model, params, tape.constant(image_batch(data.spec, split, part)));
    auto copy_rows = [&](const ad::Tensor& src, ad::Tensor& dst) {
      const std::size_t width = dst.dim(1);
      std::copy(src.values().begin(), src.values().end(), dst.values().begin() + static_cast<std::ptrdiff_t>(start * width));
    };
    copy_rows(pass.responses.value(), out.responses);
    copy_rows(pass.concept_probs.value(), out.concept_probs);
    copy_rows(pass.class_logits.value(), out.class_logits);
  }
  return out;
}

Predictions predict_split(const Model& model, const DatasetBundle& data, const Split& split) {
  std::vector<std::size_t> all(split.count);
  std::iota(all.begin(), all.end(), std::size_t{0});
  return predict(model, data, split, all);
}

ad::Tensor class_logits_for(const Model& model, const ad::Tensor& concepts) {
  ad::Tape tape;
  const ad::BoundParameters params(tape, model.params, false);
  return predict_class(tape.constant(concepts), params).value();
}

void save_model(const std::filesystem::path& manifest, const Model& model, const nlohmann::json& extra) {
  nlohmann::json meta = extra;
  meta["backbone"] = to_json(model.backbone);
  meta["data_shape"] = {{"image_height", model.data.image_height},
                        {"image_width", model.data.image_width},
                        {"image_channels", model.data.image_channels},
                        {"parts", model.data.parts},
                        {"concepts", model.data.concepts},
                        {"classes", model.data.classes}};
  meta["groups"] = model.assignment.k;
  meta["group_assignment"] = model.assignment.group_of;
  meta["concept_to_group"] = model.heads.concept_to_group;
  ad::save_checkpoint(manifest, model.params, meta);
}

Model load_model(const std::filesystem::path& manifest) {
  auto loaded = ad::load_checkpoint(manifest);
  Model model;
  const auto& meta = loaded.metadata;
  try {
    model.backbone = backbone_from_json(meta.at("backbone"));
    const auto& ds = meta.at("data_shape");
    model.data = DataShape{ds.at("image_height").get<std::size_t>(),
                           ds.at("image_width").get<std::size_t>(),
                           ds.at("image_channels").get<std::size_t>(),
                           ds.at("parts").get<std::size_t>(),
                           ds.at("concepts").get<std::size_t>(),
                           ds.at("classes").get<std::size_t>()};
    if (!meta.contains("group_assignment")) {
      throw FormatError("checkpoint " + manifest.string() + " has no group assignment");
    }
    model.assignment.k = meta.at("groups").get<std::size_t>();
    model.assignment.group_of = meta.at("group_assignment").get<std::vector<std::size_t>>();
    model.heads.concept_to_group = meta.at("concept_to_group").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint metadata is malformed: " + std::string(e.what()));
  } catch (const ConfigError& e) {
    throw FormatError("checkpoint metadata is malformed: " + std::string(e.what()));
  }
  model.params = std::move(loaded.params);
  if (model.assignment.filters() != model.backbone.grouped_filters()) {
    throw DimensionError("group assignment covers " + std::to_string(model.assignment.filters()) +
                         " filters, backbone has " + std::to_string(model.backbone.grouped_filters()));
  }
  try {
    model.assignment.validate();
  } catch (const GroupSyncError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(std::string("checkpoint group assignment is invalid: ") + e.what());
  }
  check_head_sync(model.heads, model.assignment, model.params);
  return model;
}

}  // namespace ldcbm
