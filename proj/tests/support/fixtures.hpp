#pragma once

#include "ldcbm/synth_data.hpp"
#include "ldcbm/trainer.hpp"

namespace testsupport {

/// 16x16 images, two parts, four concepts, three classes.
inline ldcbm::DatasetSpec tiny_spec(std::uint64_t seed = 3) {
  ldcbm::DatasetSpec s;
  s.image_height = 16;
  s.image_width = 16;
  s.parts = 2;
  s.concepts = 4;
  s.classes = 3;
  s.train_samples = 48;
  s.val_samples = 16;
  s.test_samples = 16;
  s.seed = seed;
  return s;
}

/// Two stride-2 stages with 8 filters each on 16x16 input.
inline ldcbm::BackboneConfig tiny_backbone() {
  ldcbm::BackboneConfig b;
  b.input_height = 16;
  b.input_width = 16;
  b.stages = {{8, 3, 2}, {8, 3, 2}};
  b.grouped_layer_index = 1;
  return b;
}

inline ldcbm::TrainConfig tiny_train_config() {
  ldcbm::TrainConfig c;
  c.epochs = 3;
  c.batch_size = 16;
  c.groups = 2;
  c.warmup_epochs = 1;
  c.reference_batch = 32;
  c.backbone = tiny_backbone();
  return c;
}

}  // namespace testsupport
