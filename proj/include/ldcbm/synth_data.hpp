#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ldcbm/autodiff/tensor.hpp"

namespace ldcbm {

/// Parameters of the synthetic compositional image task.
struct DatasetSpec {
  std::size_t image_height = 32;
  std::size_t image_width = 32;
  std::size_t image_channels = 3;
  std::size_t parts = 4;
  std::size_t concepts = 8;
  std::size_t classes = 4;
  std::size_t train_samples = 2000;
  std::size_t val_samples = 200;
  std::size_t test_samples = 200;
  double noise = 0.05;
  std::uint64_t seed = 0;

  /// Throws ConfigError.
  void validate() const;
  [[nodiscard]] std::size_t concepts_per_part() const { return concepts / parts; }
  [[nodiscard]] std::size_t pixels_per_image() const {
    return image_height * image_width * image_channels;
  }

  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

struct Box {
  std::size_t top = 0;
  std::size_t left = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  [[nodiscard]] bool contains(std::size_t y, std::size_t x) const {
    return y >= top && y < top + height && x >= left && x < left + width;
  }
  friend bool operator==(const Box&, const Box&) = default;
};

enum class PatternKind { kHorizontalStripes, kBlob, kRing, kVerticalStripes, kCornerTick };

/// Background intensity of every channel.
inline constexpr double kBackground = 0.1;

/// Layout shared by every image: part rectangles, the band each concept is
/// drawn in, the pattern it toggles and each part's colour.
struct CanvasLayout {
  std::vector<Box> part_boxes;
  std::vector<Box> concept_boxes;
  std::vector<PatternKind> concept_patterns;
  std::vector<std::size_t> concept_part;
  std::vector<std::vector<double>> part_colours;  // per part, one weight per channel
};

CanvasLayout make_layout(const DatasetSpec& spec);

/// Whether pixel (y, x) of a concept's band is painted when the concept is active.
bool pattern_covers(PatternKind kind, const Box& band, std::size_t y, std::size_t x);

/// One split stored flat: images N x H x W x C (float32), concepts N x M, labels N.
struct Split {
  std::size_t count = 0;
  std::vector<float> images;
  std::vector<std::uint8_t> concepts;
  std::vector<std::uint8_t> labels;

  friend bool operator==(const Split&, const Split&) = default;
};

struct DatasetBundle {
  DatasetSpec spec;
  std::vector<std::vector<std::uint8_t>> codebook;  // classes x concepts
  CanvasLayout layout;
  Split train;
  Split val;
  Split test;

  [[nodiscard]] const Split& split(const std::string& name) const;

  friend bool operator==(const DatasetBundle& a, const DatasetBundle& b) {
    return a.spec == b.spec && a.codebook == b.codebook && a.train == b.train && a.val == b.val &&
           a.test == b.test;
  }
};

/// Read-only view of one (x, c, y) triple.
struct Sample {
  std::span<const float> image;
  std::span<const std::uint8_t> concepts;
  std::size_t label = 0;
  std::span<const Box> part_boxes;
};

Sample sample_at(const DatasetBundle& bundle, const Split& split, std::size_t index);

/// Index of the codebook row nearest in Hamming distance; ties go to the lowest id.
std::size_t class_rule(const std::vector<std::vector<std::uint8_t>>& codebook,
                       std::span<const std::uint8_t> concepts);

DatasetBundle generate(const DatasetSpec& spec);

/// Directory layout: manifest.json plus <split>.images.f32 / .concepts.u8 / .labels.u8.
void save_dataset(const DatasetBundle& bundle, const std::filesystem::path& dir);
/// Throws FormatError, ChecksumError or DimensionError on a damaged bundle.
DatasetBundle load_dataset(const std::filesystem::path& dir);

/// `sample_id,c0..c{M-1},label` rows.
std::string labels_csv(const Split& split, std::size_t concepts);

/// Images at `indices` as an N x H x W x C tensor.
ad::Tensor image_batch(const DatasetSpec& spec, const Split& split, std::span<const std::size_t> indices);
/// Concept targets N x M as 0/1 doubles.
ad::Tensor concept_batch(const DatasetSpec& spec, const Split& split, std::span<const std::size_t> indices);
std::vector<std::size_t> label_batch(const Split& split, std::span<const std::size_t> indices);

}  // namespace ldcbm
