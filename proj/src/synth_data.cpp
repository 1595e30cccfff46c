#include "ldcbm/synth_data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <random>

#include <nlohmann/json.hpp>

#include "ldcbm/error.hpp"
#include "ldcbm/io_util.hpp"

namespace ldcbm {

static_assert(std::endian::native == std::endian::little,
              "dataset payloads are written as native little-endian float32");

namespace {

constexpr int kDatasetVersion = 1;
constexpr double kFlipProbability = 0.15;
constexpr std::size_t kCodebookAttempts = 64;
constexpr double kBalanceTolerance = 0.3;

const char* const kSplitNames[] = {"train", "val", "test"};

std::mt19937_64 substream(std::uint64_t seed, std::uint32_t a, std::uint64_t b, std::uint32_t c) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), a,
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32), c};
  return std::mt19937_64(seq);
}

std::size_t hamming(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i] ? 1 : 0;
  return d;
}

std::vector<std::vector<std::uint8_t>> draw_codebook(const DatasetSpec& spec, std::size_t attempt) {
  auto rng = substream(spec.seed, 0xC0DEu, attempt, 0);
  std::bernoulli_distribution bit(0.5);
  std::size_t min_distance = std::min<std::size_t>(3, std::max<std::size_t>(1, spec.concepts / 2));
  for (;;) {
    std::vector<std::vector<std::uint8_t>> rows;
    std::size_t tries = 0;
    while (rows.size() < spec.classes && tries < 10000) {
      ++tries;
      std::vector<std::uint8_t> row(spec.concepts);
      for (auto& b : row) b = bit(rng) ? 1 : 0;
      bool ok = true;
      for (const auto& other : rows) ok = ok && hamming(row, other) >= min_distance;
      if (ok) rows.push_back(std::move(row));
    }
    if (rows.size() == spec.classes) return rows;
    if (min_distance == 1) throw ConfigError("cannot draw a codebook of distinct class prototypes");
    --min_distance;
  }
}

// Concept bits for one sample: a uniformly chosen prototype with independent bit flips.
std::vector<std::uint8_t> draw_concepts(const DatasetSpec& spec,
                                        const std::vector<std::vector<std::uint8_t>>& codebook,
                                        std::uint32_t split, std::size_t index) {
  auto rng = substream(spec.seed, split, index, 1);
  std::uniform_int_distribution<std::size_t> proto(0, spec.classes - 1);
  std::bernoulli_distribution flip(kFlipProbability);
  std::vector<std::uint8_t> bits = codebook[proto(rng)];
  for (auto& b : bits) b = flip(rng) ? static_cast<std::uint8_t>(1 - b) : b;
  return bits;
}

double balance_deviation(const DatasetSpec& spec, const std::vector<std::uint8_t>& labels) {
  if (labels.empty()) return 0.0;
  std::vector<std::size_t> counts(spec.classes, 0);
  for (auto y : labels) ++counts[y];
  const double uniform = static_cast<double>(labels.size()) / static_cast<double>(spec.classes);
  double worst = 0.0;
  for (auto c : counts) worst = std::max(worst, std::abs(static_cast<double>(c) - uniform) / uniform);
  return worst;
}

void render(const DatasetSpec& spec, const CanvasLayout& layout,
            std::span<const std::uint8_t> concepts, std::mt19937_64& noise_rng, float* out) {
  const std::size_t h = spec.image_height, w = spec.image_width, ch = spec.image_channels;
  std::vector<double> img(h * w * ch, kBackground);
  for (std::size_t i = 0; i < concepts.size(); ++i) {
    if (concepts[i] == 0) continue;
    const Box& band = layout.concept_boxes[i];
    const auto& colour = layout.part_colours[layout.concept_part[i]];
    for (std::size_t y = band.top; y < band.top + band.height; ++y)
      for (std::size_t x = band.left; x < band.left + band.width; ++x) {
        if (!pattern_covers(layout.concept_patterns[i], band, y, x)) continue;
        for (std::size_t c = 0; c < ch; ++c) img[(y * w + x) * ch + c] = kBackground + 0.8 * colour[c];
      }
  }
  std::normal_distribution<double> noise(0.0, spec.noise);
  for (std::size_t p = 0; p < img.size(); ++p) {
    const double v = spec.noise > 0.0 ? img[p] + noise(noise_rng) : img[p];
    out[p] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
}

nlohmann::json spec_to_json(const DatasetSpec& s) {
  return {{"image_height", s.image_height}, {"image_width", s.image_width},
          {"image_channels", s.image_channels}, {"parts", s.parts},
          {"concepts", s.concepts}, {"classes", s.classes},
          {"train_samples", s.train_samples}, {"val_samples", s.val_samples},
          {"test_samples", s.test_samples}, {"noise", s.noise}, {"seed", s.seed}};
}

DatasetSpec spec_from_json(const nlohmann::json& j) {
  DatasetSpec s;
  s.image_height = j.at("image_height").get<std::size_t>();
  s.image_width = j.at("image_width").get<std::size_t>();
  s.image_channels = j.at("image_channels").get<std::size_t>();
  s.parts = j.at("parts").get<std::size_t>();
  s.concepts = j.at("concepts").get<std::size_t>();
  s.classes = j.at("classes").get<std::size_t>();
  s.train_samples = j.at("train_samples").get<std::size_t>();
  s.val_samples = j.at("val_samples").get<std::size_t>();
  s.test_samples = j.at("test_samples").get<std::size_t>();
  s.noise = j.at("noise").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

Split& split_ref(DatasetBundle& b, std::size_t i) { return i == 0 ? b.train : (i == 1 ? b.val : b.test); }

std::size_t split_size(const DatasetSpec& s, std::size_t i) {
  return i == 0 ? s.train_samples : (i == 1 ? s.val_samples : s.test_samples);
}

}  // namespace

void DatasetSpec::validate() const {
  if (image_height == 0 || image_width == 0 || image_channels == 0) {
    throw ConfigError("image dimensions must be positive");
  }
  if (parts == 0 || concepts == 0 || classes == 0) {
    throw ConfigError("parts, concepts and classes must be positive");
  }
  if (concepts % parts != 0) {
    throw ConfigError("concept count M = " + std::to_string(concepts) +
                      " is not divisible by part count P = " + std::to_string(parts));
  }
  if (concepts < 64 && classes > (std::size_t{1} << concepts)) {
    throw ConfigError("Y = " + std::to_string(classes) + " classes cannot be realised from " +
                      std::to_string(concepts) + " binary concepts");
  }
  if (classes > 256) throw ConfigError("at most 256 classes fit the byte label payload");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw ConfigError("noise must be a finite value >= 0");
  const auto layout = make_layout(*this);
  for (const auto& band : layout.concept_boxes) {
    if (band.height < 3 || band.width < 3) {
      throw ConfigError("image too small: concept bands would be narrower than 3 pixels");
    }
  }
}

CanvasLayout make_layout(const DatasetSpec& spec) {
  CanvasLayout layout;
  const std::size_t cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(spec.parts))));
  const std::size_t rows = (spec.parts + cols - 1) / cols;
  const std::size_t slot_h = spec.image_height / rows, slot_w = spec.image_width / cols;
  const std::size_t per_part = spec.concepts / spec.parts;

  static const std::vector<std::vector<double>> palette = {
      {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}, {1, 0, 1}, {0, 1, 1}};
  for (std::size_t p = 0; p < spec.parts; ++p) {
    const std::size_t r = p / cols, c = p % cols;
    const Box box{r * slot_h + 1, c * slot_w + 1, slot_h > 2 ? slot_h - 2 : 0,
                  slot_w > 2 ? slot_w - 2 : 0};
    layout.part_boxes.push_back(box);
    std::vector<double> colour(spec.image_channels, 1.0);
    if (spec.image_channels == 3) colour = palette[p % palette.size()];
    layout.part_colours.push_back(colour);

    for (std::size_t j = 0; j < per_part; ++j) {
      const std::size_t top = box.top + j * box.height / per_part;
      const std::size_t bottom = box.top + (j + 1) * box.height / per_part;
      layout.concept_boxes.push_back(Box{top, box.left, bottom - top, box.width});
      layout.concept_patterns.push_back(static_cast<PatternKind>(j % 5));
      layout.concept_part.push_back(p);
    }
  }
  return layout;
}

bool pattern_covers(PatternKind kind, const Box& band, std::size_t y, std::size_t x) {
  if (!band.contains(y, x)) return false;
  const std::size_t ly = y - band.top, lx = x - band.left;
  const double cy = (static_cast<double>(band.height) - 1.0) / 2.0;
  const double cx = (static_cast<double>(band.width) - 1.0) / 2.0;
  const double r = std::hypot(static_cast<double>(ly) - cy, static_cast<double>(lx) - cx);
  const double extent = static_cast<double>(std::min(band.height, band.width));
  switch (kind) {
    case PatternKind::kHorizontalStripes:
      return ly % 2 == 0;
    case PatternKind::kVerticalStripes:
      return lx % 2 == 0;
    case PatternKind::kBlob:
      return r <= 0.4 * extent;
    case PatternKind::kRing:
      return std::abs(r - 0.4 * extent) <= 0.6;
    case PatternKind::kCornerTick:
      return (ly == 0 && lx < (band.width + 1) / 2) || (lx == 0 && ly < (band.height + 1) / 2);
  }
  return false;
}

const Split& DatasetBundle::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw ConfigError("unknown split '" + name + "'");
}

Sample sample_at(const DatasetBundle& bundle, const Split& split, std::size_t index) {
  if (index >= split.count) throw ShapeError("sample index " + std::to_string(index) + " out of range");
  const std::size_t px = bundle.spec.pixels_per_image(), m = bundle.spec.concepts;
  return Sample{std::span<const float>(split.images).subspan(index * px, px),
                std::span<const std::uint8_t>(split.concepts).subspan(index * m, m),
                split.labels[index], bundle.layout.part_boxes};
}

std::size_t class_rule(const std::vector<std::vector<std::uint8_t>>& codebook,
                       std::span<const std::uint8_t> concepts) {
  std::size_t best = 0;
  std::size_t best_d = hamming(codebook[0], concepts);
  for (std::size_t y = 1; y < codebook.size(); ++y) {
    const std::size_t d = hamming(codebook[y], concepts);
    if (d < best_d) {
      best_d = d;
      best = y;
    }
  }
  return best;
}

DatasetBundle generate(const DatasetSpec& spec) {
  spec.validate();
  DatasetBundle bundle;
  bundle.spec = spec;
  bundle.layout = make_layout(spec);

  // Redraw the codebook until the training labels are balanced; keep the best
  // attempt if none qualifies (tiny splits cannot always be balanced).
  double best_dev = std::numeric_limits<double>::infinity();
  for (std::size_t attempt = 0; attempt < kCodebookAttempts; ++attempt) {
    auto codebook = draw_codebook(spec, attempt);
    std::vector<std::uint8_t> labels(spec.train_samples);
    for (std::size_t n = 0; n < spec.train_samples; ++n) {
      labels[n] = static_cast<std::uint8_t>(class_rule(codebook, draw_concepts(spec, codebook, 0, n)));
    }
    const double dev = balance_deviation(spec, labels);
    if (dev < best_dev) {
      best_dev = dev;
      bundle.codebook = std::move(codebook);
    }
    if (dev <= kBalanceTolerance) break;
  }

  const std::size_t px = spec.pixels_per_image();
  for (std::size_t s = 0; s < 3; ++s) {
    Split& split = split_ref(bundle, s);
    split.count = split_size(spec, s);
    split.images.resize(split.count * px);
    split.concepts.resize(split.count * spec.concepts);
    split.labels.resize(split.count);
    for (std::size_t n = 0; n < split.count; ++n) {
      const auto bits = draw_concepts(spec, bundle.codebook, static_cast<std::uint32_t>(s), n);
      std::copy(bits.begin(), bits.end(), split.concepts.begin() + static_cast<std::ptrdiff_t>(n * spec.concepts));
      split.labels[n] = static_cast<std::uint8_t>(class_rule(bundle.codebook, bits));
      auto noise_rng = substream(spec.seed, static_cast<std::uint32_t>(s), n, 2);
      render(spec, bundle.layout, bits, noise_rng, split.images.data() + n * px);
    }
  }
  return bundle;
}

void save_dataset(const DatasetBundle& bundle, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "ldcbm-dataset";
  manifest["version"] = kDatasetVersion;
  manifest["spec"] = spec_to_json(bundle.spec);
  manifest["codebook"] = bundle.codebook;
  nlohmann::json boxes = nlohmann::json::array();
  for (const auto& b : bundle.layout.part_boxes) {
    boxes.push_back({{"top", b.top}, {"left", b.left}, {"height", b.height}, {"width", b.width}});
  }
  manifest["part_boxes"] = boxes;
  manifest["concept_part"] = bundle.layout.concept_part;

  auto write_payload = [&](const std::string& name, std::span<const std::uint8_t> bytes) {
    io::write_bytes(dir / name, bytes);
    return nlohmann::json{{"file", name}, {"bytes", bytes.size()}, {"crc32", io::crc32(bytes)}};
  };
  for (std::size_t s = 0; s < 3; ++s) {
    const Split& split = s == 0 ? bundle.train : (s == 1 ? bundle.val : bundle.test);
    const std::string prefix = kSplitNames[s];
    const auto* img = reinterpret_cast<const std::uint8_t*>(split.images.data());
    manifest["splits"][prefix] = {
        {"count", split.count},
        {"images", write_payload(prefix + ".images.f32",
                                 std::span<const std::uint8_t>(img, split.images.size() * sizeof(float)))},
        {"concepts", write_payload(prefix + ".concepts.u8", split.concepts)},
        {"labels", write_payload(prefix + ".labels.u8", split.labels)}};
  }
  io::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

DatasetBundle load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) {
    throw IoError("no dataset manifest at " + manifest_path.string());
  }
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(io::read_text(manifest_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("dataset manifest is not valid JSON: " + std::string(e.what()));
  }

  DatasetBundle bundle;
  try {
    if (manifest.at("format").get<std::string>() != "ldcbm-dataset") {
      throw FormatError("not a dataset manifest: " + manifest_path.string());
    }
    if (manifest.at("version").get<int>() != kDatasetVersion) {
      throw DimensionError("dataset format version " + manifest.at("version").dump() +
                           " is not supported");
    }
    bundle.spec = spec_from_json(manifest.at("spec"));
    bundle.codebook = manifest.at("codebook").get<std::vector<std::vector<std::uint8_t>>>();

    auto read_payload = [&](const nlohmann::json& entry, std::size_t expected_bytes) {
      const auto file = entry.at("file").get<std::string>();
      auto bytes = io::read_bytes(dir / file);
      if (io::crc32(bytes) != entry.at("crc32").get<std::uint32_t>()) {
        throw ChecksumError("checksum mismatch for " + file);
      }
      if (bytes.size() != entry.at("bytes").get<std::size_t>() || bytes.size() != expected_bytes) {
        throw DimensionError(file + " holds " + std::to_string(bytes.size()) +
                             " bytes but the manifest dimensions require " +
                             std::to_string(expected_bytes));
      }
      return bytes;
    };

    const auto& spec = bundle.spec;
    for (std::size_t s = 0; s < 3; ++s) {
      const auto& entry = manifest.at("splits").at(kSplitNames[s]);
      Split& split = split_ref(bundle, s);
      split.count = entry.at("count").get<std::size_t>();
      if (split.count != split_size(spec, s)) {
        throw DimensionError(std::string(kSplitNames[s]) + " count disagrees with the spec");
      }
      const auto img = read_payload(entry.at("images"), split.count * spec.pixels_per_image() * sizeof(float));
      split.images.resize(split.count * spec.pixels_per_image());
      if (!img.empty()) std::memcpy(split.images.data(), img.data(), img.size());
      split.concepts = read_payload(entry.at("concepts"), split.count * spec.concepts);
      split.labels = read_payload(entry.at("labels"), split.count);
      for (auto c : split.concepts) {
        if (c > 1) throw FormatError("concept payload holds a value other than 0/1");
      }
      for (auto y : split.labels) {
        if (y >= spec.classes) throw FormatError("label payload holds an out-of-range class id");
      }
    }
    if (bundle.codebook.size() != spec.classes) {
      throw DimensionError("codebook has " + std::to_string(bundle.codebook.size()) +
                           " rows, spec declares " + std::to_string(spec.classes) + " classes");
    }
    for (const auto& row : bundle.codebook) {
      if (row.size() != spec.concepts) throw DimensionError("codebook row width differs from concept count");
    }
    spec.validate();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("dataset manifest is malformed: " + std::string(e.what()));
  }
  bundle.layout = make_layout(bundle.spec);
  return bundle;
}

std::string labels_csv(const Split& split, std::size_t concepts) {
  std::string out = "sample_id";
  for (std::size_t i = 0; i < concepts; ++i) out += ",c" + std::to_string(i);
  out += ",label\n";
  for (std::size_t n = 0; n < split.count; ++n) {
    out += std::to_string(n);
    for (std::size_t i = 0; i < concepts; ++i) out += split.concepts[n * concepts + i] ? ",1" : ",0";
    out += "," + std::to_string(split.labels[n]) + "\n";
  }
  return out;
}

ad::Tensor image_batch(const DatasetSpec& spec, const Split& split, std::span<const std::size_t> indices) {
  const std::size_t px = spec.pixels_per_image();
  ad::Tensor out(ad::Shape{indices.size(), spec.image_height, spec.image_width, spec.image_channels});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    if (indices[b] >= split.count) throw ShapeError("batch index out of range");
    const float* src = split.images.data() + indices[b] * px;
    for (std::size_t p = 0; p < px; ++p) out[b * px + p] = static_cast<double>(src[p]);
  }
  return out;
}

ad::Tensor concept_batch(const DatasetSpec& spec, const Split& split, std::span<const std::size_t> indices) {
  const std::size_t m = spec.concepts;
  ad::Tensor out(ad::Shape{indices.size(), m});
  for (std::size_t b = 0; b < indices.size(); ++b)
    for (std::size_t i = 0; i < m; ++i) out.at(b, i) = split.concepts[indices[b] * m + i];
  return out;
}

std::vector<std::size_t> label_batch(const Split& split, std::span<const std::size_t> indices) {
  std::vector<std::size_t> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(split.labels[i]);
  return out;
}

}  // namespace ldcbm
