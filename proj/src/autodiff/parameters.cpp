#include "ldcbm/autodiff/parameters.hpp"

#include <bit>
#include <cstring>
#include <utility>

#include "ldcbm/error.hpp"
#include "ldcbm/io_util.hpp"

namespace ldcbm::ad {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written as native little-endian doubles");

namespace {
constexpr int kCheckpointVersion = 1;
}

Tensor& ParameterStore::add(std::string name, Tensor value) {
  if (contains(name)) throw Error("duplicate parameter '" + name + "'");
  entries_.push_back(NamedTensor{std::move(name), std::move(value)});
  return entries_.back().value;
}

void ParameterStore::replace(const std::string& name, Tensor value) {
  entries_[index_of(name)].value = std::move(value);
}

bool ParameterStore::contains(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return true;
  }
  return false;
}

std::size_t ParameterStore::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  throw Error("unknown parameter '" + name + "'");
}

Tensor& ParameterStore::get(const std::string& name) { return entries_[index_of(name)].value; }

const Tensor& ParameterStore::get(const std::string& name) const {
  return entries_[index_of(name)].value;
}

BoundParameters::BoundParameters(Tape& tape, const ParameterStore& store, bool requires_grad)
    : store_(&store) {
  vars_.reserve(store.size());
  for (const auto& e : store.entries()) {
    vars_.push_back(requires_grad ? tape.variable(e.value) : tape.constant(e.value));
  }
}

const Var& BoundParameters::operator[](const std::string& name) const {
  return vars_[store_->index_of(name)];
}

void save_checkpoint(const std::filesystem::path& manifest, const ParameterStore& params,
                     const nlohmann::json& metadata) {
  std::filesystem::path payload_path = manifest;
  payload_path.replace_extension(".bin");

  std::vector<std::uint8_t> payload;
  nlohmann::json entries = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& e : params.entries()) {
    const std::size_t bytes = e.value.size() * sizeof(double);
    payload.resize(offset + bytes);
    if (bytes > 0) std::memcpy(payload.data() + offset, e.value.data(), bytes);
    entries.push_back({{"name", e.name},
                       {"shape", e.value.shape()},
                       {"offset", offset},
                       {"count", e.value.size()}});
    offset += bytes;
  }

  nlohmann::json doc;
  doc["format"] = "ldcbm-checkpoint";
  doc["version"] = kCheckpointVersion;
  doc["payload"] = payload_path.filename().string();
  doc["payload_bytes"] = payload.size();
  doc["payload_crc32"] = io::crc32(payload);
  doc["parameters"] = std::move(entries);
  doc["metadata"] = metadata;

  io::write_bytes(payload_path, payload);
  io::write_text(manifest, doc.dump(2) + "\n");
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& manifest) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(io::read_text(manifest));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("checkpoint manifest " + manifest.string() + " is not valid JSON: " + e.what());
  }

  LoadedCheckpoint out;
  try {
    if (doc.at("format").get<std::string>() != "ldcbm-checkpoint") {
      throw FormatError("not a checkpoint manifest: " + manifest.string());
    }
    if (doc.at("version").get<int>() != kCheckpointVersion) {
      throw DimensionError("checkpoint version " + doc.at("version").dump() +
                           " is not supported (expected " + std::to_string(kCheckpointVersion) +
                           ")");
    }
    const auto payload = io::read_bytes(manifest.parent_path() / doc.at("payload").get<std::string>());
    if (io::crc32(payload) != doc.at("payload_crc32").get<std::uint32_t>()) {
      throw ChecksumError("checkpoint payload checksum mismatch for " + manifest.string());
    }
    if (payload.size() != doc.at("payload_bytes").get<std::size_t>()) {
      throw DimensionError("checkpoint payload has " + std::to_string(payload.size()) +
                           " bytes, manifest declares " + doc.at("payload_bytes").dump());
    }
    for (const auto& entry : doc.at("parameters")) {
      const auto shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto count = entry.at("count").get<std::size_t>();
      if (shape_size(shape) != count || offset + count * sizeof(double) > payload.size()) {
        throw DimensionError("parameter '" + entry.at("name").get<std::string>() +
                             "' does not fit the payload");
      }
      std::vector<double> values(count);
      if (count > 0) std::memcpy(values.data(), payload.data() + offset, count * sizeof(double));
      out.params.add(entry.at("name").get<std::string>(), Tensor(shape, std::move(values)));
    }
    out.metadata = doc.value("metadata", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint manifest " + manifest.string() + " is malformed: " + e.what());
  }
  return out;
}

}  // namespace ldcbm::ad
