#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldcbm/autodiff/tape.hpp"
#include "ldcbm/autodiff/tensor.hpp"

namespace ldcbm::ad {

struct NamedTensor {
  std::string name;
  Tensor value;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// Insertion-ordered collection of named trainable tensors.
class ParameterStore {
 public:
  Tensor& add(std::string name, Tensor value);
  /// Replace an existing entry in place (shape may change).
  void replace(const std::string& name, Tensor value);

  [[nodiscard]] bool contains(const std::string& name) const;
  [[nodiscard]] std::size_t index_of(const std::string& name) const;
  [[nodiscard]] Tensor& get(const std::string& name);
  [[nodiscard]] const Tensor& get(const std::string& name) const;

  [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
  [[nodiscard]] std::span<NamedTensor> entries() noexcept { return entries_; }
  [[nodiscard]] std::span<const NamedTensor> entries() const noexcept { return entries_; }

  friend bool operator==(const ParameterStore&, const ParameterStore&) = default;

 private:
  std::vector<NamedTensor> entries_;
};

/// Every parameter of a store registered as a leaf on one tape; constants when
/// `requires_grad` is false (evaluation passes leave no computation record).
class BoundParameters {
 public:
  BoundParameters(Tape& tape, const ParameterStore& store, bool requires_grad = true);

  [[nodiscard]] const Var& operator[](const std::string& name) const;
  [[nodiscard]] const Var& at(std::size_t index) const { return vars_[index]; }
  [[nodiscard]] std::size_t size() const noexcept { return vars_.size(); }

 private:
  const ParameterStore* store_;
  std::vector<Var> vars_;
};

/// Write `<manifest>` (JSON: parameter names, shapes, offsets, metadata) and the
/// raw little-endian float64 payload next to it (`<manifest stem>.bin`).
void save_checkpoint(const std::filesystem::path& manifest, const ParameterStore& params,
                     const nlohmann::json& metadata);

struct LoadedCheckpoint {
  ParameterStore params;
  nlohmann::json metadata;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& manifest);

}  // namespace ldcbm::ad
