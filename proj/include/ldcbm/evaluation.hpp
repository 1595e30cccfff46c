#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldcbm/autodiff/tensor.hpp"
#include "ldcbm/model.hpp"
#include "ldcbm/synth_data.hpp"

namespace ldcbm {

inline constexpr double kConceptThreshold = 0.5;

/// Fraction of correct (sample, concept) bits over N * M. Probabilities at
/// exactly 0.5 predict 1.
double concept_accuracy(const ad::Tensor& probabilities, const ad::Tensor& targets);
/// Fraction of samples whose argmax logit (lowest id on ties) equals the label.
double class_accuracy(const ad::Tensor& logits, std::span<const std::size_t> labels);
std::size_t argmax_row(const ad::Tensor& logits, std::size_t row);

struct MetricsReport {
  double c_acc = 0.0;
  double a_acc = 0.0;
  std::vector<double> per_concept;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::size_t samples = 0;
};

MetricsReport metrics_report(const ad::Tensor& probabilities, const ad::Tensor& logits,
                             const ad::Tensor& targets, std::span<const std::size_t> labels);
MetricsReport evaluate(const Model& model, const DatasetBundle& data, const Split& split);
nlohmann::json to_json(const MetricsReport& report);

enum class InterventionMode { kCorrect, kIncorrect };
enum class InterventionUnit { kConcept, kConceptGroup };

std::string to_string(InterventionMode mode);
InterventionMode parse_mode(const std::string& text);
std::string to_string(InterventionUnit unit);
InterventionUnit parse_unit(const std::string& text);

struct InterventionPolicy {
  InterventionMode mode = InterventionMode::kCorrect;
  double rate = 0.0;
  InterventionUnit unit = InterventionUnit::kConcept;
  /// Partition of concept ids; required for kConceptGroup.
  std::vector<std::vector<std::size_t>> concept_groups;
  std::uint64_t seed = 0;

  /// Throws ConfigError.
  void validate(std::size_t concepts) const;
};

/// Per sample, draws one random priority order over the intervention units
/// and replaces the first round(rate * units) of them. Orders depend only on
/// (seed, sample), so a larger rate always covers a smaller one.
ad::Tensor intervene(const ad::Tensor& probabilities, const ad::Tensor& truth,
                     const InterventionPolicy& policy);

/// Concepts of each part, in part order.
std::vector<std::vector<std::size_t>> part_concept_groups(const CanvasLayout& layout);

struct EvalOptions {
  std::vector<double> rates{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  std::vector<InterventionMode> modes{InterventionMode::kCorrect, InterventionMode::kIncorrect};
  std::size_t repetitions = 5;
  InterventionUnit unit = InterventionUnit::kConcept;
  std::uint64_t seed = 0;
  std::size_t reference_batch = 128;

  void validate() const;
};

struct CurvePoint {
  InterventionMode mode = InterventionMode::kCorrect;
  double rate = 0.0;
  double a_acc = 0.0;
};

/// Rows sorted by mode (correct first) then rate.
std::vector<CurvePoint> intervention_curve(const Model& model, const DatasetBundle& data,
                                           const EvalOptions& options);
std::string curve_csv(const std::vector<CurvePoint>& curve);
std::string curve_svg(const std::vector<CurvePoint>& curve);

/// `filter_id,group_id,r0..r{B-1}` with responses over the first
/// `reference` samples of the seeded test order.
std::string export_cluster_embeddings(const Model& model, const DatasetBundle& data,
                                      std::size_t reference, std::uint64_t seed);

/// Spearman rank correlation with average ranks for ties; 0 when either side is constant.
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace ldcbm
