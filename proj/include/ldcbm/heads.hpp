#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ldcbm/autodiff/parameters.hpp"
#include "ldcbm/autodiff/tape.hpp"
#include "ldcbm/grouping.hpp"

namespace ldcbm {

/// Which filter group each concept's linear head reads. Weights live in the
/// ParameterStore as `concept.<i>.weight` (length = size of the group) and
/// one shared `concept.bias` vector of length M.
struct ConceptHeads {
  std::vector<std::size_t> concept_to_group;

  [[nodiscard]] std::size_t concepts() const noexcept { return concept_to_group.size(); }
  void validate(const GroupAssignment& assignment) const;

  friend bool operator==(const ConceptHeads&, const ConceptHeads&) = default;
};

std::string concept_weight_name(std::size_t concept_id);
inline constexpr const char* kConceptBiasName = "concept.bias";
inline constexpr const char* kClassWeightName = "class.weight";
inline constexpr const char* kClassBiasName = "class.bias";

/// Glorot-uniform concept and class weights, zero biases.
void init_heads(const ConceptHeads& heads, const GroupAssignment& assignment, std::size_t classes,
                ad::ParameterStore& params, std::mt19937_64& rng);

/// Throws GroupSyncError when a concept head's weight length differs from its group size.
void check_head_sync(const ConceptHeads& heads, const GroupAssignment& assignment,
                     const ad::ParameterStore& params);

/// Re-sizes every concept head after re-clustering: filters that stay in the
/// concept's group keep their weights, filters that join it start at zero.
void resync_heads(const ConceptHeads& heads, const GroupAssignment& previous,
                  const GroupAssignment& next, ad::ParameterStore& params);

/// Renumbers `next` so that the subsequent resync keeps as much concept-head
/// weight mass (sum of |w|) as possible; ties fall back to filter overlap.
/// Exhaustive over relabelings for k <= 8, greedy beyond.
GroupAssignment align_to_heads(const ConceptHeads& heads, const GroupAssignment& previous,
                               const GroupAssignment& next, const ad::ParameterStore& params);

/// z_{G_i} for one sample: responses of concept i's group, ascending filter order.
std::vector<std::vector<double>> aggregate_group_activation(const ad::Tensor& responses,
                                                            const GroupAssignment& assignment,
                                                            const ConceptHeads& heads,
                                                            const ad::ParameterStore& params,
                                                            std::size_t sample);

/// N x M logits w_i . z_{G_i} + b_i.
ad::Var concept_logits(const ad::Var& responses, const GroupAssignment& assignment,
                       const ConceptHeads& heads, const ad::BoundParameters& params);

/// N x M concept probabilities sigmoid(w_i . z_{G_i} + b_i).
ad::Var predict_concepts(const ad::Var& responses, const GroupAssignment& assignment,
                         const ConceptHeads& heads, const ad::BoundParameters& params);

inline constexpr double kProbabilityClamp = 1e-7;

/// Mean binary cross-entropy over concepts and batch; probabilities clamped to
/// [1e-7, 1 - 1e-7]. `targets` must be N x M with entries in {0, 1}.
ad::Var concept_loss(const ad::Var& probabilities, const ad::Tensor& targets);

/// N x Y logits W_y c + b_y.
ad::Var predict_class(const ad::Var& concepts, const ad::BoundParameters& params);

/// Mean softmax cross-entropy.
ad::Var class_loss(const ad::Var& logits, std::span<const std::size_t> labels);

struct LossBreakdown {
  double l_y = 0.0;
  double l_c = 0.0;
  double l_g = 0.0;
  double lambda_c = 0.0;
  double lambda_g = 0.0;
  double l_total = 0.0;
};

/// l_total = l_y + lambda_c * l_c + lambda_g * l_g. Throws ConfigError for negative weights.
LossBreakdown total_loss(double l_y, double l_c, double l_g, double lambda_c, double lambda_g);

/// Differentiable counterpart of total_loss; `l_g` may be an unbound Var when
/// the grouping term is switched off.
ad::Var combine_losses(const ad::Var& l_y, const ad::Var& l_c, const ad::Var& l_g, double lambda_c,
                       double lambda_g);

}  // namespace ldcbm
