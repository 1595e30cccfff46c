#include "ldcbm/heads.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "ldcbm/autodiff/ops.hpp"
#include "ldcbm/error.hpp"

namespace ldcbm {

void ConceptHeads::validate(const GroupAssignment& assignment) const {
  for (std::size_t i = 0; i < concept_to_group.size(); ++i) {
    if (concept_to_group[i] >= assignment.k) {
      throw ConfigError("concept " + std::to_string(i) + " maps to group " +
                        std::to_string(concept_to_group[i]) + " but K = " +
                        std::to_string(assignment.k));
    }
  }
}

std::string concept_weight_name(std::size_t concept_id) {
  return "concept." + std::to_string(concept_id) + ".weight";
}

void init_heads(const ConceptHeads& heads, const GroupAssignment& assignment, std::size_t classes,
                ad::ParameterStore& params, std::mt19937_64& rng) {
  heads.validate(assignment);
  const auto groups = assignment.groups();
  for (std::size_t i = 0; i < heads.concepts(); ++i) {
    const std::size_t width = groups[heads.concept_to_group[i]].size();
    const double a = std::sqrt(6.0 / static_cast<double>(width + 1));
    std::uniform_real_distribution<double> dist(-a, a);
    ad::Tensor w(ad::Shape{width});
    for (auto& v : w.values()) v = dist(rng);
    params.add(concept_weight_name(i), std::move(w));
  }
  params.add(kConceptBiasName, ad::Tensor(ad::Shape{heads.concepts()}, 0.0));

  const std::size_t m = heads.concepts();
  const double a = std::sqrt(6.0 / static_cast<double>(m + classes));
  std::uniform_real_distribution<double> dist(-a, a);
  ad::Tensor wy(ad::Shape{classes, m});
  for (auto& v : wy.values()) v = dist(rng);
  params.add(kClassWeightName, std::move(wy));
  params.add(kClassBiasName, ad::Tensor(ad::Shape{classes}, 0.0));
}

void check_head_sync(const ConceptHeads& heads, const GroupAssignment& assignment,
                     const ad::ParameterStore& params) {
  heads.validate(assignment);
  const auto groups = assignment.groups();
  for (std::size_t i = 0; i < heads.concepts(); ++i) {
    const std::size_t expected = groups[heads.concept_to_group[i]].size();
    const std::size_t actual = params.get(concept_weight_name(i)).size();
    if (expected != actual) {
      throw GroupSyncError("concept " + std::to_string(i) + " head has " + std::to_string(actual) +
                           " weights but its group now holds " + std::to_string(expected) +
                           " filters; re-sync the heads after re-clustering");
    }
  }
}

void resync_heads(const ConceptHeads& heads, const GroupAssignment& previous,
                  const GroupAssignment& next, ad::ParameterStore& params) {
  check_head_sync(heads, previous, params);
  heads.validate(next);
  const auto old_groups = previous.groups();
  const auto new_groups = next.groups();
  for (std::size_t i = 0; i < heads.concepts(); ++i) {
    const std::size_t g = heads.concept_to_group[i];
    const ad::Tensor& old_w = params.get(concept_weight_name(i));
    ad::Tensor w(ad::Shape{new_groups[g].size()}, 0.0);
    for (std::size_t p = 0; p < new_groups[g].size(); ++p) {
      const std::size_t filter = new_groups[g][p];
      const auto& old_members = old_groups[g];
      for (std::size_t q = 0; q < old_members.size(); ++q) {
        if (old_members[q] == filter) {
          w[p] = old_w[q];
          break;
        }
      }
    }
    params.replace(concept_weight_name(i), std::move(w));
  }
}

GroupAssignment align_to_heads(const ConceptHeads& heads, const GroupAssignment& previous,
                               const GroupAssignment& next, const ad::ParameterStore& params) {
  check_head_sync(heads, previous, params);
  const GroupAssignment base = align_labels(previous, next);
  const std::size_t k = base.k;
  // mass[a][c]: head weight of group a sitting on filters that base puts in c.
  std::vector<std::vector<double>> mass(k, std::vector<double>(k, 0.0));
  std::vector<std::vector<double>> overlap(k, std::vector<double>(k, 0.0));
  const auto old_groups = previous.groups();
  for (std::size_t i = 0; i < heads.concepts(); ++i) {
    const std::size_t a = heads.concept_to_group[i];
    const ad::Tensor& w = params.get(concept_weight_name(i));
    for (std::size_t q = 0; q < old_groups[a].size(); ++q) {
      mass[a][base.group_of[old_groups[a][q]]] += std::abs(w[q]);
    }
  }
  for (std::size_t f = 0; f < base.filters(); ++f) overlap[previous.group_of[f]][base.group_of[f]] += 1.0;

  // rename[c] is the id given to base's group c.
  auto score = [&](const std::vector<std::size_t>& rename) {
    std::pair<double, double> s{0.0, 0.0};
    for (std::size_t c = 0; c < k; ++c) {
      s.first += mass[rename[c]][c];
      s.second += overlap[rename[c]][c];
    }
    return s;
  };
  std::vector<std::size_t> best(k);
  std::iota(best.begin(), best.end(), std::size_t{0});
  auto best_score = score(best);
  if (k <= 8) {
    std::vector<std::size_t> perm = best;
    while (std::next_permutation(perm.begin(), perm.end())) {
      const auto s = score(perm);
      if (s > best_score) {
        best_score = s;
        best = perm;
      }
    }
  } else {
    for (bool improved = true; improved;) {
      improved = false;
      for (std::size_t x = 0; x < k; ++x) {
        for (std::size_t y = x + 1; y < k; ++y) {
          std::swap(best[x], best[y]);
          const auto s = score(best);
          if (s > best_score) {
            best_score = s;
            improved = true;
          } else {
            std::swap(best[x], best[y]);
          }
        }
      }
    }
  }
  GroupAssignment out = base;
  for (auto& g : out.group_of) g = best[g];
  return out;
}

std::vector<std::vector<double>> aggregate_group_activation(const ad::Tensor& responses,
                                                            const GroupAssignment& assignment,
                                                            const ConceptHeads& heads,
                                                            const ad::ParameterStore& params,
                                                            std::size_t sample) {
  check_head_sync(heads, assignment, params);
  if (responses.rank() != 2 || responses.dim(1) != assignment.filters()) {
    throw ShapeError("aggregate_group_activation: responses " +
                     ad::shape_string(responses.shape()) + " do not cover " +
                     std::to_string(assignment.filters()) + " filters");
  }
  if (sample >= responses.dim(0)) throw ShapeError("aggregate_group_activation: no such sample");
  const auto groups = assignment.groups();
  std::vector<std::vector<double>> out;
  out.reserve(heads.concepts());
  for (std::size_t i = 0; i < heads.concepts(); ++i) {
    std::vector<double> z;
    for (std::size_t filter : groups[heads.concept_to_group[i]]) z.push_back(responses.at(sample, filter));
    out.push_back(std::move(z));
  }
  return out;
}

ad::Var concept_logits(const ad::Var& responses, const GroupAssignment& assignment,
                       const ConceptHeads& heads, const ad::BoundParameters& params) {
  const auto groups = assignment.groups();
  std::vector<ad::Var> weights;
  std::vector<std::vector<std::size_t>> columns;
  for (std::size_t i = 0; i < heads.concepts(); ++i) {
    const std::size_t g = heads.concept_to_group[i];
    if (g >= groups.size()) {
      throw GroupSyncError("concept " + std::to_string(i) + " maps to missing group " +
                           std::to_string(g));
    }
    const ad::Var& w = params[concept_weight_name(i)];
    if (w.value().size() != groups[g].size()) {
      throw GroupSyncError("concept " + std::to_string(i) + " head has " +
                           std::to_string(w.value().size()) + " weights but its group holds " +
                           std::to_string(groups[g].size()) +
                           " filters; re-sync the heads after re-clustering");
    }
    weights.push_back(w);
    columns.push_back(groups[g]);
  }
  return ad::grouped_linear(responses, weights, columns, params[kConceptBiasName]);
}

ad::Var predict_concepts(const ad::Var& responses, const GroupAssignment& assignment,
                         const ConceptHeads& heads, const ad::BoundParameters& params) {
  return ad::sigmoid(concept_logits(responses, assignment, heads, params));
}

ad::Var concept_loss(const ad::Var& probabilities, const ad::Tensor& targets) {
  if (probabilities.shape() != targets.shape()) {
    throw ShapeError("concept_loss: predictions " + ad::shape_string(probabilities.shape()) +
                     " vs targets " + ad::shape_string(targets.shape()));
  }
  ad::Tensor complement(targets.shape());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] != 0.0 && targets[i] != 1.0) {
      throw Error("concept_loss: target " + std::to_string(targets[i]) + " at index " +
                  std::to_string(i) + " is not 0 or 1");
    }
    complement[i] = 1.0 - targets[i];
  }
  ad::Tape& tape = *probabilities.tape();
  const ad::Var p = ad::clamp(probabilities, kProbabilityClamp, 1.0 - kProbabilityClamp);
  const ad::Var log_p = ad::log(p);
  const ad::Var log_q = ad::log(ad::add_scalar(ad::scale(p, -1.0), 1.0));
  const ad::Var ll = ad::add(ad::mul(log_p, tape.constant(targets)),
                             ad::mul(log_q, tape.constant(std::move(complement))));
  return ad::scale(ad::mean(ll), -1.0);
}

ad::Var predict_class(const ad::Var& concepts, const ad::BoundParameters& params) {
  return ad::linear(concepts, params[kClassWeightName], params[kClassBiasName]);
}

ad::Var class_loss(const ad::Var& logits, std::span<const std::size_t> labels) {
  const auto& shape = logits.shape();
  if (shape.size() != 2) throw ShapeError("class_loss: logits must be N x Y");
  for (std::size_t y : labels) {
    if (y >= shape[1]) {
      throw Error("class_loss: class id " + std::to_string(y) + " outside [0, " +
                  std::to_string(shape[1]) + ")");
    }
  }
  return ad::scale(ad::mean(ad::pick(ad::log_softmax(logits), labels)), -1.0);
}

LossBreakdown total_loss(double l_y, double l_c, double l_g, double lambda_c, double lambda_g) {
  if (lambda_c < 0.0 || lambda_g < 0.0) {
    throw ConfigError("loss weights must be non-negative (lambda_c = " + std::to_string(lambda_c) +
                      ", lambda_g = " + std::to_string(lambda_g) + ")");
  }
  return LossBreakdown{l_y, l_c, l_g, lambda_c, lambda_g, l_y + lambda_c * l_c + lambda_g * l_g};
}

ad::Var combine_losses(const ad::Var& l_y, const ad::Var& l_c, const ad::Var& l_g, double lambda_c,
                       double lambda_g) {
  if (lambda_c < 0.0 || lambda_g < 0.0) throw ConfigError("loss weights must be non-negative");
  ad::Var total = ad::add(l_y, ad::scale(l_c, lambda_c));
  if (l_g.valid()) total = ad::add(total, ad::scale(l_g, lambda_g));
  return total;
}

}  // namespace ldcbm
