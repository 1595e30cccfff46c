#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "ldcbm/autodiff/tape.hpp"
#include "ldcbm/filter_stats.hpp"

namespace ldcbm {

/// Partition of the grouped layer's filters into k non-empty groups.
struct GroupAssignment {
  std::vector<std::size_t> group_of;
  std::size_t k = 1;

  /// Throws Error unless every id is in [0, k) and every group is non-empty.
  void validate() const;

  [[nodiscard]] std::size_t filters() const noexcept { return group_of.size(); }
  /// Filters of group g in ascending index order.
  [[nodiscard]] std::vector<std::size_t> members(std::size_t group) const;
  [[nodiscard]] std::vector<std::vector<std::size_t>> groups() const;

  friend bool operator==(const GroupAssignment&, const GroupAssignment&) = default;
};

GroupAssignment single_group(std::size_t filters);
/// Filter j goes to group floor(j * k / filters).
GroupAssignment contiguous_groups(std::size_t filters, std::size_t k);
/// Renumber groups in order of first appearance.
GroupAssignment canonical_labels(const GroupAssignment& a);
/// True when both describe the same partition, ignoring group ids.
bool same_partition(const GroupAssignment& a, const GroupAssignment& b);
/// Renumbers `next` so each of its groups takes the id of the `previous` group
/// it overlaps most (greedy on overlap size, ties to the lowest ids).
GroupAssignment align_labels(const GroupAssignment& previous, const GroupAssignment& next);

struct GroupMasks {
  ad::Tensor intra;  // 1 where group_of[i] == group_of[j], diagonal included
  ad::Tensor inter;  // 1 where group_of[i] != group_of[j]
};

GroupMasks build_masks(const GroupAssignment& assignment);

struct SpectralOptions {
  std::size_t kmeans_restarts = 10;
  std::size_t kmeans_max_iterations = 300;
};

/// Normalised spectral clustering of a non-negative similarity matrix:
/// bottom-k eigenvectors of I - D^-1/2 W D^-1/2 (W = s, self-loops kept),
/// rows scaled to unit length, then seeded k-means++ with restarts keeping
/// the lowest inertia. Group ids are canonical (first appearance order).
GroupAssignment spectral_cluster(const ad::Tensor& similarity, std::size_t k, std::uint64_t seed,
                                 const SpectralOptions& options = {});

/// Stabiliser in the intra/inter ratio denominator.
inline constexpr double kGroupingEpsilon = 1e-6;

/// L_g = -sum_k mean_{i,j in A_k} s_ij / (mean_{i in A_k, j not in A_k} s_ij + eps).
/// With a single group the loss is -mean s_ij over all pairs. Masks are
/// constants; gradient flows into s only.
ad::Var grouping_loss(const SimilarityMatrix& similarity, const GroupAssignment& assignment,
                      double epsilon = kGroupingEpsilon);

/// Mean similarity over distinct same-group pairs and over cross-group pairs.
struct GroupSeparation {
  double intra_mean = 0.0;
  double inter_mean = 0.0;

  [[nodiscard]] double gap() const noexcept { return intra_mean - inter_mean; }
};

GroupSeparation group_separation(const ad::Tensor& similarity, const GroupAssignment& assignment);

}  // namespace ldcbm
