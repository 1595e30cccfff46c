#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "ldcbm/autodiff/tape.hpp"
#include "ldcbm/backbone.hpp"

namespace ldcbm {

/// Stabiliser added to sigma_i * sigma_j in the similarity denominator.
inline constexpr double kSimilarityEpsilon = 1e-8;

/// Per-filter global average responses over a batch (N x C_l) with their
/// batch statistics (biased 1/N variance).
struct ResponseMatrix {
  ad::Var values;
  std::vector<double> batch_means;
  std::vector<double> batch_stddevs;

  [[nodiscard]] std::size_t samples() const { return values.shape()[0]; }
  [[nodiscard]] std::size_t filters() const { return values.shape()[1]; }
};

/// C_l x C_l shifted-correlation similarities in [0, 2].
struct SimilarityMatrix {
  ad::Var s;
  double epsilon = kSimilarityEpsilon;

  [[nodiscard]] std::size_t filters() const { return s.shape()[0]; }
};

/// Spatial mean of every filter's activation map. Requires N >= 2.
ResponseMatrix global_average_response(const FeatureMapBatch& features);

/// Wraps an existing N x C matrix of responses (computes the batch statistics).
ResponseMatrix response_matrix(const ad::Var& values);

/// s_ij = rho_ij + 1, rho computed over the batch with epsilon in the denominator.
SimilarityMatrix similarity_matrix(const ResponseMatrix& responses,
                                   double epsilon = kSimilarityEpsilon);

/// Row-major CSV, 17 significant digits, no header.
std::string similarity_csv(const ad::Tensor& s);

}  // namespace ldcbm
