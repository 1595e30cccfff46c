#include "ldcbm/filter_stats.hpp"

#include <cmath>

#include "ldcbm/autodiff/ops.hpp"
#include "ldcbm/error.hpp"
#include "ldcbm/io_util.hpp"

namespace ldcbm {

ResponseMatrix response_matrix(const ad::Var& values) {
  const auto& shape = values.shape();
  if (shape.size() != 2) {
    throw ShapeError("response matrix must be N x C, got " + ad::shape_string(shape));
  }
  const std::size_t n = shape[0], c = shape[1];
  if (n < 2) {
    throw ShapeError("filter responses need a batch of at least 2 samples for Pearson "
                     "statistics, got " + std::to_string(n));
  }
  const ad::Tensor& v = values.value();
  ResponseMatrix out{values, std::vector<double>(c), std::vector<double>(c)};
  for (std::size_t j = 0; j < c; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += v.at(i, j);
    const double mu = acc / static_cast<double>(n);
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) sq += (v.at(i, j) - mu) * (v.at(i, j) - mu);
    out.batch_means[j] = mu;
    out.batch_stddevs[j] = std::sqrt(sq / static_cast<double>(n));
  }
  return out;
}

ResponseMatrix global_average_response(const FeatureMapBatch& features) {
  const auto& shape = features.activations.shape();
  if (shape.size() != 4) {
    throw ShapeError("feature maps must be N x H x W x C, got " + ad::shape_string(shape));
  }
  if (shape[0] < 2) {
    throw ShapeError("filter responses need a batch of at least 2 samples for Pearson "
                     "statistics, got " + std::to_string(shape[0]));
  }
  return response_matrix(ad::global_avg_pool(features.activations));
}

SimilarityMatrix similarity_matrix(const ResponseMatrix& responses, double epsilon) {
  return SimilarityMatrix{ad::pearson_similarity(responses.values, epsilon), epsilon};
}

std::string similarity_csv(const ad::Tensor& s) {
  std::string out;
  const std::size_t rows = s.dim(0), cols = s.dim(1);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      if (j > 0) out += ',';
      out += io::format_double(s.at(i, j));
    }
    out += '\n';
  }
  return out;
}

}  // namespace ldcbm
