#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ldcbm/autodiff/tape.hpp"

// Differentiable primitives. Every function checks operand shapes and throws
// ShapeError naming the primitive; log/div/sqrt refuse inputs outside their
// domain with NumericError. Reductions accumulate strictly left to right.
namespace ldcbm::ad {

// Elementwise. `b` must have the shape of `a` or hold a single element.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
Var sqrt(const Var& a);
Var log(const Var& a);
Var sigmoid(const Var& a);
Var relu(const Var& a);
/// Gradient passes only where lo < a < hi.
Var clamp(const Var& a, double lo, double hi);

Var sum(const Var& a);
Var mean(const Var& a);

// Column statistics of an N x C matrix; results have shape [C].
Var col_mean(const Var& x);
/// Biased (1/N) variance.
Var col_variance(const Var& x);

/// Repeat a length-C vector into a rows x C matrix.
Var broadcast_rows(const Var& v, std::size_t rows);
Var reshape(const Var& a, Shape shape);
Var transpose(const Var& a);
Var matmul(const Var& a, const Var& b);
Var outer(const Var& a, const Var& b);

/// x: N x in, weight: out x in, bias: [out]  ->  N x out.
Var linear(const Var& x, const Var& weight, const Var& bias);

/// One linear unit per output column, each reading its own subset of input
/// columns: out[n][i] = sum_t x[n][columns[i][t]] * weights[i][t] + bias[i].
Var grouped_linear(const Var& x, std::span<const Var> weights,
                   const std::vector<std::vector<std::size_t>>& columns, const Var& bias);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Direct convolution. x: N x H x W x Cin, weight: KH x KW x Cin x Cout, bias: [Cout].
Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dOptions options);

/// N x H x W x C  ->  N x C spatial mean.
Var global_avg_pool(const Var& x);

Var select_columns(const Var& x, std::span<const std::size_t> columns);

// Row-wise over an N x Y matrix.
Var softmax(const Var& x);
Var log_softmax(const Var& x);
/// out[n] = x[n][index[n]].
Var pick(const Var& x, std::span<const std::size_t> index);

/// Shifted Pearson similarity of the columns of an N x C matrix:
/// s[i][j] = cov(i, j) / (sigma_i sigma_j + epsilon) + 1 off the diagonal,
/// s[i][i] = 2 for columns with nonzero spread and 1 for constant columns.
Var pearson_similarity(const Var& x, double epsilon);

}  // namespace ldcbm::ad
