#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "ldcbm/autodiff/tape.hpp"
#include "ldcbm/autodiff/tensor.hpp"

namespace testsupport {

namespace ad = ldcbm::ad;

inline ad::Tensor random_tensor(ad::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  ad::Tensor t(std::move(shape));
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

/// Builds a scalar from leaves already registered on the tape.
using ScalarFn = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

inline double evaluate(const std::vector<ad::Tensor>& inputs, const ScalarFn& f) {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.constant(t));
  return f(tape, leaves).value().item();
}

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t entries = 0;
};

/// Worst |analytic - central difference| / max(|analytic|, |numeric|, floor)
/// over every entry of every input.
inline GradCheckResult gradient_check(const std::vector<ad::Tensor>& inputs, const ScalarFn& f,
                                      double h = 1e-5, double floor = 1e-6) {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.variable(t));
  const ad::Gradients grads = tape.backward(f(tape, leaves));

  GradCheckResult result;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const ad::Tensor analytic = grads.of(leaves[k]);
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      auto plus = inputs;
      auto minus = inputs;
      plus[k][i] += h;
      minus[k][i] -= h;
      const double numeric = (evaluate(plus, f) - evaluate(minus, f)) / (2.0 * h);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      result.max_relative_error = std::max(result.max_relative_error, std::abs(analytic[i] - numeric) / denom);
      ++result.entries;
    }
  }
  return result;
}

}  // namespace testsupport
