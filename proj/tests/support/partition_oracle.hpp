#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "ldcbm/autodiff/tensor.hpp"

namespace testsupport {

/// Grouping objective evaluated directly from its definition: minus the sum
/// over groups of (mean s over same-group ordered pairs, diagonal included)
/// divided by (mean s from the group to every other filter + eps).
inline double grouping_objective(const ldcbm::ad::Tensor& s, const std::vector<std::size_t>& group_of,
                                 std::size_t k, double eps = 1e-6) {
  const std::size_t n = group_of.size();
  double total = 0.0;
  for (std::size_t g = 0; g < k; ++g) {
    double in = 0.0, out = 0.0;
    std::size_t n_in = 0, n_out = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (group_of[i] != g) continue;
      for (std::size_t j = 0; j < n; ++j) {
        if (group_of[j] == g) {
          in += s.at(i, j);
          ++n_in;
        } else {
          out += s.at(i, j);
          ++n_out;
        }
      }
    }
    total += k == 1 ? in / n_in : (in / n_in) / (out / n_out + eps);
  }
  return -total;
}

/// Every partition of n items into exactly k non-empty groups, as restricted
/// growth strings (canonical labels).
inline void for_each_partition(std::size_t n, std::size_t k,
                               const std::function<void(const std::vector<std::size_t>&)>& visit) {
  std::vector<std::size_t> labels(n, 0);
  std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t i, std::size_t used) {
    if (n - i < k - used) return;
    if (i == n) {
      if (used == k) visit(labels);
      return;
    }
    for (std::size_t g = 0; g <= used && g < k; ++g) {
      labels[i] = g;
      rec(i + 1, g == used ? used + 1 : used);
    }
  };
  rec(0, 0);
}

inline std::vector<std::size_t> brute_force_minimizer(const ldcbm::ad::Tensor& s, std::size_t k) {
  std::vector<std::size_t> best;
  double best_value = std::numeric_limits<double>::infinity();
  for_each_partition(s.dim(0), k, [&](const std::vector<std::size_t>& labels) {
    const double v = grouping_objective(s, labels, k);
    if (v < best_value) {
      best_value = v;
      best = labels;
    }
  });
  return best;
}

struct BlockInstance {
  ldcbm::ad::Tensor similarity;
  std::vector<std::size_t> blocks;  // canonical block labels
  std::size_t k = 0;
};

/// Symmetric block similarity in [0, 2] with diagonal 2: within-block entries
/// near `within`, cross-block entries near `across`, uniform noise of +-noise.
inline BlockInstance noisy_blocks(std::mt19937_64& rng, std::size_t n, std::size_t k, double noise,
                                  double within = 1.8, double across = 0.3) {
  BlockInstance inst;
  inst.k = k;
  // Random block sizes (each >= 1) assigned to shuffled filter ids.
  std::vector<std::size_t> sizes(k, 1);
  for (std::size_t i = k; i < n; ++i) ++sizes[rng() % k];
  std::vector<std::size_t> raw;
  for (std::size_t g = 0; g < k; ++g) raw.insert(raw.end(), sizes[g], g);
  for (std::size_t i = n; i > 1; --i) std::swap(raw[i - 1], raw[rng() % i]);
  std::vector<std::size_t> rename(k, k);
  std::size_t next = 0;
  inst.blocks.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (rename[raw[i]] == k) rename[raw[i]] = next++;
    inst.blocks[i] = rename[raw[i]];
  }
  std::uniform_real_distribution<double> u(-noise, noise);
  inst.similarity = ldcbm::ad::Tensor({n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    inst.similarity.at(i, i) = 2.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double base = inst.blocks[i] == inst.blocks[j] ? within : across;
      const double v = std::min(2.0, std::max(0.0, base + u(rng)));
      inst.similarity.at(i, j) = v;
      inst.similarity.at(j, i) = v;
    }
  }
  return inst;
}

}  // namespace testsupport
