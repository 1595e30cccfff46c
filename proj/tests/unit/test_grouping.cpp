#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "ldcbm/autodiff/ops.hpp"
#include "ldcbm/error.hpp"
#include "ldcbm/grouping.hpp"
#include "partition_oracle.hpp"
#include "test_support.hpp"

using namespace ldcbm;
using namespace ldcbm::ad;

namespace {

double loss_value(const Tensor& s, const GroupAssignment& a, double eps = kGroupingEpsilon) {
  Tape tape;
  return grouping_loss(SimilarityMatrix{tape.constant(s), kSimilarityEpsilon}, a, eps).value().item();
}

Tensor loss_gradient(const Tensor& s, const GroupAssignment& a) {
  Tape tape;
  const Var sv = tape.variable(s);
  return tape.backward(grouping_loss(SimilarityMatrix{sv, kSimilarityEpsilon}, a)).of(sv);
}

}  // namespace

TEST_CASE("assignment validation and helpers") {
  CHECK_NOTHROW(GroupAssignment({0, 1, 0}, 2).validate());
  CHECK_THROWS_AS(GroupAssignment({0, 0, 0}, 2).validate(), Error);
  CHECK_THROWS_AS(GroupAssignment({0, 2, 1}, 2).validate(), Error);
  CHECK(contiguous_groups(8, 3).group_of == std::vector<std::size_t>{0, 0, 0, 1, 1, 1, 2, 2});
  CHECK(canonical_labels(GroupAssignment{{2, 0, 2, 1}, 3}).group_of == std::vector<std::size_t>{0, 1, 0, 2});
  CHECK(same_partition(GroupAssignment{{1, 1, 0}, 2}, GroupAssignment{{0, 0, 1}, 2}));
  CHECK_FALSE(same_partition(GroupAssignment{{1, 0, 0}, 2}, GroupAssignment{{0, 0, 1}, 2}));
  CHECK(GroupAssignment({1, 0, 1, 1}, 2).members(1) == std::vector<std::size_t>{0, 2, 3});
}

TEST_CASE("label alignment keeps ids of overlapping groups") {
  const GroupAssignment prev{{0, 0, 0, 1, 1, 2, 2}, 3};
  const GroupAssignment next{{2, 2, 1, 0, 0, 1, 1}, 3};
  const GroupAssignment aligned = align_labels(prev, next);
  CHECK(same_partition(aligned, next));
  CHECK(aligned.group_of == std::vector<std::size_t>{0, 0, 2, 1, 1, 2, 2});
}

TEST_CASE("mask examples") {
  const GroupMasks m = build_masks(GroupAssignment{{0, 0, 1}, 2});
  const double intra[] = {1, 1, 0, 1, 1, 0, 0, 0, 1};
  for (std::size_t i = 0; i < 9; ++i) {
    CHECK(m.intra[i] == intra[i]);
    CHECK(m.inter[i] == 1.0 - intra[i]);
  }
  const GroupMasks one = build_masks(single_group(5));
  for (double v : one.inter.values()) CHECK(v == 0.0);
  std::mt19937_64 rng(4);
  for (int t = 0; t < 20; ++t) {
    std::vector<std::size_t> g(9);
    for (std::size_t i = 0; i < 9; ++i) g[i] = i < 3 ? i : rng() % 3;
    const GroupMasks mm = build_masks(GroupAssignment{g, 3});
    for (std::size_t i = 0; i < mm.intra.size(); ++i) CHECK(mm.intra[i] + mm.inter[i] == 1.0);
  }
}

TEST_CASE("grouping loss examples") {
  SUBCASE("intra 2, inter 0.5, no stabiliser gives -8") {
    Tensor s({4, 4}, 0.5);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        if (i / 2 == j / 2) s.at(i, j) = 2.0;
    CHECK(std::abs(loss_value(s, GroupAssignment{{0, 0, 1, 1}, 2}, 0.0) - (-8.0)) <= 1e-12);
  }
  SUBCASE("uniform similarity gives -K") {
    const Tensor s({6, 6}, 1.3);
    CHECK(std::abs(loss_value(s, GroupAssignment{{0, 1, 2, 0, 1, 2}, 3}, 0.0) - (-3.0)) <= 1e-12);
  }
  SUBCASE("single group uses the intra mean alone") {
    std::mt19937_64 rng(2);
    const Tensor s = testsupport::random_tensor({5, 5}, rng, 0.0, 2.0);
    double mean = 0;
    for (double v : s.values()) mean += v;
    CHECK(std::abs(loss_value(s, single_group(5)) - (-mean / 25.0)) <= 1e-12);
  }
  SUBCASE("matches the direct definition") {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 20; ++t) {
      const auto inst = testsupport::noisy_blocks(rng, 7, 3, 0.5);
      const GroupAssignment a{inst.blocks, 3};
      CHECK(std::abs(loss_value(inst.similarity, a) - testsupport::grouping_objective(inst.similarity, inst.blocks, 3)) <= 1e-12);
    }
  }
}

TEST_CASE("grouping loss gradient") {
  std::mt19937_64 rng(9);
  const Tensor s = testsupport::random_tensor({6, 6}, rng, 0.2, 1.8);
  const GroupAssignment a{{0, 1, 0, 2, 1, 2}, 3};
  const auto r = testsupport::gradient_check({s}, [&](Tape&, const std::vector<Var>& v) {
    return grouping_loss(SimilarityMatrix{v[0], kSimilarityEpsilon}, a);
  });
  CHECK(r.max_relative_error < 1e-4);

  const Tensor g = loss_gradient(s, a);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) {
      if (a.group_of[i] == a.group_of[j]) {
        CHECK(g.at(i, j) < 0.0);
      } else {
        CHECK(g.at(i, j) > 0.0);
      }
    }
}

TEST_CASE("grouping loss ignores group ids") {
  std::mt19937_64 rng(12);
  const Tensor s = testsupport::random_tensor({6, 6}, rng, 0.0, 2.0);
  const double a = loss_value(s, GroupAssignment{{0, 0, 1, 1, 2, 2}, 3});
  const double b = loss_value(s, GroupAssignment{{2, 2, 0, 0, 1, 1}, 3});
  CHECK(std::abs(a - b) <= 1e-12);
}

TEST_CASE("spectral clustering edge cases") {
  std::mt19937_64 rng(1);
  const Tensor s = testsupport::noisy_blocks(rng, 6, 2, 0.1).similarity;
  CHECK(spectral_cluster(s, 1, 0).group_of == std::vector<std::size_t>(6, 0));
  CHECK(spectral_cluster(s, 6, 0).group_of == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});
  CHECK_THROWS_AS(spectral_cluster(s, 7, 0), ClusteringError);
  CHECK_THROWS_AS(spectral_cluster(s, 0, 0), ClusteringError);
}

TEST_CASE("spectral clustering recovers noiseless blocks") {
  Tensor s({6, 6}, 0.0);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j)
      if (i / 3 == j / 3) s.at(i, j) = 2.0;
  CHECK(spectral_cluster(s, 2, 5).group_of == std::vector<std::size_t>{0, 0, 0, 1, 1, 1});
}

TEST_CASE("spectral clustering agrees with the brute-force minimizer") {
  std::mt19937_64 rng(31);
  int agree = 0;
  for (int t = 0; t < 40; ++t) {
    const std::size_t n = 5 + rng() % 5;
    const std::size_t k = 2 + rng() % 2;
    const auto inst = testsupport::noisy_blocks(rng, n, k, 0.3);
    const auto found = spectral_cluster(inst.similarity, k, static_cast<std::uint64_t>(t));
    const auto best = testsupport::brute_force_minimizer(inst.similarity, k);
    agree += same_partition(found, GroupAssignment{best, k}) ? 1 : 0;
  }
  CHECK(agree >= 38);
}

TEST_CASE("spectral clustering is permutation equivariant on block inputs") {
  std::mt19937_64 rng(44);
  for (int t = 0; t < 20; ++t) {
    const auto inst = testsupport::noisy_blocks(rng, 9, 3, 0.0);
    std::vector<std::size_t> perm(9);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = 9; i > 1; --i) std::swap(perm[i - 1], perm[rng() % i]);
    Tensor permuted({9, 9});
    for (std::size_t i = 0; i < 9; ++i)
      for (std::size_t j = 0; j < 9; ++j) permuted.at(i, j) = inst.similarity.at(perm[i], perm[j]);
    const auto a = spectral_cluster(inst.similarity, 3, 1);
    const auto b = spectral_cluster(permuted, 3, 1);
    GroupAssignment mapped{std::vector<std::size_t>(9), 3};
    for (std::size_t i = 0; i < 9; ++i) mapped.group_of[i] = a.group_of[perm[i]];
    CHECK(same_partition(mapped, b));
  }
}

TEST_CASE("spectral clustering is deterministic for a seed") {
  std::mt19937_64 rng(6);
  const auto inst = testsupport::noisy_blocks(rng, 10, 3, 0.6);
  CHECK(spectral_cluster(inst.similarity, 3, 17) == spectral_cluster(inst.similarity, 3, 17));
}

TEST_CASE("group separation excludes the diagonal") {
  Tensor s({4, 4}, 0.5);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      if (i / 2 == j / 2) s.at(i, j) = i == j ? 2.0 : 1.5;
  const GroupSeparation sep = group_separation(s, GroupAssignment{{0, 0, 1, 1}, 2});
  CHECK(sep.intra_mean == 1.5);
  CHECK(sep.inter_mean == 0.5);
  CHECK(sep.gap() == 1.0);
}
