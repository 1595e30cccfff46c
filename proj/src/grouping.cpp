#include "ldcbm/grouping.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "ldcbm/autodiff/ops.hpp"
#include "ldcbm/error.hpp"

namespace ldcbm {

void GroupAssignment::validate() const {
  if (k == 0) throw Error("group assignment needs k >= 1");
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < group_of.size(); ++i) {
    if (group_of[i] >= k) {
      throw Error("filter " + std::to_string(i) + " has group id " + std::to_string(group_of[i]) +
                  " outside [0, " + std::to_string(k) + ")");
    }
    ++counts[group_of[i]];
  }
  for (std::size_t g = 0; g < k; ++g) {
    if (counts[g] == 0) throw Error("group " + std::to_string(g) + " is empty");
  }
}

std::vector<std::size_t> GroupAssignment::members(std::size_t group) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < group_of.size(); ++i) {
    if (group_of[i] == group) out.push_back(i);
  }
  return out;
}

std::vector<std::vector<std::size_t>> GroupAssignment::groups() const {
  std::vector<std::vector<std::size_t>> out(k);
  for (std::size_t i = 0; i < group_of.size(); ++i) out[group_of[i]].push_back(i);
  return out;
}

GroupAssignment single_group(std::size_t filters) {
  return GroupAssignment{std::vector<std::size_t>(filters, 0), 1};
}

GroupAssignment contiguous_groups(std::size_t filters, std::size_t k) {
  if (k == 0 || k > filters) {
    throw Error("cannot split " + std::to_string(filters) + " filters into " + std::to_string(k) +
                " groups");
  }
  GroupAssignment a{std::vector<std::size_t>(filters), k};
  for (std::size_t j = 0; j < filters; ++j) a.group_of[j] = j * k / filters;
  return a;
}

GroupAssignment canonical_labels(const GroupAssignment& a) {
  constexpr auto unset = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> remap(a.k, unset);
  std::size_t next = 0;
  GroupAssignment out{std::vector<std::size_t>(a.group_of.size()), a.k};
  for (std::size_t i = 0; i < a.group_of.size(); ++i) {
    auto& id = remap[a.group_of[i]];
    if (id == unset) id = next++;
    out.group_of[i] = id;
  }
  return out;
}

bool same_partition(const GroupAssignment& a, const GroupAssignment& b) {
  return a.group_of.size() == b.group_of.size() &&
         canonical_labels(a).group_of == canonical_labels(b).group_of;
}

GroupAssignment align_labels(const GroupAssignment& previous, const GroupAssignment& next) {
  if (previous.k != next.k || previous.filters() != next.filters()) {
    throw Error("align_labels: assignments differ in K or filter count");
  }
  const std::size_t k = next.k;
  std::vector<std::vector<std::size_t>> overlap(k, std::vector<std::size_t>(k, 0));
  for (std::size_t f = 0; f < next.filters(); ++f) ++overlap[next.group_of[f]][previous.group_of[f]];

  std::vector<std::size_t> rename(k, k);
  std::vector<bool> taken(k, false);
  for (std::size_t round = 0; round < k; ++round) {
    std::size_t best_new = k, best_old = k, best = 0;
    for (std::size_t g = 0; g < k; ++g) {
      if (rename[g] != k) continue;
      for (std::size_t o = 0; o < k; ++o) {
        if (taken[o]) continue;
        if (best_new == k || overlap[g][o] > best) {
          best_new = g;
          best_old = o;
          best = overlap[g][o];
        }
      }
    }
    rename[best_new] = best_old;
    taken[best_old] = true;
  }
  GroupAssignment out{next.group_of, k};
  for (auto& g : out.group_of) g = rename[g];
  return out;
}

GroupMasks build_masks(const GroupAssignment& assignment) {
  const std::size_t c = assignment.filters();
  GroupMasks m{ad::Tensor(ad::Shape{c, c}), ad::Tensor(ad::Shape{c, c})};
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const bool same = assignment.group_of[i] == assignment.group_of[j];
      m.intra.at(i, j) = same ? 1.0 : 0.0;
      m.inter.at(i, j) = same ? 0.0 : 1.0;
    }
  return m;
}

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double squared_distance(const RowMatrix& points, std::size_t row, const RowMatrix& centroids,
                        std::size_t centroid) {
  double acc = 0.0;
  for (Eigen::Index d = 0; d < points.cols(); ++d) {
    const double diff = points(static_cast<Eigen::Index>(row), d) -
                        centroids(static_cast<Eigen::Index>(centroid), d);
    acc += diff * diff;
  }
  return acc;
}

struct KMeansResult {
  std::vector<std::size_t> labels;
  double inertia = 0.0;
};

// Lowest-index centroid wins ties.
std::size_t nearest(const RowMatrix& points, std::size_t row, const RowMatrix& centroids,
                    double* best_distance) {
  std::size_t best = 0;
  double best_d = squared_distance(points, row, centroids, 0);
  for (std::size_t c = 1; c < static_cast<std::size_t>(centroids.rows()); ++c) {
    const double d = squared_distance(points, row, centroids, c);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (best_distance != nullptr) *best_distance = best_d;
  return best;
}

// Moves the point farthest from its centroid (inside the largest cluster) into
// each empty cluster until none is empty.
void repair_empty_clusters(const RowMatrix& points, const RowMatrix& centroids,
                           std::vector<std::size_t>& labels, std::size_t k) {
  const std::size_t n = labels.size();
  for (;;) {
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t l : labels) ++counts[l];
    const auto empty = std::find(counts.begin(), counts.end(), 0u);
    if (empty == counts.end()) return;
    const std::size_t largest = static_cast<std::size_t>(
        std::max_element(counts.begin(), counts.end()) - counts.begin());
    std::size_t far = n;
    double far_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] != largest) continue;
      const double d = squared_distance(points, i, centroids, largest);
      if (d > far_d) {
        far_d = d;
        far = i;
      }
    }
    labels[far] = static_cast<std::size_t>(empty - counts.begin());
  }
}

KMeansResult kmeans_once(const RowMatrix& points, std::size_t k, std::mt19937_64& rng,
                         std::size_t max_iterations) {
  const std::size_t n = static_cast<std::size_t>(points.rows());
  RowMatrix centroids(static_cast<Eigen::Index>(k), points.cols());

  // k-means++ seeding.
  std::uniform_int_distribution<std::size_t> first(0, n - 1);
  centroids.row(0) = points.row(static_cast<Eigen::Index>(first(rng)));
  std::vector<double> d2(n);
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < c; ++j) best = std::min(best, squared_distance(points, i, centroids, j));
      d2[i] = best;
      total += best;
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      for (pick = 0; pick + 1 < n; ++pick) {
        target -= d2[pick];
        if (target < 0.0) break;
      }
    } else {
      pick = first(rng);
    }
    centroids.row(static_cast<Eigen::Index>(c)) = points.row(static_cast<Eigen::Index>(pick));
  }

  std::vector<std::size_t> labels(n, 0);
  for (std::size_t iter = 0; iter < max_iterations; ++iter) {
    std::vector<std::size_t> next(n);
    for (std::size_t i = 0; i < n; ++i) next[i] = nearest(points, i, centroids, nullptr);
    repair_empty_clusters(points, centroids, next, k);
    const bool changed = iter == 0 || next != labels;
    labels = std::move(next);

    centroids.setZero();
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      centroids.row(static_cast<Eigen::Index>(labels[i])) += points.row(static_cast<Eigen::Index>(i));
      ++counts[labels[i]];
    }
    for (std::size_t c = 0; c < k; ++c)
      centroids.row(static_cast<Eigen::Index>(c)) /= static_cast<double>(counts[c]);
    if (!changed) break;
  }

  KMeansResult result{labels, 0.0};
  for (std::size_t i = 0; i < n; ++i) result.inertia += squared_distance(points, i, centroids, labels[i]);
  return result;
}

}  // namespace

GroupAssignment spectral_cluster(const ad::Tensor& similarity, std::size_t k, std::uint64_t seed,
                                 const SpectralOptions& options) {
  if (similarity.rank() != 2 || similarity.dim(0) != similarity.dim(1)) {
    throw ShapeError("spectral_cluster: similarity must be square, got " +
                     ad::shape_string(similarity.shape()));
  }
  const std::size_t c = similarity.dim(0);
  if (k == 0 || k > c) {
    throw ClusteringError("spectral_cluster: K = " + std::to_string(k) + " must lie in [1, " +
                          std::to_string(c) + "]");
  }
  if (k == 1) return single_group(c);
  if (k == c) {
    GroupAssignment singletons{std::vector<std::size_t>(c), k};
    for (std::size_t i = 0; i < c; ++i) singletons.group_of[i] = i;
    return singletons;
  }

  const auto ci = static_cast<Eigen::Index>(c);
  Eigen::MatrixXd w(ci, ci);
  for (Eigen::Index i = 0; i < ci; ++i)
    for (Eigen::Index j = 0; j < ci; ++j)
      w(i, j) = similarity.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
  if (w.minCoeff() < 0.0) throw ClusteringError("spectral_cluster: similarities must be non-negative");

  Eigen::VectorXd inv_sqrt_degree(ci);
  for (Eigen::Index i = 0; i < ci; ++i) {
    const double d = w.row(i).sum();
    inv_sqrt_degree(i) = d > 1e-12 ? 1.0 / std::sqrt(d) : 0.0;
  }
  Eigen::MatrixXd laplacian = -(inv_sqrt_degree.asDiagonal() * w * inv_sqrt_degree.asDiagonal());
  laplacian.diagonal().array() += 1.0;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(laplacian);
  if (solver.info() != Eigen::Success) {
    throw ClusteringError("spectral_cluster: eigen-solver did not converge (Eigen info " +
                          std::to_string(static_cast<int>(solver.info())) + ", " +
                          std::to_string(c) + "x" + std::to_string(c) +
                          " Laplacian, iteration cap " + std::to_string(30 * c) + " sweeps)");
  }

  // Eigenvalues come sorted ascending.
  RowMatrix embedding = solver.eigenvectors().leftCols(static_cast<Eigen::Index>(k));
  for (Eigen::Index i = 0; i < ci; ++i) {
    const double norm = embedding.row(i).norm();
    if (norm > 0.0) embedding.row(i) /= norm;
  }

  std::vector<std::size_t> best;
  double best_inertia = std::numeric_limits<double>::infinity();
  for (std::size_t restart = 0; restart < options.kmeans_restarts; ++restart) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(restart)};
    std::mt19937_64 rng(seq);
    auto run = kmeans_once(embedding, k, rng, options.kmeans_max_iterations);
    if (run.inertia < best_inertia) {
      best_inertia = run.inertia;
      best = std::move(run.labels);
    }
  }
  GroupAssignment result = canonical_labels(GroupAssignment{best, k});
  result.validate();
  return result;
}

ad::Var grouping_loss(const SimilarityMatrix& similarity, const GroupAssignment& assignment,
                      double epsilon) {
  assignment.validate();
  const ad::Var& s = similarity.s;
  const std::size_t c = assignment.filters();
  if (s.shape() != ad::Shape{c, c}) {
    throw ShapeError("grouping_loss: similarity " + ad::shape_string(s.shape()) +
                     " does not match an assignment over " + std::to_string(c) + " filters");
  }
  ad::Tape& tape = *s.tape();
  const auto groups = assignment.groups();

  auto masked_mean = [&](const std::vector<std::size_t>& rows, bool same_group) {
    ad::Tensor mask(ad::Shape{c, c}, 0.0);
    std::size_t count = 0;
    const std::size_t g = assignment.group_of[rows.front()];
    for (std::size_t i : rows)
      for (std::size_t j = 0; j < c; ++j) {
        if ((assignment.group_of[j] == g) == same_group) {
          mask.at(i, j) = 1.0;
          ++count;
        }
      }
    return ad::scale(ad::sum(ad::mul(s, tape.constant(std::move(mask)))),
                     1.0 / static_cast<double>(count));
  };

  if (assignment.k == 1) return ad::scale(masked_mean(groups[0], true), -1.0);

  ad::Var total;
  for (const auto& members : groups) {
    const ad::Var intra = masked_mean(members, true);
    const ad::Var inter = masked_mean(members, false);
    const ad::Var ratio = ad::div(intra, ad::add_scalar(inter, epsilon));
    total = total.valid() ? ad::add(total, ratio) : ratio;
  }
  return ad::scale(total, -1.0);
}

GroupSeparation group_separation(const ad::Tensor& similarity, const GroupAssignment& assignment) {
  const std::size_t c = assignment.filters();
  double intra = 0.0, inter = 0.0;
  std::size_t n_intra = 0, n_inter = 0;
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      if (i == j) continue;
      if (assignment.group_of[i] == assignment.group_of[j]) {
        intra += similarity.at(i, j);
        ++n_intra;
      } else {
        inter += similarity.at(i, j);
        ++n_inter;
      }
    }
  return GroupSeparation{n_intra ? intra / static_cast<double>(n_intra) : 0.0,
                         n_inter ? inter / static_cast<double>(n_inter) : 0.0};
}

}  // namespace ldcbm
