#include "dpl/kmeans.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace dpl {

namespace {

// Squared distance from every point to every centroid (n x k).
Eigen::MatrixXd squared_distances(const Matrix& points, const Matrix& centroids) {
  Eigen::MatrixXd d(points.rows(), centroids.rows());
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
      d(i, c) = (points.row(i) - centroids.row(c)).squaredNorm();
    }
  }
  return d;
}

}  // namespace

Matrix kmeans_plus_plus_init(const Matrix& points, int k, Rng& rng) {
  const auto n = points.rows();
  if (k < 1 || k > n) throw std::invalid_argument("k must lie in [1, number of points]");
  Matrix centroids(k, points.cols());
  auto first = static_cast<Eigen::Index>(uniform01(rng) * static_cast<double>(n));
  centroids.row(0) = points.row(first);
  Vector closest(n);
  for (Eigen::Index i = 0; i < n; ++i) closest[i] = (points.row(i) - centroids.row(0)).squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = closest.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double target = uniform01(rng) * total;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        target -= closest[i];
        if (target < 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(uniform01(rng) * static_cast<double>(n));
    }
    centroids.row(c) = points.row(pick);
    for (Eigen::Index i = 0; i < n; ++i) {
      closest[i] = std::min(closest[i], (points.row(i) - centroids.row(c)).squaredNorm());
    }
  }
  return centroids;
}

KMeansResult lloyd(const Matrix& points, Matrix centroids, int max_iterations, double tolerance) {
  const auto n = points.rows();
  const auto k = centroids.rows();
  if (k < 1 || k > n) throw std::invalid_argument("k must lie in [1, number of points]");
  KMeansResult r;
  r.assignments.assign(static_cast<std::size_t>(n), -1);
  std::vector<double> point_cost(static_cast<std::size_t>(n), 0.0);
  for (int iter = 0; iter < std::max(max_iterations, 1); ++iter) {
    const auto dist = squared_distances(points, centroids);
    bool changed = false;
    double inertia = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      dist.row(i).minCoeff(&best);
      const auto ui = static_cast<std::size_t>(i);
      changed = changed || r.assignments[ui] != static_cast<int>(best);
      r.assignments[ui] = static_cast<int>(best);
      point_cost[ui] = dist(i, best);
      inertia += dist(i, best);
    }
    r.iterations = iter + 1;
    const bool first = r.inertia_trace.empty();
    const double previous = first ? 0.0 : r.inertia_trace.back();
    r.inertia_trace.push_back(inertia);
    r.inertia = inertia;
    if (!changed || (!first && previous - inertia <= tolerance * previous)) break;
    if (iter + 1 == max_iterations) break;

    Matrix sums = Matrix::Zero(k, points.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int c = r.assignments[static_cast<std::size_t>(i)];
      sums.row(c) += points.row(i);
      ++counts[static_cast<std::size_t>(c)];
    }
    std::vector<char> taken(static_cast<std::size_t>(n), 0);
    for (Eigen::Index c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        centroids.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
        continue;
      }
      Eigen::Index far = -1;
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        if (taken[ui]) continue;
        if (far < 0 || point_cost[ui] > point_cost[static_cast<std::size_t>(far)]) far = i;
      }
      taken[static_cast<std::size_t>(far)] = 1;
      point_cost[static_cast<std::size_t>(far)] = 0.0;
      centroids.row(c) = points.row(far);
    }
  }
  r.centroids = std::move(centroids);
  return r;
}

KMeansResult kmeans(const Matrix& points, int k, const KMeansOptions& options) {
  if (k < 1 || k > points.rows()) {
    throw std::invalid_argument("k = " + std::to_string(k) + " exceeds the " +
                                std::to_string(points.rows()) + " available points");
  }
  if (options.restarts < 1) throw std::invalid_argument("restarts must be positive");
  Rng rng(derive_seed(options.seed, 0x6EA5));
  KMeansResult best;
  bool have_best = false;
  for (int run = 0; run < options.restarts; ++run) {
    auto result = lloyd(points, kmeans_plus_plus_init(points, k, rng), options.max_iterations,
                        options.tolerance);
    if (!have_best || result.inertia < best.inertia) {
      best = std::move(result);
      have_best = true;
    }
  }
  return best;
}

}  // namespace dpl
