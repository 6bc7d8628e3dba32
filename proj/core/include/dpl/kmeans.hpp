#pragma once

#include <cstdint>
#include <vector>

#include "dpl/common.hpp"

namespace dpl {

struct KMeansOptions {
  int restarts = 10;
  int max_iterations = 100;
  // Stop once the relative inertia decrease falls below this.
  double tolerance = 1e-6;
  std::uint64_t seed = 0;
};

struct KMeansResult {
  Matrix centroids;
  std::vector<int> assignments;
  double inertia = 0.0;
  int iterations = 0;
  // Inertia after every assignment step; non-increasing.
  std::vector<double> inertia_trace;
};

Matrix kmeans_plus_plus_init(const Matrix& points, int k, Rng& rng);

// Lloyd iterations from the given centroids. Empty clusters are re-seeded with
// the points farthest from their current centroid.
KMeansResult lloyd(const Matrix& points, Matrix centroids, int max_iterations, double tolerance);

// Best of options.restarts k-means++ initialized runs, by inertia.
KMeansResult kmeans(const Matrix& points, int k, const KMeansOptions& options = {});

}  // namespace dpl
