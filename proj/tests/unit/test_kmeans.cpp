#include <gtest/gtest.h>

#include "dpl/disambiguation.hpp"
#include "dpl/kmeans.hpp"
#include "support.hpp"

namespace dpl {
namespace {

using test::gaussian;

Matrix blobs(int per, int k, double spread, Rng& rng, std::vector<int>& truth) {
  Matrix x = gaussian(per * k, 4, rng, spread);
  truth.clear();
  for (int i = 0; i < per * k; ++i) {
    const int c = i % k;
    x(i, c % 4) += 8.0 * (1 + c / 4);
    truth.push_back(c);
  }
  return x;
}

TEST(KMeans, InertiaTraceNeverIncreases) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix x = gaussian(200, 3, rng);
    Rng init(static_cast<std::uint64_t>(trial));
    const auto r = lloyd(x, kmeans_plus_plus_init(x, 5, init), 100, 0.0);
    for (std::size_t i = 1; i < r.inertia_trace.size(); ++i) {
      EXPECT_LE(r.inertia_trace[i], r.inertia_trace[i - 1] + 1e-9);
    }
  }
}

TEST(KMeans, MoreRestartsNeverHurt) {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix x = gaussian(150, 2, rng);
    KMeansOptions one;
    one.restarts = 1;
    one.seed = static_cast<std::uint64_t>(trial);
    KMeansOptions ten = one;
    ten.restarts = 10;
    EXPECT_LE(kmeans(x, 6, ten).inertia, kmeans(x, 6, one).inertia + 1e-9);
  }
}

TEST(KMeans, SameSeedSameClusters) {
  Rng rng(3);
  const Matrix x = gaussian(100, 3, rng);
  KMeansOptions o;
  o.seed = 4;
  EXPECT_EQ(kmeans(x, 4, o).assignments, kmeans(x, 4, o).assignments);
}

TEST(KMeans, RecoversSeparatedBlobs) {
  Rng rng(4);
  std::vector<int> truth;
  const Matrix x = blobs(50, 6, 1.0, rng, truth);
  const auto r = kmeans(x, 6);
  EXPECT_GE(pseudo_label_accuracy(r.assignments, truth), 0.9);
}

TEST(KMeans, RejectsBadK) {
  const Matrix x = Matrix::Zero(3, 2);
  EXPECT_THROW(kmeans(x, 4), std::invalid_argument);
  EXPECT_THROW(kmeans(x, 0), std::invalid_argument);
}

TEST(KMeans, EmptyClustersAreReseeded) {
  Rng rng(5);
  const Matrix x = gaussian(30, 2, rng);
  // All centroids start on the same spot; every cluster still ends non-empty.
  const auto r = lloyd(x, Matrix::Zero(3, 2), 50, 0.0);
  std::vector<int> sizes(3, 0);
  for (int a : r.assignments) ++sizes[static_cast<std::size_t>(a)];
  for (int s : sizes) EXPECT_GT(s, 0);
}

}  // namespace
}  // namespace dpl
