#include <gtest/gtest.h>

#include "dpl/prototypes.hpp"
#include "support.hpp"

namespace dpl {
namespace {

using test::unit_rows;

TEST(PrototypeBank, RandomRowsAreUnitNorm) {
  const auto bank = PrototypeBank::init_random(8, 6, 16, 3);
  for (int c = 0; c < bank.n_classes(); ++c) EXPECT_NEAR(bank.rows().row(c).norm(), 1.0, 1e-9);
}

TEST(PrototypeBank, SameSeedSameBank) {
  EXPECT_EQ(PrototypeBank::init_random(4, 3, 8, 9).rows(), PrototypeBank::init_random(4, 3, 8, 9).rows());
  EXPECT_NE(PrototypeBank::init_random(4, 3, 8, 9).rows(), PrototypeBank::init_random(4, 3, 8, 10).rows());
}

TEST(PrototypeBank, RandomRowsAreNearlyOrthogonalOnAverage) {
  const auto bank = PrototypeBank::init_random(5000, 5000, 16, 1);
  const auto& mu = bank.rows();
  const double n = static_cast<double>(mu.rows());
  // Mean over ordered pairs i != j of mu_i . mu_j.
  const double mean_cos = (mu.colwise().sum().squaredNorm() - n) / (n * (n - 1.0));
  EXPECT_NEAR(mean_cos, 0.0, 0.02);
}

TEST(PrototypeBank, RejectsTinyDimension) {
  EXPECT_THROW(PrototypeBank::init_random(2, 2, 1, 0), std::invalid_argument);
}

TEST(EmaUpdate, HandArithmetic) {
  Matrix mu(2, 2);
  mu << 1, 0, 0, 1;
  PrototypeBank bank(mu, 1, 0.9);
  Eigen::RowVector2d z(0, 1);
  bank.ema_update(z, 0);
  EXPECT_NEAR(bank.rows()(0, 0), 0.9939, 5e-5);
  EXPECT_NEAR(bank.rows()(0, 1), 0.1104, 5e-5);
  EXPECT_EQ(bank.rows().row(1), Eigen::RowVector2d(0, 1));  // untouched
}

TEST(EmaUpdate, ZeroGammaCopiesEmbedding) {
  Rng rng(2);
  PrototypeBank bank(unit_rows(3, 5, rng), 1, 0.0);
  const Matrix z = unit_rows(1, 5, rng);
  bank.ema_update(z.row(0), 2);
  EXPECT_LT((bank.rows().row(2) - z.row(0)).norm(), 1e-12);
}

TEST(EmaUpdate, PrototypeIsFixedPoint) {
  Rng rng(3);
  PrototypeBank bank(unit_rows(3, 5, rng), 1, 0.9);
  const Eigen::RowVectorXd before = bank.row(1);
  bank.ema_update(before, 1);
  EXPECT_LT((bank.row(1) - before).norm(), 1e-12);
}

TEST(EmaUpdate, RejectsNonUnitEmbedding) {
  PrototypeBank bank(Matrix::Identity(2, 2), 1, 0.9);
  EXPECT_THROW(bank.ema_update(Eigen::RowVector2d(2, 0), 0), std::invalid_argument);
  EXPECT_THROW(bank.ema_update(Eigen::RowVector2d(1, 0), 2), std::out_of_range);
}

TEST(EmaUpdate, NormStaysUnitOverManyUpdates) {
  Rng rng(4);
  PrototypeBank bank(unit_rows(4, 6, rng), 2, 0.9);
  for (int step = 0; step < 10000; ++step) {
    const Matrix z = unit_rows(1, 6, rng);
    const int c = static_cast<int>(uniform01(rng) * 4);
    bank.ema_update(z.row(0), c);
    ASSERT_NEAR(bank.row(c).norm(), 1.0, 1e-9);
  }
}

TEST(Nearest, ExactPrototypeWins) {
  Rng rng(5);
  const PrototypeBank bank(unit_rows(7, 8, rng), 3, 0.9);
  for (int k = 0; k < 7; ++k) EXPECT_EQ(bank.nearest(bank.row(k), PrototypeScope::all), k);
}

TEST(Nearest, TiesGoToLowestIndex) {
  Matrix mu = Matrix::Zero(6, 2);
  for (int c = 0; c < 6; ++c) mu(c, 0) = -1.0;
  mu.row(3) << 0, 1;
  mu.row(5) << 0, 1;
  const PrototypeBank bank(mu, 2, 0.9);
  EXPECT_EQ(bank.nearest(Eigen::RowVector2d(0, 1), PrototypeScope::all), 3);
  EXPECT_EQ(bank.nearest(Eigen::RowVector2d(0, 1), PrototypeScope::ood_only), 3);
}

TEST(Nearest, MatchesExhaustiveScanAndIgnoresScale) {
  Rng rng(6);
  const PrototypeBank bank(unit_rows(10, 8, rng), 4, 0.9);
  for (int trial = 0; trial < 500; ++trial) {
    const Matrix z = unit_rows(1, 8, rng);
    int best_all = 0;
    int best_ood = 4;
    for (int c = 0; c < 10; ++c) {
      const double s = z.row(0).dot(bank.row(c));
      if (s > z.row(0).dot(bank.row(best_all))) best_all = c;
      if (c >= 4 && s > z.row(0).dot(bank.row(best_ood))) best_ood = c;
    }
    EXPECT_EQ(bank.nearest(z.row(0), PrototypeScope::all), best_all);
    EXPECT_EQ(bank.nearest(z.row(0), PrototypeScope::ood_only), best_ood);
    const Eigen::RowVectorXd scaled = (3.7 * z.row(0)).normalized();
    EXPECT_EQ(bank.nearest(scaled, PrototypeScope::ood_only), best_ood);
  }
}

}  // namespace
}  // namespace dpl
