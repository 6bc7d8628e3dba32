#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "dpl/losses.hpp"
#include "support.hpp"

namespace dpl {
namespace {

using test::gaussian;
using test::numeric_gradient;
using test::relative_error;
using test::unit_rows;

constexpr int kN = 3;
constexpr int kM = 2;
constexpr int kB = 8;
constexpr int kE = 8;

std::vector<SampleMeta> mixed_meta(Rng& rng) {
  std::vector<SampleMeta> meta;
  for (int i = 0; i < kB; ++i) {
    if (i % 2 == 0) {
      meta.push_back({true, static_cast<int>(uniform01(rng) * kN)});
    } else {
      meta.push_back({false, std::nullopt});
    }
  }
  return meta;
}

Matrix random_distributions(int rows, int cols, Rng& rng) {
  Matrix p = gaussian(rows, cols, rng).array().exp().matrix();
  for (int i = 0; i < rows; ++i) p.row(i) /= p.row(i).sum();
  return p;
}

AlignmentMatrix random_alignment(Rng& rng) {
  const auto meta = mixed_meta(rng);
  const auto n_ood = std::count_if(meta.begin(), meta.end(), [](const SampleMeta& m) { return !m.is_ind; });
  return build_alignment(meta, random_distributions(static_cast<int>(n_ood), kM, rng), kN, kM);
}

TEST(Alignment, IndRowIsOneHotOnLabel) {
  std::vector<SampleMeta> meta{{true, 2}};
  const auto a = build_alignment(meta, Matrix(0, 2), 5, 2);
  Eigen::RowVectorXd expect = Eigen::RowVectorXd::Zero(7);
  expect[2] = 1.0;
  EXPECT_EQ(a.q.row(0), expect);
  EXPECT_EQ(a.sources[0], AlignmentSource::ind_ground_truth);
}

TEST(Alignment, OodRowCarriesCalibratedTail) {
  std::vector<SampleMeta> meta{{false, std::nullopt}};
  Matrix cal(1, 2);
  cal << 0.7, 0.3;
  const auto a = build_alignment(meta, cal, 5, 2);
  Eigen::RowVectorXd expect = Eigen::RowVectorXd::Zero(7);
  expect[5] = 0.7;
  expect[6] = 0.3;
  EXPECT_EQ(a.q.row(0), expect);
  EXPECT_EQ(a.sources[0], AlignmentSource::ood_calibrated);
}

TEST(Alignment, SourcesPartitionBatchByDomain) {
  Rng rng(4);
  const auto meta = mixed_meta(rng);
  const auto a = build_alignment(meta, random_distributions(kB / 2, kM, rng), kN, kM);
  for (std::size_t i = 0; i < meta.size(); ++i) {
    EXPECT_EQ(a.sources[i] == AlignmentSource::ind_ground_truth, meta[i].is_ind);
  }
}

TEST(Alignment, RejectsMissingLabelAndBadRows) {
  std::vector<SampleMeta> unlabeled{{true, std::nullopt}};
  EXPECT_THROW(build_alignment(unlabeled, Matrix(0, 2), 3, 2), std::invalid_argument);
  std::vector<SampleMeta> ood{{false, std::nullopt}};
  Matrix bad(1, 2);
  bad << 0.7, 0.2;
  EXPECT_THROW(build_alignment(ood, bad, 3, 2), std::invalid_argument);
}

TEST(PclLoss, HandEvaluatedOneHotCase) {
  // z equals prototype 0, the other two prototypes are orthogonal to it.
  Matrix mu = Matrix::Identity(3, 3);
  PrototypeBank bank(mu, 1, 0.9);
  Matrix z(1, 3);
  z << 1, 0, 0;
  AlignmentMatrix a;
  a.q = Matrix::Zero(1, 3);
  a.q(0, 0) = 1.0;
  const auto r = pcl_loss(z, a, bank, 0.5);
  EXPECT_NEAR(r.value, -std::log(std::exp(2.0) / (std::exp(2.0) + 2.0)), 1e-12);
  EXPECT_NEAR(r.value, 0.2395, 5e-5);
}

TEST(PclLoss, UniformTargetsWithEqualSimilaritiesGiveZeroGradient) {
  Matrix mu = Matrix::Identity(4, 4);
  PrototypeBank bank(mu, 2, 0.9);
  Matrix z = Matrix::Constant(1, 4, 0.5);  // equal dot product with every prototype
  AlignmentMatrix a;
  a.q = Matrix::Constant(1, 4, 0.25);
  const auto r = pcl_loss(z, a, bank, 0.5);
  EXPECT_LT(r.grad.cwiseAbs().maxCoeff(), 1e-14);
}

TEST(PclLoss, GradientMatchesFiniteDifferences) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const PrototypeBank bank(unit_rows(kN + kM, kE, rng), kN, 0.9);
    const auto a = random_alignment(rng);
    const Matrix z = unit_rows(kB, kE, rng);
    const auto r = pcl_loss(z, a, bank, 0.5);
    const auto fd = numeric_gradient([&](const Matrix& x) { return pcl_loss(x, a, bank, 0.5).value; }, z);
    EXPECT_LT(relative_error(r.grad, fd), 1e-4) << "trial " << trial;
  }
}

TEST(PclLoss, DecreasesUnderSmallGradientStep) {
  Rng rng(12);
  const PrototypeBank bank(unit_rows(kN + kM, kE, rng), kN, 0.9);
  const auto a = random_alignment(rng);
  Matrix z = unit_rows(kB, kE, rng);
  double before = pcl_loss(z, a, bank, 0.5).value;
  for (int step = 0; step < 10; ++step) {
    const auto r = pcl_loss(z, a, bank, 0.5);
    z -= 1e-3 * r.grad;
    const double after = pcl_loss(z, a, bank, 0.5).value;
    EXPECT_LT(after, before);
    before = after;
  }
}

// With unit-norm z and prototypes, an isotropic Gaussian likelihood with
// variance sigma^2 = tau has the same posterior as softmax(z . mu / tau).
double gaussian_log_likelihood_bound(const Matrix& z, const Matrix& q, const Matrix& mu, double sigma2) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Eigen::VectorXd log_k(mu.rows());
    for (Eigen::Index j = 0; j < mu.rows(); ++j) {
      log_k[j] = -(z.row(i) - mu.row(j)).squaredNorm() / (2.0 * sigma2);
    }
    const double m = log_k.maxCoeff();
    const double lse = m + std::log((log_k.array() - m).exp().sum());
    for (Eigen::Index j = 0; j < mu.rows(); ++j) total += q(i, j) * (log_k[j] - lse);
  }
  return total;
}

TEST(PclLoss, NegativeEqualsGaussianPosteriorLogLikelihood) {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const double tau = 0.1 + uniform01(rng);
    const Matrix mu = unit_rows(kN + kM, kE, rng);
    const PrototypeBank bank(mu, kN, 0.9);
    const auto a = random_alignment(rng);
    const Matrix z = unit_rows(kB, kE, rng);
    const double pcl = pcl_loss(z, a, bank, tau).value;
    EXPECT_NEAR(-pcl, gaussian_log_likelihood_bound(z, a.q, mu, tau), 1e-9) << "trial " << trial;
  }
}

TEST(PrototypePosteriors, MatchClosedFormMixturePosterior) {
  // Components centred on the prototypes with variance tau; equal priors.
  Rng rng(14);
  const double tau = 0.5;
  const Matrix mu = unit_rows(5, kE, rng);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = static_cast<int>(uniform01(rng) * 5);
    Matrix z = mu.row(k) + std::sqrt(tau) * gaussian(1, kE, rng);
    Eigen::VectorXd dens(5);
    for (int j = 0; j < 5; ++j) dens[j] = std::exp(-(z.row(0) - mu.row(j)).squaredNorm() / (2.0 * tau));
    dens /= dens.sum();
    const Matrix p = prototype_posteriors(z, mu, tau);
    for (int j = 0; j < 5; ++j) EXPECT_NEAR(p(0, j), dens[j], 1e-6);
  }
}

TEST(InstanceLoss, TwoIdenticalPairsScoreZero) {
  Matrix z(2, 3);
  z << 1, 0, 0, 1, 0, 0;
  const auto r = instance_loss(z, z, 0.5);
  EXPECT_NEAR(r.value, 0.0, 1e-12);
}

TEST(InstanceLoss, InvariantUnderCommonRotation) {
  Rng rng(21);
  const Matrix z = unit_rows(kB, kE, rng);
  const Matrix za = unit_rows(kB, kE, rng);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(Eigen::MatrixXd(gaussian(kE, kE, rng)));
  const Matrix rot = Eigen::MatrixXd(qr.householderQ());
  EXPECT_NEAR(instance_loss(z, za, 0.5).value, instance_loss(z * rot, za * rot, 0.5).value, 1e-10);
}

TEST(InstanceLoss, GradientsMatchFiniteDifferences) {
  Rng rng(22);
  for (bool aug_negatives : {false, true}) {
    for (int trial = 0; trial < 20; ++trial) {
      const Matrix z = unit_rows(kB, kE, rng);
      const Matrix za = unit_rows(kB, kE, rng);
      const auto r = instance_loss(z, za, 0.5, aug_negatives);
      const auto fd_z = numeric_gradient(
          [&](const Matrix& x) { return instance_loss(x, za, 0.5, aug_negatives).value; }, z);
      const auto fd_za = numeric_gradient(
          [&](const Matrix& x) { return instance_loss(z, x, 0.5, aug_negatives).value; }, za);
      EXPECT_LT(relative_error(r.grad_z, fd_z), 1e-4);
      EXPECT_LT(relative_error(r.grad_z_aug, fd_za), 1e-4);
    }
  }
}

TEST(InstanceLoss, RejectsSingleSampleBatch) {
  Matrix z(1, 3);
  z << 1, 0, 0;
  EXPECT_THROW(instance_loss(z, z, 0.5), std::invalid_argument);
}

TEST(CeLoss, UniformLogitsGiveLogC) {
  const Matrix logits = Matrix::Zero(4, 7);
  std::vector<int> y{0, 3, 6, 2};
  EXPECT_NEAR(ce_loss(logits, y).value, std::log(7.0), 1e-12);
}

TEST(CeLoss, ConfidentCorrectLogitApproachesZero) {
  Matrix logits = Matrix::Zero(1, 3);
  logits(0, 1) = 50.0;
  std::vector<int> y{1};
  EXPECT_LT(ce_loss(logits, y).value, 1e-20);
}

TEST(CeLoss, GradientMatchesFiniteDifferences) {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix logits = gaussian(kB, kN + kM, rng, 2.0);
    std::vector<int> y;
    for (int i = 0; i < kB; ++i) y.push_back(static_cast<int>(uniform01(rng) * (kN + kM)));
    const auto r = ce_loss(logits, y);
    const auto fd = numeric_gradient([&](const Matrix& x) { return ce_loss(x, y).value; }, logits);
    EXPECT_LT(relative_error(r.grad, fd), 1e-4);
    const Matrix t = random_distributions(kB, kN + kM, rng);
    const auto s = soft_ce_loss(logits, t);
    const auto fd_soft = numeric_gradient([&](const Matrix& x) { return soft_ce_loss(x, t).value; }, logits);
    EXPECT_LT(relative_error(s.grad, fd_soft), 1e-4);
  }
}

TEST(CeLoss, RejectsLabelOutOfRange) {
  const Matrix logits = Matrix::Zero(1, 3);
  std::vector<int> y{3};
  EXPECT_THROW(ce_loss(logits, y), std::out_of_range);
}

TEST(SclLoss, TwoIdenticalSameLabelVectorsScoreZero) {
  Matrix z(2, 3);
  z << 0, 1, 0, 0, 1, 0;
  std::vector<int> y{4, 4};
  EXPECT_NEAR(scl_loss(z, y, 0.5).value, 0.0, 1e-12);
}

TEST(SclLoss, SingletonLabelsContributeNothing) {
  Rng rng(41);
  const Matrix z = unit_rows(5, kE, rng);
  std::vector<int> y{0, 1, 2, 3, 4};
  const auto r = scl_loss(z, y, 0.5);
  EXPECT_EQ(r.value, 0.0);
  EXPECT_EQ(r.grad.cwiseAbs().maxCoeff(), 0.0);
}

TEST(SclLoss, GradientMatchesFiniteDifferences) {
  Rng rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix z = unit_rows(kB, kE, rng);
    std::vector<int> y;
    for (int i = 0; i < kB; ++i) y.push_back(static_cast<int>(uniform01(rng) * 3));
    const auto r = scl_loss(z, y, 0.5);
    const auto fd = numeric_gradient([&](const Matrix& x) { return scl_loss(x, y, 0.5).value; }, z);
    EXPECT_LT(relative_error(r.grad, fd), 1e-4);
  }
}

TEST(Losses, PermutingTheBatchPermutesGradients) {
  Rng rng(51);
  const PrototypeBank bank(unit_rows(kN + kM, kE, rng), kN, 0.9);
  const auto a = random_alignment(rng);
  const Matrix z = unit_rows(kB, kE, rng);
  const Matrix za = unit_rows(kB, kE, rng);
  const Matrix logits = gaussian(kB, kN + kM, rng);
  std::vector<int> y{0, 1, 2, 3, 4, 0, 1, 2};
  std::vector<int> perm(kB);
  std::iota(perm.begin(), perm.end(), 0);
  shuffle_in_place(perm, rng);
  Eigen::PermutationMatrix<Eigen::Dynamic> p(kB);
  for (int i = 0; i < kB; ++i) p.indices()[i] = perm[static_cast<std::size_t>(i)];
  AlignmentMatrix pa = a;
  pa.q = p * a.q;
  std::vector<int> py(kB);
  for (int i = 0; i < kB; ++i) py[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = y[static_cast<std::size_t>(i)];

  const auto pcl = pcl_loss(z, a, bank, 0.5);
  const auto ppcl = pcl_loss(p * z, pa, bank, 0.5);
  EXPECT_NEAR(pcl.value, ppcl.value, 1e-10);
  EXPECT_LT((p * pcl.grad - ppcl.grad).cwiseAbs().maxCoeff(), 1e-12);

  const auto ins = instance_loss(z, za, 0.5);
  const auto pins = instance_loss(p * z, p * za, 0.5);
  EXPECT_NEAR(ins.value, pins.value, 1e-10);
  EXPECT_LT((p * ins.grad_z - pins.grad_z).cwiseAbs().maxCoeff(), 1e-12);

  const auto ce = ce_loss(logits, y);
  const auto pce = ce_loss(p * logits, py);
  EXPECT_NEAR(ce.value, pce.value, 1e-12);
  EXPECT_LT((p * ce.grad - pce.grad).cwiseAbs().maxCoeff(), 1e-14);
}

}  // namespace
}  // namespace dpl
