#include "dpl/losses.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace dpl {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Vector row_logsumexp(const Matrix& s) {
  Vector out(s.rows());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double m = s.row(i).maxCoeff();
    out[i] = m + std::log((s.row(i).array() - m).exp().sum());
  }
  return out;
}

void require_tau(double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("temperature must be positive");
}

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw std::runtime_error(std::string(what) + " is not finite");
}

}  // namespace

Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    p.row(i) = (logits.row(i).array() - m).exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

AlignmentMatrix build_alignment(std::span<const SampleMeta> batch, const Matrix& calibrated_ood,
                                int n_ind, int n_ood) {
  if (n_ind < 0 || n_ood < 1) throw std::invalid_argument("alignment needs OOD classes");
  AlignmentMatrix a;
  a.q = Matrix::Zero(static_cast<Eigen::Index>(batch.size()), n_ind + n_ood);
  a.sources.reserve(batch.size());
  Eigen::Index next_ood = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    if (batch[i].is_ind) {
      if (!batch[i].label) {
        throw std::invalid_argument("IND sample " + std::to_string(i) + " has no label");
      }
      const int y = *batch[i].label;
      if (y < 0 || y >= n_ind) throw std::invalid_argument("IND label outside [0, N)");
      a.q(row, y) = 1.0;
      a.sources.push_back(AlignmentSource::ind_ground_truth);
    } else {
      if (next_ood >= calibrated_ood.rows() || calibrated_ood.cols() != n_ood) {
        throw std::invalid_argument("missing calibrated row for OOD sample " + std::to_string(i));
      }
      const auto q = calibrated_ood.row(next_ood++);
      if (std::abs(q.sum() - 1.0) > 1e-6 || (q.array() < 0.0).any()) {
        throw std::invalid_argument("calibrated row for OOD sample " + std::to_string(i) +
                                    " is not a probability vector");
      }
      a.q.row(row).tail(n_ood) = q;
      a.sources.push_back(AlignmentSource::ood_calibrated);
    }
  }
  if (next_ood != calibrated_ood.rows()) {
    throw std::invalid_argument("more calibrated rows than OOD samples");
  }
  return a;
}

Matrix prototype_posteriors(const Matrix& z, const Matrix& prototypes, double tau) {
  require_tau(tau);
  return softmax_rows(z * prototypes.transpose() / tau);
}

LossResult pcl_loss(const Matrix& z, const AlignmentMatrix& alignment, const PrototypeBank& bank,
                    double tau) {
  require_tau(tau);
  const auto& mu = bank.rows();
  const auto& q = alignment.q;
  if (z.cols() != mu.cols()) throw std::invalid_argument("embedding and prototype widths differ");
  if (q.rows() != z.rows() || q.cols() != mu.rows()) {
    throw std::invalid_argument("alignment shape does not match batch x prototypes");
  }
  const Matrix s = z * mu.transpose() / tau;
  const Vector lse = row_logsumexp(s);
  LossResult r;
  Matrix log_p = s;
  log_p.colwise() -= lse;
  r.value = -(q.array() * log_p.array()).sum();
  require_finite(r.value, "PCL loss");
  const Matrix p = log_p.array().exp().matrix();
  Matrix coeff = p;
  const Vector mass = q.rowwise().sum();
  for (Eigen::Index i = 0; i < coeff.rows(); ++i) coeff.row(i) *= mass[i];
  coeff -= q;
  r.grad = coeff * mu / tau;
  return r;
}

PairLossResult instance_loss(const Matrix& z, const Matrix& z_aug, double tau,
                             bool include_augmented_negatives) {
  require_tau(tau);
  const auto b = z.rows();
  if (b < 2) throw std::invalid_argument("instance loss needs a batch of at least 2");
  if (z_aug.rows() != b || z_aug.cols() != z.cols()) {
    throw std::invalid_argument("original and augmented views differ in shape");
  }
  Matrix s = z * z.transpose() / tau;
  s.diagonal().setConstant(kNegInf);
  Matrix t;
  if (include_augmented_negatives) t = z * z_aug.transpose() / tau;

  PairLossResult r;
  Matrix w1(b, b);
  Matrix w2;
  if (include_augmented_negatives) w2.resize(b, b);
  for (Eigen::Index i = 0; i < b; ++i) {
    double m = s.row(i).maxCoeff();
    if (include_augmented_negatives) m = std::max(m, t.row(i).maxCoeff());
    double total = (s.row(i).array() - m).exp().sum();
    if (include_augmented_negatives) total += (t.row(i).array() - m).exp().sum();
    const double lse = m + std::log(total);
    const double positive = z.row(i).dot(z_aug.row(i)) / tau;
    r.value += lse - positive;
    w1.row(i) = (s.row(i).array() - lse).exp().matrix();
    if (include_augmented_negatives) w2.row(i) = (t.row(i).array() - lse).exp().matrix();
  }
  require_finite(r.value, "instance loss");
  r.grad_z = (w1 * z + w1.transpose() * z - z_aug) / tau;
  r.grad_z_aug = -z / tau;
  if (include_augmented_negatives) {
    r.grad_z += w2 * z_aug / tau;
    r.grad_z_aug += w2.transpose() * z / tau;
  }
  return r;
}

LossResult ce_loss(const Matrix& logits, std::span<const int> labels) {
  const auto b = logits.rows();
  if (static_cast<std::size_t>(b) != labels.size()) throw std::invalid_argument("label count mismatch");
  if (b == 0) throw std::invalid_argument("empty batch");
  const auto c = logits.cols();
  Matrix onehot = Matrix::Zero(b, c);
  for (Eigen::Index i = 0; i < b; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= c) throw std::out_of_range("label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
    onehot(i, y) = 1.0;
  }
  return soft_ce_loss(logits, onehot);
}

LossResult soft_ce_loss(const Matrix& logits, const Matrix& targets) {
  const auto b = logits.rows();
  if (targets.rows() != b || targets.cols() != logits.cols()) {
    throw std::invalid_argument("target shape does not match logits");
  }
  if (b == 0) throw std::invalid_argument("empty batch");
  const Vector lse = row_logsumexp(logits);
  Matrix log_p = logits;
  log_p.colwise() -= lse;
  LossResult r;
  r.value = -(targets.array() * log_p.array()).sum() / static_cast<double>(b);
  require_finite(r.value, "cross-entropy loss");
  Matrix p = log_p.array().exp().matrix();
  const Vector mass = targets.rowwise().sum();
  for (Eigen::Index i = 0; i < b; ++i) p.row(i) *= mass[i];
  r.grad = (p - targets) / static_cast<double>(b);
  return r;
}

LossResult scl_loss(const Matrix& z, std::span<const int> labels, double tau) {
  require_tau(tau);
  const auto b = z.rows();
  if (static_cast<std::size_t>(b) != labels.size()) throw std::invalid_argument("label count mismatch");
  Matrix s = z * z.transpose() / tau;
  s.diagonal().setConstant(kNegInf);
  Matrix coeff = Matrix::Zero(b, b);
  LossResult r;
  for (Eigen::Index i = 0; i < b; ++i) {
    int positives = 0;
    for (Eigen::Index a = 0; a < b; ++a) {
      if (a != i && labels[static_cast<std::size_t>(a)] == labels[static_cast<std::size_t>(i)]) ++positives;
    }
    if (positives == 0) continue;
    const double m = s.row(i).maxCoeff();
    const double lse = m + std::log((s.row(i).array() - m).exp().sum());
    coeff.row(i) = (s.row(i).array() - lse).exp().matrix();
    double pos_sum = 0.0;
    for (Eigen::Index a = 0; a < b; ++a) {
      if (a != i && labels[static_cast<std::size_t>(a)] == labels[static_cast<std::size_t>(i)]) {
        pos_sum += s(i, a);
        coeff(i, a) -= 1.0 / positives;
      }
    }
    r.value += lse - pos_sum / positives;
  }
  require_finite(r.value, "SCL loss");
  r.grad = (coeff * z + coeff.transpose() * z) / tau;
  return r;
}

}  // namespace dpl
