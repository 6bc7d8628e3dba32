#include "dpl/prototypes.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dpl {

PrototypeBank::PrototypeBank(Matrix rows, int n_ind, double gamma)
    : rows_(std::move(rows)), n_ind_(n_ind), gamma_(gamma) {
  if (rows_.cols() < 2) throw std::invalid_argument("prototype dimension must be >= 2");
  if (n_ind_ < 0 || n_ind_ > rows_.rows()) throw std::invalid_argument("n_ind outside the bank");
  set_gamma(gamma);
  for (Eigen::Index r = 0; r < rows_.rows(); ++r) {
    if (std::abs(rows_.row(r).norm() - 1.0) > kNormTolerance) {
      throw std::invalid_argument("prototype row " + std::to_string(r) + " is not unit-norm");
    }
  }
}

PrototypeBank PrototypeBank::init_random(int n_ind, int n_ood, int dim, std::uint64_t seed,
                                         double gamma) {
  if (dim < 2) throw std::invalid_argument("prototype dimension must be >= 2");
  if (n_ind < 0 || n_ood < 1) throw std::invalid_argument("prototype bank needs OOD rows");
  Rng rng(derive_seed(seed, 0x9A0));
  Matrix rows(n_ind + n_ood, dim);
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    double norm = 0.0;
    do {
      for (Eigen::Index c = 0; c < rows.cols(); ++c) rows(r, c) = standard_normal(rng);
      norm = rows.row(r).norm();
    } while (norm == 0.0);
    rows.row(r) /= norm;
  }
  return PrototypeBank(std::move(rows), n_ind, gamma);
}

void PrototypeBank::set_gamma(double gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in [0, 1)");
  gamma_ = gamma;
}

void PrototypeBank::ema_update(RowVectorRef z, int c) {
  if (c < 0 || c >= n_classes()) throw std::out_of_range("prototype index out of range");
  if (z.size() != rows_.cols()) throw std::invalid_argument("embedding dimension mismatch");
  if (std::abs(z.norm() - 1.0) > kInputTolerance) {
    throw std::invalid_argument("ema_update expects a unit-norm embedding");
  }
  Eigen::RowVectorXd blended = gamma_ * rows_.row(c) + (1.0 - gamma_) * z;
  const double norm = blended.norm();
  // Antipodal z with gamma = 0.5 cancels exactly; keep the old prototype.
  if (norm == 0.0) return;
  rows_.row(c) = blended / norm;
}

int PrototypeBank::nearest(RowVectorRef z, PrototypeScope scope) const {
  if (z.size() != rows_.cols()) throw std::invalid_argument("embedding dimension mismatch");
  const int first = scope == PrototypeScope::ood_only ? n_ind_ : 0;
  if (first >= n_classes()) throw std::invalid_argument("no permitted prototypes");
  int best = first;
  double best_score = rows_.row(first).dot(z);
  for (int j = first + 1; j < n_classes(); ++j) {
    const double s = rows_.row(j).dot(z);
    if (s > best_score) {
      best_score = s;
      best = j;
    }
  }
  return best;
}

}  // namespace dpl
