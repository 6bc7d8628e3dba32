#pragma once

#include <cstdint>

#include "dpl/common.hpp"

namespace dpl {

using RowVectorRef = Eigen::Ref<const Eigen::RowVectorXd>;

enum class PrototypeScope { all, ood_only };

// N+M unit-norm class prototypes; rows [0, N) are IND, [N, N+M) OOD.
// Prototypes change only through ema_update, never through gradients.
class PrototypeBank {
 public:
  static constexpr double kNormTolerance = 1e-9;
  static constexpr double kInputTolerance = 1e-6;

  PrototypeBank(Matrix rows, int n_ind, double gamma);

  // Isotropic Gaussian rows, normalized; deterministic under seed.
  static PrototypeBank init_random(int n_ind, int n_ood, int dim, std::uint64_t seed,
                                   double gamma = 0.9);

  // mu_c <- normalize(gamma * mu_c + (1 - gamma) * z). Only row c changes.
  void ema_update(RowVectorRef z, int c);

  // argmax_j z . mu_j over the permitted rows; ties go to the lowest index.
  int nearest(RowVectorRef z, PrototypeScope scope) const;

  const Matrix& rows() const { return rows_; }
  Eigen::RowVectorXd row(int c) const { return rows_.row(c); }
  double gamma() const { return gamma_; }
  void set_gamma(double gamma);
  int n_ind() const { return n_ind_; }
  int n_ood() const { return static_cast<int>(rows_.rows()) - n_ind_; }
  int n_classes() const { return static_cast<int>(rows_.rows()); }
  int dim() const { return static_cast<int>(rows_.cols()); }

 private:
  Matrix rows_;
  int n_ind_;
  double gamma_;
};

}  // namespace dpl
