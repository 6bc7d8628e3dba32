#include "dpl/calibration.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace dpl {

namespace {

void normalize_rows(Matrix& k) {
  for (Eigen::Index i = 0; i < k.rows(); ++i) {
    const double s = k.row(i).sum();
    if (s > 0.0) k.row(i) /= s;
  }
}

void normalize_columns(Matrix& k, double target) {
  for (Eigen::Index j = 0; j < k.cols(); ++j) {
    const double s = k.col(j).sum();
    if (s > 0.0) k.col(j) *= target / s;
  }
}

}  // namespace

TransportPlan sk_calibrate(const Matrix& ood_logits, double epsilon, int n_iters) {
  if (ood_logits.rows() < 1) throw std::invalid_argument("sk_calibrate needs at least one sample");
  if (ood_logits.cols() < 2) throw std::invalid_argument("sk_calibrate needs at least two OOD classes");
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
  if (n_iters < 0) throw std::invalid_argument("n_iters must be non-negative");
  if (!ood_logits.allFinite()) throw std::invalid_argument("non-finite logits");

  const auto b = static_cast<double>(ood_logits.rows());
  const auto m = static_cast<double>(ood_logits.cols());
  Matrix k(ood_logits.rows(), ood_logits.cols());
  for (Eigen::Index i = 0; i < k.rows(); ++i) {
    const double shift = ood_logits.row(i).maxCoeff();
    k.row(i) = ((ood_logits.row(i).array() - shift) / epsilon).exp().matrix();
  }
  for (int it = 0; it < n_iters; ++it) {
    normalize_columns(k, b / m);
    normalize_rows(k);
  }
  if (n_iters == 0) normalize_rows(k);
  if (!k.allFinite()) throw std::runtime_error("Sinkhorn-Knopp produced a non-finite plan");
  return {std::move(k), epsilon, n_iters};
}

Matrix plan_to_distributions(const TransportPlan& plan) {
  if ((plan.plan.array() < 0.0).any()) throw std::invalid_argument("transport plan has negative entries");
  return plan.plan;
}

double column_residual(const TransportPlan& plan) {
  const double target = static_cast<double>(plan.plan.rows()) / static_cast<double>(plan.plan.cols());
  return (plan.plan.colwise().sum().array() - target).abs().maxCoeff();
}

void write_plan_csv(const TransportPlan& plan, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  for (Eigen::Index j = 0; j < plan.plan.cols(); ++j) out << (j ? "," : "") << "c" << j;
  out << '\n';
  for (Eigen::Index i = 0; i < plan.plan.rows(); ++i) {
    for (Eigen::Index j = 0; j < plan.plan.cols(); ++j) out << (j ? "," : "") << plan.plan(i, j);
    out << '\n';
  }
}

}  // namespace dpl
