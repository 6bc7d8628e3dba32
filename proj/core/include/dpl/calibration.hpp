#pragma once

#include <filesystem>

#include "dpl/common.hpp"

namespace dpl {

// Balanced soft assignment of a batch of B samples to M OOD classes.
struct TransportPlan {
  Matrix plan;  // B x M, non-negative, rows sum to 1
  double epsilon = 0.05;
  int n_iters = 3;
};

// Sinkhorn-Knopp: K = exp((logits - rowmax) / epsilon), then n_iters rounds of
// column scaling to B/M followed by row scaling to 1. Columns whose mass
// underflowed to zero are left unscaled.
TransportPlan sk_calibrate(const Matrix& ood_logits, double epsilon = 0.05, int n_iters = 3);

// Rows of the plan as the per-sample OOD confidence vectors.
Matrix plan_to_distributions(const TransportPlan& plan);

// Largest |column sum - B/M| of the plan.
double column_residual(const TransportPlan& plan);

void write_plan_csv(const TransportPlan& plan, const std::filesystem::path& path);

}  // namespace dpl
