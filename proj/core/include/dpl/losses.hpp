#pragma once

#include <optional>
#include <span>
#include <vector>

#include "dpl/common.hpp"
#include "dpl/prototypes.hpp"

namespace dpl {

// What the training loop knows about a sample: its domain and, for IND only,
// the ground-truth label.
struct SampleMeta {
  bool is_ind = false;
  std::optional<int> label;
};

enum class AlignmentSource { ind_ground_truth, ood_calibrated };

// Per-sample confidence q_i over the N+M prototypes.
struct AlignmentMatrix {
  Matrix q;
  std::vector<AlignmentSource> sources;
};

// IND rows: one-hot on the label. OOD rows: zeros over [0, N) followed by the
// next unused row of calibrated_ood. calibrated_ood holds one row per OOD
// sample, in batch order.
AlignmentMatrix build_alignment(std::span<const SampleMeta> batch, const Matrix& calibrated_ood,
                                int n_ind, int n_ood);

struct LossResult {
  double value = 0.0;
  Matrix grad;  // w.r.t. the primary input (z rows or logits)
};

struct PairLossResult {
  double value = 0.0;
  Matrix grad_z;
  Matrix grad_z_aug;
};

// softmax_j(z_i . mu_j / tau): the posterior of an isotropic Gaussian mixture
// centered on the prototypes with variance tau.
Matrix prototype_posteriors(const Matrix& z, const Matrix& prototypes, double tau);

// -sum_{i,j} q_ij log softmax_j(z_i . mu_j / tau). Prototypes receive no gradient.
LossResult pcl_loss(const Matrix& z, const AlignmentMatrix& alignment, const PrototypeBank& bank,
                    double tau);

// -sum_i log[ exp(z_i . zhat_i / tau) / sum_{k != i} exp(z_i . z_k / tau) ].
// With include_augmented_negatives, every zhat_k joins the denominator as well.
PairLossResult instance_loss(const Matrix& z, const Matrix& z_aug, double tau,
                             bool include_augmented_negatives = false);

// Mean cross-entropy against hard labels; grad = (softmax - onehot) / B.
LossResult ce_loss(const Matrix& logits, std::span<const int> labels);

// Mean cross-entropy against soft target rows (each summing to 1).
LossResult soft_ce_loss(const Matrix& logits, const Matrix& targets);

// Supervised contrastive loss over in-batch same-label positives, summed over
// anchors. Anchors without a positive contribute nothing.
LossResult scl_loss(const Matrix& z, std::span<const int> labels, double tau);

// Row-wise numerically stable softmax.
Matrix softmax_rows(const Matrix& logits);

}  // namespace dpl
