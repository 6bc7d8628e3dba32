#pragma once

#include <span>
#include <vector>

#include "dpl/common.hpp"
#include "dpl/losses.hpp"
#include "dpl/prototypes.hpp"

namespace dpl {

enum class PseudoLabelSource { ground_truth, prototype_assigned };

struct PseudoLabel {
  int index = 0;  // joint label in [0, N+M)
  PseudoLabelSource source = PseudoLabelSource::ground_truth;
};

// IND samples keep their label. OOD samples take the nearest OOD prototype.
std::vector<PseudoLabel> assign_pseudo_labels(const Matrix& z, std::span<const SampleMeta> meta,
                                              const PrototypeBank& bank);

// Accuracy of cluster ids against hidden classes under the best one-to-one map.
double pseudo_label_accuracy(std::span<const int> assignments, std::span<const int> hidden_truth);

}  // namespace dpl
