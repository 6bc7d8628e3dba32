#include "dpl/disambiguation.hpp"

#include <stdexcept>
#include <string>

#include "dpl/assignment.hpp"

namespace dpl {

std::vector<PseudoLabel> assign_pseudo_labels(const Matrix& z, std::span<const SampleMeta> meta,
                                              const PrototypeBank& bank) {
  if (static_cast<std::size_t>(z.rows()) != meta.size()) {
    throw std::invalid_argument("embedding rows and sample metadata differ in length");
  }
  std::vector<PseudoLabel> out;
  out.reserve(meta.size());
  for (std::size_t i = 0; i < meta.size(); ++i) {
    if (meta[i].is_ind) {
      if (!meta[i].label) throw std::invalid_argument("IND sample " + std::to_string(i) + " has no label");
      out.push_back({*meta[i].label, PseudoLabelSource::ground_truth});
    } else {
      const int c = bank.nearest(z.row(static_cast<Eigen::Index>(i)), PrototypeScope::ood_only);
      out.push_back({c, PseudoLabelSource::prototype_assigned});
    }
  }
  return out;
}

double pseudo_label_accuracy(std::span<const int> assignments, std::span<const int> hidden_truth) {
  if (assignments.empty()) throw std::invalid_argument("no assignments to score");
  const auto m = match_labels(assignments, hidden_truth);
  return static_cast<double>(m.matched) / static_cast<double>(assignments.size());
}

}  // namespace dpl
