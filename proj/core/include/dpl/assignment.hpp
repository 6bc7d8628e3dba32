#pragma once

#include <map>
#include <span>
#include <vector>

#include "dpl/common.hpp"

namespace dpl {

// Minimum-cost perfect matching on a rectangular cost matrix (rows <= cols is
// not required; the smaller side is fully matched). Returns, for each row,
// the assigned column or -1 when there are more rows than columns.
std::vector<int> solve_assignment(const Eigen::MatrixXd& cost);

// Same, maximizing total weight.
std::vector<int> solve_max_assignment(const Eigen::MatrixXd& weight);

// One-to-one matching between predicted cluster ids and true class ids that
// maximizes the number of agreeing samples (contingency-table assignment).
struct LabelMatching {
  std::map<int, int> cluster_to_class;
  std::size_t matched = 0;
};

LabelMatching match_labels(std::span<const int> predicted, std::span<const int> truth);

}  // namespace dpl
