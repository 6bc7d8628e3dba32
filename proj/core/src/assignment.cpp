#include "dpl/assignment.hpp"

#include <limits>
#include <stdexcept>
#include <string>

namespace dpl {

namespace {

// Shortest augmenting path with potentials (Kuhn-Munkres, O(n^2 m)) for n <= m.
// Rows and columns are 1-based internally; index 0 is the virtual source.
std::vector<int> assign_rows(const Eigen::MatrixXd& cost) {
  using std::size_t;
  const auto n = static_cast<size_t>(cost.rows());
  const auto m = static_cast<size_t>(cost.cols());
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0);
  std::vector<double> v(m + 1, 0.0);
  std::vector<size_t> match(m + 1, 0);  // column -> row, 0 when free
  std::vector<size_t> way(m + 1, 0);
  for (size_t i = 1; i <= n; ++i) {
    match[0] = i;
    size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const size_t i0 = match[j0];
      double delta = inf;
      size_t j1 = 0;
      for (size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (size_t j = 1; j <= m; ++j) {
    if (match[j] != 0) row_to_col[match[j] - 1] = static_cast<int>(j - 1);
  }
  return row_to_col;
}

}  // namespace

std::vector<int> solve_assignment(const Eigen::MatrixXd& cost) {
  if (!cost.allFinite()) throw std::invalid_argument("assignment cost must be finite");
  if (cost.rows() == 0 || cost.cols() == 0) return std::vector<int>(static_cast<std::size_t>(cost.rows()), -1);
  if (cost.rows() <= cost.cols()) return assign_rows(cost);
  const auto col_to_row = assign_rows(cost.transpose());
  std::vector<int> row_to_col(static_cast<std::size_t>(cost.rows()), -1);
  for (std::size_t c = 0; c < col_to_row.size(); ++c) {
    row_to_col[static_cast<std::size_t>(col_to_row[c])] = static_cast<int>(c);
  }
  return row_to_col;
}

std::vector<int> solve_max_assignment(const Eigen::MatrixXd& weight) {
  return solve_assignment(-weight);
}

LabelMatching match_labels(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) {
    throw std::invalid_argument("prediction and truth counts differ: " +
                                std::to_string(predicted.size()) + " vs " +
                                std::to_string(truth.size()));
  }
  std::map<int, Eigen::Index> rows;
  std::map<int, Eigen::Index> cols;
  for (int p : predicted) rows.emplace(p, 0);
  for (int t : truth) cols.emplace(t, 0);
  Eigen::Index next = 0;
  for (auto& [id, r] : rows) r = next++;
  next = 0;
  for (auto& [id, c] : cols) c = next++;
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()),
                                                 static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < predicted.size(); ++i) counts(rows[predicted[i]], cols[truth[i]]) += 1.0;

  LabelMatching m;
  if (counts.size() == 0) return m;
  const auto pick = solve_max_assignment(counts);
  std::vector<int> col_ids;
  for (const auto& [id, c] : cols) col_ids.push_back(id);
  for (const auto& [id, r] : rows) {
    const int c = pick[static_cast<std::size_t>(r)];
    if (c < 0) continue;
    m.cluster_to_class[id] = col_ids[static_cast<std::size_t>(c)];
    m.matched += static_cast<std::size_t>(counts(r, c));
  }
  return m;
}

}  // namespace dpl
