#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dpl/common.hpp"
#include "dpl/dataset.hpp"

namespace dpl {

namespace eval {

// The single gateway to the hidden labels of unlabeled examples.
class TruthReader {
 public:
  static int label(const GidDataset& dataset, std::size_t i) {
    return dataset.true_label(i, TruthKey{});
  }
  static std::vector<int> labels(const GidDataset& dataset, std::span<const std::size_t> rows);
};

}  // namespace eval

struct MetricsReport {
  double ind_acc = 0.0;
  double ood_acc = 0.0;
  double ood_f1 = 0.0;
  double all_acc = 0.0;
  double all_f1 = 0.0;
  // Predicted OOD index -> true OOD class, both in the joint label space.
  std::map<int, int> mapping;
  // Indexed by true joint label; NaN-free, 0 for classes never seen.
  std::vector<double> per_class_f1;
};

// Predictions and truth in [0, N+M). OOD predictions are mapped onto OOD classes
// by the accuracy-maximizing bijection; IND predictions map to themselves.
// F1 is macro-averaged over classes present in truth or predictions.
MetricsReport joint_metrics(std::span<const int> predictions, std::span<const int> truth,
                            int n_ind, int n_ood);

// Serialized with keys ind_acc, ood_acc, ood_f1, all_acc, all_f1, mapping, per_class_f1.
std::string metrics_to_json(const MetricsReport& report);

struct Compactness {
  double intra = 0.0;  // mean sample-to-own-centroid distance
  double inter = 0.0;  // mean over classes of mean distance to the other centroids
  double ratio = 0.0;  // inter / intra
};

struct CompactnessReport {
  Compactness ind;
  Compactness ood;
  Compactness all;
};

// Throws when fewer than two classes are present or intra is zero.
Compactness compactness(const Matrix& embeddings, std::span<const int> labels);

// Groups by label < n_ind (IND), label >= n_ind (OOD), and everything.
CompactnessReport compactness_report(const Matrix& embeddings, std::span<const int> labels,
                                     int n_ind);

// Mean Euclidean silhouette. Samples alone in their cluster score 0.
double silhouette(const Matrix& embeddings, std::span<const int> assignments);

// Clusters with k_max centers and counts those holding at least n / k_max points.
int estimate_k(const Matrix& embeddings, int k_max, std::uint64_t seed);

struct Projection {
  Matrix samples;     // n x 2
  Matrix prototypes;  // P x 2
  double explained_variance = 0.0;  // fraction captured by the two axes
  bool degenerate = false;          // true when raw coordinates 0 and 1 were used
};

// PCA fitted on the samples; prototypes use the same mean and axes.
Projection project_2d(const Matrix& embeddings, const Matrix& prototypes);

// CSV with a "# explained_variance=...,degenerate=..." line, then x,y,label,kind.
Projection export_projection(const Matrix& embeddings, std::span<const int> labels,
                             const Matrix& prototypes, const std::filesystem::path& path);

}  // namespace dpl
