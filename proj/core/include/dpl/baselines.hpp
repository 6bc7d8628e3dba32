#pragma once

#include <optional>
#include <span>
#include <utility>
#include <string>
#include <string_view>
#include <vector>

#include "dpl/dataset.hpp"
#include "dpl/encoder.hpp"
#include "dpl/losses.hpp"
#include "dpl/trainer.hpp"

namespace dpl {

enum class BaselineVariant { kmeans, deep_aligned, deep_aligned_mix, e2e, dpl_scl };

// Loss-weight presets for the DPL ablation rows.
enum class Ablation {
  full,               // PCL + instance + CE
  without_ins,        // PCL + CE
  without_pcl,        // instance + CE
  scl_replaces_pcl,   // SCL + instance + CE
  scl_replaces_ins,   // PCL + SCL + CE
};

std::string_view to_string(BaselineVariant v);
std::string_view to_string(Ablation a);
// Throw ConfigError on unknown names.
BaselineVariant parse_baseline(std::string_view name);
Ablation parse_ablation(std::string_view name);

struct BaselineConfig {
  BaselineVariant variant = BaselineVariant::kmeans;
  int kmeans_restarts = 10;
  int alignment_interval = 1;      // epochs between re-clustering (DeepAligned variants)
  double swap_temperature = 1.0;   // E2E logits are divided by this before the swapped CE
  bool two_head = false;           // E2E: separate IND and OOD heads
  Ablation ablation = Ablation::without_ins;

  void validate() const;
};

LossWeights ablation_weights(Ablation a);

// Cluster id permutation that best matches new centroids to previous ones:
// result[new_id] = previous_id, minimizing total centroid distance.
std::vector<int> align_clusters(const Matrix& new_centroids, const Matrix& previous_centroids);

// Rebuilds a joint (N+M)-way model as a two-head model: the IND rows of the
// joint head become the IND head and a fresh OOD MLP is attached.
EncoderModel to_two_head(const EncoderModel& joint, std::uint64_t seed);

// Each takes a pretrained, extended joint-head model. Test evaluation is left
// to the caller; artifacts carry the best (validation silhouette) and final models.
RunArtifacts run_kmeans_pipeline(const EncoderModel& pretrained, const GidDataset& dataset,
                                 const TrainConfig& config, const BaselineConfig& baseline);
RunArtifacts run_deep_aligned(const EncoderModel& pretrained, const GidDataset& dataset,
                              const TrainConfig& config, const BaselineConfig& baseline);
RunArtifacts run_deep_aligned_mix(const EncoderModel& pretrained, const GidDataset& dataset,
                                  const TrainConfig& config, const BaselineConfig& baseline);
RunArtifacts run_e2e(const EncoderModel& pretrained, const GidDataset& dataset,
                     const TrainConfig& config, const BaselineConfig& baseline,
                     const TrainHooks& hooks = {});
RunArtifacts run_dpl_scl(const EncoderModel& pretrained, const GidDataset& dataset,
                         const TrainConfig& config, const BaselineConfig& baseline);

// Swapped-prediction targets for two views of one batch: IND rows are one-hot
// on the label, OOD rows carry the other view's calibrated assignment over
// the OOD columns. Returns {targets for view 1, targets for view 2}.
std::pair<Matrix, Matrix> swapped_targets(const Matrix& logits1, const Matrix& logits2,
                                          std::span<const SampleMeta> meta, int n_ind, int n_ood,
                                          double epsilon, int n_iters);

// Representation each method's silhouette and compactness are measured on.
Representation representation_for(BaselineVariant v);

}  // namespace dpl
