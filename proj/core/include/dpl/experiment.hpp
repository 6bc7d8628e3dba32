#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dpl/baselines.hpp"
#include "dpl/dataset.hpp"
#include "dpl/evaluation.hpp"
#include "dpl/trainer.hpp"

namespace dpl {

enum class Method { dpl, kmeans, deep_aligned, deep_aligned_mix, e2e, dpl_scl };

std::string_view to_string(Method m);
// Throws ConfigError on unknown names.
Method parse_method(std::string_view name);

struct DataSource {
  enum class Kind { synthetic, corpus, saved };
  Kind kind = Kind::synthetic;
  SynthConfig synthetic;          // kind == synthetic; its seed is replaced by the run seed
  std::filesystem::path path;     // corpus file or saved dataset directory
  double ood_ratio = 0.6;         // corpus only
};

struct SweepAxis {
  std::string key;
  std::vector<std::string> values;  // JSON literals or bare strings
};

struct ExperimentSpec {
  DataSource data;
  Method method = Method::dpl;
  TrainConfig train;
  BaselineConfig baseline;
  std::optional<SweepAxis> sweep;
  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path out = "runs";
  // Upper bound on the OOD class count for estimate_k; k_max = 2 * ceiling.
  int k_ceiling = 0;  // 0: use twice the true M

  void validate() const;
};

// JSON schema (every key optional):
// {
//   "method": "dpl" | "kmeans" | "deep_aligned" | "deep_aligned_mix" | "e2e" | "dpl_scl",
//   "seeds": [0, 1, 2], "out": "runs", "k_ceiling": 0,
//   "data": {"source": "synthetic", "n_ind_classes": 8, ...SynthConfig keys}
//         | {"source": "corpus", "path": "...", "ood_ratio": 0.6}
//         | {"source": "saved", "path": "dir"},
//   "train": {...TrainConfig keys, "weights": {"pcl":1,"ins":1,"ce":1,"scl":0}},
//   "baseline": {"kmeans_restarts": 10, "alignment_interval": 1, "swap_temperature": 1,
//                "two_head": false, "ablation": "without_ins"},
//   "sweep": {"key": "gamma", "values": [0.5, 0.9]}
// }
// Unknown keys are rejected with ConfigError.
ExperimentSpec parse_spec(std::string_view json_text);
ExperimentSpec load_spec(const std::filesystem::path& path);

// Complete echo; parse_spec(spec_to_json(s)) reproduces s.
std::string spec_to_json(const ExperimentSpec& spec);

// Sets one key. Accepts dotted paths ("train.gamma", "train.weights.pcl") or
// bare names that are unique across sections ("gamma", "imbalance_factor").
// value is a JSON literal, or a bare string. Throws ConfigError on unknown keys
// or values the section rejects.
void apply_override(ExperimentSpec& spec, std::string_view key, std::string_view value);

// The dataset for one seed. Synthetic data uses the run seed as its seed.
GidDataset build_dataset(const ExperimentSpec& spec, std::uint64_t seed);

struct RunDiagnostics {
  double pretrain_ind_val_acc = 0.0;
  int best_epoch = 0;
  double final_pseudo_acc = 0.0;
  int epochs_to_plateau = 0;
  double test_silhouette = 0.0;
  int estimated_k = 0;
  int k_max = 0;
  std::uint64_t dataset_digest = 0;
  std::uint64_t pretrained_digest = 0;
  std::string representation;
};

struct RunResult {
  Method method = Method::dpl;
  std::uint64_t seed = 0;
  MetricsReport metrics;
  CompactnessReport compactness;
  RunDiagnostics diagnostics;
  RunArtifacts artifacts;
  // Test-split inputs to the projection export.
  Matrix test_embedding;
  std::vector<int> test_labels;
  Matrix prototypes;  // empty for methods without a prototype bank
};

// First epoch whose pseudo-label accuracy reaches fraction * plateau, where the
// plateau is the mean over the last max(1, E/10) epochs.
int epochs_to_plateau(std::span<const EpochRecord> curves, double fraction = 0.9);

// Trains one method from an already pretrained, extended model and scores the
// best checkpoint on the test split. The pretrained model is left untouched;
// a changed digest afterwards is reported as an error.
RunResult run_method(Method method, const EncoderModel& pretrained, const GidDataset& dataset,
                     const TrainConfig& train, const BaselineConfig& baseline,
                     const TrainHooks& hooks = {}, int k_ceiling = 0);

// Dataset, pretraining and training for one seed.
RunResult run_seed(const ExperimentSpec& spec, std::uint64_t seed);

// Scores a checkpoint on the test split of a dataset.
MetricsReport evaluate_checkpoint(const EncoderModel& model, const GidDataset& dataset);

// Writes metrics.json, curves.csv, projection.csv, best.ckpt, final.ckpt,
// config.json and timing.json into dir.
void write_run(const RunResult& result, const ExperimentSpec& spec,
               const std::filesystem::path& dir);

// metrics.json body: the metrics report plus compactness and diagnostics.
std::string run_metrics_json(const RunResult& result);

struct Summary {
  std::vector<std::string> metric_names;
  std::vector<double> mean;
  std::vector<double> sd;  // sample standard deviation; 0 for a single run
};

Summary summarize(std::span<const RunResult> runs);

// Runs every seed into out/seed_<s>/ and writes out/summary.json.
std::vector<RunResult> run_experiment(const ExperimentSpec& spec);

// Validates the sweep axis against every value before touching the disk, then
// runs each value and seed into out/<key>=<value>/seed_<s>/ and writes
// out/sweep.csv and out/sweep.json with mean and sd per value.
void run_sweep(const ExperimentSpec& spec);

}  // namespace dpl
