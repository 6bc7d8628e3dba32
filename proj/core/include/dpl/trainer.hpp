#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "dpl/dataset.hpp"
#include "dpl/encoder.hpp"
#include "dpl/prototypes.hpp"

namespace dpl {

struct LossWeights {
  double pcl = 1.0;
  double ins = 1.0;
  double ce = 1.0;
  double scl = 0.0;  // ablation only
};

struct TrainConfig {
  int epochs = 100;
  int batch_size = 64;
  double lr_base = 0.02;
  double lr_min = 0.01;
  double warmup_fraction = 0.1;
  double weight_decay = 1.5e-4;
  double momentum = 0.9;
  double tau = 0.5;
  double gamma = 0.9;
  double dropout_rate = 0.1;
  // Calibration temperature for the alignment targets. Classifier logits are
  // unbounded, so a small value here degenerates into a hard argmax that no
  // longer rebalances clusters.
  double alignment_epsilon = 1.0;
  // Temperature for the swapped-prediction baseline, which needs sharp targets.
  double sk_epsilon = 0.05;
  int sk_iters = 3;
  int pretrain_epochs = 20;
  int hidden = 64;
  int embedding = 32;
  LossWeights weights;
  bool update_ind_prototypes = true;
  bool include_augmented_negatives = false;
  ClassifierForm classifier_form = ClassifierForm::joint;
  std::uint64_t seed = 0;

  // Throws ConfigError naming the offending key.
  void validate() const;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double loss_pcl = 0.0;
  double loss_ins = 0.0;
  double loss_ce = 0.0;
  double loss_scl = 0.0;
  double pseudo_acc = 0.0;
  double val_silhouette = 0.0;
  double lr = 0.0;
};

struct RunArtifacts {
  std::vector<EpochRecord> curves;
  int best_epoch = 0;
  std::optional<EncoderModel> best_model;
  std::optional<PrototypeBank> best_bank;
  std::optional<EncoderModel> final_model;
  std::optional<PrototypeBank> final_bank;
  double wall_seconds = 0.0;
};

enum class TrainEvent { optimizer_step, ema_update };

// Instrumentation for tests and tooling; every member is optional.
struct TrainHooks {
  std::function<void(TrainEvent, int epoch, int batch)> on_event;
  // Replaces prototype-assigned labels of OOD samples; receives the dataset row.
  std::function<int(std::size_t)> pseudo_label_oracle;
  std::function<void(const EpochRecord&)> on_epoch;
};

// Which representation the validation silhouette is measured on.
enum class Representation { embedding, features };

struct PretrainReport {
  int epochs = 0;
  double ind_val_acc = 0.0;
};

// Fresh N-way model sized from the dataset and config.
EncoderModel make_pretraining_model(const GidDataset& dataset, const TrainConfig& config);

// Randomly initialized bank sized for the dataset, with the configured gamma.
PrototypeBank make_prototype_bank(const GidDataset& dataset, const TrainConfig& config);

// N-way cross-entropy on labeled IND training data, then extends the head to N+M.
PretrainReport pretrain_ind(EncoderModel& model, const GidDataset& dataset,
                            const TrainConfig& config);

// Joint training: two dropout views, SK calibration, alignment, PCL + instance
// loss, prototype pseudo labels, CE, one SGD step, then sequential EMA updates.
RunArtifacts train_dpl(EncoderModel model, PrototypeBank bank, const GidDataset& dataset,
                       const TrainConfig& config, const TrainHooks& hooks = {});

// Epoch (1-based) with the highest validation silhouette; ties go to the earliest.
int select_checkpoint(std::span<const EpochRecord> history);

void write_curves_csv(std::span<const EpochRecord> curves, const std::filesystem::path& path);

// Shared pieces used by the baselines.
namespace training {

// Shuffled batches; a trailing batch smaller than 2 is folded into its predecessor.
std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> rows, int batch_size,
                                                   std::uint64_t seed);

std::uint64_t batch_seed(std::uint64_t seed, int epoch, int batch);

// Throws DivergenceError when a loss component is non-finite or above 1e6.
void guard_loss(double value, const char* name, int epoch, int batch);

// Deterministic (no dropout) pass in chunks.
Matrix embed(const EncoderModel& model, const Matrix& x, Representation what);
std::vector<int> predict(const EncoderModel& model, const Matrix& x);

// Silhouette of validation OOD samples grouped by predicted class; -1 when the
// classifier puts them all in one class.
double validation_silhouette(const EncoderModel& model, const GidDataset& dataset,
                             Representation what);

LrSchedule schedule_for(const TrainConfig& config, std::size_t total_steps);

}  // namespace training

}  // namespace dpl
