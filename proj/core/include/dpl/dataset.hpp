#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dpl/common.hpp"

namespace dpl {

enum class Split { train, validation, test };
enum class Domain { ind, ood, all };

std::string_view to_string(Split split);
// Throws ConfigError on anything other than "train", "validation", "test".
Split parse_split(std::string_view text);

// Labels use the joint index space: IND classes occupy [0, N), OOD classes [N, N+M).
struct Example {
  Vector vector;
  int true_label = 0;
  bool is_ind = true;
  Split split = Split::train;
};

struct SynthConfig {
  int n_ind_classes = 8;
  int n_ood_classes = 6;
  int dimension = 32;
  int samples_per_class = 100;
  // Distance between class means in units of the within-class standard deviation.
  double class_separation = 6.0;
  // Largest / smallest OOD class size; sizes decay geometrically.
  double imbalance_factor = 1.0;
  // When set, the N+M classes are re-partitioned with this OOD fraction.
  std::optional<double> ood_ratio;
  std::uint64_t seed = 0;

  void validate() const;
};

namespace eval {
class TruthReader;
}

class GidDataset;

// Passkey for the hidden ground truth of unlabeled examples. Only the evaluation
// module and dataset serialization can mint one.
class TruthKey {
  friend class eval::TruthReader;
  friend void save_dataset(const GidDataset& dataset, const std::filesystem::path& dir);
  TruthKey() = default;
};

// Immutable once constructed; safe to share between threads.
class GidDataset {
 public:
  GidDataset(std::vector<Example> examples, int n_ind, int n_ood, int dimension,
             std::uint64_t seed, std::vector<std::string> class_names,
             std::string metadata_json = "{}");

  int n_ind() const { return n_ind_; }
  int n_ood() const { return n_ood_; }
  int n_classes() const { return n_ind_ + n_ood_; }
  int dimension() const { return dimension_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t size() const { return examples_.size(); }

  const Vector& features(std::size_t i) const { return examples_.at(i).vector; }
  bool is_ind(std::size_t i) const { return examples_.at(i).is_ind; }
  Split split(std::size_t i) const { return examples_.at(i).split; }

  // The label a training procedure may see: present for IND, absent for OOD.
  std::optional<int> training_label(std::size_t i) const;
  int true_label(std::size_t i, TruthKey) const { return examples_.at(i).true_label; }

  const std::string& class_name(int joint_label) const { return class_names_.at(joint_label); }
  const std::vector<std::string>& class_names() const { return class_names_; }
  const std::string& metadata_json() const { return metadata_json_; }

  std::vector<std::size_t> indices(Split split, Domain domain) const;
  Matrix gather(std::span<const std::size_t> rows) const;

  // FNV-1a over vectors, labels, domains, and splits.
  std::uint64_t digest() const;

 private:
  std::vector<Example> examples_;
  int n_ind_;
  int n_ood_;
  int dimension_;
  std::uint64_t seed_;
  std::vector<std::string> class_names_;
  std::string metadata_json_;
};

struct ClassPartition {
  std::vector<int> ind;
  std::vector<int> ood;
};

// |ood| = round(ood_ratio * |class_ids|); both sides must be non-empty.
ClassPartition split_ind_ood(std::span<const int> class_ids, double ood_ratio,
                             std::uint64_t seed);

// Per-class sample counts for the IND classes followed by the OOD classes.
std::vector<int> synthetic_class_sizes(const SynthConfig& config);

// Class means, pairwise at least class_separation apart.
std::vector<Vector> synthetic_class_means(const SynthConfig& config);

GidDataset generate_synthetic(const SynthConfig& config);

// JSON Lines: {"vector": [...], "label": "...", "split": "train"|"validation"|"test"}.
GidDataset load_embedding_corpus(const std::filesystem::path& path, double ood_ratio,
                                 std::uint64_t seed);

// Writes data.jsonl plus the meta.json sidecar into dir.
void save_dataset(const GidDataset& dataset, const std::filesystem::path& dir);

// Reads a directory written by save_dataset, keeping its IND/OOD partition.
GidDataset load_dataset(const std::filesystem::path& dir);

}  // namespace dpl
