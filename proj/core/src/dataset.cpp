#include "dpl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace dpl {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void fnv_bytes(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
}

ClassPartition partition_classes(std::span<const int> class_ids, std::size_t n_ood,
                                 std::uint64_t seed) {
  std::vector<int> order(class_ids.begin(), class_ids.end());
  std::sort(order.begin(), order.end());
  Rng rng(derive_seed(seed, 0x5011));
  shuffle_in_place(order, rng);
  ClassPartition out;
  out.ood.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_ood));
  out.ind.assign(order.begin() + static_cast<std::ptrdiff_t>(n_ood), order.end());
  std::sort(out.ind.begin(), out.ind.end());
  std::sort(out.ood.begin(), out.ood.end());
  return out;
}

struct Roles {
  int n_ind;
  int n_ood;
  ClassPartition partition;
};

Roles synthetic_roles(const SynthConfig& config) {
  const int total = config.n_ind_classes + config.n_ood_classes;
  std::vector<int> ids(static_cast<std::size_t>(total));
  std::iota(ids.begin(), ids.end(), 0);
  ClassPartition partition;
  if (config.ood_ratio) {
    partition = split_ind_ood(ids, *config.ood_ratio, config.seed);
  } else {
    partition = partition_classes(ids, static_cast<std::size_t>(config.n_ood_classes),
                                  config.seed);
  }
  return {static_cast<int>(partition.ind.size()), static_cast<int>(partition.ood.size()),
          std::move(partition)};
}

struct SplitCounts {
  int train;
  int validation;
  int test;
};

SplitCounts split_counts(int n) {
  const int train = static_cast<int>(std::lround(0.8 * n));
  const int validation = static_cast<int>(std::lround(0.1 * n));
  return {train, validation, n - train - validation};
}

std::string class_label(int id, int total) {
  const int width = static_cast<int>(std::to_string(std::max(total - 1, 0)).size());
  std::string digits = std::to_string(id);
  if (static_cast<int>(digits.size()) < width) {
    digits.insert(0, static_cast<std::size_t>(width) - digits.size(), '0');
  }
  return "class_" + digits;
}

ordered_json config_to_json(const SynthConfig& c) {
  ordered_json j;
  j["n_ind_classes"] = c.n_ind_classes;
  j["n_ood_classes"] = c.n_ood_classes;
  j["dimension"] = c.dimension;
  j["samples_per_class"] = c.samples_per_class;
  j["class_separation"] = c.class_separation;
  j["imbalance_factor"] = c.imbalance_factor;
  if (c.ood_ratio) {
    j["ood_ratio"] = *c.ood_ratio;
  } else {
    j["ood_ratio"] = nullptr;
  }
  j["seed"] = c.seed;
  return j;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct RawLine {
  std::vector<double> vector;
  std::string label;
  Split split;
  std::size_t line_number;
};

std::vector<RawLine> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<RawLine> lines;
  std::string text;
  std::size_t line_number = 0;
  std::optional<std::size_t> dimension;
  while (std::getline(in, text)) {
    ++line_number;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = path.string() + ":" + std::to_string(line_number) + ": ";
    RawLine raw;
    raw.line_number = line_number;
    try {
      const auto j = nlohmann::json::parse(text);
      if (!j.is_object()) throw IoError(where + "expected a JSON object");
      const auto& vec = j.at("vector");
      if (!vec.is_array() || vec.empty()) throw IoError(where + "'vector' must be a non-empty array");
      raw.vector.reserve(vec.size());
      for (const auto& x : vec) {
        if (!x.is_number()) throw IoError(where + "'vector' holds a non-number");
        raw.vector.push_back(x.get<double>());
      }
      raw.label = j.at("label").get<std::string>();
      const auto split_text = j.at("split").get<std::string>();
      try {
        raw.split = parse_split(split_text);
      } catch (const ConfigError&) {
        throw IoError(where + "unknown split tag '" + split_text + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw IoError(where + "malformed line (" + e.what() + ")");
    }
    if (dimension && *dimension != raw.vector.size()) {
      throw IoError(where + "dimension mismatch: expected " + std::to_string(*dimension) +
                    ", got " + std::to_string(raw.vector.size()));
    }
    dimension = raw.vector.size();
    lines.push_back(std::move(raw));
  }
  if (lines.empty()) throw IoError(path.string() + ": no examples");
  return lines;
}

GidDataset assemble(const std::vector<RawLine>& lines, const std::vector<std::string>& ind_names,
                    const std::vector<std::string>& ood_names, std::uint64_t seed,
                    std::string metadata, const std::filesystem::path& path) {
  std::map<std::string, int> joint;
  std::vector<std::string> names;
  for (const auto& n : ind_names) {
    joint.emplace(n, static_cast<int>(names.size()));
    names.push_back(n);
  }
  for (const auto& n : ood_names) {
    joint.emplace(n, static_cast<int>(names.size()));
    names.push_back(n);
  }
  const int n_ind = static_cast<int>(ind_names.size());
  const int n_ood = static_cast<int>(ood_names.size());
  std::vector<int> train_counts(names.size(), 0);
  std::vector<Example> examples;
  examples.reserve(lines.size());
  for (const auto& raw : lines) {
    const auto it = joint.find(raw.label);
    if (it == joint.end()) {
      throw IoError(path.string() + ":" + std::to_string(raw.line_number) + ": unknown label '" +
                    raw.label + "'");
    }
    Example e;
    e.vector = Eigen::Map<const Vector>(raw.vector.data(), static_cast<Eigen::Index>(raw.vector.size()));
    e.true_label = it->second;
    e.is_ind = it->second < n_ind;
    e.split = raw.split;
    if (e.split == Split::train) ++train_counts[static_cast<std::size_t>(e.true_label)];
    examples.push_back(std::move(e));
  }
  for (std::size_t c = 0; c < names.size(); ++c) {
    if (train_counts[c] == 0) {
      throw IoError(path.string() + ": class '" + names[c] + "' has no training examples after the split");
    }
  }
  const int dimension = static_cast<int>(lines.front().vector.size());
  return GidDataset(std::move(examples), n_ind, n_ood, dimension, seed, std::move(names),
                    std::move(metadata));
}

}  // namespace

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::validation:
      return "validation";
    case Split::test:
      return "test";
  }
  return "train";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "validation") return Split::validation;
  if (text == "test") return Split::test;
  throw ConfigError("unknown split tag '" + std::string(text) + "'");
}

void SynthConfig::validate() const {
  if (n_ind_classes < 1 || n_ood_classes < 1) {
    throw ConfigError("synthetic config needs at least one IND and one OOD class");
  }
  if (dimension < 2) throw ConfigError("synthetic dimension must be >= 2");
  if (samples_per_class < 1) throw ConfigError("samples_per_class must be positive");
  if (!(class_separation > 0.0)) throw ConfigError("class_separation must be positive");
  if (!(imbalance_factor >= 1.0)) throw ConfigError("imbalance_factor must be >= 1");
  if (ood_ratio && !(*ood_ratio > 0.0 && *ood_ratio < 1.0)) {
    throw ConfigError("ood_ratio must lie in (0, 1)");
  }
}

GidDataset::GidDataset(std::vector<Example> examples, int n_ind, int n_ood, int dimension,
                       std::uint64_t seed, std::vector<std::string> class_names,
                       std::string metadata_json)
    : examples_(std::move(examples)),
      n_ind_(n_ind),
      n_ood_(n_ood),
      dimension_(dimension),
      seed_(seed),
      class_names_(std::move(class_names)),
      metadata_json_(std::move(metadata_json)) {
  if (n_ind_ < 1 || n_ood_ < 1) throw std::invalid_argument("dataset needs IND and OOD classes");
  if (static_cast<int>(class_names_.size()) != n_ind_ + n_ood_) {
    throw std::invalid_argument("class name count does not match N+M");
  }
  for (const auto& e : examples_) {
    if (e.vector.size() != dimension_) throw std::invalid_argument("example dimension mismatch");
    if (e.true_label < 0 || e.true_label >= n_ind_ + n_ood_) {
      throw std::invalid_argument("example label outside [0, N+M)");
    }
    if (e.is_ind != (e.true_label < n_ind_)) {
      throw std::invalid_argument("example domain disagrees with its label");
    }
  }
}

std::optional<int> GidDataset::training_label(std::size_t i) const {
  const auto& e = examples_.at(i);
  if (!e.is_ind) return std::nullopt;
  return e.true_label;
}

std::vector<std::size_t> GidDataset::indices(Split split, Domain domain) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < examples_.size(); ++i) {
    const auto& e = examples_[i];
    if (e.split != split) continue;
    if (domain == Domain::ind && !e.is_ind) continue;
    if (domain == Domain::ood && e.is_ind) continue;
    out.push_back(i);
  }
  return out;
}

Matrix GidDataset::gather(std::span<const std::size_t> rows) const {
  Matrix out(static_cast<Eigen::Index>(rows.size()), dimension_);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.row(static_cast<Eigen::Index>(r)) = examples_.at(rows[r]).vector.transpose();
  }
  return out;
}

std::uint64_t GidDataset::digest() const {
  std::uint64_t h = kFnvOffset;
  for (const auto& e : examples_) {
    fnv_bytes(h, e.vector.data(), sizeof(double) * static_cast<std::size_t>(e.vector.size()));
    const std::int32_t meta[3] = {e.true_label, e.is_ind ? 1 : 0, static_cast<std::int32_t>(e.split)};
    fnv_bytes(h, meta, sizeof(meta));
  }
  return h;
}

ClassPartition split_ind_ood(std::span<const int> class_ids, double ood_ratio, std::uint64_t seed) {
  if (!(ood_ratio > 0.0 && ood_ratio < 1.0)) throw ConfigError("ood_ratio must lie in (0, 1)");
  const auto total = class_ids.size();
  const auto n_ood = static_cast<std::size_t>(std::llround(ood_ratio * static_cast<double>(total)));
  if (n_ood == 0 || n_ood >= total) {
    throw ConfigError("ood_ratio " + std::to_string(ood_ratio) + " on " + std::to_string(total) +
                      " classes leaves one side of the IND/OOD partition empty");
  }
  return partition_classes(class_ids, n_ood, seed);
}

std::vector<int> synthetic_class_sizes(const SynthConfig& config) {
  config.validate();
  const auto roles = synthetic_roles(config);
  std::vector<int> sizes(static_cast<std::size_t>(roles.n_ind), config.samples_per_class);
  for (int r = 0; r < roles.n_ood; ++r) {
    const double exponent = roles.n_ood > 1 ? static_cast<double>(r) / (roles.n_ood - 1) : 0.0;
    const double size = config.samples_per_class * std::pow(config.imbalance_factor, -exponent);
    sizes.push_back(static_cast<int>(std::lround(size)));
  }
  return sizes;
}

std::vector<Vector> synthetic_class_means(const SynthConfig& config) {
  config.validate();
  const int k = config.n_ind_classes + config.n_ood_classes;
  const int d = config.dimension;
  Rng rng(derive_seed(config.seed, 0x3EA5));
  // Isotropic Gaussian means, redrawn as a set until the closest pair clears the
  // separation. The spread starts where the typical pair sits at the separation
  // and widens slowly, so most pairs end up a little beyond the minimum.
  double sigma = config.class_separation / std::sqrt(2.0 * d);
  std::vector<Vector> means(static_cast<std::size_t>(k), Vector(d));
  for (;;) {
    for (int attempt = 0; attempt < 50; ++attempt) {
      for (auto& m : means) {
        for (int r = 0; r < d; ++r) m[r] = sigma * standard_normal(rng);
      }
      bool ok = true;
      for (int a = 0; a < k && ok; ++a) {
        for (int b = a + 1; b < k && ok; ++b) ok = (means[a] - means[b]).norm() >= config.class_separation;
      }
      if (ok) return means;
    }
    sigma *= 1.05;
  }
}

GidDataset generate_synthetic(const SynthConfig& config) {
  config.validate();
  const auto roles = synthetic_roles(config);
  const auto means = synthetic_class_means(config);
  const auto sizes = synthetic_class_sizes(config);
  const int total = roles.n_ind + roles.n_ood;

  std::vector<int> original_ids = roles.partition.ind;
  original_ids.insert(original_ids.end(), roles.partition.ood.begin(), roles.partition.ood.end());

  for (int joint = 0; joint < total; ++joint) {
    const auto counts = split_counts(sizes[static_cast<std::size_t>(joint)]);
    if (counts.train < 2 || counts.validation < 2 || counts.test < 2) {
      throw ConfigError("class " + std::to_string(joint) + " with " +
                        std::to_string(sizes[static_cast<std::size_t>(joint)]) +
                        " samples leaves fewer than 2 samples in some split");
    }
  }

  Rng rng(derive_seed(config.seed, 0xDA7A));
  std::vector<Example> examples;
  std::vector<std::string> names;
  for (int joint = 0; joint < total; ++joint) {
    const int original = original_ids[static_cast<std::size_t>(joint)];
    names.push_back(class_label(original, total));
    const auto& mean = means[static_cast<std::size_t>(original)];
    const int n = sizes[static_cast<std::size_t>(joint)];
    const auto counts = split_counts(n);
    for (int s = 0; s < n; ++s) {
      Example e;
      e.vector.resize(config.dimension);
      for (int r = 0; r < config.dimension; ++r) e.vector[r] = mean[r] + standard_normal(rng);
      e.true_label = joint;
      e.is_ind = joint < roles.n_ind;
      e.split = s < counts.train                      ? Split::train
                : s < counts.train + counts.validation ? Split::validation
                                                       : Split::test;
      examples.push_back(std::move(e));
    }
  }

  ordered_json meta;
  meta["source"] = "synthetic";
  meta["config"] = config_to_json(config);
  return GidDataset(std::move(examples), roles.n_ind, roles.n_ood, config.dimension, config.seed,
                    std::move(names), meta.dump());
}

GidDataset load_embedding_corpus(const std::filesystem::path& path, double ood_ratio,
                                 std::uint64_t seed) {
  const auto lines = read_jsonl(path);
  std::vector<std::string> labels;
  for (const auto& l : lines) labels.push_back(l.label);
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());

  std::vector<int> ids(labels.size());
  std::iota(ids.begin(), ids.end(), 0);
  const auto partition = split_ind_ood(ids, ood_ratio, seed);
  std::vector<std::string> ind_names;
  std::vector<std::string> ood_names;
  for (int id : partition.ind) ind_names.push_back(labels[static_cast<std::size_t>(id)]);
  for (int id : partition.ood) ood_names.push_back(labels[static_cast<std::size_t>(id)]);

  ordered_json meta;
  meta["source"] = "corpus";
  meta["path"] = path.string();
  meta["ood_ratio"] = ood_ratio;
  meta["seed"] = seed;
  return assemble(lines, ind_names, ood_names, seed, meta.dump(), path);
}

void save_dataset(const GidDataset& dataset, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  std::ofstream data(dir / "data.jsonl", std::ios::binary);
  if (!data) throw IoError("cannot write " + (dir / "data.jsonl").string());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    ordered_json line;
    const auto& v = dataset.features(i);
    line["vector"] = std::vector<double>(v.data(), v.data() + v.size());
    const int label = dataset.is_ind(i) ? *dataset.training_label(i)
                                        : dataset.true_label(i, TruthKey{});
    line["label"] = dataset.class_name(label);
    line["split"] = to_string(dataset.split(i));
    data << line.dump() << '\n';
  }
  if (!data) throw IoError("write failed for " + (dir / "data.jsonl").string());

  ordered_json meta;
  meta["n_ind"] = dataset.n_ind();
  meta["n_ood"] = dataset.n_ood();
  meta["dimension"] = dataset.dimension();
  meta["seed"] = dataset.seed();
  const auto& names = dataset.class_names();
  meta["ind_labels"] = std::vector<std::string>(names.begin(), names.begin() + dataset.n_ind());
  meta["ood_labels"] = std::vector<std::string>(names.begin() + dataset.n_ind(), names.end());
  meta["config"] = ordered_json::parse(dataset.metadata_json());
  std::ofstream out(dir / "meta.json", std::ios::binary);
  if (!out) throw IoError("cannot write " + (dir / "meta.json").string());
  out << meta.dump(2) << '\n';
}

GidDataset load_dataset(const std::filesystem::path& dir) {
  ordered_json meta;
  try {
    meta = ordered_json::parse(read_text(dir / "meta.json"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError((dir / "meta.json").string() + ": " + e.what());
  }
  try {
    const auto ind = meta.at("ind_labels").get<std::vector<std::string>>();
    const auto ood = meta.at("ood_labels").get<std::vector<std::string>>();
    const auto seed = meta.at("seed").get<std::uint64_t>();
    const auto lines = read_jsonl(dir / "data.jsonl");
    auto dataset = assemble(lines, ind, ood, seed, meta.at("config").dump(), dir / "data.jsonl");
    if (dataset.dimension() != meta.at("dimension").get<int>()) {
      throw IoError((dir / "meta.json").string() + ": dimension disagrees with data.jsonl");
    }
    return dataset;
  } catch (const nlohmann::json::exception& e) {
    throw IoError((dir / "meta.json").string() + ": " + e.what());
  }
}

}  // namespace dpl
