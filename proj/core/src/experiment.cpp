#include "dpl/experiment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dpl/checkpoint.hpp"

namespace dpl {

namespace {

using json = nlohmann::ordered_json;

constexpr std::array<std::pair<Method, std::string_view>, 6> kMethods{{
    {Method::dpl, "dpl"},
    {Method::kmeans, "kmeans"},
    {Method::deep_aligned, "deep_aligned"},
    {Method::deep_aligned_mix, "deep_aligned_mix"},
    {Method::e2e, "e2e"},
    {Method::dpl_scl, "dpl_scl"},
}};

// Strict reader for one JSON object: typed lookups, unknown keys rejected.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError(name_ + ": expected a JSON object");
  }

  bool has(const char* key) const { return j_.contains(key); }
  void mark(const char* key) { seen_.insert(key); }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    const std::string where = name_ + "." + key;
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(where + ": expected true or false");
      out = v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_unsigned()) throw ConfigError(where + ": expected a non-negative integer");
      out = v.get<std::uint64_t>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(where + ": expected an integer");
      out = v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(where + ": expected a number");
      out = v.get<T>();
    } else {
      if (!v.is_string()) throw ConfigError(where + ": expected a string");
      out = v.get<std::string>();
    }
  }

  const json& child(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown key " + name_ + "." + k);
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

json synth_to_json(const SynthConfig& c) {
  json j;
  j["source"] = "synthetic";
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
  return j;
}

json data_to_json(const DataSource& d) {
  switch (d.kind) {
    case DataSource::Kind::synthetic:
      return synth_to_json(d.synthetic);
    case DataSource::Kind::corpus:
      return json{{"source", "corpus"}, {"path", d.path.string()}, {"ood_ratio", d.ood_ratio}};
    case DataSource::Kind::saved:
      return json{{"source", "saved"}, {"path", d.path.string()}};
  }
  return {};
}

DataSource data_from_json(const json& j) {
  Section s(j, "data");
  DataSource d;
  std::string source = "synthetic";
  s.get("source", source);
  if (source == "synthetic") {
    d.kind = DataSource::Kind::synthetic;
    auto& c = d.synthetic;
    s.get("n_ind_classes", c.n_ind_classes);
    s.get("n_ood_classes", c.n_ood_classes);
    s.get("dimension", c.dimension);
    s.get("samples_per_class", c.samples_per_class);
    s.get("class_separation", c.class_separation);
    s.get("imbalance_factor", c.imbalance_factor);
    if (s.has("ood_ratio") && !j.at("ood_ratio").is_null()) {
      double r = 0.0;
      s.get("ood_ratio", r);
      c.ood_ratio = r;
    } else {
      s.mark("ood_ratio");  // null keeps the N/M split as given
    }
  } else if (source == "corpus" || source == "saved") {
    d.kind = source == "corpus" ? DataSource::Kind::corpus : DataSource::Kind::saved;
    std::string path;
    s.get("path", path);
    if (path.empty()) throw ConfigError("data.path is required for source '" + source + "'");
    d.path = path;
    if (d.kind == DataSource::Kind::corpus) s.get("ood_ratio", d.ood_ratio);
  } else {
    throw ConfigError("data.source must be synthetic, corpus or saved (got '" + source + "')");
  }
  s.finish();
  return d;
}

std::string_view form_name(ClassifierForm f) { return f == ClassifierForm::joint ? "joint" : "two_head"; }

json train_to_json(const TrainConfig& c) {
  json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["lr_base"] = c.lr_base;
  j["lr_min"] = c.lr_min;
  j["warmup_fraction"] = c.warmup_fraction;
  j["weight_decay"] = c.weight_decay;
  j["momentum"] = c.momentum;
  j["tau"] = c.tau;
  j["gamma"] = c.gamma;
  j["dropout_rate"] = c.dropout_rate;
  j["alignment_epsilon"] = c.alignment_epsilon;
  j["sk_epsilon"] = c.sk_epsilon;
  j["sk_iters"] = c.sk_iters;
  j["pretrain_epochs"] = c.pretrain_epochs;
  j["hidden"] = c.hidden;
  j["embedding"] = c.embedding;
  j["weights"] = json{{"pcl", c.weights.pcl}, {"ins", c.weights.ins}, {"ce", c.weights.ce},
                      {"scl", c.weights.scl}};
  j["update_ind_prototypes"] = c.update_ind_prototypes;
  j["include_augmented_negatives"] = c.include_augmented_negatives;
  j["classifier_form"] = form_name(c.classifier_form);
  return j;
}

TrainConfig train_from_json(const json& j) {
  Section s(j, "train");
  TrainConfig c;
  s.get("epochs", c.epochs);
  s.get("batch_size", c.batch_size);
  s.get("lr_base", c.lr_base);
  s.get("lr_min", c.lr_min);
  s.get("warmup_fraction", c.warmup_fraction);
  s.get("weight_decay", c.weight_decay);
  s.get("momentum", c.momentum);
  s.get("tau", c.tau);
  s.get("gamma", c.gamma);
  s.get("dropout_rate", c.dropout_rate);
  s.get("alignment_epsilon", c.alignment_epsilon);
  s.get("sk_epsilon", c.sk_epsilon);
  s.get("sk_iters", c.sk_iters);
  s.get("pretrain_epochs", c.pretrain_epochs);
  s.get("hidden", c.hidden);
  s.get("embedding", c.embedding);
  if (s.has("weights")) {
    Section w(s.child("weights"), "train.weights");
    w.get("pcl", c.weights.pcl);
    w.get("ins", c.weights.ins);
    w.get("ce", c.weights.ce);
    w.get("scl", c.weights.scl);
    w.finish();
  } else {
    s.mark("weights");
  }
  s.get("update_ind_prototypes", c.update_ind_prototypes);
  s.get("include_augmented_negatives", c.include_augmented_negatives);
  std::string form(form_name(c.classifier_form));
  s.get("classifier_form", form);
  if (form == "joint") {
    c.classifier_form = ClassifierForm::joint;
  } else if (form == "two_head") {
    c.classifier_form = ClassifierForm::two_head;
  } else {
    throw ConfigError("train.classifier_form must be joint or two_head (got '" + form + "')");
  }
  s.finish();
  return c;
}

json baseline_to_json(const BaselineConfig& b) {
  json j;
  j["kmeans_restarts"] = b.kmeans_restarts;
  j["alignment_interval"] = b.alignment_interval;
  j["swap_temperature"] = b.swap_temperature;
  j["two_head"] = b.two_head;
  j["ablation"] = to_string(b.ablation);
  return j;
}

BaselineConfig baseline_from_json(const json& j) {
  Section s(j, "baseline");
  BaselineConfig b;
  s.get("kmeans_restarts", b.kmeans_restarts);
  s.get("alignment_interval", b.alignment_interval);
  s.get("swap_temperature", b.swap_temperature);
  s.get("two_head", b.two_head);
  std::string ablation(to_string(b.ablation));
  s.get("ablation", ablation);
  b.ablation = parse_ablation(ablation);
  s.finish();
  return b;
}

std::string literal_text(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

json spec_json(const ExperimentSpec& spec) {
  json j;
  j["method"] = to_string(spec.method);
  j["seeds"] = spec.seeds;
  j["out"] = spec.out.string();
  j["k_ceiling"] = spec.k_ceiling;
  j["data"] = data_to_json(spec.data);
  j["train"] = train_to_json(spec.train);
  j["baseline"] = baseline_to_json(spec.baseline);
  if (spec.sweep) {
    json values = json::array();
    for (const auto& v : spec.sweep->values) {
      // Keep numbers as numbers in the echo.
      try {
        values.push_back(json::parse(v));
      } catch (const json::exception&) {
        values.push_back(v);
      }
    }
    j["sweep"] = json{{"key", spec.sweep->key}, {"values", values}};
  }
  return j;
}

ExperimentSpec spec_from_json(const json& j) {
  Section s(j, "config");
  ExperimentSpec spec;
  std::string method(to_string(spec.method));
  s.get("method", method);
  spec.method = parse_method(method);
  if (s.has("seeds")) {
    const auto& seeds = s.child("seeds");
    if (!seeds.is_array() || seeds.empty()) throw ConfigError("seeds must be a non-empty array");
    spec.seeds.clear();
    for (const auto& x : seeds) {
      if (!x.is_number_unsigned()) throw ConfigError("seeds must be non-negative integers");
      spec.seeds.push_back(x.get<std::uint64_t>());
    }
  } else {
    s.mark("seeds");
  }
  std::string out = spec.out.string();
  s.get("out", out);
  spec.out = out;
  s.get("k_ceiling", spec.k_ceiling);
  if (s.has("data")) spec.data = data_from_json(s.child("data"));
  else s.mark("data");
  if (s.has("train")) spec.train = train_from_json(s.child("train"));
  else s.mark("train");
  if (s.has("baseline")) spec.baseline = baseline_from_json(s.child("baseline"));
  else s.mark("baseline");
  if (s.has("sweep")) {
    Section w(s.child("sweep"), "sweep");
    SweepAxis axis;
    w.get("key", axis.key);
    if (w.has("values")) {
      const auto& values = w.child("values");
      if (!values.is_array()) throw ConfigError("sweep.values must be an array");
      for (const auto& v : values) axis.values.push_back(literal_text(v));
    } else {
      w.mark("values");
    }
    w.finish();
    spec.sweep = std::move(axis);
  } else {
    s.mark("sweep");
  }
  s.finish();
  spec.validate();
  return spec;
}

// Dotted paths to every leaf of the echo, for override lookups.
void collect_leaves(const json& j, const std::string& prefix, std::vector<std::string>& out) {
  for (const auto& [k, v] : j.items()) {
    const std::string path = prefix.empty() ? k : prefix + "." + k;
    if (v.is_object()) collect_leaves(v, path, out);
    else out.push_back(path);
  }
}

std::string resolve_key(const json& echo, std::string_view key) {
  std::vector<std::string> leaves;
  collect_leaves(echo, "", leaves);
  std::vector<std::string> hits;
  for (const auto& leaf : leaves) {
    if (leaf.rfind("sweep", 0) == 0) continue;
    if (leaf == key) return leaf;
    const auto dot = leaf.rfind('.');
    if (dot != std::string::npos && std::string_view(leaf).substr(dot + 1) == key) hits.push_back(leaf);
  }
  if (hits.size() == 1) return hits.front();
  if (hits.empty()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  std::string all;
  for (const auto& h : hits) all += " " + h;
  throw ConfigError("ambiguous config key '" + std::string(key) + "'; candidates:" + all);
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void make_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::string dir_safe(std::string s) {
  for (char& c : s) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_';
    if (!ok) c = '_';
  }
  return s;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex;
  ss.width(16);
  ss.fill('0');
  ss << v;
  return ss.str();
}

std::vector<std::pair<std::string, double>> flat_metrics(const RunResult& r) {
  return {
      {"ind_acc", r.metrics.ind_acc},
      {"ood_acc", r.metrics.ood_acc},
      {"ood_f1", r.metrics.ood_f1},
      {"all_acc", r.metrics.all_acc},
      {"all_f1", r.metrics.all_f1},
      {"compactness_ind_ratio", r.compactness.ind.ratio},
      {"compactness_ood_ratio", r.compactness.ood.ratio},
      {"compactness_all_ratio", r.compactness.all.ratio},
      {"test_silhouette", r.diagnostics.test_silhouette},
      {"final_pseudo_acc", r.diagnostics.final_pseudo_acc},
      {"epochs_to_plateau", static_cast<double>(r.diagnostics.epochs_to_plateau)},
      {"best_epoch", static_cast<double>(r.diagnostics.best_epoch)},
      {"estimated_k", static_cast<double>(r.diagnostics.estimated_k)},
  };
}

json summary_json(const Summary& s) {
  json j;
  for (std::size_t i = 0; i < s.metric_names.size(); ++i) {
    j[s.metric_names[i]] = json{{"mean", s.mean[i]}, {"sd", s.sd[i]}};
  }
  return j;
}

ExperimentSpec single_run_spec(const ExperimentSpec& spec, std::uint64_t seed) {
  ExperimentSpec one = spec;
  one.seeds = {seed};
  one.sweep.reset();
  return one;
}

}  // namespace

std::string_view to_string(Method m) {
  for (const auto& [k, name] : kMethods) {
    if (k == m) return name;
  }
  return "?";
}

Method parse_method(std::string_view name) {
  for (const auto& [k, n] : kMethods) {
    if (n == name) return k;
  }
  throw ConfigError("unknown method '" + std::string(name) +
                    "' (expected dpl, kmeans, deep_aligned, deep_aligned_mix, e2e or dpl_scl)");
}

void ExperimentSpec::validate() const {
  if (data.kind == DataSource::Kind::synthetic) data.synthetic.validate();
  if (data.kind == DataSource::Kind::corpus && !(data.ood_ratio > 0.0 && data.ood_ratio < 1.0)) {
    throw ConfigError("data.ood_ratio must lie in (0, 1)");
  }
  train.validate();
  baseline.validate();
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (k_ceiling < 0) throw ConfigError("k_ceiling must be non-negative");
  if (sweep) {
    if (sweep->key.empty()) throw ConfigError("sweep.key is required");
    if (sweep->values.empty()) throw ConfigError("sweep.values must not be empty");
  }
}

ExperimentSpec parse_spec(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return spec_from_json(j);
}

ExperimentSpec load_spec(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_spec(ss.str());
}

std::string spec_to_json(const ExperimentSpec& spec) { return spec_json(spec).dump(2) + "\n"; }

void apply_override(ExperimentSpec& spec, std::string_view key, std::string_view value) {
  json echo = spec_json(spec);
  const std::string path = resolve_key(echo, key);
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::parse_error&) {
    parsed = std::string(value);
  }
  json* node = &echo;
  std::string_view rest = path;
  while (true) {
    const auto dot = rest.find('.');
    const std::string part(rest.substr(0, dot));
    if (dot == std::string_view::npos) {
      (*node)[part] = parsed;
      break;
    }
    node = &(*node)[part];
    rest.remove_prefix(dot + 1);
  }
  spec = spec_from_json(echo);
}

GidDataset build_dataset(const ExperimentSpec& spec, std::uint64_t seed) {
  switch (spec.data.kind) {
    case DataSource::Kind::synthetic: {
      SynthConfig c = spec.data.synthetic;
      c.seed = seed;
      return generate_synthetic(c);
    }
    case DataSource::Kind::corpus:
      return load_embedding_corpus(spec.data.path, spec.data.ood_ratio, seed);
    case DataSource::Kind::saved:
      return load_dataset(spec.data.path);
  }
  throw ConfigError("unknown data source");
}

int epochs_to_plateau(std::span<const EpochRecord> curves, double fraction) {
  if (curves.empty()) throw std::invalid_argument("no epochs recorded");
  const std::size_t tail = std::max<std::size_t>(1, curves.size() / 10);
  double plateau = 0.0;
  for (std::size_t i = curves.size() - tail; i < curves.size(); ++i) plateau += curves[i].pseudo_acc;
  plateau /= static_cast<double>(tail);
  for (const auto& r : curves) {
    if (r.pseudo_acc >= fraction * plateau) return r.epoch;
  }
  return curves.back().epoch;
}

MetricsReport evaluate_checkpoint(const EncoderModel& model, const GidDataset& dataset) {
  if (!model.extended()) throw ConfigError("checkpoint holds an IND-only model; it cannot score OOD");
  if (model.dims().input != dataset.dimension() || model.dims().n_ind != dataset.n_ind() ||
      model.dims().n_ood != dataset.n_ood()) {
    throw ConfigError("checkpoint shape does not match the dataset");
  }
  const auto rows = dataset.indices(Split::test, Domain::all);
  const auto truth = eval::TruthReader::labels(dataset, rows);
  const auto pred = training::predict(model, dataset.gather(rows));
  return joint_metrics(pred, truth, dataset.n_ind(), dataset.n_ood());
}

RunResult run_method(Method method, const EncoderModel& pretrained, const GidDataset& dataset,
                     const TrainConfig& train, const BaselineConfig& baseline,
                     const TrainHooks& hooks, int k_ceiling) {
  train.validate();
  const std::uint64_t digest = model_digest(pretrained);
  BaselineConfig b = baseline;

  RunResult r;
  r.method = method;
  r.seed = train.seed;
  Representation rep = Representation::embedding;
  switch (method) {
    case Method::dpl:
      r.artifacts = train_dpl(pretrained, make_prototype_bank(dataset, train), dataset, train, hooks);
      break;
    case Method::dpl_scl:
      b.variant = BaselineVariant::dpl_scl;
      r.artifacts = run_dpl_scl(pretrained, dataset, train, b);
      break;
    case Method::kmeans:
      b.variant = BaselineVariant::kmeans;
      r.artifacts = run_kmeans_pipeline(pretrained, dataset, train, b);
      break;
    case Method::deep_aligned:
      b.variant = BaselineVariant::deep_aligned;
      r.artifacts = run_deep_aligned(pretrained, dataset, train, b);
      break;
    case Method::deep_aligned_mix:
      b.variant = BaselineVariant::deep_aligned_mix;
      r.artifacts = run_deep_aligned_mix(pretrained, dataset, train, b);
      break;
    case Method::e2e:
      b.variant = BaselineVariant::e2e;
      r.artifacts = run_e2e(pretrained, dataset, train, b, hooks);
      break;
  }
  if (method != Method::dpl) rep = representation_for(b.variant);
  if (model_digest(pretrained) != digest) {
    throw std::logic_error("pretrained encoder changed during a run");
  }

  const EncoderModel& model = r.artifacts.best_model ? *r.artifacts.best_model : *r.artifacts.final_model;
  const auto rows = dataset.indices(Split::test, Domain::all);
  r.test_labels = eval::TruthReader::labels(dataset, rows);
  const Matrix x = dataset.gather(rows);
  const auto pred = training::predict(model, x);
  r.metrics = joint_metrics(pred, r.test_labels, dataset.n_ind(), dataset.n_ood());
  r.test_embedding = training::embed(model, x, rep);
  r.compactness = compactness_report(r.test_embedding, r.test_labels, dataset.n_ind());
  if (method == Method::dpl || method == Method::dpl_scl) {
    const auto& bank = r.artifacts.best_bank ? r.artifacts.best_bank : r.artifacts.final_bank;
    if (bank && rep == Representation::embedding) r.prototypes = bank->rows();
  }

  auto& d = r.diagnostics;
  d.best_epoch = r.artifacts.best_epoch;
  d.final_pseudo_acc = r.artifacts.curves.back().pseudo_acc;
  d.epochs_to_plateau = epochs_to_plateau(r.artifacts.curves);
  d.dataset_digest = dataset.digest();
  d.pretrained_digest = digest;
  d.representation = rep == Representation::embedding ? "embedding" : "features";

  std::vector<std::size_t> ood_pos;
  std::vector<int> ood_pred;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!dataset.is_ind(rows[i])) {
      ood_pos.push_back(i);
      ood_pred.push_back(pred[i]);
    }
  }
  Matrix ood_emb(static_cast<Eigen::Index>(ood_pos.size()), r.test_embedding.cols());
  for (std::size_t i = 0; i < ood_pos.size(); ++i) {
    ood_emb.row(static_cast<Eigen::Index>(i)) = r.test_embedding.row(static_cast<Eigen::Index>(ood_pos[i]));
  }
  const std::set<int> distinct(ood_pred.begin(), ood_pred.end());
  d.test_silhouette = distinct.size() >= 2 ? silhouette(ood_emb, ood_pred) : -1.0;
  const int ceiling = k_ceiling > 0 ? k_ceiling : dataset.n_ood();
  d.k_max = std::min<int>(2 * ceiling, static_cast<int>(ood_pos.size()));
  d.estimated_k = d.k_max >= 1 ? estimate_k(ood_emb, d.k_max, train.seed) : 0;
  return r;
}

RunResult run_seed(const ExperimentSpec& spec, std::uint64_t seed) {
  const auto dataset = build_dataset(spec, seed);
  TrainConfig train = spec.train;
  train.seed = seed;
  auto pretrained = make_pretraining_model(dataset, train);
  const auto report = pretrain_ind(pretrained, dataset, train);
  auto r = run_method(spec.method, pretrained, dataset, train, spec.baseline, {}, spec.k_ceiling);
  r.diagnostics.pretrain_ind_val_acc = report.ind_val_acc;
  return r;
}

std::string run_metrics_json(const RunResult& r) {
  json j = json::parse(metrics_to_json(r.metrics));
  auto comp = [](const Compactness& c) {
    return json{{"intra", c.intra}, {"inter", c.inter}, {"ratio", c.ratio}};
  };
  j["compactness"] = json{{"ind", comp(r.compactness.ind)},
                          {"ood", comp(r.compactness.ood)},
                          {"all", comp(r.compactness.all)}};
  const auto& d = r.diagnostics;
  j["diagnostics"] = json{
      {"method", to_string(r.method)},
      {"seed", r.seed},
      {"representation", d.representation},
      {"pretrain_ind_val_acc", d.pretrain_ind_val_acc},
      {"best_epoch", d.best_epoch},
      {"final_pseudo_acc", d.final_pseudo_acc},
      {"epochs_to_plateau", d.epochs_to_plateau},
      {"test_silhouette", d.test_silhouette},
      {"estimated_k", d.estimated_k},
      {"k_max", d.k_max},
      {"dataset_digest", hex64(d.dataset_digest)},
      {"pretrained_digest", hex64(d.pretrained_digest)},
  };
  return j.dump(2) + "\n";
}

void write_run(const RunResult& r, const ExperimentSpec& spec, const std::filesystem::path& dir) {
  make_dir(dir);
  write_text(dir / "metrics.json", run_metrics_json(r));
  write_curves_csv(r.artifacts.curves, dir / "curves.csv");
  export_projection(r.test_embedding, r.test_labels, r.prototypes, dir / "projection.csv");
  const auto& best = r.artifacts.best_model ? r.artifacts.best_model : r.artifacts.final_model;
  const auto& best_bank = r.artifacts.best_model ? r.artifacts.best_bank : r.artifacts.final_bank;
  save_checkpoint(dir / "best.ckpt", *best, best_bank ? &*best_bank : nullptr);
  save_checkpoint(dir / "final.ckpt", *r.artifacts.final_model,
                  r.artifacts.final_bank ? &*r.artifacts.final_bank : nullptr);
  write_text(dir / "config.json", spec_to_json(single_run_spec(spec, r.seed)));
  write_text(dir / "timing.json", json{{"wall_seconds", r.artifacts.wall_seconds}}.dump(2) + "\n");
}

Summary summarize(std::span<const RunResult> runs) {
  Summary s;
  if (runs.empty()) return s;
  const auto first = flat_metrics(runs.front());
  for (std::size_t m = 0; m < first.size(); ++m) {
    std::vector<double> values;
    for (const auto& r : runs) values.push_back(flat_metrics(r)[m].second);
    s.metric_names.push_back(first[m].first);
    s.mean.push_back(mean_of(values));
    s.sd.push_back(sd_of(values));
  }
  return s;
}

std::vector<RunResult> run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  std::vector<RunResult> runs;
  for (auto seed : spec.seeds) {
    runs.push_back(run_seed(spec, seed));
    write_run(runs.back(), spec, spec.out / ("seed_" + std::to_string(seed)));
  }
  json j;
  j["method"] = to_string(spec.method);
  j["seeds"] = spec.seeds;
  j["metrics"] = summary_json(summarize(runs));
  write_text(spec.out / "summary.json", j.dump(2) + "\n");
  return runs;
}

void run_sweep(const ExperimentSpec& spec) {
  if (!spec.sweep) throw ConfigError("no sweep axis given");
  const auto& axis = *spec.sweep;
  if (axis.key == "seeds" || axis.key == "out") throw ConfigError("cannot sweep '" + axis.key + "'");
  // Resolve every point first so a bad key or value leaves nothing on disk.
  std::vector<ExperimentSpec> points;
  for (const auto& value : axis.values) {
    ExperimentSpec p = spec;
    p.sweep.reset();
    apply_override(p, axis.key, value);
    p.out = spec.out / dir_safe(axis.key + "=" + value);
    points.push_back(std::move(p));
  }
  make_dir(spec.out);

  json table = json::array();
  std::ostringstream csv;
  bool header = false;
  for (std::size_t v = 0; v < points.size(); ++v) {
    std::vector<RunResult> runs;
    for (auto seed : points[v].seeds) {
      runs.push_back(run_seed(points[v], seed));
      write_run(runs.back(), points[v], points[v].out / ("seed_" + std::to_string(seed)));
    }
    const auto s = summarize(runs);
    if (!header) {
      csv << "key,value,n_seeds";
      for (const auto& name : s.metric_names) csv << ',' << name << "_mean," << name << "_sd";
      csv << '\n';
      header = true;
    }
    csv << axis.key << ',' << axis.values[v] << ',' << runs.size();
    for (std::size_t m = 0; m < s.mean.size(); ++m) {
      char buf[64];
      std::snprintf(buf, sizeof buf, ",%.17g,%.17g", s.mean[m], s.sd[m]);
      csv << buf;
    }
    csv << '\n';
    json row;
    row["value"] = axis.values[v];
    row["seeds"] = points[v].seeds;
    row["metrics"] = summary_json(s);
    table.push_back(row);
  }
  write_text(spec.out / "sweep.csv", csv.str());
  write_text(spec.out / "sweep.json", json{{"key", axis.key}, {"points", table}}.dump(2) + "\n");
}

}  // namespace dpl
