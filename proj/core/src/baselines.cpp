#include "dpl/baselines.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <set>
#include <string>

#include "dpl/assignment.hpp"
#include "dpl/calibration.hpp"
#include "dpl/disambiguation.hpp"
#include "dpl/evaluation.hpp"
#include "dpl/kmeans.hpp"

namespace dpl {

std::string_view to_string(BaselineVariant v) {
  switch (v) {
    case BaselineVariant::kmeans: return "kmeans";
    case BaselineVariant::deep_aligned: return "deep_aligned";
    case BaselineVariant::deep_aligned_mix: return "deep_aligned_mix";
    case BaselineVariant::e2e: return "e2e";
    case BaselineVariant::dpl_scl: return "dpl_scl";
  }
  return "?";
}

std::string_view to_string(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::without_ins: return "without_ins";
    case Ablation::without_pcl: return "without_pcl";
    case Ablation::scl_replaces_pcl: return "scl_replaces_pcl";
    case Ablation::scl_replaces_ins: return "scl_replaces_ins";
  }
  return "?";
}

BaselineVariant parse_baseline(std::string_view name) {
  for (auto v : {BaselineVariant::kmeans, BaselineVariant::deep_aligned,
                 BaselineVariant::deep_aligned_mix, BaselineVariant::e2e, BaselineVariant::dpl_scl}) {
    if (to_string(v) == name) return v;
  }
  throw ConfigError("unknown baseline '" + std::string(name) + "'");
}

Ablation parse_ablation(std::string_view name) {
  for (auto a : {Ablation::full, Ablation::without_ins, Ablation::without_pcl,
                 Ablation::scl_replaces_pcl, Ablation::scl_replaces_ins}) {
    if (to_string(a) == name) return a;
  }
  throw ConfigError("unknown ablation '" + std::string(name) + "'");
}

void BaselineConfig::validate() const {
  if (kmeans_restarts < 1) throw ConfigError("invalid kmeans_restarts: must be positive");
  if (alignment_interval < 1) throw ConfigError("invalid alignment_interval: must be positive");
  if (!(swap_temperature > 0.0)) throw ConfigError("invalid swap_temperature: must be positive");
}

LossWeights ablation_weights(Ablation a) {
  switch (a) {
    case Ablation::full: return {1.0, 1.0, 1.0, 0.0};
    case Ablation::without_ins: return {1.0, 0.0, 1.0, 0.0};
    case Ablation::without_pcl: return {0.0, 1.0, 1.0, 0.0};
    case Ablation::scl_replaces_pcl: return {0.0, 1.0, 1.0, 1.0};
    case Ablation::scl_replaces_ins: return {1.0, 0.0, 1.0, 1.0};
  }
  return {};
}

Representation representation_for(BaselineVariant v) {
  return v == BaselineVariant::dpl_scl ? Representation::embedding : Representation::features;
}

std::vector<int> align_clusters(const Matrix& new_centroids, const Matrix& previous_centroids) {
  if (new_centroids.rows() != previous_centroids.rows() ||
      new_centroids.cols() != previous_centroids.cols()) {
    throw std::invalid_argument("centroid sets differ in shape");
  }
  const auto k = new_centroids.rows();
  Eigen::MatrixXd cost(k, k);
  for (Eigen::Index a = 0; a < k; ++a) {
    for (Eigen::Index b = 0; b < k; ++b) cost(a, b) = (new_centroids.row(a) - previous_centroids.row(b)).norm();
  }
  return solve_assignment(cost);
}

EncoderModel to_two_head(const EncoderModel& joint, std::uint64_t seed) {
  if (joint.form() != ClassifierForm::joint) throw std::invalid_argument("model is already two-headed");
  const int n = joint.dims().n_ind;
  Parameters p = joint.parameters();
  p.cls_w = Matrix(p.cls_w.topRows(n));
  p.cls_b = Vector(p.cls_b.head(n));
  p.ood_w1.resize(0, 0);
  p.ood_b1.resize(0);
  p.ood_w2.resize(0, 0);
  p.ood_b2.resize(0);
  EncoderModel m(joint.dims(), joint.dropout_rate(), ClassifierForm::two_head, false, std::move(p));
  m.extend_classifier(seed);
  return m;
}

namespace {

int argmax(const Eigen::Ref<const Eigen::RowVectorXd>& r) {
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < r.size(); ++j) {
    if (r[j] > r[best]) best = j;
  }
  return static_cast<int>(best);
}

void check_pretrained(const EncoderModel& model, const GidDataset& dataset) {
  if (!model.extended()) throw std::invalid_argument("baselines expect an extended classifier head");
  if (model.dims().input != dataset.dimension() || model.dims().n_ind != dataset.n_ind() ||
      model.dims().n_ood != dataset.n_ood()) {
    throw std::invalid_argument("model does not match the dataset");
  }
}

// Keeps the best-by-silhouette snapshot and the curves.
struct Tracker {
  RunArtifacts art;
  double best = -std::numeric_limits<double>::infinity();
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void record(const EpochRecord& rec, const EncoderModel& model) {
    art.curves.push_back(rec);
    if (rec.val_silhouette > best) {
      best = rec.val_silhouette;
      art.best_epoch = rec.epoch;
      art.best_model = model;
    }
  }
  RunArtifacts finish(EncoderModel model) {
    art.final_model = std::move(model);
    art.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return std::move(art);
  }
};

// Re-labels the training pool at the start of an epoch; returns the pseudo-label
// accuracy on OOD training samples. targets is indexed by dataset row.
using Relabel = std::function<double(int epoch, const EncoderModel& model, std::vector<int>& targets)>;

// Shared loop of the cluster-then-classify baselines: relabel, then one CE epoch.
RunArtifacts ce_baseline(const EncoderModel& pretrained, const GidDataset& dataset,
                         const TrainConfig& config, const Relabel& relabel, std::uint64_t tag) {
  EncoderModel model = pretrained;
  const auto rows = dataset.indices(Split::train, Domain::all);
  const auto per_epoch = training::make_batches(rows, config.batch_size, 0).size();
  SgdMomentum opt(model, {config.momentum, config.weight_decay},
                  training::schedule_for(config, per_epoch * static_cast<std::size_t>(config.epochs)));
  const std::uint64_t seed = derive_seed(config.seed, tag);
  std::vector<int> targets(dataset.size(), -1);
  for (auto r : rows) {
    if (dataset.is_ind(r)) targets[r] = *dataset.training_label(r);
  }
  Tracker t;
  double pacc = 0.0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    pacc = relabel(epoch, model, targets);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.pseudo_acc = pacc;
    const auto batches = training::make_batches(rows, config.batch_size, derive_seed(seed, static_cast<std::uint64_t>(epoch)));
    for (std::size_t b = 0; b < batches.size(); ++b) {
      std::vector<int> y;
      y.reserve(batches[b].size());
      for (auto r : batches[b]) y.push_back(targets[r]);
      const auto fwd = forward(model, dataset.gather(batches[b]), training::batch_seed(seed, epoch, static_cast<int>(b)), true, false);
      const auto ce = ce_loss(fwd.logits(), y);
      training::guard_loss(ce.value, "CE loss", epoch, static_cast<int>(b));
      OutputGrads g;
      g.logits = ce.grad;
      rec.lr = opt.step(model, backward(model, fwd, g));
      rec.loss_ce += ce.value;
    }
    rec.loss_ce /= static_cast<double>(batches.size());
    rec.val_silhouette = training::validation_silhouette(model, dataset, Representation::features);
    t.record(rec, model);
  }
  return t.finish(std::move(model));
}

KMeansResult cluster(const Matrix& x, int k, int restarts, std::uint64_t seed) {
  if (k > x.rows()) {
    throw ConfigError("cannot form " + std::to_string(k) + " clusters from " +
                      std::to_string(x.rows()) + " samples");
  }
  KMeansOptions opt;
  opt.restarts = restarts;
  opt.seed = seed;
  return kmeans(x, k, opt);
}

}  // namespace

RunArtifacts run_kmeans_pipeline(const EncoderModel& pretrained, const GidDataset& dataset,
                                 const TrainConfig& config, const BaselineConfig& baseline) {
  config.validate();
  baseline.validate();
  check_pretrained(pretrained, dataset);
  const auto ood_rows = dataset.indices(Split::train, Domain::ood);
  const auto truth = eval::TruthReader::labels(dataset, ood_rows);
  const int n = dataset.n_ind();
  double acc = 0.0;
  Relabel relabel = [&](int epoch, const EncoderModel& model, std::vector<int>& targets) {
    if (epoch == 1) {
      const Matrix f = training::embed(model, dataset.gather(ood_rows), Representation::features);
      const auto km = cluster(f, dataset.n_ood(), baseline.kmeans_restarts, derive_seed(config.seed, 0xC1));
      for (std::size_t i = 0; i < ood_rows.size(); ++i) targets[ood_rows[i]] = n + km.assignments[i];
      acc = pseudo_label_accuracy(km.assignments, truth);
    }
    return acc;
  };
  return ce_baseline(pretrained, dataset, config, relabel, 0xC0);
}

RunArtifacts run_deep_aligned(const EncoderModel& pretrained, const GidDataset& dataset,
                              const TrainConfig& config, const BaselineConfig& baseline) {
  config.validate();
  baseline.validate();
  check_pretrained(pretrained, dataset);
  const auto ood_rows = dataset.indices(Split::train, Domain::ood);
  const auto truth = eval::TruthReader::labels(dataset, ood_rows);
  const int n = dataset.n_ind();
  const int m = dataset.n_ood();
  std::optional<Matrix> previous;
  double acc = 0.0;
  Relabel relabel = [&](int epoch, const EncoderModel& model, std::vector<int>& targets) {
    if ((epoch - 1) % baseline.alignment_interval != 0) return acc;
    const Matrix f = training::embed(model, dataset.gather(ood_rows), Representation::features);
    const auto km = cluster(f, m, baseline.kmeans_restarts,
                            derive_seed(config.seed, 0xDA00 + static_cast<std::uint64_t>(epoch)));
    std::vector<int> perm(static_cast<std::size_t>(m));
    for (int c = 0; c < m; ++c) perm[static_cast<std::size_t>(c)] = c;
    if (previous) perm = align_clusters(km.centroids, *previous);
    Matrix aligned(m, f.cols());
    for (int c = 0; c < m; ++c) aligned.row(perm[static_cast<std::size_t>(c)]) = km.centroids.row(c);
    previous = aligned;
    std::vector<int> assigned(ood_rows.size());
    for (std::size_t i = 0; i < ood_rows.size(); ++i) {
      assigned[i] = perm[static_cast<std::size_t>(km.assignments[i])];
      targets[ood_rows[i]] = n + assigned[i];
    }
    acc = pseudo_label_accuracy(assigned, truth);
    return acc;
  };
  return ce_baseline(pretrained, dataset, config, relabel, 0xDA);
}

RunArtifacts run_deep_aligned_mix(const EncoderModel& pretrained, const GidDataset& dataset,
                                  const TrainConfig& config, const BaselineConfig& baseline) {
  config.validate();
  baseline.validate();
  check_pretrained(pretrained, dataset);
  const auto rows = dataset.indices(Split::train, Domain::all);
  const int n = dataset.n_ind();
  const int k = dataset.n_classes();
  std::vector<std::size_t> ood_pos;
  std::vector<int> ood_truth;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!dataset.is_ind(rows[i])) {
      ood_pos.push_back(i);
      ood_truth.push_back(eval::TruthReader::label(dataset, rows[i]));
    }
  }
  std::optional<Matrix> previous;
  double acc = 0.0;
  Relabel relabel = [&](int epoch, const EncoderModel& model, std::vector<int>& targets) {
    if ((epoch - 1) % baseline.alignment_interval != 0) return acc;
    const Matrix f = training::embed(model, dataset.gather(rows), Representation::features);
    const auto km = cluster(f, k, baseline.kmeans_restarts,
                            derive_seed(config.seed, 0xDB00 + static_cast<std::uint64_t>(epoch)));
    std::vector<int> label_of(static_cast<std::size_t>(k), -1);
    if (!previous) {
      // IND classes claim the clusters that best cover them; the rest become OOD ids.
      Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(k, n);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (dataset.is_ind(rows[i])) counts(km.assignments[i], *dataset.training_label(rows[i])) += 1.0;
      }
      const auto pick = solve_max_assignment(counts);
      int next_ood = n;
      for (int c = 0; c < k; ++c) {
        const int p = pick[static_cast<std::size_t>(c)];
        label_of[static_cast<std::size_t>(c)] = p >= 0 ? p : next_ood++;
      }
    } else {
      label_of = align_clusters(km.centroids, *previous);
    }
    Matrix by_label(k, f.cols());
    for (int c = 0; c < k; ++c) by_label.row(label_of[static_cast<std::size_t>(c)]) = km.centroids.row(c);
    previous = by_label;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      targets[rows[i]] = label_of[static_cast<std::size_t>(km.assignments[i])];
    }
    std::vector<int> assigned;
    assigned.reserve(ood_pos.size());
    for (auto i : ood_pos) assigned.push_back(targets[rows[i]]);
    acc = assigned.empty() ? 0.0 : pseudo_label_accuracy(assigned, ood_truth);
    return acc;
  };
  return ce_baseline(pretrained, dataset, config, relabel, 0xDB);
}

std::pair<Matrix, Matrix> swapped_targets(const Matrix& logits1, const Matrix& logits2,
                                          std::span<const SampleMeta> meta, int n_ind, int n_ood,
                                          double epsilon, int n_iters) {
  const auto b = logits1.rows();
  if (logits2.rows() != b || static_cast<std::size_t>(b) != meta.size() ||
      logits1.cols() != n_ind + n_ood || logits2.cols() != logits1.cols()) {
    throw std::invalid_argument("view logits and batch metadata disagree in shape");
  }
  std::vector<Eigen::Index> ood;
  for (std::size_t i = 0; i < meta.size(); ++i) {
    if (!meta[i].is_ind) ood.push_back(static_cast<Eigen::Index>(i));
  }
  Matrix q1(static_cast<Eigen::Index>(ood.size()), n_ood);
  Matrix q2(q1.rows(), n_ood);
  if (!ood.empty()) {
    if (n_ood >= 2) {
      q1 = plan_to_distributions(sk_calibrate(logits1(ood, Eigen::lastN(n_ood)), epsilon, n_iters));
      q2 = plan_to_distributions(sk_calibrate(logits2(ood, Eigen::lastN(n_ood)), epsilon, n_iters));
    } else {
      q1.setOnes();
      q2.setOnes();
    }
  }
  // View 1 learns from view 2's assignment and vice versa.
  return {build_alignment(meta, q2, n_ind, n_ood).q, build_alignment(meta, q1, n_ind, n_ood).q};
}

RunArtifacts run_e2e(const EncoderModel& pretrained, const GidDataset& dataset,
                     const TrainConfig& config, const BaselineConfig& baseline,
                     const TrainHooks& hooks) {
  config.validate();
  baseline.validate();
  check_pretrained(pretrained, dataset);
  EncoderModel model = baseline.two_head ? to_two_head(pretrained, derive_seed(config.seed, 0xE2E))
                                         : pretrained;
  const int n = dataset.n_ind();
  const int m = dataset.n_ood();
  const double temp = baseline.swap_temperature;
  const auto rows = dataset.indices(Split::train, Domain::all);
  const auto per_epoch = training::make_batches(rows, config.batch_size, 0).size();
  SgdMomentum opt(model, {config.momentum, config.weight_decay},
                  training::schedule_for(config, per_epoch * static_cast<std::size_t>(config.epochs)));
  const std::uint64_t seed = derive_seed(config.seed, 0xE2);
  Tracker t;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    std::vector<int> assigned, truth;
    const auto batches = training::make_batches(rows, config.batch_size, derive_seed(seed, static_cast<std::uint64_t>(epoch)));
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& batch = batches[bi];
      const int b = static_cast<int>(bi);
      std::vector<SampleMeta> meta;
      meta.reserve(batch.size());
      for (auto r : batch) meta.push_back({dataset.is_ind(r), dataset.training_label(r)});
      const auto fwd = forward(model, dataset.gather(batch), training::batch_seed(seed, epoch, b), true, true);
      const auto [t1, t2] = swapped_targets(fwd.logits(), fwd.logits_aug(), meta, n, m,
                                            config.sk_epsilon, config.sk_iters);
      const auto r1 = soft_ce_loss(fwd.logits() / temp, t1);
      const auto r2 = soft_ce_loss(fwd.logits_aug() / temp, t2);
      const double loss = 0.5 * (r1.value + r2.value);
      training::guard_loss(loss, "swapped CE loss", epoch, b);
      OutputGrads g;
      g.logits = (0.5 / temp) * r1.grad;
      g.logits_aug = (0.5 / temp) * r2.grad;
      rec.lr = opt.step(model, backward(model, fwd, g));
      if (!model.parameters().all_finite()) {
        throw DivergenceError("training diverged: non-finite parameters at epoch " + std::to_string(epoch));
      }
      if (hooks.on_event) hooks.on_event(TrainEvent::optimizer_step, epoch, b);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        if (meta[i].is_ind) continue;
        assigned.push_back(argmax(t1.row(static_cast<Eigen::Index>(i))));
        truth.push_back(eval::TruthReader::label(dataset, batch[i]));
      }
      rec.loss_ce += loss;
    }
    rec.loss_ce /= static_cast<double>(batches.size());
    rec.pseudo_acc = assigned.empty() ? 0.0 : pseudo_label_accuracy(assigned, truth);
    rec.val_silhouette = training::validation_silhouette(model, dataset, Representation::features);
    t.record(rec, model);
    if (hooks.on_epoch) hooks.on_epoch(rec);
  }
  return t.finish(std::move(model));
}

RunArtifacts run_dpl_scl(const EncoderModel& pretrained, const GidDataset& dataset,
                         const TrainConfig& config, const BaselineConfig& baseline) {
  baseline.validate();
  check_pretrained(pretrained, dataset);
  TrainConfig c = config;
  c.weights = ablation_weights(baseline.ablation);
  return train_dpl(pretrained, make_prototype_bank(dataset, c), dataset, c);
}

}  // namespace dpl
