#include "dpl/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "dpl/calibration.hpp"
#include "dpl/disambiguation.hpp"
#include "dpl/evaluation.hpp"
#include "dpl/losses.hpp"

namespace dpl {

namespace {

void require(bool ok, const std::string& key, const std::string& rule) {
  if (!ok) throw ConfigError("invalid " + key + ": " + rule);
}

int argmax_row(const Matrix& m, Eigen::Index i) {
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < m.cols(); ++j) {
    if (m(i, j) > m(i, best)) best = j;
  }
  return static_cast<int>(best);
}

}  // namespace

void TrainConfig::validate() const {
  require(epochs >= 1, "epochs", "must be at least 1");
  require(batch_size >= 2, "batch_size", "must be at least 2");
  require(lr_base > 0.0 && std::isfinite(lr_base), "lr_base", "must be positive");
  require(lr_min >= 0.0 && std::isfinite(lr_min), "lr_min", "must be non-negative");
  require(warmup_fraction >= 0.0 && warmup_fraction <= 1.0, "warmup_fraction", "must lie in [0, 1]");
  require(weight_decay >= 0.0, "weight_decay", "must be non-negative");
  require(momentum >= 0.0 && momentum < 1.0, "momentum", "must lie in [0, 1)");
  require(tau > 0.0, "tau", "must be positive");
  require(gamma >= 0.0 && gamma < 1.0, "gamma", "must lie in [0, 1)");
  require(dropout_rate >= 0.0 && dropout_rate < 1.0, "dropout_rate", "must lie in [0, 1)");
  require(alignment_epsilon > 0.0, "alignment_epsilon", "must be positive");
  require(sk_epsilon > 0.0, "sk_epsilon", "must be positive");
  require(sk_iters >= 0, "sk_iters", "must be non-negative");
  require(pretrain_epochs >= 0, "pretrain_epochs", "must be non-negative");
  require(hidden >= 1, "hidden", "must be positive");
  require(embedding >= 2, "embedding", "must be at least 2");
  for (double w : {weights.pcl, weights.ins, weights.ce, weights.scl}) {
    require(w >= 0.0 && std::isfinite(w), "loss weights", "must be finite and non-negative");
  }
}

namespace training {

std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> rows, int batch_size,
                                                   std::uint64_t seed) {
  Rng rng(seed);
  shuffle_in_place(rows, rng);
  std::vector<std::vector<std::size_t>> batches;
  const auto b = static_cast<std::size_t>(batch_size);
  for (std::size_t start = 0; start < rows.size(); start += b) {
    const auto end = std::min(rows.size(), start + b);
    batches.emplace_back(rows.begin() + static_cast<std::ptrdiff_t>(start),
                         rows.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (batches.size() > 1 && batches.back().size() < 2) {
    auto tail = std::move(batches.back());
    batches.pop_back();
    batches.back().insert(batches.back().end(), tail.begin(), tail.end());
  }
  return batches;
}

std::uint64_t batch_seed(std::uint64_t seed, int epoch, int batch) {
  return derive_seed(derive_seed(seed, 0xBA7C0000ULL + static_cast<std::uint64_t>(epoch)),
                     static_cast<std::uint64_t>(batch));
}

void guard_loss(double value, const char* name, int epoch, int batch) {
  if (!std::isfinite(value) || value > 1e6) {
    std::ostringstream msg;
    msg << "training diverged: " << name << " = " << value << " at epoch " << epoch << ", batch "
        << batch;
    throw DivergenceError(msg.str());
  }
}

Matrix embed(const EncoderModel& model, const Matrix& x, Representation what) {
  const auto rec = forward(model, x, 0, false);
  return what == Representation::embedding ? rec.z() : rec.features();
}

std::vector<int> predict(const EncoderModel& model, const Matrix& x) {
  const auto rec = forward(model, x, 0, false);
  std::vector<int> out(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) out[static_cast<std::size_t>(i)] = argmax_row(rec.logits(), i);
  return out;
}

double validation_silhouette(const EncoderModel& model, const GidDataset& dataset,
                             Representation what) {
  const auto rows = dataset.indices(Split::validation, Domain::ood);
  if (rows.size() < 2) return -1.0;
  const Matrix x = dataset.gather(rows);
  const auto rec = forward(model, x, 0, false);
  std::vector<int> assign(rows.size());
  for (Eigen::Index i = 0; i < x.rows(); ++i) assign[static_cast<std::size_t>(i)] = argmax_row(rec.logits(), i);
  if (std::set<int>(assign.begin(), assign.end()).size() < 2) return -1.0;
  return silhouette(what == Representation::embedding ? rec.z() : rec.features(), assign);
}

LrSchedule schedule_for(const TrainConfig& config, std::size_t total_steps) {
  return LrSchedule::with_warmup_fraction(config.lr_base, config.lr_min, total_steps,
                                          config.warmup_fraction);
}

}  // namespace training

EncoderModel make_pretraining_model(const GidDataset& dataset, const TrainConfig& config) {
  EncoderDims dims{dataset.dimension(), config.hidden, config.embedding, dataset.n_ind(),
                   dataset.n_ood()};
  return EncoderModel::for_pretraining(dims, config.dropout_rate, derive_seed(config.seed, 0x3D),
                                       config.classifier_form);
}

PrototypeBank make_prototype_bank(const GidDataset& dataset, const TrainConfig& config) {
  return PrototypeBank::init_random(dataset.n_ind(), dataset.n_ood(), config.embedding,
                                    derive_seed(config.seed, 0xB4), config.gamma);
}

PretrainReport pretrain_ind(EncoderModel& model, const GidDataset& dataset,
                            const TrainConfig& config) {
  config.validate();
  if (model.extended()) throw std::logic_error("pretraining expects an N-way classifier head");
  const auto train_rows = dataset.indices(Split::train, Domain::ind);
  if (train_rows.empty()) throw ConfigError("dataset has no labeled IND training examples");

  PretrainReport report;
  report.epochs = config.pretrain_epochs;
  if (config.pretrain_epochs > 0) {
    const auto per_epoch = training::make_batches(train_rows, config.batch_size, 0).size();
    SgdMomentum opt(model, {config.momentum, config.weight_decay},
                    training::schedule_for(config, per_epoch * static_cast<std::size_t>(config.pretrain_epochs)));
    const std::uint64_t seed = derive_seed(config.seed, 0x9E7);
    for (int epoch = 0; epoch < config.pretrain_epochs; ++epoch) {
      const auto batches = training::make_batches(train_rows, config.batch_size, derive_seed(seed, static_cast<std::uint64_t>(epoch)));
      for (std::size_t b = 0; b < batches.size(); ++b) {
        const Matrix x = dataset.gather(batches[b]);
        std::vector<int> y;
        y.reserve(batches[b].size());
        for (auto r : batches[b]) y.push_back(*dataset.training_label(r));
        const auto rec = forward(model, x, training::batch_seed(seed, epoch, static_cast<int>(b)), true, false);
        const auto ce = ce_loss(rec.logits(), y);
        training::guard_loss(ce.value, "pretraining CE", epoch + 1, static_cast<int>(b));
        OutputGrads g;
        g.logits = ce.grad;
        opt.step(model, backward(model, rec, g));
      }
    }
  }

  const auto val_rows = dataset.indices(Split::validation, Domain::ind);
  if (!val_rows.empty()) {
    const auto pred = training::predict(model, dataset.gather(val_rows));
    std::size_t hit = 0;
    for (std::size_t i = 0; i < val_rows.size(); ++i) hit += pred[i] == *dataset.training_label(val_rows[i]);
    report.ind_val_acc = static_cast<double>(hit) / static_cast<double>(val_rows.size());
  }
  model.extend_classifier(derive_seed(config.seed, 0xE77));
  return report;
}

RunArtifacts train_dpl(EncoderModel model, PrototypeBank bank, const GidDataset& dataset,
                       const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  if (!model.extended()) throw std::logic_error("train_dpl expects an (N+M)-way classifier head");
  if (bank.n_ind() != dataset.n_ind() || bank.n_ood() != dataset.n_ood() ||
      bank.dim() != model.dims().embedding) {
    throw std::invalid_argument("prototype bank does not match the dataset and model");
  }
  const auto start = std::chrono::steady_clock::now();
  bank.set_gamma(config.gamma);
  const int n = dataset.n_ind();
  const int m = dataset.n_ood();
  const auto train_rows = dataset.indices(Split::train, Domain::all);
  if (train_rows.size() < 2) throw ConfigError("need at least two training examples");

  const auto per_epoch = training::make_batches(train_rows, config.batch_size, 0).size();
  SgdMomentum opt(model, {config.momentum, config.weight_decay},
                  training::schedule_for(config, per_epoch * static_cast<std::size_t>(config.epochs)));
  const std::uint64_t seed = derive_seed(config.seed, 0xD91);
  const auto& w = config.weights;

  RunArtifacts art;
  double best_sil = -std::numeric_limits<double>::infinity();
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto batches = training::make_batches(train_rows, config.batch_size,
                                                derive_seed(seed, static_cast<std::uint64_t>(epoch)));
    EpochRecord rec;
    rec.epoch = epoch;
    std::vector<int> ood_assigned;
    std::vector<int> ood_truth;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& rows = batches[bi];
      const int b = static_cast<int>(bi);
      const auto bsz = static_cast<double>(rows.size());
      const Matrix x = dataset.gather(rows);
      std::vector<SampleMeta> meta;
      meta.reserve(rows.size());
      std::vector<Eigen::Index> ood_pos;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        meta.push_back({dataset.is_ind(rows[i]), dataset.training_label(rows[i])});
        if (!meta.back().is_ind) ood_pos.push_back(static_cast<Eigen::Index>(i));
      }

      const auto fwd = forward(model, x, training::batch_seed(seed, epoch, b), true, true);

      // Calibrate the OOD slice of the OOD rows' logits.
      Matrix calibrated(static_cast<Eigen::Index>(ood_pos.size()), m);
      if (!ood_pos.empty()) {
        const Matrix ood_logits = fwd.logits()(ood_pos, Eigen::lastN(m));
        calibrated = m >= 2 ? plan_to_distributions(sk_calibrate(ood_logits, config.alignment_epsilon, config.sk_iters))
                            : Matrix::Ones(ood_logits.rows(), 1);
      }
      const auto alignment = build_alignment(meta, calibrated, n, m);

      OutputGrads grads;
      grads.z = Matrix::Zero(fwd.z().rows(), fwd.z().cols());
      grads.z_aug = Matrix::Zero(fwd.z().rows(), fwd.z().cols());
      double pcl_v = 0.0, ins_v = 0.0, scl_v = 0.0;
      if (w.pcl > 0.0) {
        const auto pcl = pcl_loss(fwd.z(), alignment, bank, config.tau);
        pcl_v = pcl.value / bsz;
        grads.z += (w.pcl / bsz) * pcl.grad;
      }
      if (w.ins > 0.0) {
        const auto ins = instance_loss(fwd.z(), fwd.z_aug(), config.tau, config.include_augmented_negatives);
        ins_v = ins.value / bsz;
        grads.z += (w.ins / bsz) * ins.grad_z;
        grads.z_aug += (w.ins / bsz) * ins.grad_z_aug;
      }

      auto pseudo = assign_pseudo_labels(fwd.z(), meta, bank);
      std::vector<int> targets(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (!meta[i].is_ind && hooks.pseudo_label_oracle) pseudo[i].index = hooks.pseudo_label_oracle(rows[i]);
        targets[i] = pseudo[i].index;
        if (!meta[i].is_ind) {
          ood_assigned.push_back(pseudo[i].index);
          ood_truth.push_back(eval::TruthReader::label(dataset, rows[i]));
        }
      }
      if (w.scl > 0.0) {
        const auto scl = scl_loss(fwd.z(), targets, config.tau);
        scl_v = scl.value / bsz;
        grads.z += (w.scl / bsz) * scl.grad;
      }
      const auto ce = ce_loss(fwd.logits(), targets);
      grads.logits = w.ce * ce.grad;

      training::guard_loss(pcl_v, "PCL loss", epoch, b);
      training::guard_loss(ins_v, "instance loss", epoch, b);
      training::guard_loss(ce.value, "CE loss", epoch, b);
      training::guard_loss(scl_v, "SCL loss", epoch, b);

      rec.lr = opt.step(model, backward(model, fwd, grads));
      if (!model.parameters().all_finite()) {
        throw DivergenceError("training diverged: non-finite parameters at epoch " +
                              std::to_string(epoch) + ", batch " + std::to_string(b));
      }
      if (hooks.on_event) hooks.on_event(TrainEvent::optimizer_step, epoch, b);

      // Sequential EMA updates in batch order, after the optimizer step.
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const int c = argmax_row(alignment.q, static_cast<Eigen::Index>(i));
        if (c < n && !config.update_ind_prototypes) continue;
        bank.ema_update(fwd.z().row(static_cast<Eigen::Index>(i)), c);
      }
      if (hooks.on_event) hooks.on_event(TrainEvent::ema_update, epoch, b);

      rec.loss_pcl += pcl_v;
      rec.loss_ins += ins_v;
      rec.loss_ce += ce.value;
      rec.loss_scl += scl_v;
    }
    const auto nb = static_cast<double>(batches.size());
    rec.loss_pcl /= nb;
    rec.loss_ins /= nb;
    rec.loss_ce /= nb;
    rec.loss_scl /= nb;
    rec.pseudo_acc = ood_assigned.empty() ? 0.0 : pseudo_label_accuracy(ood_assigned, ood_truth);
    rec.val_silhouette = training::validation_silhouette(model, dataset, Representation::embedding);
    art.curves.push_back(rec);
    if (rec.val_silhouette > best_sil) {
      best_sil = rec.val_silhouette;
      art.best_epoch = epoch;
      art.best_model = model;
      art.best_bank = bank;
    }
    if (hooks.on_epoch) hooks.on_epoch(rec);
  }
  art.final_model = std::move(model);
  art.final_bank = std::move(bank);
  art.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return art;
}

int select_checkpoint(std::span<const EpochRecord> history) {
  if (history.empty()) throw std::invalid_argument("no epochs recorded");
  std::size_t best = 0;
  for (std::size_t i = 1; i < history.size(); ++i) {
    if (history[i].val_silhouette > history[best].val_silhouette) best = i;
  }
  return history[best].epoch;
}

void write_curves_csv(std::span<const EpochRecord> curves, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,loss_pcl,loss_ins,loss_ce,pseudo_acc,val_silhouette,lr\n";
  char line[512];
  for (const auto& r : curves) {
    std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.loss_pcl,
                  r.loss_ins, r.loss_ce, r.pseudo_acc, r.val_silhouette, r.lr);
    out << line;
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace dpl
