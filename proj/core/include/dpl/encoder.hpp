#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>

#include "dpl/common.hpp"

namespace dpl {

struct EncoderDims {
  int input = 0;
  int hidden = 64;
  int embedding = 16;
  int n_ind = 0;
  int n_ood = 0;
};

// joint: one linear (N+M)-way head. two_head: a linear IND head plus an
// independent two-layer OOD head, concatenated into the same logit vector.
enum class ClassifierForm { joint, two_head };

// Parameter tensors in declaration order, which is also the checkpoint order.
// The ood_* tensors are empty unless the classifier is two-headed.
struct Parameters {
  Matrix enc_w1;
  Vector enc_b1;
  Matrix enc_w2;
  Vector enc_b2;
  Matrix proj_w1;
  Vector proj_b1;
  Matrix proj_w2;
  Vector proj_b2;
  Matrix cls_w;
  Vector cls_b;
  Matrix ood_w1;
  Vector ood_b1;
  Matrix ood_w2;
  Vector ood_b2;

  template <typename F>
  void visit(F&& f) {
    f("enc_w1", enc_w1), f("enc_b1", enc_b1), f("enc_w2", enc_w2), f("enc_b2", enc_b2);
    f("proj_w1", proj_w1), f("proj_b1", proj_b1), f("proj_w2", proj_w2), f("proj_b2", proj_b2);
    f("cls_w", cls_w), f("cls_b", cls_b);
    f("ood_w1", ood_w1), f("ood_b1", ood_b1), f("ood_w2", ood_w2), f("ood_b2", ood_b2);
  }
  template <typename F>
  void visit(F&& f) const {
    const_cast<Parameters*>(this)->visit([&](std::string_view name, const auto& t) { f(name, t); });
  }

  Parameters zeros_like() const;
  std::size_t count() const;
  bool all_finite() const;
};

class EncoderModel {
 public:
  // Full (N+M)-way classifier head.
  EncoderModel(EncoderDims dims, double dropout_rate, std::uint64_t seed,
               ClassifierForm form = ClassifierForm::joint);

  // N-way head only, for IND pretraining; call extend_classifier() afterwards.
  static EncoderModel for_pretraining(EncoderDims dims, double dropout_rate, std::uint64_t seed,
                                      ClassifierForm form = ClassifierForm::joint);

  // Assembles a model from stored tensors (checkpoint loading).
  EncoderModel(EncoderDims dims, double dropout_rate, ClassifierForm form, bool extended,
               Parameters params);

  // Grows the head from N to N+M outputs with seed-determined OOD columns.
  void extend_classifier(std::uint64_t seed);

  const EncoderDims& dims() const { return dims_; }
  double dropout_rate() const { return dropout_; }
  ClassifierForm form() const { return form_; }
  bool extended() const { return extended_; }
  int n_outputs() const { return extended_ ? dims_.n_ind + dims_.n_ood : dims_.n_ind; }

  const Parameters& parameters() const { return params_; }
  // Any mutable access invalidates outstanding forward records.
  Parameters& mutable_parameters() {
    ++version_;
    return params_;
  }
  std::uint64_t version() const { return version_; }

 private:
  EncoderModel(EncoderDims dims, double dropout_rate, ClassifierForm form);

  EncoderDims dims_;
  double dropout_;
  ClassifierForm form_;
  bool extended_ = false;
  Parameters params_;
  std::uint64_t version_ = 0;
};

// Intermediate activations of one stochastic (or deterministic) pass.
struct ViewRecord {
  Matrix pre1;
  Matrix mask1;  // inverted-dropout scale factors; empty when dropout is off
  Matrix hidden1;
  Matrix pre2;
  Matrix mask2;
  Matrix features;  // encoder output f(x), after dropout
  Matrix proj_pre;
  Matrix proj_hidden;
  Matrix raw_embedding;
  Vector raw_norms;
  Matrix z;
  Matrix ood_pre;
  Matrix ood_hidden;
  Matrix logits;
};

struct ForwardRecord {
  std::uint64_t rng_state = 0;
  bool training = false;
  std::uint64_t model_version = 0;
  Matrix input;
  ViewRecord view;
  std::optional<ViewRecord> augmented;

  const Matrix& z() const { return view.z; }
  const Matrix& logits() const { return view.logits; }
  const Matrix& features() const { return view.features; }
  const Matrix& z_aug() const;
  const Matrix& logits_aug() const;
};

// Rows of batch are samples. In training mode the primary view and, when
// augment is set, a second view draw independent dropout masks from rng_state.
ForwardRecord forward(const EncoderModel& model, const Matrix& batch, std::uint64_t rng_state,
                      bool training, bool augment = true);

// Loss gradients w.r.t. the model outputs. Empty matrices are treated as zero.
struct OutputGrads {
  Matrix z;
  Matrix z_aug;
  Matrix logits;
  Matrix logits_aug;
};

// Adds d(loss)/d(theta) into grads, which must be shaped like model.parameters().
void backward(const EncoderModel& model, const ForwardRecord& record, const OutputGrads& grads,
              Parameters& accumulated);

Parameters backward(const EncoderModel& model, const ForwardRecord& record,
                    const OutputGrads& grads);

// Linear warm-up to lr_base, then cosine annealing down to lr_min.
struct LrSchedule {
  double lr_base = 0.02;
  double lr_min = 0.01;
  std::size_t total_steps = 1;
  std::size_t warmup_steps = 0;

  static LrSchedule with_warmup_fraction(double lr_base, double lr_min, std::size_t total_steps,
                                         double warmup_fraction);
  double at(std::size_t step) const;
};

struct SgdConfig {
  double momentum = 0.9;
  double weight_decay = 1.5e-4;
};

class SgdMomentum {
 public:
  SgdMomentum(const EncoderModel& model, SgdConfig config, LrSchedule schedule);

  // One update; returns the learning rate used.
  double step(EncoderModel& model, const Parameters& grads);

  std::size_t steps_taken() const { return step_; }
  const LrSchedule& schedule() const { return schedule_; }

 private:
  SgdConfig config_;
  LrSchedule schedule_;
  Parameters velocity_;
  std::size_t step_ = 0;
};

}  // namespace dpl
