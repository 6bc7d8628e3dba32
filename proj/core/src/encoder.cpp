#include "dpl/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dpl {

namespace {

constexpr double kNormFloor = 1e-12;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Matrix gaussian_matrix(int rows, int cols, double scale, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * standard_normal(rng);
  return m;
}

// Semi-orthogonal weights with gain sqrt(2). Gaussian init distorted the input
// geometry enough that OOD clusters were hard to recover downstream.
Matrix linear_init(int rows, int cols, std::uint64_t seed) {
  Rng rng(seed);
  const bool tall = rows >= cols;
  const Eigen::MatrixXd g = gaussian_matrix(tall ? rows : cols, tall ? cols : rows, 1.0, rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(g.rows(), g.cols());
  // Sign fix so the factorization is unique.
  const Eigen::MatrixXd r = qr.matrixQR();
  for (Eigen::Index k = 0; k < q.cols(); ++k) {
    if (r(k, k) < 0.0) q.col(k) = -q.col(k);
  }
  Matrix w = tall ? Matrix(q) : Matrix(q.transpose());
  return std::numbers::sqrt2 * w;
}

Matrix affine(const Matrix& x, const Matrix& w, const Vector& b) {
  Matrix out = x * w.transpose();
  out.rowwise() += b.transpose();
  return out;
}

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  Matrix mask(rows, cols);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = uniform01(rng) < rate ? 0.0 : keep_scale;
  }
  return mask;
}

ViewRecord run_view(const EncoderModel& model, const Matrix& x, Rng* rng) {
  const auto& p = model.parameters();
  const double rate = model.dropout_rate();
  const bool drop = rng != nullptr && rate > 0.0;
  ViewRecord v;
  v.pre1 = affine(x, p.enc_w1, p.enc_b1);
  v.hidden1 = v.pre1.unaryExpr(&gelu);
  if (drop) {
    v.mask1 = dropout_mask(v.hidden1.rows(), v.hidden1.cols(), rate, *rng);
    v.hidden1 = v.hidden1.cwiseProduct(v.mask1);
  }
  v.pre2 = affine(v.hidden1, p.enc_w2, p.enc_b2);
  v.features = v.pre2.unaryExpr(&gelu);
  if (drop) {
    v.mask2 = dropout_mask(v.features.rows(), v.features.cols(), rate, *rng);
    v.features = v.features.cwiseProduct(v.mask2);
  }

  v.proj_pre = affine(v.features, p.proj_w1, p.proj_b1);
  v.proj_hidden = v.proj_pre.unaryExpr(&gelu);
  v.raw_embedding = affine(v.proj_hidden, p.proj_w2, p.proj_b2);
  v.raw_norms = v.raw_embedding.rowwise().norm();
  v.z = v.raw_embedding;
  for (Eigen::Index i = 0; i < v.z.rows(); ++i) {
    v.z.row(i) /= std::max(v.raw_norms[i], kNormFloor);
  }

  const Matrix head = affine(v.features, p.cls_w, p.cls_b);
  if (p.ood_w1.size() > 0) {
    v.ood_pre = affine(v.features, p.ood_w1, p.ood_b1);
    v.ood_hidden = v.ood_pre.unaryExpr(&gelu);
    const Matrix ood = affine(v.ood_hidden, p.ood_w2, p.ood_b2);
    v.logits.resize(x.rows(), head.cols() + ood.cols());
    v.logits << head, ood;
  } else {
    v.logits = head;
  }
  return v;
}

void check_shape(const Matrix& g, const Matrix& like, const char* what) {
  if (g.size() == 0) return;
  if (g.rows() != like.rows() || g.cols() != like.cols()) {
    throw std::invalid_argument(std::string("gradient shape mismatch for ") + what);
  }
}

void backprop_view(const EncoderModel& model, const Matrix& x, const ViewRecord& v,
                   const Matrix& dz, const Matrix& dlogits, Parameters& g) {
  const auto& p = model.parameters();
  Matrix dfeat = Matrix::Zero(v.features.rows(), v.features.cols());

  if (dz.size() > 0) {
    Matrix draw(dz.rows(), dz.cols());
    for (Eigen::Index i = 0; i < dz.rows(); ++i) {
      const double n = std::max(v.raw_norms[i], kNormFloor);
      const double radial = v.z.row(i).dot(dz.row(i));
      draw.row(i) = (dz.row(i) - radial * v.z.row(i)) / n;
    }
    g.proj_w2.noalias() += draw.transpose() * v.proj_hidden;
    g.proj_b2 += draw.colwise().sum().transpose();
    const Matrix dpre = (draw * p.proj_w2).cwiseProduct(v.proj_pre.unaryExpr(&gelu_grad));
    g.proj_w1.noalias() += dpre.transpose() * v.features;
    g.proj_b1 += dpre.colwise().sum().transpose();
    dfeat.noalias() += dpre * p.proj_w1;
  }

  if (dlogits.size() > 0) {
    const Eigen::Index head_rows = p.cls_w.rows();
    const Matrix dhead = dlogits.leftCols(head_rows);
    g.cls_w.noalias() += dhead.transpose() * v.features;
    g.cls_b += dhead.colwise().sum().transpose();
    dfeat.noalias() += dhead * p.cls_w;
    if (p.ood_w1.size() > 0) {
      const Matrix dood = dlogits.rightCols(dlogits.cols() - head_rows);
      g.ood_w2.noalias() += dood.transpose() * v.ood_hidden;
      g.ood_b2 += dood.colwise().sum().transpose();
      const Matrix dpre = (dood * p.ood_w2).cwiseProduct(v.ood_pre.unaryExpr(&gelu_grad));
      g.ood_w1.noalias() += dpre.transpose() * v.features;
      g.ood_b1 += dpre.colwise().sum().transpose();
      dfeat.noalias() += dpre * p.ood_w1;
    }
  }

  if (v.mask2.size() > 0) dfeat = dfeat.cwiseProduct(v.mask2);
  const Matrix dpre2 = dfeat.cwiseProduct(v.pre2.unaryExpr(&gelu_grad));
  g.enc_w2.noalias() += dpre2.transpose() * v.hidden1;
  g.enc_b2 += dpre2.colwise().sum().transpose();
  Matrix dhidden1 = dpre2 * p.enc_w2;
  if (v.mask1.size() > 0) dhidden1 = dhidden1.cwiseProduct(v.mask1);
  const Matrix dpre1 = dhidden1.cwiseProduct(v.pre1.unaryExpr(&gelu_grad));
  g.enc_w1.noalias() += dpre1.transpose() * x;
  g.enc_b1 += dpre1.colwise().sum().transpose();
}

}  // namespace

Parameters Parameters::zeros_like() const {
  Parameters out;
  auto zero = [](auto& dst, const auto& src) { dst.setZero(src.rows(), src.cols()); };
  zero(out.enc_w1, enc_w1), zero(out.enc_b1, enc_b1), zero(out.enc_w2, enc_w2);
  zero(out.enc_b2, enc_b2), zero(out.proj_w1, proj_w1), zero(out.proj_b1, proj_b1);
  zero(out.proj_w2, proj_w2), zero(out.proj_b2, proj_b2), zero(out.cls_w, cls_w);
  zero(out.cls_b, cls_b), zero(out.ood_w1, ood_w1), zero(out.ood_b1, ood_b1);
  zero(out.ood_w2, ood_w2), zero(out.ood_b2, ood_b2);
  return out;
}

std::size_t Parameters::count() const {
  std::size_t n = 0;
  visit([&](std::string_view, const auto& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

bool Parameters::all_finite() const {
  bool ok = true;
  visit([&](std::string_view, const auto& t) { ok = ok && t.allFinite(); });
  return ok;
}

EncoderModel::EncoderModel(EncoderDims dims, double dropout_rate, ClassifierForm form)
    : dims_(dims), dropout_(dropout_rate), form_(form) {
  if (dims_.input < 1 || dims_.hidden < 1 || dims_.embedding < 2 || dims_.n_ind < 1 ||
      dims_.n_ood < 1) {
    throw std::invalid_argument("encoder dimensions must be positive (embedding >= 2)");
  }
  if (!(dropout_ >= 0.0 && dropout_ < 1.0)) throw std::invalid_argument("dropout_rate must lie in [0, 1)");
}

EncoderModel EncoderModel::for_pretraining(EncoderDims dims, double dropout_rate,
                                           std::uint64_t seed, ClassifierForm form) {
  EncoderModel m(dims, dropout_rate, form);
  const int d = dims.input;
  const int h = dims.hidden;
  const int e = dims.embedding;
  auto& p = m.params_;
  p.enc_w1 = linear_init(h, d, derive_seed(seed, 1));
  p.enc_b1 = Vector::Zero(h);
  p.enc_w2 = linear_init(h, h, derive_seed(seed, 2));
  p.enc_b2 = Vector::Zero(h);
  p.proj_w1 = linear_init(h, h, derive_seed(seed, 3));
  p.proj_b1 = Vector::Zero(h);
  p.proj_w2 = linear_init(e, h, derive_seed(seed, 4));
  p.proj_b2 = Vector::Zero(e);
  p.cls_w = linear_init(dims.n_ind, h, derive_seed(seed, 5));
  p.cls_b = Vector::Zero(dims.n_ind);
  p.ood_w1.resize(0, 0);
  p.ood_b1.resize(0);
  p.ood_w2.resize(0, 0);
  p.ood_b2.resize(0);
  return m;
}

EncoderModel::EncoderModel(EncoderDims dims, double dropout_rate, std::uint64_t seed,
                           ClassifierForm form)
    : EncoderModel(for_pretraining(dims, dropout_rate, seed, form)) {
  extend_classifier(derive_seed(seed, 6));
}

EncoderModel::EncoderModel(EncoderDims dims, double dropout_rate, ClassifierForm form,
                           bool extended, Parameters params)
    : EncoderModel(dims, dropout_rate, form) {
  extended_ = extended;
  params_ = std::move(params);
  const int h = dims_.hidden;
  const int head_rows =
      form_ == ClassifierForm::joint && extended_ ? dims_.n_ind + dims_.n_ood : dims_.n_ind;
  const bool ood_head = form_ == ClassifierForm::two_head && extended_;
  auto expect = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("parameter shape mismatch: ") + what);
  };
  expect(params_.enc_w1.rows() == h && params_.enc_w1.cols() == dims_.input, "enc_w1");
  expect(params_.enc_b1.size() == h, "enc_b1");
  expect(params_.enc_w2.rows() == h && params_.enc_w2.cols() == h, "enc_w2");
  expect(params_.enc_b2.size() == h, "enc_b2");
  expect(params_.proj_w1.rows() == h && params_.proj_w1.cols() == h, "proj_w1");
  expect(params_.proj_b1.size() == h, "proj_b1");
  expect(params_.proj_w2.rows() == dims_.embedding && params_.proj_w2.cols() == h, "proj_w2");
  expect(params_.proj_b2.size() == dims_.embedding, "proj_b2");
  expect(params_.cls_w.rows() == head_rows && params_.cls_w.cols() == h, "cls_w");
  expect(params_.cls_b.size() == head_rows, "cls_b");
  expect(ood_head ? params_.ood_w1.rows() == h && params_.ood_w1.cols() == h
                  : params_.ood_w1.size() == 0,
         "ood_w1");
  expect(ood_head ? params_.ood_w2.rows() == dims_.n_ood && params_.ood_w2.cols() == h
                  : params_.ood_w2.size() == 0,
         "ood_w2");
}

void EncoderModel::extend_classifier(std::uint64_t seed) {
  if (extended_) throw std::logic_error("classifier head already extended");
  const int h = dims_.hidden;
  const int m = dims_.n_ood;
  auto& p = mutable_parameters();
  if (form_ == ClassifierForm::joint) {
    Matrix w(dims_.n_ind + m, h);
    w.topRows(dims_.n_ind) = p.cls_w;
    w.bottomRows(m) = linear_init(m, h, derive_seed(seed, 0xE7));
    p.cls_w = std::move(w);
    Vector b = Vector::Zero(dims_.n_ind + m);
    b.head(dims_.n_ind) = p.cls_b;
    p.cls_b = std::move(b);
  } else {
    p.ood_w1 = linear_init(h, h, derive_seed(seed, 0xE8));
    p.ood_b1 = Vector::Zero(h);
    p.ood_w2 = linear_init(m, h, derive_seed(seed, 0xE9));
    p.ood_b2 = Vector::Zero(m);
  }
  extended_ = true;
}

const Matrix& ForwardRecord::z_aug() const {
  if (!augmented) throw std::logic_error("forward record has no augmented view");
  return augmented->z;
}

const Matrix& ForwardRecord::logits_aug() const {
  if (!augmented) throw std::logic_error("forward record has no augmented view");
  return augmented->logits;
}

ForwardRecord forward(const EncoderModel& model, const Matrix& batch, std::uint64_t rng_state,
                      bool training, bool augment) {
  if (batch.cols() != model.dims().input) {
    throw std::invalid_argument("batch dimension " + std::to_string(batch.cols()) +
                                " does not match encoder input " +
                                std::to_string(model.dims().input));
  }
  if (!batch.allFinite()) throw std::invalid_argument("non-finite input vector");
  ForwardRecord rec;
  rec.rng_state = rng_state;
  rec.training = training;
  rec.model_version = model.version();
  rec.input = batch;
  if (training) {
    Rng first(derive_seed(rng_state, 0));
    rec.view = run_view(model, batch, &first);
    if (augment) {
      Rng second(derive_seed(rng_state, 1));
      rec.augmented = run_view(model, batch, &second);
    }
  } else {
    rec.view = run_view(model, batch, nullptr);
  }
  return rec;
}

void backward(const EncoderModel& model, const ForwardRecord& record, const OutputGrads& grads,
              Parameters& accumulated) {
  if (record.model_version != model.version()) {
    throw std::logic_error("forward record is stale: model changed since the forward pass");
  }
  check_shape(grads.z, record.view.z, "z");
  check_shape(grads.logits, record.view.logits, "logits");
  const bool wants_aug = grads.z_aug.size() > 0 || grads.logits_aug.size() > 0;
  if (wants_aug && !record.augmented) {
    throw std::invalid_argument("augmented-view gradients given but the record has no augmented view");
  }
  backprop_view(model, record.input, record.view, grads.z, grads.logits, accumulated);
  if (wants_aug) {
    check_shape(grads.z_aug, record.augmented->z, "z_aug");
    check_shape(grads.logits_aug, record.augmented->logits, "logits_aug");
    backprop_view(model, record.input, *record.augmented, grads.z_aug, grads.logits_aug,
                  accumulated);
  }
}

Parameters backward(const EncoderModel& model, const ForwardRecord& record,
                    const OutputGrads& grads) {
  Parameters g = model.parameters().zeros_like();
  backward(model, record, grads, g);
  return g;
}

LrSchedule LrSchedule::with_warmup_fraction(double lr_base, double lr_min,
                                            std::size_t total_steps, double warmup_fraction) {
  LrSchedule s;
  s.lr_base = lr_base;
  s.lr_min = lr_min;
  s.total_steps = std::max<std::size_t>(total_steps, 1);
  s.warmup_steps = static_cast<std::size_t>(
      std::llround(warmup_fraction * static_cast<double>(s.total_steps)));
  return s;
}

double LrSchedule::at(std::size_t step) const {
  if (step < warmup_steps) {
    return lr_base * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  }
  const double span = static_cast<double>(std::max<std::size_t>(total_steps - std::min(total_steps, warmup_steps), 1));
  const double t = std::min(1.0, static_cast<double>(step - warmup_steps) / span);
  return lr_min + 0.5 * (lr_base - lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

SgdMomentum::SgdMomentum(const EncoderModel& model, SgdConfig config, LrSchedule schedule)
    : config_(config), schedule_(schedule), velocity_(model.parameters().zeros_like()) {}

double SgdMomentum::step(EncoderModel& model, const Parameters& grads) {
  const double lr = schedule_.at(step_);
  if (!(lr >= 0.0) || !std::isfinite(lr)) {
    throw std::logic_error("learning-rate schedule produced " + std::to_string(lr));
  }
  auto& params = model.mutable_parameters();
  const double mu = config_.momentum;
  const double wd = config_.weight_decay;
  auto update = [&](auto& theta, const auto& g, auto& v) {
    if (theta.size() == 0) return;
    if (g.rows() != theta.rows() || g.cols() != theta.cols() || v.size() != theta.size()) {
      throw std::invalid_argument("gradient and parameter shapes differ");
    }
    v = mu * v + g + wd * theta;
    theta -= lr * v;
  };
  update(params.enc_w1, grads.enc_w1, velocity_.enc_w1);
  update(params.enc_b1, grads.enc_b1, velocity_.enc_b1);
  update(params.enc_w2, grads.enc_w2, velocity_.enc_w2);
  update(params.enc_b2, grads.enc_b2, velocity_.enc_b2);
  update(params.proj_w1, grads.proj_w1, velocity_.proj_w1);
  update(params.proj_b1, grads.proj_b1, velocity_.proj_b1);
  update(params.proj_w2, grads.proj_w2, velocity_.proj_w2);
  update(params.proj_b2, grads.proj_b2, velocity_.proj_b2);
  update(params.cls_w, grads.cls_w, velocity_.cls_w);
  update(params.cls_b, grads.cls_b, velocity_.cls_b);
  update(params.ood_w1, grads.ood_w1, velocity_.ood_w1);
  update(params.ood_b1, grads.ood_b1, velocity_.ood_b1);
  update(params.ood_w2, grads.ood_w2, velocity_.ood_w2);
  update(params.ood_b2, grads.ood_b2, velocity_.ood_b2);
  ++step_;
  return lr;
}

}  // namespace dpl
