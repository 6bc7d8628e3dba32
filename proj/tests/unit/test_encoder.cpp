#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "dpl/checkpoint.hpp"
#include "dpl/encoder.hpp"
#include "dpl/losses.hpp"
#include "support.hpp"

namespace dpl {
namespace {

using test::gaussian;

constexpr EncoderDims kDims{8, 16, 8, 3, 2};

TEST(Encoder, ZeroWeightsGiveZeroLogits) {
  EncoderModel model(kDims, 0.1, 1);
  auto& p = model.mutable_parameters();
  p.cls_w.setZero();
  p.cls_b.setZero();
  Rng rng(1);
  const auto r = forward(model, gaussian(5, 8, rng), 7, true);
  EXPECT_EQ(r.logits().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(r.logits().cols(), 5);
}

TEST(Encoder, EmbeddingsAreUnitNorm) {
  EncoderModel model(kDims, 0.1, 2);
  Rng rng(2);
  const auto r = forward(model, gaussian(20, 8, rng), 3, true);
  for (Eigen::Index i = 0; i < 20; ++i) {
    EXPECT_NEAR(r.z().row(i).norm(), 1.0, 1e-12);
    EXPECT_NEAR(r.z_aug().row(i).norm(), 1.0, 1e-12);
  }
}

TEST(Encoder, EvalModeIsDeterministicAndIgnoresRngState) {
  EncoderModel model(kDims, 0.1, 3);
  Rng rng(3);
  const Matrix x = gaussian(6, 8, rng);
  const auto a = forward(model, x, 1, false);
  const auto b = forward(model, x, 99, false);
  EXPECT_EQ(a.z(), b.z());
  EXPECT_EQ(a.logits(), b.logits());
  EXPECT_EQ(a.view.mask1.size(), 0);
}

TEST(Encoder, TrainingViewsDifferUnderDropout) {
  EncoderModel model(kDims, 0.1, 4);
  Rng rng(4);
  const auto r = forward(model, gaussian(6, 8, rng), 5, true);
  EXPECT_GT((r.z() - r.z_aug()).norm(), 1e-6);
  const auto again = forward(model, r.input, 5, true);
  EXPECT_EQ(r.z(), again.z());
}

TEST(Encoder, DropoutZeroesAboutTheConfiguredFraction) {
  EncoderModel model(EncoderDims{8, 64, 8, 3, 2}, 0.1, 5);
  Rng rng(5);
  const auto r = forward(model, gaussian(500, 8, rng), 11, true);
  const auto& mask = r.view.mask1;
  const double zeros = static_cast<double>((mask.array() == 0.0).count()) / static_cast<double>(mask.size());
  EXPECT_NEAR(zeros, 0.1, 0.01);
  // Survivors are scaled by 1 / (1 - p).
  EXPECT_NEAR(mask.maxCoeff(), 1.0 / 0.9, 1e-12);
}

TEST(Encoder, ZeroOutputGradientsGiveZeroParameterGradients) {
  EncoderModel model(kDims, 0.1, 6, ClassifierForm::two_head);
  Rng rng(6);
  const auto r = forward(model, gaussian(4, 8, rng), 1, true);
  const auto g = backward(model, r, OutputGrads{});
  g.visit([](std::string_view, const auto& t) {
    if (t.size()) EXPECT_EQ(t.cwiseAbs().maxCoeff(), 0.0);
  });
}

TEST(Encoder, StaleRecordIsRejected) {
  EncoderModel model(kDims, 0.1, 7);
  Rng rng(7);
  const auto r = forward(model, gaussian(4, 8, rng), 1, true);
  model.mutable_parameters();
  EXPECT_THROW(backward(model, r, OutputGrads{}), std::logic_error);
}

// The composite objective through the full network, for both head layouts.
class NetworkGradient : public ::testing::TestWithParam<ClassifierForm> {};

TEST_P(NetworkGradient, MatchesFiniteDifferences) {
  for (int trial = 0; trial < 3; ++trial) {
    EncoderModel model(kDims, 0.1, 10 + trial, GetParam());
    Rng rng(20 + trial);
    const Matrix x = gaussian(8, 8, rng);
    const auto bank = PrototypeBank::init_random(3, 2, 8, 30 + trial);
    std::vector<SampleMeta> meta;
    for (int i = 0; i < 8; ++i) {
      meta.push_back(i % 2 == 0 ? SampleMeta{true, i % 3} : SampleMeta{false, std::nullopt});
    }
    Matrix calibrated(4, 2);
    for (int i = 0; i < 4; ++i) {
      const double a = uniform01(rng);
      calibrated.row(i) << a, 1.0 - a;
    }
    const auto alignment = build_alignment(meta, calibrated, 3, 2);
    const std::vector<int> labels{0, 3, 1, 4, 2, 3, 0, 4};

    auto check = [&](bool use_pcl, bool use_ins, bool use_ce) {
      const test::NetworkLoss loss = [&](const EncoderModel& m, OutputGrads* g) {
        const auto r = forward(m, x, 42, true);
        double value = 0.0;
        if (g) {
          g->z = Matrix::Zero(8, 8);
          g->z_aug = Matrix::Zero(8, 8);
          g->logits = Matrix::Zero(8, 5);
        }
        if (use_pcl) {
          const auto p = pcl_loss(r.z(), alignment, bank, 0.5);
          value += p.value;
          if (g) g->z += p.grad;
        }
        if (use_ins) {
          const auto in = instance_loss(r.z(), r.z_aug(), 0.5);
          value += in.value;
          if (g) {
            g->z += in.grad_z;
            g->z_aug += in.grad_z_aug;
          }
        }
        if (use_ce) {
          const auto c = ce_loss(r.logits(), labels);
          value += c.value;
          if (g) g->logits += c.grad;
        }
        return value;
      };
      return test::network_gradient_error(model, x, 42, loss);
    };
    EXPECT_LT(check(true, false, false), 1e-5);
    EXPECT_LT(check(false, true, false), 1e-5);
    EXPECT_LT(check(false, false, true), 1e-5);
    EXPECT_LT(check(true, true, true), 1e-5);
  }
}

INSTANTIATE_TEST_SUITE_P(BothForms, NetworkGradient,
                         ::testing::Values(ClassifierForm::joint, ClassifierForm::two_head),
                         [](const auto& info) {
                           return std::string(info.param == ClassifierForm::joint ? "joint" : "two_head");
                         });

TEST(Encoder, ExtendKeepsIndColumnsAndAddsOod) {
  auto model = EncoderModel::for_pretraining(kDims, 0.1, 8);
  EXPECT_EQ(model.n_outputs(), 3);
  const Matrix before = model.parameters().cls_w;
  model.extend_classifier(9);
  EXPECT_EQ(model.n_outputs(), 5);
  const auto& after = model.parameters().cls_w;
  EXPECT_EQ(after.rows() * after.cols(), before.rows() * before.cols() / 3 * 5);
  EXPECT_THROW(model.extend_classifier(9), std::logic_error);
}

TEST(LrSchedule, WarmupThenCosineEndpoints) {
  const auto s = LrSchedule::with_warmup_fraction(0.02, 0.01, 100, 0.1);
  EXPECT_EQ(s.warmup_steps, 10u);
  EXPECT_NEAR(s.at(0), 0.002, 1e-15);
  EXPECT_NEAR(s.at(9), 0.02, 1e-15);
  EXPECT_NEAR(s.at(10), 0.02, 1e-15);
  EXPECT_NEAR(s.at(100), 0.01, 1e-15);
  EXPECT_NEAR(s.at(55), 0.015, 1e-15);
  for (std::size_t t = 10; t < 100; ++t) EXPECT_LE(s.at(t + 1), s.at(t) + 1e-15);
}

TEST(Sgd, WeightDecayOnlyStepShrinksParameters) {
  EncoderModel model(kDims, 0.1, 12);
  LrSchedule s;
  s.lr_base = 0.1;
  s.lr_min = 0.1;
  SgdMomentum sgd(model, SgdConfig{0.9, 0.01}, s);
  const Parameters before = model.parameters();
  sgd.step(model, model.parameters().zeros_like());
  EXPECT_LT((model.parameters().enc_w1 - 0.999 * before.enc_w1).cwiseAbs().maxCoeff(), 1e-15);
  // Second step carries momentum: v = 0.9 v + wd * theta.
  sgd.step(model, model.parameters().zeros_like());
  const Matrix v1 = 0.01 * before.enc_w1;
  const Matrix theta1 = before.enc_w1 - 0.1 * v1;
  const Matrix v2 = 0.9 * v1 + 0.01 * theta1;
  EXPECT_LT((model.parameters().enc_w1 - (theta1 - 0.1 * v2)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Checkpoint, RoundTripsModelAndBank) {
  EncoderModel model(kDims, 0.1, 13, ClassifierForm::two_head);
  const auto bank = PrototypeBank::init_random(3, 2, 8, 5, 0.8);
  const auto path = std::filesystem::temp_directory_path() / "dpl_ckpt_test.bin";
  save_checkpoint(path, model, &bank);
  const auto back = load_checkpoint(path);
  EXPECT_EQ(model_digest(back.model), model_digest(model));
  ASSERT_TRUE(back.bank.has_value());
  EXPECT_EQ(back.bank->rows(), bank.rows());
  EXPECT_EQ(back.bank->gamma(), 0.8);
  EXPECT_EQ(back.model.form(), ClassifierForm::two_head);
  Rng rng(13);
  const Matrix x = gaussian(3, 8, rng);
  EXPECT_EQ(forward(model, x, 0, false).logits(), forward(back.model, x, 0, false).logits());
  std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptBytesAreRejected) {
  EncoderModel model(kDims, 0.1, 14);
  auto bytes = serialize_checkpoint(model);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad_magic), IoError);
  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  EXPECT_THROW(deserialize_checkpoint(truncated), IoError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(deserialize_checkpoint(trailing), IoError);
  EXPECT_THROW(load_checkpoint("/nonexistent/dpl.ckpt"), IoError);
}

TEST(Checkpoint, DigestTracksParameters) {
  EncoderModel a(kDims, 0.1, 15);
  EncoderModel b(kDims, 0.1, 15);
  EXPECT_EQ(model_digest(a), model_digest(b));
  b.mutable_parameters().cls_b(0) += 1e-12;
  EXPECT_NE(model_digest(a), model_digest(b));
}

}  // namespace
}  // namespace dpl
