#include <benchmark/benchmark.h>

#include "dpl/assignment.hpp"
#include "dpl/calibration.hpp"
#include "dpl/encoder.hpp"
#include "dpl/evaluation.hpp"
#include "dpl/losses.hpp"

namespace {

dpl::Matrix noise(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  dpl::Rng rng(seed);
  dpl::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dpl::standard_normal(rng);
  return m;
}

void BM_Sinkhorn(benchmark::State& state) {
  const auto b = state.range(0);
  const auto m = state.range(1);
  const dpl::Matrix logits = noise(b, m, 1);
  for (auto _ : state) benchmark::DoNotOptimize(dpl::sk_calibrate(logits, 1.0, 3));
}
BENCHMARK(BM_Sinkhorn)->Args({64, 6})->Args({256, 60})->Args({1024, 60});

void BM_ForwardBackward(benchmark::State& state) {
  const int b = static_cast<int>(state.range(0));
  dpl::EncoderModel model(dpl::EncoderDims{32, 64, 32, 8, 6}, 0.1, 1);
  const dpl::Matrix x = noise(b, 32, 2);
  const auto bank = dpl::PrototypeBank::init_random(8, 6, 32, 3);
  std::vector<int> labels(static_cast<std::size_t>(b));
  for (int i = 0; i < b; ++i) labels[static_cast<std::size_t>(i)] = i % 14;
  std::vector<dpl::SampleMeta> meta(static_cast<std::size_t>(b), dpl::SampleMeta{true, 0});
  for (int i = 0; i < b; ++i) meta[static_cast<std::size_t>(i)].label = i % 8;
  const auto alignment = dpl::build_alignment(meta, dpl::Matrix(0, 6), 8, 6);
  std::uint64_t step = 0;
  for (auto _ : state) {
    const auto rec = dpl::forward(model, x, step++, true);
    const auto p = dpl::pcl_loss(rec.z(), alignment, bank, 0.5);
    const auto in = dpl::instance_loss(rec.z(), rec.z_aug(), 0.5);
    const auto ce = dpl::ce_loss(rec.logits(), labels);
    dpl::OutputGrads g;
    g.z = p.grad + in.grad_z;
    g.z_aug = in.grad_z_aug;
    g.logits = ce.grad;
    benchmark::DoNotOptimize(dpl::backward(model, rec, g));
  }
}
BENCHMARK(BM_ForwardBackward)->Arg(64)->Arg(256);

void BM_Hungarian(benchmark::State& state) {
  const auto n = state.range(0);
  const Eigen::MatrixXd cost = noise(n, n, 4).cwiseAbs();
  for (auto _ : state) benchmark::DoNotOptimize(dpl::solve_assignment(cost));
}
BENCHMARK(BM_Hungarian)->Arg(6)->Arg(60)->Arg(150);

void BM_Silhouette(benchmark::State& state) {
  const auto n = state.range(0);
  const dpl::Matrix x = noise(n, 32, 5);
  std::vector<int> a(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) a[static_cast<std::size_t>(i)] = static_cast<int>(i % 6);
  for (auto _ : state) benchmark::DoNotOptimize(dpl::silhouette(x, a));
}
BENCHMARK(BM_Silhouette)->Arg(200)->Arg(1000);

}  // namespace
BENCHMARK_MAIN();
