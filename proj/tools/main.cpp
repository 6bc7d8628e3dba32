// dpl: command-line runner for generalized intent discovery experiments.
//
// Exit codes: 0 success, 2 configuration error, 3 training diverged, 4 I/O error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dpl/calibration.hpp"
#include "dpl/checkpoint.hpp"
#include "dpl/experiment.hpp"

namespace fs = std::filesystem;
using namespace dpl;

namespace {

struct Options {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::string out;
  std::string method;
  std::vector<std::string> overrides;  // key=value
  std::string checkpoint;
  std::string dataset;
  std::string sweep_key;
  std::vector<std::string> sweep_values;
  std::string dump_plan;
  int k_ceiling = -1;
};

ExperimentSpec resolve_spec(const Options& o) {
  ExperimentSpec spec = o.config.empty() ? ExperimentSpec{} : load_spec(o.config);
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_override(spec, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!o.method.empty()) spec.method = parse_method(o.method);
  if (!o.seeds.empty()) spec.seeds = o.seeds;
  if (!o.out.empty()) spec.out = o.out;
  if (o.k_ceiling >= 0) spec.k_ceiling = o.k_ceiling;
  if (!o.dataset.empty()) {
    spec.data.kind = DataSource::Kind::saved;
    spec.data.path = o.dataset;
  }
  spec.validate();
  return spec;
}

fs::path seed_dir(const ExperimentSpec& spec, std::uint64_t seed) {
  return spec.seeds.size() == 1 ? spec.out : spec.out / ("seed_" + std::to_string(seed));
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void cmd_generate(const Options& o) {
  const auto spec = resolve_spec(o);
  for (auto seed : spec.seeds) {
    const auto dir = seed_dir(spec, seed);
    const auto ds = build_dataset(spec, seed);
    save_dataset(ds, dir);
    std::printf("wrote %zu examples (N=%d, M=%d, d=%d) to %s\n", ds.size(), ds.n_ind(), ds.n_ood(),
                ds.dimension(), dir.string().c_str());
  }
}

void cmd_pretrain(const Options& o) {
  const auto spec = resolve_spec(o);
  for (auto seed : spec.seeds) {
    const auto dir = seed_dir(spec, seed);
    ensure_dir(dir);
    const auto ds = build_dataset(spec, seed);
    TrainConfig train = spec.train;
    train.seed = seed;
    auto model = make_pretraining_model(ds, train);
    const auto report = pretrain_ind(model, ds, train);
    save_checkpoint(dir / "pretrained.ckpt", model);
    char digest[17];
    std::snprintf(digest, sizeof digest, "%016llx", static_cast<unsigned long long>(model_digest(model)));
    write_file(dir / "pretrain.json", "{\n  \"epochs\": " + std::to_string(report.epochs) +
                                          ",\n  \"ind_val_acc\": " + std::to_string(report.ind_val_acc) +
                                          ",\n  \"digest\": \"" + digest + "\"\n}\n");
    std::printf("seed %llu: IND validation accuracy %.4f, checkpoint %s\n",
                static_cast<unsigned long long>(seed), report.ind_val_acc,
                (dir / "pretrained.ckpt").string().c_str());
  }
}

void dump_plan(const RunResult& r, const GidDataset& ds, const TrainConfig& train, double epsilon,
               const fs::path& path) {
  const auto& model = r.artifacts.best_model ? *r.artifacts.best_model : *r.artifacts.final_model;
  auto rows = ds.indices(Split::train, Domain::ood);
  rows.resize(std::min(rows.size(), static_cast<std::size_t>(train.batch_size)));
  // OOD columns of the deterministic logits, as the calibration sees them.
  const auto out = forward(model, ds.gather(rows), 0, false, false);
  const Matrix ood = out.logits().rightCols(ds.n_ood());
  write_plan_csv(sk_calibrate(ood, epsilon, train.sk_iters), path);
}

void train_like(const Options& o, bool baseline_only) {
  const auto spec = resolve_spec(o);
  if (baseline_only && spec.method == Method::dpl) {
    throw ConfigError("baseline needs --method kmeans|deep_aligned|deep_aligned_mix|e2e|dpl_scl");
  }
  std::vector<RunResult> runs;
  for (auto seed : spec.seeds) {
    RunResult r;
    const auto ds = build_dataset(spec, seed);
    TrainConfig train = spec.train;
    train.seed = seed;
    if (!o.checkpoint.empty()) {
      auto ckpt = load_checkpoint(o.checkpoint);
      if (!ckpt.model.extended()) throw ConfigError("checkpoint is not a pretrained, extended model");
      r = run_method(spec.method, ckpt.model, ds, train, spec.baseline, {}, spec.k_ceiling);
    } else {
      r = run_seed(spec, seed);
    }
    const auto dir = seed_dir(spec, seed);
    write_run(r, spec, dir);
    if (!o.dump_plan.empty()) {
      const double eps = spec.method == Method::e2e ? train.sk_epsilon : train.alignment_epsilon;
      dump_plan(r, ds, train, eps, dir / o.dump_plan);
    }
    std::printf("%s seed %llu: ind_acc %.4f ood_acc %.4f all_acc %.4f all_f1 %.4f -> %s\n",
                std::string(to_string(spec.method)).c_str(), static_cast<unsigned long long>(seed),
                r.metrics.ind_acc, r.metrics.ood_acc, r.metrics.all_acc, r.metrics.all_f1,
                dir.string().c_str());
    runs.push_back(std::move(r));
  }
  if (runs.size() > 1) {
    const auto s = summarize(runs);
    std::string text = "{\n";
    for (std::size_t i = 0; i < s.metric_names.size(); ++i) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "  \"%s\": {\"mean\": %.17g, \"sd\": %.17g}%s\n",
                    s.metric_names[i].c_str(), s.mean[i], s.sd[i],
                    i + 1 < s.metric_names.size() ? "," : "");
      text += buf;
    }
    write_file(spec.out / "summary.json", text + "}\n");
  }
}

void cmd_evaluate(const Options& o) {
  if (o.checkpoint.empty()) throw ConfigError("evaluate needs --checkpoint");
  const auto spec = resolve_spec(o);
  const auto ckpt = load_checkpoint(o.checkpoint);
  const auto ds = build_dataset(spec, spec.seeds.front());
  const auto text = metrics_to_json(evaluate_checkpoint(ckpt.model, ds));
  if (!o.out.empty()) {
    ensure_dir(spec.out);
    write_file(spec.out / "metrics.json", text + "\n");
  }
  std::printf("%s\n", text.c_str());
}

void cmd_sweep(const Options& o) {
  auto spec = resolve_spec(o);
  if (!o.sweep_key.empty()) {
    if (o.sweep_values.empty()) throw ConfigError("--sweep-key needs --sweep-values");
    spec.sweep = SweepAxis{o.sweep_key, o.sweep_values};
  }
  if (!spec.sweep) throw ConfigError("sweep needs --sweep-key and --sweep-values (or a sweep block)");
  run_sweep(spec);
  std::printf("sweep over %s written to %s\n", spec.sweep->key.c_str(), spec.out.string().c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decoupled prototype learning for generalized intent discovery"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON experiment config");
    sub->add_option("--seed", o.seeds, "Run seed; repeat for several")->delimiter(',');
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--set", o.overrides, "Override a config key, key=value (repeatable)");
    sub->add_option("--dataset", o.dataset, "Saved dataset directory instead of the config's source");
    sub->add_option("--k-ceiling", o.k_ceiling, "Upper bound on the OOD class count for K estimation");
  };

  auto* gen = app.add_subcommand("generate", "Generate a synthetic dataset");
  common(gen);
  auto* pre = app.add_subcommand("pretrain", "Pretrain the encoder on labeled IND data");
  common(pre);
  auto* train = app.add_subcommand("train", "Train a method and score it on the test split");
  common(train);
  train->add_option("--method", o.method, "dpl (default) or a baseline name");
  train->add_option("--checkpoint", o.checkpoint, "Pretrained checkpoint to start from");
  train->add_option("--dump-plan", o.dump_plan, "Write the calibration plan of one OOD batch to this CSV");
  auto* base = app.add_subcommand("baseline", "Run a baseline method");
  common(base);
  base->add_option("--method", o.method, "kmeans, deep_aligned, deep_aligned_mix, e2e or dpl_scl")->required();
  base->add_option("--checkpoint", o.checkpoint, "Pretrained checkpoint to start from");
  base->add_option("--dump-plan", o.dump_plan, "Write the calibration plan of one OOD batch to this CSV");
  auto* ev = app.add_subcommand("evaluate", "Score a checkpoint on a dataset's test split");
  common(ev);
  ev->add_option("--checkpoint", o.checkpoint, "Checkpoint to score")->required();
  auto* sw = app.add_subcommand("sweep", "Sweep one config key over several values");
  common(sw);
  sw->add_option("--method", o.method, "Method to sweep");
  sw->add_option("--sweep-key", o.sweep_key, "Config key, e.g. gamma or imbalance_factor");
  sw->add_option("--sweep-values", o.sweep_values, "Comma-separated values")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) cmd_generate(o);
    else if (*pre) cmd_pretrain(o);
    else if (*train) train_like(o, false);
    else if (*base) train_like(o, true);
    else if (*ev) cmd_evaluate(o);
    else if (*sw) cmd_sweep(o);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << '\n';
    return 3;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
