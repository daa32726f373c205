// apcon command-line tool: data generation, training, evaluation, ablations,
// timing and reference solves.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include <CLI11.hpp>

#include "apcon/config.hpp"
#include "apcon/errors.hpp"
#include "apcon/experiment.hpp"
#include "apcon/refsolve.hpp"

using namespace apcon;

namespace {

void print_row(const ResultRow& r) {
  std::cout << std::setprecision(4) << r.method << "  problem " << r.problem << "  eps " << r.eps
            << "  rel_l2 " << r.rel_l2_text() << "  params " << r.param_count << "  train " << r.wall_time_train_s
            << " s  infer " << r.wall_time_infer_ms << " ms  trials " << r.trials;
  if (!r.message.empty()) std::cout << "  (" << r.message << ")";
  std::cout << '\n';
}

// Progress on stderr whenever a test error is available.
void progress(const EpochRecord& r) {
  if (!r.test_error) return;
  std::cerr << "epoch " << r.epoch + 1 << "  loss " << r.loss << "  lr " << r.lr << "  test rel_l2 " << *r.test_error
            << "  (" << r.seconds << " s/epoch)\n";
}

void print_stats(const char* what, const TimingStats& s) {
  std::cout << what << ": " << s.reps << " reps, mean " << s.mean_ms << " ms, sd " << s.stddev_ms << " ms\n";
}

ExperimentConfig config_for_problem(const std::string& problem, double eps) {
  ExperimentConfig c;
  c.problem = problem_from_name(problem);
  c.eps = eps;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Operator learning for the multiscale linear transport equation"};
  app.require_subcommand(1);

  // data gen
  auto* data = app.add_subcommand("data", "dataset utilities");
  data->require_subcommand(1);
  auto* gen = data->add_subcommand("gen", "generate an initial-function dataset");
  std::string gen_problem = "I", gen_out, gen_csv;
  std::size_t gen_m = 1024;
  double gen_l = 0.5;
  std::uint64_t gen_seed = 0;
  int gen_h = 32, gen_w = 64;
  gen->add_option("--problem", gen_problem, "I or II")->check(CLI::IsMember({"I", "II", "1", "2"}));
  gen->add_option("--m", gen_m, "number of samples");
  gen->add_option("--l", gen_l, "GRF correlation length");
  gen->add_option("--seed", gen_seed, "master seed");
  gen->add_option("--height", gen_h, "x points");
  gen->add_option("--width", gen_w, "v points");
  gen->add_option("--out", gen_out, "binary dataset path")->required();
  gen->add_option("--csv", gen_csv, "optional CSV export");

  // train
  auto* train = app.add_subcommand("train", "run an experiment from a config file");
  std::string train_config;
  int train_trials = 0, train_epochs = -1;
  train->add_option("--config", train_config, "JSON config")->required()->check(CLI::ExistingFile);
  train->add_option("--trials", train_trials, "best-of-k seeds (overrides the config)");
  train->add_option("--epochs", train_epochs, "override train.epochs");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset's test split");
  std::string eval_ckpt, eval_dataset;
  eval->add_option("--checkpoint", eval_ckpt)->required()->check(CLI::ExistingFile);
  eval->add_option("--dataset", eval_dataset)->required()->check(CLI::ExistingFile);

  // ablate
  auto* ablate = app.add_subcommand("ablate", "run an ablation grid");
  std::string ablate_kind, ablate_config;
  ablate->add_option("--kind", ablate_kind)
      ->required()
      ->check(CLI::IsMember({"layernorm", "pool_order", "kernel_shape", "channels", "filter_layers"}));
  ablate->add_option("--config", ablate_config)->required()->check(CLI::ExistingFile);

  // bench
  auto* bench = app.add_subcommand("bench", "time model inference against the reference solver");
  std::string bench_ckpt, bench_dataset;
  int bench_reps = 10;
  bench->add_option("--checkpoint", bench_ckpt)->required()->check(CLI::ExistingFile);
  bench->add_option("--reps", bench_reps);
  bench->add_option("--dataset", bench_dataset, "defaults to a fresh 8-sample dataset");

  // reference
  auto* reference = app.add_subcommand("reference", "solve one sample with the reference scheme");
  std::string ref_problem = "I", ref_out;
  double ref_eps = 1.0;
  std::uint64_t ref_seed = 0;
  std::size_t ref_sample = 0;
  int ref_nx = 200;
  bool ref_limit = false;
  reference->add_option("--problem", ref_problem)->check(CLI::IsMember({"I", "II", "1", "2"}));
  reference->add_option("--eps", ref_eps);
  reference->add_option("--seed", ref_seed, "dataset seed");
  reference->add_option("--sample", ref_sample, "sample index");
  reference->add_option("--nx", ref_nx, "spatial cells");
  reference->add_option("--out", ref_out, "CSV of rho(t, x)");
  reference->add_flag("--limit", ref_limit, "also report the distance to the diffusion limit");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const ProblemId p = problem_from_name(gen_problem);
      const ProblemSpec spec = ProblemSpec::make(p, 1.0);
      const Dataset d =
          generate_dataset(p, gen_m, gen_l, gen_seed, InputGrid::uniform(gen_h, gen_w, spec.x_left, spec.x_right));
      d.save(gen_out);
      if (!gen_csv.empty()) {
        std::ofstream out(gen_csv);
        d.write_csv(out);
      }
      std::cout << "wrote " << d.train.size() << " train + " << d.test.size() << " test samples to " << gen_out << '\n';
    } else if (train->parsed()) {
      ExperimentConfig cfg = load_experiment_config(train_config);
      if (train_trials > 0) cfg.trials = train_trials;
      if (train_epochs >= 0) cfg.train.epochs = train_epochs;
      const ResultRow row = run_experiment(cfg, progress);
      print_row(row);
      return row.failed ? 1 : 0;
    } else if (eval->parsed()) {
      const LoadedModel lm = load_model(eval_ckpt);
      ExperimentConfig cfg = lm.config;
      const Dataset d = Dataset::load(eval_dataset);
      if (d.meta.problem != cfg.problem) throw ConfigError("dataset problem does not match the checkpoint");
      const auto refs = reference_fields(cfg, d);
      const double err = mean_test_error(*lm.model, cfg.problem_spec(), Dataset::stack(d.test), refs, cfg.eval_grid());
      std::cout << method_name(cfg.model.method) << " mean rel_l2 over " << d.test.size() << " test samples: " << err
                << '\n';
    } else if (ablate->parsed()) {
      const ExperimentConfig cfg = load_experiment_config(ablate_config);
      for (const auto& r : run_ablation(ablation_from_name(ablate_kind), cfg, progress)) {
        std::cout << r.label << ": ";
        print_row(r);
      }
    } else if (bench->parsed()) {
      const LoadedModel lm = load_model(bench_ckpt);
      ExperimentConfig cfg = lm.config;
      cfg.m = 8;
      cfg.dataset_path = bench_dataset;
      const Dataset d = prepare_dataset(cfg);
      const ProblemSpec spec = cfg.problem_spec();
      const EvalGrid grid = cfg.eval_grid();
      const auto& a = d.test.front().values;
      const TimingStats model = time_inference(*lm.model, spec, a, grid, bench_reps);
      const TimingStats ref = time_reference(spec, cfg.reference, d.grid, a, grid, bench_reps);
      print_stats("model inference", model);
      print_stats("reference solve", ref);
      if (!model.empty() && model.mean_ms > 0) std::cout << "speedup " << ref.mean_ms / model.mean_ms << "x\n";
    } else if (reference->parsed()) {
      ExperimentConfig cfg = config_for_problem(ref_problem, ref_eps);
      cfg.data_seed = ref_seed;
      cfg.m = 8 * (ref_sample / 7 + 1);
      cfg.reference.nx = ref_nx;
      const Dataset d = prepare_dataset(cfg);
      if (ref_sample >= d.train.size()) throw ConfigError("sample index out of range");
      const ProblemSpec spec = cfg.problem_spec();
      const EvalGrid grid = cfg.eval_grid();
      const auto& f0 = d.train[ref_sample].values;
      const DensityField rho = solve_transport_ap(spec, cfg.reference, d.grid, f0, grid);
      for (const auto& [k, v] : rho.metadata) std::cout << k << " = " << v << '\n';
      std::cout << "rho range [" << rho.rho.minCoeff() << ", " << rho.rho.maxCoeff() << "]\n";
      if (ref_limit) {
        HeatGrid hg;
        hg.nx = ref_nx;
        const DensityField lim = diffusion_limit(spec, hg, d.grid, f0, grid);
        std::cout << "relative l2 distance to the diffusion limit: " << relative_l2(rho, lim) << '\n';
      }
      if (!ref_out.empty()) {
        std::ofstream out(ref_out);
        rho.write_csv(out);
      }
    }
  } catch (const apcon::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
