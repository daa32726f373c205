// One test per acceptance criterion; each prints a single PASS/FAIL line.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <regex>
#include <sstream>

#include <gtest/gtest.h>

#include "apcon/autodiff.hpp"
#include "apcon/experiment.hpp"
#include "mock_fields.hpp"

using namespace apcon;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Accumulates the figures a criterion reports next to its verdict.
std::ostringstream& note() {
  static std::ostringstream s;
  return s;
}

class CriterionPrinter : public ::testing::EmptyTestEventListener {
  void OnTestStart(const ::testing::TestInfo&) override { note().str(""); }
  void OnTestEnd(const ::testing::TestInfo& info) override {
    static const std::regex name(R"(C(\d\d)_(\w+))");
    std::smatch m;
    const std::string n = info.name();
    if (!std::regex_match(n, m, name)) return;
    const char* verdict = info.result()->Skipped() ? "SKIP" : info.result()->Passed() ? "PASS" : "FAIL";
    std::cout << "criterion " << std::stoi(m[1]) << " " << m[2] << ": " << verdict << "  " << note().str()
              << std::endl;
  }
};

fs::path run_root() { return fs::path(APCON_ACCEPTANCE_DIR); }

// Shared desk-scale protocol: 1000 epochs over M=64 functions with a reduced
// collocation budget per iteration.
ExperimentConfig desk_config(Method method, double eps, const std::string& tag) {
  ExperimentConfig c;
  c.problem = ProblemId::I;
  c.eps = eps;
  c.model.method = method;
  c.m = 64;
  c.trials = 1;
  c.train.epochs = 1000;
  c.train.lr0 = 1e-3;
  c.train.n_int = 128;
  c.train.n_bdy = 64;
  c.train.n_init = 256;
  c.train.velocities_per_point = 8;
  c.train.risk.chunk_points = 32;
  c.train.eval_every = 50;
  c.train.checkpoint_every = 1000;
  c.dataset_path = (run_root() / ("data_I_m64.bin")).string();
  c.output_dir = (run_root() / tag).string();
  c.results_csv = (run_root() / "results.csv").string();
  c.label = tag;
  return c;
}

ResultRow run_logged(const ExperimentConfig& c) {
  fs::create_directories(run_root());
  auto progress = [&](const EpochRecord& r) {
    if (r.test_error)
      std::cout << "  [" << method_name(c.model.method) << " eps=" << c.eps << "] epoch " << r.epoch + 1 << " loss "
                << r.loss << " test " << *r.test_error << std::endl;
  };
  const ResultRow row = run_experiment(c, progress);
  std::cout << "  " << row.method << ": rel_l2 " << row.rel_l2_text() << " params " << row.param_count << " train "
            << row.wall_time_train_s << " s" << (row.message.empty() ? "" : "  (" + row.message + ")") << std::endl;
  return row;
}

Eigen::VectorXd random_input(int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.2, 1.5);
  Eigen::VectorXd a(size);
  for (auto& x : a) x = u(rng);
  return a;
}

// Glorot weights plus non-zero biases so every segment is exercised.
void randomize(OperatorModel& m, std::uint64_t seed) {
  m.initialize(seed);
  std::mt19937_64 rng(seed ^ 0xb1a5ULL);
  std::normal_distribution<double> n(0.0, 0.1);
  for (const auto& s : m.params().segments())
    if (s.cols == 1)
      for (std::size_t i = 0; i < s.length(); ++i) m.params().values()[s.offset + i] += n(rng);
}

}  // namespace

TEST(Acceptance, C01_QuadratureExactness) {
  const auto t0 = Clock::now();
  const auto q = gauss_legendre(32);
  std::vector<double> one, v, v2;
  for (double x : q.nodes()) {
    one.push_back(1.0);
    v.push_back(x);
    v2.push_back(x * x);
  }
  const double e0 = std::abs(moment(q, one) - 1.0), e1 = std::abs(moment(q, v)), e2 = std::abs(moment(q, v2) - 1.0 / 3.0);
  note() << "|<1>-1|=" << e0 << " |<v>|=" << e1 << " |<v2>-1/3|=" << e2;
  EXPECT_LE(e0, 1e-14);
  EXPECT_LE(e1, 1e-14);
  EXPECT_LE(e2, 1e-12);
  EXPECT_LT(seconds_since(t0), 1.0);
}

TEST(Acceptance, C02_AutodiffCorrectness) {
  const auto t0 = Clock::now();
  const double h = 1e-4;
  double worst_input = 0.0, worst_param = 0.0;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (Method method : all_methods()) {
    ModelConfig cfg;
    cfg.method = method;
    OperatorModel model(cfg);
    randomize(model, 11 + static_cast<int>(method));
    const InputGrid grid = InputGrid::uniform(cfg.height, cfg.width);
    const Eigen::VectorXd a = random_input(grid.size(), 5);

    for (const auto& net : model.nets()) {
      ad::NetForward f = [&](ad::Tape& tape, const ad::Jet& y) {
        ad::Var enc = net.encode(tape, tape.constant(a));
        return net.evaluate(tape, enc, y, 1);
      };
      for (int k = 0; k < 3; ++k) {
        std::vector<double> y{0.1 * u(rng), u(rng), 2 * u(rng) - 1};
        y.resize(static_cast<std::size_t>(net.query_dim()));
        // Partials below 1e-3 in magnitude are compared in absolute terms.
        worst_input = std::max(worst_input, ad::fd_check(f, y, h, &model.params(), 1e-3));
      }
    }

    const ProblemSpec problem = ProblemSpec::problem1(1e-2);
    Eigen::MatrixXd batch_a(grid.size(), 2);
    batch_a.col(0) = a;
    batch_a.col(1) = random_input(grid.size(), 6);
    std::mt19937_64 crng(3);
    const CollocationBatch batch = sample_collocation(problem, 16, 8, 16, grid, crng, 4);
    const auto fs = model.fields();
    const auto r = evaluate_risk(fs, &model.params(), problem, grid, batch_a, batch, true, {.chunk_points = 8});
    double gmax = 0.0;
    for (double g : r.gradient) gmax = std::max(gmax, std::abs(g));
    ParameterVector p = model.params();
    std::uniform_int_distribution<std::size_t> pick(0, p.size() - 1);
    for (int k = 0; k < 10; ++k) {
      const std::size_t i = pick(rng);
      const double keep = p.values()[i];
      p.values()[i] = keep + h;
      const double up = empirical_risk(fs, &p, problem, grid, batch_a, batch);
      p.values()[i] = keep - h;
      const double down = empirical_risk(fs, &p, problem, grid, batch_a, batch);
      p.values()[i] = keep;
      // Entries far below the gradient scale are compared against 1e-3 of that scale.
      worst_param = std::max(worst_param, ad::relative_difference(r.gradient[i], (up - down) / (2 * h), 1e-3 * gmax));
    }
  }
  note() << "input partials " << worst_input << ", risk gradients " << worst_param << ", "
         << seconds_since(t0) << " s";
  EXPECT_LE(worst_input, 1e-5);
  EXPECT_LE(worst_param, 1e-5);
  EXPECT_LT(seconds_since(t0), 60.0);
}

TEST(Acceptance, C03_StructuralInvariants) {
  const auto t0 = Clock::now();
  double g_mean = 0.0, r_parity = 0.0, j_anti = 0.0, j_mean = 0.0;
  for (Method method : {Method::ApdonV1, Method::ApconV1, Method::ApdonV2, Method::ApconV2}) {
    ModelConfig cfg;
    cfg.method = method;
    OperatorModel model(cfg);
    const auto fs = model.fields();
    const auto& q = fs.quadrature;
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int draw = 0; draw < 100; ++draw) {
      randomize(model, 1000 + draw);
      const Eigen::VectorXd a = random_input(cfg.height * cfg.width, draw);
      const std::span<const double> as(a.data(), static_cast<std::size_t>(a.size()));
      const double t = 0.1 * u(rng), x = u(rng);
      if (formulation_of(method) == Formulation::MicroMacro) {
        const auto vals = eval_rho_g_v1(fs, &model.params(), as, t, x);
        g_mean = std::max(g_mean, std::abs(moment(q, vals.g)));
      } else {
        const auto vals = eval_rho_r_j_v2(fs, &model.params(), as, t, x);
        for (std::size_t k = 0; k < q.size(); ++k) {
          r_parity = std::max(r_parity, std::abs(vals.r[k] - vals.r[q.mirror(k)]));
          j_anti = std::max(j_anti, std::abs(vals.j[k] + vals.j[q.mirror(k)]));
        }
        j_mean = std::max(j_mean, std::abs(moment(q, vals.j)));
      }
    }
  }
  note() << "max|<g>|=" << g_mean << " r parity=" << r_parity << " j antisymmetry=" << j_anti
         << " max|<j>|=" << j_mean << ", " << seconds_since(t0) << " s";
  EXPECT_LE(g_mean, 1e-13);
  EXPECT_EQ(r_parity, 0.0);
  EXPECT_EQ(j_anti, 0.0);
  EXPECT_LE(j_mean, 1e-14);
  EXPECT_LT(seconds_since(t0), 60.0);
}

TEST(Acceptance, C04_ResidualOracles) {
  using apcon::testing::ClosedForm;
  using apcon::testing::coord;
  using apcon::testing::linear_in;
  using apcon::testing::MockField;
  const auto t0 = Clock::now();
  // Micro-macro limit: ρ = x, g = −v.
  MockField rho{2, linear_in(1, 1.0)};
  MockField g{3, linear_in(2, -1.0)};
  const FieldSet v1{Formulation::MicroMacro, {&rho, &g}, gauss_legendre(32)};
  // Even-odd: ρ = r = 1 + x², j = −v ∂x r = −2xv from G_j = −xv.
  ClosedForm one_plus_x2 = [](ad::Tape& tape, const ad::Jet& y) {
    ad::Jet x = coord(tape, y, 1);
    return ad::shift(tape, ad::mul(tape, x, x), 1.0);
  };
  ClosedForm minus_xv = [](ad::Tape& tape, const ad::Jet& y) {
    return ad::scale(tape, ad::mul(tape, coord(tape, y, 1), coord(tape, y, 2)), -1.0);
  };
  MockField rho2{2, one_plus_x2}, r2{3, one_plus_x2}, j2{3, minus_xv};
  const FieldSet v2{Formulation::EvenOdd, {&rho2, &r2, &j2}, gauss_legendre(32)};

  double c_measured = 0.0, at_zero = 0.0, odd = 0.0;
  const std::vector<double> none;
  for (double eps : {1.0, 1e-1, 1e-2, 1e-4, 0.0}) {
    ProblemSpec p = ProblemSpec::problem1(1.0);
    p.eps = eps;
    for (double t : {0.01, 0.07})
      for (double x : {0.1, 0.5, 0.95})
        for (double v : {-0.9, -0.2, 0.4, 1.0}) {
          const double micro = std::abs(residual_v1(v1, nullptr, p, none, t, x, v).micro);
          if (eps == 0.0)
            at_zero = std::max(at_zero, micro);
          else
            c_measured = std::max(c_measured, micro / eps);
          odd = std::max(odd, std::abs(residual_v2(v2, nullptr, p, none, t, x, v).odd));
        }
  }
  note() << "C=" << c_measured << " micro at eps=0: " << at_zero << " odd: " << odd;
  EXPECT_LE(c_measured, 10.0);
  EXPECT_EQ(at_zero, 0.0);
  EXPECT_EQ(odd, 0.0);
  EXPECT_LT(seconds_since(t0), 1.0);
}

TEST(Acceptance, C05_ReferenceSolverApProperty) {
  const auto t0 = Clock::now();
  const InputGrid grid = InputGrid::uniform(32, 64);
  const Dataset data = generate_dataset(ProblemId::II, 8, 0.5, 7, grid);
  const Eigen::VectorXd& f0 = data.test.front().values;
  std::vector<double> dist;
  for (double eps : {1e-1, 1e-2, 1e-4}) {
    const ProblemSpec p = ProblemSpec::problem2(eps);
    const EvalGrid out = EvalGrid::uniform(p.t_max);
    const auto kinetic = solve_transport_ap(p, KineticGrid{}, grid, f0, out);
    const auto heat = diffusion_limit(p, HeatGrid{}, grid, f0, out);
    dist.push_back(relative_l2(kinetic, heat));
  }
  note() << "distance to diffusion limit eps=1e-1: " << dist[0] << ", 1e-2: " << dist[1] << ", 1e-4: " << dist[2]
         << ", " << seconds_since(t0) << " s";
  EXPECT_LE(dist[2], 1e-2);
  EXPECT_LE(dist[1], dist[0]);
  EXPECT_LE(dist[2], dist[1]);
  EXPECT_LT(seconds_since(t0), 120.0);
}

TEST(Acceptance, C06_HeatKernelOracles) {
  const auto t0 = Clock::now();
  const double k = 1.0 / 3.0;
  double semigroup = 0.0;
  const std::vector<double> xs{-1.5, -0.4, 0.0, 0.3, 1.2};
  for (auto [t, s] : {std::pair{0.05, 0.1}, std::pair{0.2, 0.01}}) {
    const auto u = heat_convolution([&](double y) { return heat_kernel(s, y, k); }, t, k, xs);
    for (std::size_t i = 0; i < xs.size(); ++i) semigroup = std::max(semigroup, std::abs(u[i] - heat_kernel(t + s, xs[i], k)));
  }

  // Gaussian on a wide interval with its (negligible) tail values as Dirichlet data.
  const double width = 0.2, lo = -3.0, hi = 3.0;
  auto gauss = [&](double y) { return std::exp(-y * y / (2 * width * width)); };
  const HeatGrid hg{.nx = 600};
  std::vector<double> rho0(static_cast<std::size_t>(hg.nx + 1));
  for (int i = 0; i <= hg.nx; ++i) rho0[i] = gauss(lo + (hi - lo) * i / hg.nx);
  const EvalGrid out = EvalGrid::uniform(0.1, 11, 61, lo, hi);
  const auto cn = solve_heat_cn(k, {}, rho0, gauss(lo), gauss(hi), lo, hi, hg, out);
  Eigen::MatrixXd exact(10, 61), numeric(10, 61);
  for (int i = 1; i < 11; ++i) {
    const auto u = heat_convolution(gauss, out.t[i], k, out.x);
    for (int j = 0; j < 61; ++j) {
      exact(i - 1, j) = u[j];
      numeric(i - 1, j) = cn.rho(i, j);
    }
  }
  const double gaussian = relative_l2(numeric, exact);
  note() << "semigroup " << semigroup << ", Gaussian vs Crank-Nicolson " << gaussian << ", " << seconds_since(t0)
         << " s";
  EXPECT_LE(semigroup, 1e-6);
  EXPECT_LE(gaussian, 1e-3);
  EXPECT_LT(seconds_since(t0), 30.0);
}

TEST(Acceptance, C07_DeskScaleTraining) {
  const auto t0 = Clock::now();
  const ResultRow v1 = run_logged(desk_config(Method::ApconV1, 1.0, "c07_apcon_v1"));
  const ResultRow v2 = run_logged(desk_config(Method::ApconV2, 1.0, "c07_apcon_v2"));
  note() << "APCON-v1 " << v1.rel_l2_text() << ", APCON-v2 " << v2.rel_l2_text() << ", " << seconds_since(t0) / 60
         << " min";
  for (const auto* r : {&v1, &v2}) {
    EXPECT_FALSE(r->failed) << r->message;
    EXPECT_FALSE(r->diverged) << r->message;
    EXPECT_LE(r->rel_l2, 1e-1) << r->method;
  }
  EXPECT_LE(seconds_since(t0), 2 * 3600.0);
}

TEST(Acceptance, C08_ApFailureReproduction) {
  const auto t0 = Clock::now();
  const ResultRow picon = run_logged(desk_config(Method::Picon, 1e-4, "c08_picon"));
  const ResultRow v1 = run_logged(desk_config(Method::ApconV1, 1e-4, "c08_apcon_v1"));
  const ResultRow v2 = run_logged(desk_config(Method::ApconV2, 1e-4, "c08_apcon_v2"));
  // Context for the PICON figure: error of holding ρ at its initial value for all t.
  const ExperimentConfig cfg = desk_config(Method::Picon, 1e-4, "c08_picon");
  const Dataset data = prepare_dataset(cfg);
  const auto refs = reference_fields(cfg, data);
  const EvalGrid grid = cfg.eval_grid();
  double frozen = 0.0;
  for (std::size_t s = 0; s < refs.size(); ++s) {
    const auto rho0 = initial_density(data.grid, data.test[s].values, gauss_legendre(32), grid.x);
    Eigen::MatrixXd held(grid.t.size(), grid.x.size());
    for (Eigen::Index i = 0; i < held.rows(); ++i)
      for (Eigen::Index j = 0; j < held.cols(); ++j) held(i, j) = rho0[static_cast<std::size_t>(j)];
    frozen += relative_l2(held, refs[s].rho) / static_cast<double>(refs.size());
  }
  note() << "PICON " << picon.rel_l2_text() << (picon.message.empty() ? "" : " (" + picon.message + ")")
         << ", APCON-v1 " << v1.rel_l2_text() << ", APCON-v2 " << v2.rel_l2_text() << ", rho frozen at t=0 "
         << frozen << ", " << seconds_since(t0) / 60 << " min";
  EXPECT_FALSE(picon.failed) << picon.message;
  EXPECT_TRUE(picon.diverged) << "PICON best error " << picon.rel_l2;
  for (const auto* r : {&v1, &v2}) {
    EXPECT_FALSE(r->failed) << r->message;
    EXPECT_FALSE(r->diverged) << r->message;
    EXPECT_LE(r->rel_l2, 1.5e-1) << r->method;
  }
  EXPECT_LE(seconds_since(t0), 3 * 3600.0);
}

TEST(Acceptance, C09_ParameterAccounting) {
  std::map<Method, std::size_t> count;
  for (Method m : all_methods()) {
    ModelConfig cfg;
    cfg.method = m;
    count[m] = OperatorModel(cfg).param_count();
  }
  const std::pair<Method, Method> pairs[] = {
      {Method::Picon, Method::Pidon}, {Method::ApconV1, Method::ApdonV1}, {Method::ApconV2, Method::ApdonV2}};
  for (auto [con, don] : pairs) {
    const double ratio = static_cast<double>(count[con]) / static_cast<double>(count[don]);
    note() << method_name(con) << "/" << method_name(don) << " " << count[con] << "/" << count[don] << "="
           << std::setprecision(3) << ratio << "  ";
    EXPECT_GE(ratio, 0.08);
    EXPECT_LE(ratio, 0.13);
  }
}

TEST(Acceptance, C10_AblationMachinery) {
  const auto t0 = Clock::now();
  ExperimentConfig base = desk_config(Method::ApconV2, 1e-4, "c10_ablation");
  base.m = 16;
  base.train.epochs = 100;
  base.train.eval_every = 25;
  base.train.checkpoint_every = 100;
  base.dataset_path = (run_root() / "data_I_m16.bin").string();
  base.results_csv.clear();
  // Baseline filters: (2,2) kernels, 4 channels, two layers.
  const std::vector<std::pair<AblationKind, std::string>> baseline = {{AblationKind::LayerNorm, "with LayerNorm"},
                                                                      {AblationKind::PoolOrder, "pool_then_activation"},
                                                                      {AblationKind::KernelShape, "(2,2)"},
                                                                      {AblationKind::Channels, "4"},
                                                                      {AblationKind::FilterLayers, "2"}};
  for (const auto& [kind, base_variant] : baseline) {
    const auto variants = ablation_variants(kind, base);
    const auto rows = run_ablation(kind, base);
    ASSERT_EQ(rows.size(), variants.size());
    note() << ablation_name(kind) << "[";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      note() << (i ? " " : "") << variants[i].name << "=" << rows[i].rel_l2_text();
      EXPECT_FALSE(rows[i].failed) << rows[i].message;
      if (variants[i].name == base_variant) EXPECT_FALSE(rows[i].diverged) << ablation_name(kind) << " baseline";
    }
    note() << "] ";

    std::ifstream csv(fs::path(base.output_dir) / ("ablation_" + ablation_name(kind) + ".csv"));
    ASSERT_TRUE(csv.good()) << ablation_name(kind);
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "kind,variant,method,rel_l2,param_count,wall_time_train_s,wall_time_infer_ms,config_hash");
    std::size_t n = 0;
    while (std::getline(csv, line)) {
      ++n;
      // Variant names may contain a quoted comma, e.g. "(2,2)".
      const std::string unquoted = std::regex_replace(line, std::regex("\"[^\"]*\""), "x");
      EXPECT_EQ(std::count(unquoted.begin(), unquoted.end(), ','), 7) << line;
    }
    EXPECT_EQ(n, variants.size());
  }
  note() << seconds_since(t0) / 60 << " min";
}

TEST(Acceptance, C11_InferenceSpeedup) {
  const ProblemSpec problem = ProblemSpec::problem1(1e-4);
  const EvalGrid grid = EvalGrid::uniform(problem.t_max);
  ExperimentConfig cfg;
  const InputGrid input = cfg.input_grid();
  const Dataset data = generate_dataset(ProblemId::I, 8, 0.5, 11, input);
  const TimingStats ref = time_reference(problem, KineticGrid{}, input, data.test[0].values, grid, 3);
  note() << "reference " << ref.mean_ms << "+-" << ref.stddev_ms << " ms";
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  for (Method method : {Method::ApconV1, Method::ApconV2}) {
    ModelConfig mc;
    mc.method = method;
    OperatorModel model(mc);
    model.initialize(1);
    std::vector<double> per_sample;
    TimingStats first;
    for (const auto& s : data.train) {
      const TimingStats t = time_inference(model, problem, s.values, grid, 5);
      if (first.empty()) first = t;
      per_sample.push_back(median(t.samples_ms));
      if (per_sample.size() == 4) break;
    }
    const double speedup = ref.mean_ms / first.mean_ms;
    const auto [lo, hi] = std::minmax_element(per_sample.begin(), per_sample.end());
    const double spread = (*hi - *lo) / median(per_sample);
    note() << ", " << method_name(method) << " " << first.mean_ms << "+-" << first.stddev_ms << " ms (x"
           << std::setprecision(3) << speedup << ", spread over samples " << spread << ")";
    EXPECT_GT(speedup, 5.0) << method_name(method);
    EXPECT_LE(spread, 0.4) << method_name(method) << " inference time varies across inputs";
  }
}

int main(int argc, char** argv) {
  ::testing::InitGoogleTest(&argc, argv);
  ::testing::UnitTest::GetInstance()->listeners().Append(new CriterionPrinter);
  return RUN_ALL_TESTS();
}
