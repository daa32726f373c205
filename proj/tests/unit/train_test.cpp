#include <cmath>
#include <filesystem>
#include <limits>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "apcon/errors.hpp"
#include "apcon/train.hpp"

using namespace apcon;

namespace {

ModelConfig tiny_model(Method method) {
  ModelConfig cfg;
  cfg.method = method;
  cfg.height = 8;
  cfg.width = 16;
  cfg.hidden_width = 6;
  cfg.p = 6;
  cfg.branch_layers = 2;
  cfg.trunk_layers = 2;
  cfg.lift_width = 6;
  cfg.filters = {FilterLayerConfig{}};
  cfg.quadrature_nodes = 4;
  return cfg;
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.epochs = 3;
  t.lr0 = 1e-3;
  t.batch = 3;
  t.n_int = 16;
  t.n_bdy = 6;
  t.n_init = 20;
  t.velocities_per_point = 4;
  t.eval_every = 2;
  t.seed = 5;
  t.risk.chunk_points = 8;
  return t;
}

}  // namespace

TEST(Schedule, StepDecay) {
  TrainConfig c;
  c.lr0 = 1e-3;
  c.decay = 0.5;
  c.decay_every = 10;
  EXPECT_DOUBLE_EQ(lr_at(c, 0), 1e-3);
  EXPECT_DOUBLE_EQ(lr_at(c, 9), 1e-3);
  EXPECT_DOUBLE_EQ(lr_at(c, 10), 5e-4);
  EXPECT_DOUBLE_EQ(lr_at(c, 25), 2.5e-4);
  EXPECT_THROW(lr_at(c, -1), DomainError);
}

TEST(Adam, FirstTwoStepsByHand) {
  ParameterVector p;
  p.add_segment("w", 2, 1);
  p.values()[0] = 1.0;
  p.values()[1] = -2.0;
  AdamState s(2);
  const double lr = 0.1;
  const std::vector<double> g1{0.5, -4.0};
  adam_step(s, p, g1, lr);
  // Bias correction makes the first step lr·g/(|g| + eps).
  EXPECT_NEAR(p.values()[0], 1.0 - lr * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_NEAR(p.values()[1], -2.0 + lr * 4.0 / (4.0 + 1e-8), 1e-15);
  const std::vector<double> g2{1.0, 0.0};
  const double before = p.values()[0];
  adam_step(s, p, g2, lr);
  const double m = (0.1 * 0.5 * 0.9 + 0.1 * 1.0) / (1 - 0.81);
  const double v = (0.001 * 0.25 * 0.999 + 0.001 * 1.0) / (1 - 0.999 * 0.999);
  EXPECT_NEAR(p.values()[0], before - lr * m / (std::sqrt(v) + 1e-8), 1e-14);
  EXPECT_EQ(s.step, 2);
}

TEST(Adam, NonFiniteGradientNamesSegment) {
  ParameterVector p;
  p.add_segment("a", 1, 1);
  p.add_segment("trunk.out.w", 2, 1);
  AdamState s(3);
  const std::vector<double> g{0.0, 1.0, std::numeric_limits<double>::quiet_NaN()};
  try {
    adam_step(s, p, g, 0.1);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("trunk.out.w"), std::string::npos);
  }
  EXPECT_EQ(p.values()[1], 0.0);
  EXPECT_THROW(adam_step(s, p, std::vector<double>(2), 0.1), ShapeError);
}

TEST(Collocation, RangesAndInflowSigns) {
  const auto problem = ProblemSpec::problem1(1.0);
  const InputGrid grid = InputGrid::uniform(8, 16);
  std::mt19937_64 rng(1);
  const auto b = sample_collocation(problem, 200, 51, 30, grid, rng);
  for (int i = 0; i < 200; ++i) {
    EXPECT_GT(b.interior(0, i), 0.0);
    EXPECT_LT(b.interior(0, i), problem.t_max);
    EXPECT_GT(b.interior(1, i), 0.0);
    EXPECT_LT(b.interior(1, i), 1.0);
    EXPECT_GT(b.interior(2, i), -1.0);
    EXPECT_LT(b.interior(2, i), 1.0);
  }
  int left = 0;
  for (const auto& p : b.boundary) {
    if (p.side == Side::Left) {
      ++left;
      EXPECT_GT(p.v, 0.0);
    } else {
      EXPECT_LT(p.v, 0.0);
    }
  }
  EXPECT_EQ(left, 26);
  ASSERT_EQ(b.initial.size(), 30u);
  EXPECT_TRUE(std::is_sorted(b.initial.begin(), b.initial.end()));
  EXPECT_EQ(std::set<Eigen::Index>(b.initial.begin(), b.initial.end()).size(), 30u);
  for (auto i : b.initial) EXPECT_LT(i, grid.size());
}

TEST(Collocation, GroupsShareTimeAndSpace) {
  const auto problem = ProblemSpec::problem2(1.0);
  const InputGrid grid = InputGrid::uniform(4, 4);
  std::mt19937_64 rng(2);
  const auto b = sample_collocation(problem, 12, 8, 0, grid, rng, 4);
  for (int i = 0; i < 12; ++i) {
    EXPECT_EQ(b.interior(0, i), b.interior(0, i / 4 * 4));
    EXPECT_EQ(b.interior(1, i), b.interior(1, i / 4 * 4));
  }
  EXPECT_NE(b.interior(0, 0), b.interior(0, 4));
  EXPECT_NE(b.interior(2, 0), b.interior(2, 1));
  EXPECT_EQ(b.boundary[3].t, b.boundary[0].t);
  EXPECT_EQ(b.boundary[7].t, b.boundary[4].t);
  EXPECT_EQ(b.initial.size(), 16u);
  EXPECT_THROW(sample_collocation(problem, 4, 4, 0, grid, rng, 0), ConfigError);
}

TEST(Checkpoint, RoundTrip) {
  Checkpoint c;
  c.config_text = "{\"eps\": 1}";
  c.config_hash = text_hash(c.config_text);
  c.epoch = 17;
  c.params.add_segment("w", 3, 1);
  c.params.values()[2] = 4.5;
  c.adam = AdamState(3);
  c.adam.step = 9;
  c.adam.m[1] = -0.25;
  c.adam.v[0] = 0.125;
  std::stringstream s;
  c.save(s);
  const Checkpoint d = Checkpoint::load(s);
  EXPECT_EQ(d.config_text, c.config_text);
  EXPECT_EQ(d.epoch, 17);
  EXPECT_EQ(d.params, c.params);
  EXPECT_EQ(d.adam, c.adam);
}

TEST(Checkpoint, HashMismatchIsIoError) {
  Checkpoint c;
  c.config_text = "abc";
  c.config_hash = text_hash("abd");
  std::stringstream s;
  c.save(s);
  EXPECT_THROW(Checkpoint::load(s), IoError);
  EXPECT_NE(text_hash("abc"), text_hash("abd"));
}

TEST(TrainConfig, Validation) {
  TrainConfig t;
  EXPECT_NO_THROW(t.validate());
  t.decay = 1.5;
  EXPECT_THROW(t.validate(), ConfigError);
  t = TrainConfig{};
  t.velocities_per_point = 0;
  EXPECT_THROW(t.validate(), ConfigError);
  t = TrainConfig{};
  t.epochs = 0;
  EXPECT_THROW(t.validate(), ConfigError);
}

class TinyFit : public ::testing::Test {
 protected:
  InputGrid grid = InputGrid::uniform(8, 16);
  Dataset data = generate_dataset(ProblemId::I, 16, 0.5, 3, grid);
  ProblemSpec problem = ProblemSpec::problem1(1.0);
  EvalGrid eval = EvalGrid::uniform(problem.t_max, 5, 9);
  std::vector<DensityField> refs;

  void SetUp() override {
    for (const auto& s : data.test)
      refs.push_back(solve_transport_ap(problem, {.nx = 40, .quadrature = gauss_legendre(8)}, grid, s.values, eval));
  }
};

TEST_F(TinyFit, BitwiseDeterministic) {
  for (Method method : {Method::ApconV1, Method::ApdonV2}) {
    OperatorModel a(tiny_model(method)), b(tiny_model(method));
    a.initialize(1);
    b.initialize(1);
    const auto ra = fit(a, data, problem, tiny_train(), &refs, &eval);
    const auto rb = fit(b, data, problem, tiny_train(), &refs, &eval);
    EXPECT_EQ(a.params(), b.params());
    ASSERT_EQ(ra.history.size(), 3u);
    for (std::size_t e = 0; e < 3; ++e) EXPECT_EQ(ra.history[e].loss, rb.history[e].loss);
    EXPECT_EQ(ra.best_test_error, rb.best_test_error);
  }
}

TEST_F(TinyFit, EvaluatesOnScheduleAndKeepsBest) {
  OperatorModel m(tiny_model(Method::ApconV2));
  m.initialize(2);
  auto cfg = tiny_train();
  cfg.epochs = 5;
  const auto r = fit(m, data, problem, cfg, &refs, &eval);
  ASSERT_EQ(r.history.size(), 5u);
  // after every second completed epoch, and after the last
  for (int e : {0, 2}) EXPECT_FALSE(r.history[e].test_error.has_value()) << e;
  for (int e : {1, 3, 4}) EXPECT_TRUE(r.history[e].test_error.has_value()) << e;
  ASSERT_TRUE(r.best_test_error && r.final_test_error);
  EXPECT_LE(*r.best_test_error, *r.final_test_error);
  // Restored parameters reproduce the best error.
  const Eigen::MatrixXd test_a = Dataset::stack(data.test);
  EXPECT_NEAR(mean_test_error(m, problem, test_a, refs, eval), *r.best_test_error, 1e-12);
  std::ostringstream csv;
  write_history_csv(csv, r.history);
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')), "epoch,loss,interior,boundary,initial,lr,test_error,seconds");
}

TEST_F(TinyFit, NonFiniteLossStopsTraining) {
  OperatorModel m(tiny_model(Method::ApconV1));
  m.initialize(3);
  m.params().values()[m.params().segment(m.nets()[0].b0_segment()).offset] = std::numeric_limits<double>::infinity();
  const auto r = fit(m, data, problem, tiny_train());
  EXPECT_TRUE(r.diverged);
  EXPECT_FALSE(r.divergence_reason.empty());
}

TEST_F(TinyFit, WritesCheckpoints) {
  const auto dir = std::filesystem::temp_directory_path() / "apcon_train_test_ckpt";
  std::filesystem::remove_all(dir);
  OperatorModel m(tiny_model(Method::ApconV1));
  m.initialize(4);
  auto cfg = tiny_train();
  cfg.checkpoint_every = 2;
  cfg.checkpoint_dir = dir.string();
  fit(m, data, problem, cfg, &refs, &eval, "cfg-text");
  EXPECT_TRUE(std::filesystem::exists(dir / "best.ckpt"));
  const auto c = Checkpoint::load((dir / "best.ckpt").string());
  EXPECT_EQ(c.config_text, "cfg-text");
  EXPECT_EQ(c.params.layout_hash(), m.params().layout_hash());
  std::filesystem::remove_all(dir);
}

TEST(MeanTestError, SelfReferenceIsZero) {
  OperatorModel m(tiny_model(Method::ApconV2));
  m.initialize(7);
  const auto problem = ProblemSpec::problem2(1.0);
  const EvalGrid eval = EvalGrid::uniform(problem.t_max, 3, 4);
  Eigen::MatrixXd a = Eigen::MatrixXd::Constant(128, 2, 0.5);
  a(3, 1) = 2.0;
  const Eigen::MatrixXd pred = predict_density(m.fields(), &m.params(), problem, a, eval.points());
  std::vector<DensityField> refs(2);
  for (int s = 0; s < 2; ++s) {
    refs[s].t_grid = eval.t;
    refs[s].x_grid = eval.x;
    refs[s].rho = Eigen::Map<const Eigen::MatrixXd>(pred.row(s).eval().data(), 4, 3).transpose();
  }
  EXPECT_NEAR(mean_test_error(m, problem, a, refs, eval), 0.0, 1e-15);
  refs[1].rho *= 2.0;
  EXPECT_NEAR(mean_test_error(m, problem, a, refs, eval), 0.25, 1e-12);
}
