#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <gtest/gtest.h>

#include "apcon/config.hpp"
#include "apcon/errors.hpp"
#include "apcon/experiment.hpp"

using namespace apcon;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_experiment(const fs::path& dir) {
  ExperimentConfig c;
  c.problem = ProblemId::I;
  c.eps = 1.0;
  c.model.method = Method::ApconV1;
  c.model.height = 8;
  c.model.width = 16;
  c.model.hidden_width = 6;
  c.model.p = 6;
  c.model.branch_layers = 2;
  c.model.trunk_layers = 2;
  c.model.lift_width = 6;
  c.model.filters = {FilterLayerConfig{}};
  c.model.quadrature_nodes = 4;
  c.train.epochs = 2;
  c.train.lr0 = 1e-3;
  c.train.batch = 3;
  c.train.n_int = 8;
  c.train.n_bdy = 4;
  c.train.n_init = 8;
  c.train.eval_every = 1;
  c.train.risk.chunk_points = 8;
  c.m = 8;
  c.trials = 2;
  c.nt_eval = 3;
  c.nx_eval = 5;
  c.reference.nx = 20;
  c.reference.quadrature = gauss_legendre(8);
  c.output_dir = (dir / "out").string();
  c.results_csv = (dir / "results.csv").string();
  c.dataset_path = (dir / "data.bin").string();
  c.label = "tiny";
  return c;
}

class TempDir : public ::testing::Test {
 protected:
  fs::path dir;
  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("apcon_experiment_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
};

std::string read_all(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST(Config, JsonRoundTrip) {
  ExperimentConfig c = tiny_experiment("/tmp/x");
  c.model.filters[0].order = FilterOrder::ActivationThenPool;
  c.model.layer_norm = false;
  c.train.risk.reduction = Reduction::Pairwise;
  const ExperimentConfig d = experiment_from_json(to_json(c));
  EXPECT_EQ(canonical_text(c), canonical_text(d));
  EXPECT_EQ(d.model.filters[0].order, FilterOrder::ActivationThenPool);
  EXPECT_EQ(d.model.layer_norm, std::optional<bool>(false));
  EXPECT_EQ(d.train.risk.reduction, Reduction::Pairwise);
}

TEST(Config, DefaultsFromEmptyObject) {
  const ExperimentConfig d = experiment_from_json(nlohmann::json::object());
  EXPECT_EQ(d.model.method, Method::ApconV2);
  EXPECT_EQ(d.train.epochs, 5000);
  EXPECT_EQ(d.m, 1024u);
}

TEST(Config, UnknownKeysAndBadValues) {
  EXPECT_THROW(experiment_from_json(nlohmann::json::parse(R"({"epsilon": 1})")), ConfigError);
  EXPECT_THROW(experiment_from_json(nlohmann::json::parse(R"({"train": {"lr": 1}})")), ConfigError);
  EXPECT_THROW(experiment_from_json(nlohmann::json::parse(R"({"model": {"method": "FNO"}})")), ConfigError);
  EXPECT_THROW(experiment_from_json(nlohmann::json::parse(R"({"data": {"m": 4}})")), ConfigError);
  EXPECT_THROW(filter_order_from_name("sideways"), ConfigError);
}

TEST_F(TempDir, LoadConfigFileWithComments) {
  std::ofstream(dir / "c.json") << "{\n  // desk run\n  \"eps\": 0.5, \"model\": {\"method\": \"PICON\"}\n}\n";
  const auto c = load_experiment_config((dir / "c.json").string());
  EXPECT_EQ(c.eps, 0.5);
  EXPECT_EQ(c.model.method, Method::Picon);
  EXPECT_THROW(load_experiment_config((dir / "missing.json").string()), IoError);
}

TEST(Ablation, VariantCountsAndNames) {
  ExperimentConfig base = tiny_experiment("/tmp/x");
  base.model.method = Method::ApconV2;
  const std::pair<AblationKind, std::size_t> expected[] = {{AblationKind::LayerNorm, 2},
                                                           {AblationKind::PoolOrder, 2},
                                                           {AblationKind::KernelShape, 3},
                                                           {AblationKind::Channels, 3},
                                                           {AblationKind::FilterLayers, 2}};
  for (auto [kind, n] : expected) {
    EXPECT_EQ(ablation_variants(kind, base).size(), n) << ablation_name(kind);
    EXPECT_EQ(ablation_from_name(ablation_name(kind)), kind);
  }
  const auto ch = ablation_variants(AblationKind::Channels, base);
  EXPECT_EQ(ch[2].config.model.filters[0].channels, 6);
  const auto fl = ablation_variants(AblationKind::FilterLayers, base);
  EXPECT_EQ(fl[1].config.model.filters.size(), 2u);
  base.model.method = Method::ApdonV2;
  EXPECT_THROW(ablation_variants(AblationKind::KernelShape, base), ConfigError);
  EXPECT_EQ(ablation_variants(AblationKind::LayerNorm, base).size(), 2u);
  EXPECT_THROW(ablation_from_name("dropout"), ConfigError);
}

TEST(Ablation, EveryVariantEvaluatesOnTheDefaultGrid) {
  ExperimentConfig base;
  base.model.method = Method::ApconV2;
  const Eigen::MatrixXd a = Eigen::MatrixXd::Constant(32 * 64, 1, 1.0);
  const Eigen::Matrix2Xd tx = Eigen::Matrix2Xd::Constant(2, 1, 0.05);
  for (auto kind : {AblationKind::LayerNorm, AblationKind::PoolOrder, AblationKind::KernelShape,
                    AblationKind::Channels, AblationKind::FilterLayers})
    for (const auto& v : ablation_variants(kind, base)) {
      OperatorModel model(v.config.model);
      model.initialize(0);
      const auto rho = predict_density(model.fields(), &model.params(), v.config.problem_spec(), a, tx);
      EXPECT_TRUE(rho.allFinite()) << ablation_name(kind) << " " << v.name;
    }
  const auto ks = ablation_variants(AblationKind::KernelShape, base);
  EXPECT_EQ(ks[2].config.model.filters[1].stride_w, 4);
}

TEST(Results, RowFormatting) {
  ResultRow r;
  r.rel_l2 = 0.0123;
  EXPECT_EQ(r.rel_l2_text(), "0.0123");
  r.diverged = true;
  EXPECT_EQ(r.rel_l2_text(), "diverged");
  r.failed = true;
  EXPECT_EQ(r.rel_l2_text(), "failed");
  EXPECT_EQ(results_header(),
            "config_hash,label,method,problem,eps,rel_l2,best_rel_l2,param_count,wall_time_train_s,"
            "wall_time_infer_ms,trials,message");
}

TEST_F(TempDir, AppendWritesHeaderOnce) {
  ResultRow r;
  r.label = "a,b";
  r.method = "PICON";
  append_result((dir / "r.csv").string(), r);
  append_result((dir / "r.csv").string(), r);
  const std::string text = read_all(dir / "r.csv");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
  EXPECT_EQ(text.find(results_header()), 0u);
  EXPECT_NE(text.find("\"a,b\""), std::string::npos);
}

TEST(Divergence, Sentinel) {
  FitResult f;
  f.final_test_error = 0.2;
  EXPECT_FALSE(is_diverged(f));
  f.final_test_error = 0.7;
  EXPECT_TRUE(is_diverged(f));
  f.final_test_error = std::numeric_limits<double>::quiet_NaN();
  EXPECT_TRUE(is_diverged(f));
  f.final_test_error = 0.1;
  f.diverged = true;
  EXPECT_TRUE(is_diverged(f));
}

TEST(Timing, SampleStatistics) {
  const auto s = TimingStats::from_samples({1.0, 2.0, 3.0});
  EXPECT_EQ(s.reps, 3);
  EXPECT_DOUBLE_EQ(s.mean_ms, 2.0);
  EXPECT_DOUBLE_EQ(s.stddev_ms, 1.0);
  EXPECT_TRUE(TimingStats::from_samples({}).empty());
  EXPECT_EQ(TimingStats::from_samples({4.0}).stddev_ms, 0.0);
}

TEST_F(TempDir, EndToEndRunWritesArtifacts) {
  const ExperimentConfig c = tiny_experiment(dir);
  const ResultRow row = run_experiment(c);
  ASSERT_FALSE(row.failed) << row.message;
  EXPECT_EQ(row.method, "APCON-v1");
  EXPECT_EQ(row.trials, 2);
  EXPECT_GT(row.param_count, 0u);
  EXPECT_TRUE(std::isfinite(row.rel_l2));
  EXPECT_GT(row.wall_time_infer_ms, 0.0);
  EXPECT_TRUE(fs::exists(c.dataset_path));
  const std::string csv = read_all(c.results_csv);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);

  std::ostringstream hash;
  hash << std::hex << std::setw(16) << std::setfill('0') << row.config_hash;
  const fs::path run = fs::path(c.output_dir) / ("run_" + hash.str());
  for (const char* f : {"config.json", "reference_sample0.csv", "predicted_sample0.csv", "trial0_history.csv",
                        "trial1_history.csv", "model.ckpt"})
    EXPECT_TRUE(fs::exists(run / f)) << f;

  // The stored model reproduces the reported error.
  const LoadedModel loaded = load_model((run / "model.ckpt").string());
  EXPECT_EQ(canonical_text(loaded.config), canonical_text(c));
  const Dataset data = prepare_dataset(loaded.config);
  const auto refs = reference_fields(loaded.config, data);
  const double err =
      mean_test_error(*loaded.model, c.problem_spec(), Dataset::stack(data.test), refs, c.eval_grid());
  if (!row.diverged) EXPECT_NEAR(err, row.rel_l2, 1e-12);
}

TEST_F(TempDir, StageFailureProducesFailedRow) {
  ExperimentConfig c = tiny_experiment(dir);
  // A dataset for the other problem sits at the configured path.
  ExperimentConfig other = c;
  other.problem = ProblemId::II;
  prepare_dataset(other);
  const ResultRow row = run_experiment(c);
  EXPECT_TRUE(row.failed);
  EXPECT_FALSE(row.message.empty());
  EXPECT_NE(read_all(c.results_csv).find("failed"), std::string::npos);
}

TEST_F(TempDir, LoadModelRejectsForeignLayout) {
  const ExperimentConfig c = tiny_experiment(dir);
  OperatorModel m(c.model);
  ExperimentConfig wider = c;
  wider.model.hidden_width = 8;
  wider.model.p = 8;
  const std::string text = canonical_text(wider);
  Checkpoint ck{text, text_hash(text), 0, m.params(), AdamState(m.param_count())};
  ck.save((dir / "x.ckpt").string());
  EXPECT_THROW(load_model((dir / "x.ckpt").string()), ConfigError);
}

TEST(Timing, InferenceAndReference) {
  ExperimentConfig c = tiny_experiment("/tmp/x");
  OperatorModel m(c.model);
  m.initialize(1);
  const Eigen::VectorXd a = Eigen::VectorXd::Ones(128);
  const auto ti = time_inference(m, c.problem_spec(), a, c.eval_grid(), 3);
  EXPECT_EQ(ti.reps, 3);
  EXPECT_GT(ti.mean_ms, 0.0);
  const auto tr = time_reference(c.problem_spec(), c.reference, c.input_grid(), a, c.eval_grid(), 2);
  EXPECT_EQ(tr.samples_ms.size(), 2u);
  EXPECT_TRUE(time_inference(m, c.problem_spec(), a, c.eval_grid(), 0).empty());
}
