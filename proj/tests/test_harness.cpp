#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "corrcast/experiment.hpp"
#include "corrcast/metrics.hpp"
#include "corrcast/report.hpp"

using namespace corrcast;

namespace {

std::size_t count_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("corrcast_harness_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

SiteGrid small_grid() {
  SynthParams p;
  p.n_sites = 3;
  p.n_periods = 420;
  p.seed = 5;
  return synth_upwind_field(p, 2, 3, 0.2);
}

ExperimentConfig small_config() {
  ExperimentConfig cfg;
  const auto all = default_variants();
  cfg.variants = {all[0], all[3]};
  cfg.te_len = 60;
  cfg.folds = 2;
  cfg.seeds = {1, 2, 3};
  cfg.horizon = 3;
  cfg.m = 12;
  cfg.recon_len = 3;
  cfg.hidden_dim = 4;
  cfg.epochs = 4;
  cfg.train_stride = 4;
  cfg.tree.stage_len = 60;
  cfg.tree.total_cap = 4;
  cfg.tree.max_neighbors = 2;
  cfg.optimizer.learning_rate = 1e-2;
  return cfg;
}

}  // namespace

// ---------------------------------------------------------------------------
// Metrics

TEST(Metrics, AccExamples) {
  const std::vector<double> y{2}, half{1};
  EXPECT_EQ(acc(half, y), 50.0);
  const std::vector<double> one{1}, three{3};
  EXPECT_EQ(acc(three, one), -100.0);
  const std::vector<double> v{3, 4, 5};
  EXPECT_EQ(acc(v, v), 100.0);
}

TEST(Metrics, AccFloorExcludesCalmPeriods) {
  const std::vector<double> y{0.0, 0.05, 2.0}, p{5.0, 5.0, 1.0};
  EXPECT_EQ(acc(p, y), 50.0);
  const std::vector<double> calm{0.0, 0.05};
  EXPECT_THROW(acc(calm, calm), ValidationError);
}

TEST(Metrics, R2Examples) {
  const std::vector<double> y{1, 2, 3}, p{1, 2, 5};
  EXPECT_EQ(r2(p, y), -1.0);
  EXPECT_EQ(r2(y, y), 1.0);
  const std::vector<double> mean{2, 2, 2};
  EXPECT_EQ(r2(mean, y), 0.0);
  EXPECT_THROW(r2(y, mean), ValidationError);
}

TEST(Metrics, RmseExamples) {
  const std::vector<double> y{1, 2}, p{2, 4};
  EXPECT_EQ(rmse(p, y), std::sqrt(2.5));
  const std::vector<double> a{1, 2, 3}, b{2, 3, 4};
  EXPECT_EQ(rmse(b, a), 1.0);
  EXPECT_EQ(rmse(a, a), 0.0);
  const std::vector<double> empty;
  EXPECT_THROW(rmse(empty, empty), ValidationError);
  EXPECT_THROW(rmse(a, y), ValidationError);
}

TEST(Metrics, Invariances) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> y(20), p(20);
    for (std::size_t i = 0; i < y.size(); ++i) {
      y[i] = rng.uniform(0.5, 12.0);
      p[i] = y[i] + rng.normal(0.0, 1.0);
    }
    const double c = rng.uniform(0.1, 10.0);
    std::vector<double> yc(y), pc(p), ys(y), ps(p);
    for (auto& v : yc) v *= c;
    for (auto& v : pc) v *= c;
    const double shift = rng.uniform(-5.0, 5.0);
    for (auto& v : ys) v += shift;
    for (auto& v : ps) v += shift;
    EXPECT_NEAR(acc(pc, yc), acc(p, y), 1e-10);
    EXPECT_NEAR(r2(pc, yc), r2(p, y), 1e-10);
    EXPECT_NEAR(r2(ps, ys), r2(p, y), 1e-10);
    EXPECT_NEAR(rmse(pc, yc), c * rmse(p, y), 1e-10);
    EXPECT_LE(r2(p, y), 1.0);
    // A shift applied to the prediction alone is not neutral.
    std::vector<double> p_only(p);
    for (auto& v : p_only) v += shift;
    EXPECT_GT(std::abs(r2(p_only, y) - r2(p, y)), 1e-6);
    EXPECT_GT(rmse(p, y), 0.0);
  }
}

// ---------------------------------------------------------------------------
// Protocol pieces

TEST(Protocol, FoldPattern) {
  const auto s = split_cv(5000, 360, 3, 5000 - 4 * 360);
  ASSERT_EQ(s.size(), 3u);
  const std::size_t tr[] = {360, 720, 1080};
  for (int k = 0; k < 3; ++k) {
    EXPECT_EQ(s[k].train_len(), tr[k]);
    EXPECT_EQ(s[k].test_len(), 360u);
    EXPECT_EQ(s[k].test_end, 5000 - (2 - k) * 360u);
  }
}

TEST(Protocol, Origins) {
  ExperimentConfig cfg;
  cfg.m = 12;
  cfg.horizon = 3;
  cfg.train_stride = 2;
  DatasetSplit s{1, 100, 130, 130, 150};
  const auto tr = train_origins(cfg, s);
  ASSERT_FALSE(tr.empty());
  EXPECT_EQ(tr.front(), 100u);
  for (auto t : tr) EXPECT_LE(t + cfg.horizon, s.train_end);
  EXPECT_EQ(tr.back(), 126u);
  const auto te = test_origins(cfg, s);
  EXPECT_EQ(te.size(), 18u);
  EXPECT_EQ(te.front(), 130u);
  EXPECT_EQ(te.back(), 147u);
}

TEST(Protocol, ReduceRanksByTestRmse) {
  std::vector<TrialResult> trials(5);
  const double rm[] = {0.9, 0.2, 0.5, 0.7, 0.1};
  for (int i = 0; i < 5; ++i) {
    trials[i].variant = "v";
    trials[i].seed = static_cast<std::uint64_t>(i + 1);
    trials[i].test.rmse_mps = rm[i];
    trials[i].test.acc_pct = 100 - 10 * rm[i];
  }
  trials[2].error = "boom";
  std::vector<const TrialResult*> cell;
  for (const auto& t : trials) cell.push_back(&t);
  const auto rows = reduce_trials(cell, "v", 1);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].rank, "max");
  EXPECT_EQ(rows[0].seed, 1u);
  EXPECT_EQ(rows[1].rank, "med");
  EXPECT_EQ(rows[1].seed, 2u);  // successes sorted: 0.1, 0.2, 0.7, 0.9
  EXPECT_EQ(rows[2].rank, "min");
  EXPECT_EQ(rows[2].seed, 5u);
  EXPECT_EQ(rows[2].test.acc_pct, trials[4].test.acc_pct);
}

TEST(Protocol, ReduceSingleTrialAndAllFailed) {
  TrialResult t;
  t.seed = 7;
  t.test.rmse_mps = 0.3;
  const auto rows = reduce_trials({&t}, "v", 2);
  for (const auto& r : rows) {
    EXPECT_EQ(r.seed, 7u);
    EXPECT_EQ(r.test.rmse_mps, 0.3);
  }
  t.error = "diverged";
  for (const auto& r : reduce_trials({&t}, "v", 2)) {
    EXPECT_FALSE(r.seed.has_value());
    EXPECT_TRUE(std::isnan(r.test.rmse_mps));
  }
}

// ---------------------------------------------------------------------------
// Config JSON

TEST(Config, RoundTrip) {
  auto cfg = small_config();
  cfg.bounds = Bounds{0.0, 18.0};
  const auto j = experiment_config_to_json(cfg);
  const auto back = experiment_config_from_json(j);
  EXPECT_EQ(experiment_config_to_json(back), j);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(experiment_config_from_json(nlohmann::json{{"epoch", 5}}), ValidationError);
  EXPECT_THROW(experiment_config_from_json(nlohmann::json{{"optimizer", {{"lr", 1}}}}), ValidationError);
  EXPECT_THROW(experiment_config_from_json(nlohmann::json{{"horizon", 0}}), ValidationError);
  EXPECT_THROW(experiment_config_from_json(nlohmann::json{{"seeds", nlohmann::json::array()}}), ValidationError);
  EXPECT_THROW(experiment_config_from_json(nlohmann::json{{"version", 2}}), VersionError);
  EXPECT_THROW(experiment_config_from_json(nlohmann::json{{"epochs", "many"}}), ParseError);
  EXPECT_THROW(experiment_config_from_json(nlohmann::json{{"variants", {"transformer"}}}), ValidationError);
}

TEST(Config, TrialsShorthandAndVariantNames) {
  const auto cfg = experiment_config_from_json(nlohmann::json{{"trials", 4}, {"variants", {"lstm", "gru_seq2seq"}}});
  EXPECT_EQ(cfg.seeds, (std::vector<std::uint64_t>{1, 2, 3, 4}));
  ASSERT_EQ(cfg.variants.size(), 2u);
  EXPECT_EQ(cfg.variants[0].variant, nn::Variant::plain_lstm);
  EXPECT_EQ(cfg.variants[1].cell, nn::CellKind::gru);
}

TEST(Config, DefaultsMatchProtocol) {
  const ExperimentConfig cfg;
  EXPECT_EQ(cfg.variants.size(), 6u);
  EXPECT_EQ(cfg.trials(), 11u);
  EXPECT_EQ(cfg.folds, 3);
  EXPECT_EQ(cfg.te_len, 360u);
  EXPECT_EQ(cfg.horizon, 6u);
  EXPECT_EQ(cfg.m, 36u);
}

// ---------------------------------------------------------------------------
// End-to-end on a small grid

class SmallExperiment : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    grid_ = new SiteGrid(small_grid());
    table_ = new ReportTable(run_experiment(small_config(), *grid_));
  }
  static void TearDownTestSuite() {
    delete table_;
    delete grid_;
  }
  static SiteGrid* grid_;
  static ReportTable* table_;
};

SiteGrid* SmallExperiment::grid_ = nullptr;
ReportTable* SmallExperiment::table_ = nullptr;

TEST_F(SmallExperiment, Layout) {
  const auto cfg = small_config();
  EXPECT_EQ(table_->trials.size(), cfg.variants.size() * 2 * cfg.seeds.size());
  ASSERT_EQ(table_->rows.size(), cfg.variants.size() * 2 * 3);
  for (const auto& t : table_->trials) {
    ASSERT_TRUE(t.ok()) << *t.error;
    EXPECT_EQ(t.train_loss.size(), static_cast<std::size_t>(cfg.epochs));
    EXPECT_EQ(t.test_loss.size(), static_cast<std::size_t>(cfg.epochs));
    EXPECT_GE(t.test.rmse_mps, 0.0);
    EXPECT_LE(t.test.r2, 1.0);
    EXPECT_EQ(t.test_forecasts.size(), cfg.te_len - cfg.horizon + 1);
  }
  for (std::size_t i = 0; i < table_->rows.size(); i += 3) {
    EXPECT_EQ(table_->rows[i].rank, "max");
    EXPECT_EQ(table_->rows[i + 1].rank, "med");
    EXPECT_EQ(table_->rows[i + 2].rank, "min");
    EXPECT_GE(table_->rows[i].test.rmse_mps, table_->rows[i + 1].test.rmse_mps);
    EXPECT_GE(table_->rows[i + 1].test.rmse_mps, table_->rows[i + 2].test.rmse_mps);
  }
  EXPECT_EQ(table_->config["resolved"]["origin"].get<std::size_t>(), grid_->length() - 3 * cfg.te_len);
}

TEST_F(SmallExperiment, ForecastsAreCausalAndAligned) {
  const auto& y = grid_->target().values;
  for (const auto& f : table_->trials.front().test_forecasts) {
    ASSERT_EQ(f.actual.size(), 3u);
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(f.actual[k], y[f.origin + k]);
  }
}

TEST_F(SmallExperiment, DeterministicRerun) {
  const auto again = run_experiment(small_config(), *grid_);
  EXPECT_TRUE(same_report(*table_, again, true));
  EXPECT_EQ(report_to_json(*table_).dump().size() > 0, true);
}

TEST_F(SmallExperiment, SingleTrialCollapsesRanks) {
  auto cfg = small_config();
  cfg.seeds = {4};
  cfg.variants.resize(1);
  cfg.run_folds = {1};
  const auto t = run_experiment(cfg, *grid_);
  ASSERT_EQ(t.rows.size(), 3u);
  for (const auto& r : t.rows) {
    EXPECT_EQ(r.seed, 4u);
    EXPECT_EQ(r.test.rmse_mps, t.rows[0].test.rmse_mps);
    EXPECT_EQ(r.test.acc_pct, t.rows[0].test.acc_pct);
  }
}

TEST_F(SmallExperiment, JsonRoundTrip) {
  const auto dir = scratch_dir("json");
  emit_report(*table_, ReportFormat::json, dir / "report.json");
  const auto back = read_report_json(dir / "report.json");
  EXPECT_TRUE(same_report(*table_, back));
}

TEST_F(SmallExperiment, CsvRowCount) {
  const auto dir = scratch_dir("csv");
  emit_report(*table_, ReportFormat::csv, dir / "report.csv");
  const auto cfg = small_config();
  EXPECT_EQ(count_lines(dir / "report.csv"), cfg.variants.size() * 2 * 3 + 1);
  std::ifstream in(dir / "report.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "variant,fold,rank,split,acc_pct,rmse_mps,r2,seconds");
}

TEST_F(SmallExperiment, PlotdataRows) {
  const auto dir = scratch_dir("plot");
  emit_report(*table_, ReportFormat::plotdata, dir);
  const auto cfg = small_config();
  EXPECT_EQ(count_lines(dir / "loss_curves.tsv"), table_->trials.size() * cfg.epochs + 1);
  // One median trial per (variant, fold), each with every test forecast.
  const std::size_t per_trial = (cfg.te_len - cfg.horizon + 1) * cfg.horizon;
  EXPECT_EQ(count_lines(dir / "predictions.tsv"), cfg.variants.size() * 2 * per_trial + 1);
}

TEST(Report, FailedTrialsAreRecorded) {
  auto grid = small_grid();
  auto cfg = small_config();
  cfg.variants.resize(1);
  cfg.run_folds = {1};
  cfg.seeds = {1, 2};
  cfg.optimizer.learning_rate = 1e300;
  cfg.optimizer.kind = nn::OptimizerKind::gradient_descent;
  cfg.loss.lambda = 1e6;
  const auto t = run_experiment(cfg, grid);
  ASSERT_EQ(t.trials.size(), 2u);
  for (const auto& r : t.trials) EXPECT_FALSE(r.ok());
  ASSERT_EQ(t.rows.size(), 3u);
  EXPECT_FALSE(t.rows[0].seed.has_value());
  // NaN scores survive the json round trip.
  EXPECT_TRUE(same_report(t, report_from_json(report_to_json(t))));
}

TEST(Report, BadDocuments) {
  EXPECT_THROW(report_from_json(nlohmann::json{{"schema", "corrcast.report"}}), VersionError);
  EXPECT_THROW(report_from_json(nlohmann::json{{"schema", "x"}, {"version", 1}}), ParseError);
  EXPECT_THROW(report_from_json(nlohmann::json{{"schema", "corrcast.report"}, {"version", 9}}), VersionError);
  EXPECT_THROW(report_from_json(nlohmann::json{{"schema", "corrcast.report"}, {"version", 1}}), ParseError);
  EXPECT_THROW(report_format_from_string("xlsx"), ValidationError);
}
