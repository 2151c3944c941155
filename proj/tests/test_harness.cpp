#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "u2ad/error.hpp"
#include "u2ad/harness.hpp"

namespace u2ad {
namespace {

namespace fs = std::filesystem;

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.data.window = 16;
  c.data.train_stride = 8;
  c.synthetic.length = 600;
  c.synthetic.train_length = 400;
  c.synthetic.channels = 2;
  c.synthetic.min_span = 4;
  c.synthetic.max_span = 8;
  c.synthetic.min_period = 10;
  c.synthetic.max_period = 20;
  c.synthetic.seed = 3;
  c.scorenet.layers = 1;
  c.scorenet.d_model = 16;
  c.scorenet.heads = 2;
  c.scorenet.d_ff = 16;
  c.train.batch_size = 8;
  c.train.lr = 1e-3;
  c.train.epochs = 2;
  c.scoring.ratio_source = "fixed";
  c.scoring.ratio = 2.0;
  return c;
}

class HarnessTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("u2ad_harness_" + std::string(
        ::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

std::vector<nlohmann::json> read_log(const fs::path& path) {
  std::ifstream in(path);
  std::vector<nlohmann::json> out;
  std::string line;
  while (std::getline(in, line)) out.push_back(nlohmann::json::parse(line));
  return out;
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ad::ParameterSet p;
  p.add("w", Matrix::Constant(1, 2, 1.0));
  Adam adam(p, 0.9, 0.999, 1e-8);
  ad::Gradients g = p.zeros_like();
  g[0] << 3.0, -0.5;
  adam.step(p, g, 0.1);
  EXPECT_NEAR(p.value(0)(0, 0), 0.9, 1e-8);
  EXPECT_NEAR(p.value(0)(0, 1), 1.1, 1e-8);
  EXPECT_EQ(adam.steps(), 1);
}

TEST(Adam, MinimizesQuadratic) {
  ad::ParameterSet p;
  p.add("w", Matrix::Constant(1, 3, 5.0));
  Adam adam(p, 0.9, 0.999, 1e-8);
  for (int i = 0; i < 2000; ++i) {
    ad::Gradients g = p.zeros_like();
    g[0] = 2.0 * (p.value(0).array() - 1.0).matrix();
    adam.step(p, g, 0.05);
  }
  EXPECT_LT((p.value(0).array() - 1.0).abs().maxCoeff(), 1e-3);
}

TEST(WindowObjective, DisabledTermsAreNotLogged) {
  ScoreNetConfig cfg;
  cfg.layers = 1;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.d_ff = 8;
  cfg.window = 6;
  cfg.channels = 2;
  const NoiseSchedule schedule;
  ScoreNet net(cfg, 1, schedule);
  Rng rng(2);
  const Matrix x0 = Matrix::Random(6, 2);
  const auto draw = draw_window(schedule, 6, 2, rng);
  const Center c{Matrix::Random(6, 2)};
  const std::array<std::string, 4> names{"dsm", "rec", "vm", "gamma"};
  for (int only = 0; only < 4; ++only) {
    LossSettings s;
    s.dsm = only == 0;
    s.rec = only == 1;
    s.vm = only == 2;
    s.gamma = only == 3;
    s.weights = {0.5, 0.5, 3.0};
    const auto parts = window_objective(net, schedule, x0, draw, c, s, StepPhase::kLiteral);
    const std::array<double, 4> values{parts.dsm, parts.rec, parts.vm, parts.gamma};
    for (int k = 0; k < 4; ++k) {
      if (k == only) {
        EXPECT_NE(values[k], 0.0) << names[k];
      } else {
        EXPECT_EQ(values[k], 0.0) << names[k] << " logged while only " << names[only] << " is enabled";
      }
    }
  }
}

TEST(WindowObjective, PhasesDifferOnlyInGainSign) {
  ScoreNetConfig cfg;
  cfg.layers = 2;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.d_ff = 8;
  cfg.window = 6;
  cfg.channels = 1;
  const NoiseSchedule schedule;
  ScoreNet net(cfg, 4, schedule);
  Rng rng(5);
  const Matrix x0 = Matrix::Random(6, 1);
  const auto draw = draw_window(schedule, 6, 1, rng);
  const Center c{Matrix::Zero(6, 1)};
  LossSettings s;
  s.weights = {1.0 / 6, 1.0 / 6, 3.0};
  const auto a = window_objective(net, schedule, x0, draw, c, s, StepPhase::kPhaseA);
  const auto b = window_objective(net, schedule, x0, draw, c, s, StepPhase::kPhaseB);
  EXPECT_DOUBLE_EQ(a.gamma, b.gamma);
  const double base = a.dsm + s.weights.rec * a.rec + s.weights.vm * a.vm;
  EXPECT_NEAR(a.total, base - 3.0 * a.gamma, 1e-12);
  EXPECT_NEAR(b.total, base + 3.0 * b.gamma, 1e-12);
}

TEST_F(HarnessTest, TrainWritesRunAndEvaluates) {
  auto cfg = tiny_config();
  const auto r = train(cfg, dir_, 7);
  EXPECT_EQ(r.epochs_run, 2);
  EXPECT_EQ(r.epoch_losses.size(), 2u);
  EXPECT_GE(r.best_epoch, 1);
  for (const char* f : {"model_best.bin", "model_last.bin", "manifest.json", "loss_log.jsonl", "config.ini"}) {
    EXPECT_TRUE(fs::exists(dir_ / f)) << f;
  }
  const auto log = read_log(dir_ / "loss_log.jsonl");
  ASSERT_EQ(static_cast<long long>(log.size()), r.steps);
  EXPECT_EQ(log.front()["phase"], "A");
  EXPECT_EQ(log[1]["phase"], "B");
  for (const auto& rec : log) EXPECT_TRUE(std::isfinite(rec["total"].get<double>()));

  const auto ev = evaluate(cfg, dir_);
  EXPECT_EQ(ev.test_scores.scores.size(), cfg.synthetic.length);
  EXPECT_EQ(ev.detection.predictions.size(), static_cast<std::size_t>(cfg.synthetic.length));
  EXPECT_EQ(ev.ratio_source, "fixed");
  EXPECT_GE(ev.report.auc_roc, 0.0);
  EXPECT_LE(ev.report.auc_roc, 1.0);
  const auto report = nlohmann::json::parse(std::ifstream(dir_ / "report.json"));
  for (const char* k : {"precision", "recall", "f1", "add", "nrd", "auc_roc", "auc_pr", "vus_roc", "vus_pr"}) {
    EXPECT_TRUE(report.contains(k)) << k;
  }
  for (const char* f : {"report.txt", "scores.csv", "detection.json"}) EXPECT_TRUE(fs::exists(dir_ / f)) << f;
}

TEST_F(HarnessTest, TrainingIsDeterministicPerSeed) {
  auto cfg = tiny_config();
  cfg.train.max_steps = 6;
  const auto a = train(cfg, dir_ / "a", 1);
  const auto b = train(cfg, dir_ / "b", 1);
  const auto c = train(cfg, dir_ / "c", 2);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].parts.total, b.log[i].parts.total);
  EXPECT_NE(a.log.back().parts.total, c.log.back().parts.total);
  EXPECT_EQ(a.steps, 6);
}

TEST_F(HarnessTest, AblationLogsOnlyEnabledTerm) {
  for (const char* term : {"dsm", "rec", "vm", "gamma"}) {
    auto cfg = tiny_config();
    cfg.train.max_steps = 4;
    for (const char* other : {"dsm", "rec", "vm", "gamma"}) {
      set_field(cfg, std::string("loss.") + other, other == std::string(term) ? "true" : "false");
    }
    const auto r = train(cfg, dir_ / term, 1);
    for (const auto& rec : read_log(dir_ / term / "loss_log.jsonl")) {
      for (const char* k : {"dsm", "rec", "vm", "gamma"}) {
        if (k == std::string(term)) {
          EXPECT_NE(rec[k].get<double>(), 0.0) << term;
        } else {
          EXPECT_EQ(rec[k].get<double>(), 0.0) << k << " logged in the " << term << " run";
        }
      }
    }
    EXPECT_EQ(r.steps, 4);
  }
}

TEST_F(HarnessTest, RawModelAblationTrains) {
  auto cfg = tiny_config();
  cfg.ablation.raw_model = true;
  cfg.train.max_steps = 3;
  const auto r = train(cfg, dir_, 1);
  EXPECT_EQ(r.log.front().phase, "raw");
  EXPECT_NO_THROW(evaluate(cfg, dir_));
}

TEST_F(HarnessTest, LoadRunRejectsMismatchedModelKeys) {
  auto cfg = tiny_config();
  cfg.train.max_steps = 2;
  train(cfg, dir_, 1);
  EXPECT_NO_THROW(load_run(dir_, &cfg));
  auto other = cfg;
  other.scorenet.d_model = 32;
  try {
    load_run(dir_, &other);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("scorenet.d_model"), std::string::npos) << e.what();
  }
  other = cfg;
  other.train.lr = 0.5;
  EXPECT_NO_THROW(load_run(dir_, &other));
  EXPECT_THROW(load_run(dir_ / "nothing"), DataError);
}

TEST_F(HarnessTest, SeveralSeedsWriteSummary) {
  auto cfg = tiny_config();
  cfg.runs.n_seeds = 2;
  cfg.train.max_steps = 2;
  const auto runs = train_all(cfg, dir_);
  ASSERT_EQ(runs.size(), 2u);
  EXPECT_TRUE(fs::exists(dir_ / "seed_0" / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir_ / "seed_1" / "manifest.json"));
  const auto evals = evaluate_all(cfg, dir_);
  EXPECT_EQ(evals.size(), 2u);
  EXPECT_TRUE(fs::exists(dir_ / "summary.json"));
  EXPECT_TRUE(fs::exists(dir_ / "summary.txt"));
}

TEST_F(HarnessTest, DetectIgnoresLabels) {
  auto cfg = tiny_config();
  cfg.train.max_steps = 2;
  train(cfg, dir_ / "run", 1);
  auto [train_split, test_split] = load_raw_splits(cfg);
  save_series(test_split, dir_ / "series.csv", SeriesFormat::kCsv);
  const auto with = detect(cfg, dir_ / "run", dir_ / "series.csv", dir_ / "out1");
  // A corrupt label sidecar would fail any reader.
  std::ofstream(dir_ / "series.labels") << "garbage\n";
  const auto again = detect(cfg, dir_ / "run", dir_ / "series.csv", dir_ / "out2");
  EXPECT_EQ(with.predictions, again.predictions);
  EXPECT_EQ(with.threshold, again.threshold);
  EXPECT_TRUE(fs::exists(dir_ / "out1" / "scores.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "out1" / "detection.json"));
}

TEST_F(HarnessTest, ScoringIsIndependentOfThreadCount) {
  auto cfg = tiny_config();
  cfg.train.max_steps = 2;
  cfg.data.eval_stride = 5;
  train(cfg, dir_, 1);
  const auto model = load_run(dir_);
  const auto ds = load_dataset(cfg);
  setenv("U2AD_THREADS", "1", 1);
  const auto one = score_series(model, cfg, ds.test);
  setenv("U2AD_THREADS", "3", 1);
  const auto three = score_series(model, cfg, ds.test);
  unsetenv("U2AD_THREADS");
  EXPECT_EQ(one.scores, three.scores);
}

TEST(Threads, EnvironmentOverride) {
  setenv("U2AD_THREADS", "2", 1);
  EXPECT_EQ(worker_threads(), 2);
  setenv("U2AD_THREADS", "zero", 1);
  EXPECT_THROW(worker_threads(), ConfigError);
  unsetenv("U2AD_THREADS");
  EXPECT_GE(worker_threads(), 1);
}

}  // namespace
}  // namespace u2ad
