#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numeric>
#include <vector>

#include "pension/training.hpp"
#include "reference.hpp"
#include "support.hpp"

using namespace pension;

namespace {

TrainingSetup tiny_setup(std::uint64_t seed = 3) {
  TrainingSetup s;
  s.population.count = 20;
  s.graph.p_intra = 0.2;
  s.graph.p_inter = 0.05;
  s.network.encoder = {8};
  s.network.lstm = 8;
  s.trainer.updates = 4;
  s.trainer.environments = 3;
  s.trainer.segment_length = 5;
  s.env.episode_ticks = 7;
  s.seed = seed;
  s.workers = 1;
  return s;
}

RolloutBuffer blank_buffer(int steps, int slots, int features = 2, int width = 2) {
  RolloutBuffer b;
  b.reset(steps, slots, features, RecurrentState::zeros(width, slots));
  return b;
}

}  // namespace

TEST(Returns, HandEvaluated) {
  const std::vector<double> r{1, 1, 1};
  EXPECT_EQ(discounted_returns(r, 0.5), (std::vector<double>{1.75, 1.5, 1.0}));
  EXPECT_EQ(discounted_returns(r, 1e-300), r);
  EXPECT_EQ(discounted_returns(r, 1.0, 2.0), (std::vector<double>{5.0, 4.0, 3.0}));
  EXPECT_TRUE(discounted_returns(std::vector<double>{}, 0.9).empty());
}

TEST(Returns, MatchesDirectSum) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = static_cast<int>(rng.below(30));
    const double gamma = rng.uniform(0.01, 1.0);
    const double boot = rng.uniform(-5, 5);
    std::vector<double> r(n);
    for (double& v : r) v = rng.uniform(-10, 10);
    const auto fast = discounted_returns(r, gamma, boot);
    for (int t = 0; t < n; ++t) {
      double direct = 0.0;
      for (int k = t; k < n; ++k) direct += std::pow(gamma, k - t) * r[k];
      direct += std::pow(gamma, n - t) * boot;
      ASSERT_NEAR(fast[t], direct, 1e-9 * (1 + std::abs(direct)));
    }
  }
}

TEST(Returns, BufferRestartsAtDoneAndUsesBootstrap) {
  auto b = blank_buffer(4, 2);
  b.valid.setOnes();
  b.rewards << 1, 1, 1, 1, 1, 1, 1, 1;
  b.done(1, 0) = 1;
  b.valid(3, 0) = 0;
  b.bootstrap << 100.0, 10.0;
  b.values(0, 1) = 0.5;
  Eigen::MatrixXd g, a;
  compute_returns(b, 0.5, g, a);
  EXPECT_DOUBLE_EQ(g(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(g(0, 0), 1.5);
  EXPECT_DOUBLE_EQ(g(2, 0), 1.0);
  EXPECT_DOUBLE_EQ(g(3, 1), 1.0 + 0.5 * 10.0);
  EXPECT_DOUBLE_EQ(g(0, 1), 1 + 0.5 * (1 + 0.5 * (1 + 0.5 * 6.0)));
  EXPECT_DOUBLE_EQ(a(0, 1), g(0, 1) - 0.5);
}

TEST(Batch, DropsSlotsWithoutTransitions) {
  std::vector<RolloutBuffer> bufs{blank_buffer(3, 4), blank_buffer(3, 2)};
  bufs[0].valid(0, 1) = 1;
  bufs[0].valid(2, 3) = 1;
  bufs[1].valid(1, 0) = 1;
  bufs[0].observations[2](0, 3) = 7.0;
  bufs[0].initial.h(1, 3) = 0.25;
  const auto batch = assemble_batch(bufs, 0.9, false);
  EXPECT_EQ(batch.valid.cols(), 3);
  EXPECT_EQ(batch.valid.cast<int>().sum(), 3);
  EXPECT_EQ(batch.observations[2](0, 1), 7.0);
  EXPECT_EQ(batch.initial.h(1, 1), 0.25);
}

TEST(Batch, NormalizationPreservesAdvantageOrder) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    SegmentBatch b;
    b.advantages.resize(4, 3);
    b.valid.resize(4, 3);
    for (int t = 0; t < 4; ++t)
      for (int s = 0; s < 3; ++s) {
        b.advantages(t, s) = rng.uniform(-1e5, 1e5);
        b.valid(t, s) = rng.bernoulli(0.8);
      }
    const auto before = b.advantages;
    normalize_valid_advantages(b);
    double sum = 0;
    int n = 0;
    for (int i = 0; i < 12; ++i) {
      if (!b.valid(i % 4, i / 4)) {
        EXPECT_EQ(b.advantages(i % 4, i / 4), before(i % 4, i / 4));
        continue;
      }
      sum += b.advantages(i % 4, i / 4);
      ++n;
      for (int j = 0; j < 12; ++j)
        if (b.valid(j % 4, j / 4) && before(i % 4, i / 4) < before(j % 4, j / 4))
          ASSERT_LT(b.advantages(i % 4, i / 4), b.advantages(j % 4, j / 4));
    }
    if (n > 0) EXPECT_NEAR(sum / n, 0.0, 1e-9);
  }
}

TEST(Optimizer, SgdStep) {
  Optimizer opt({"sgd", 0.1}, 2);
  std::vector<double> p{1.0, -1.0};
  opt.step(p, std::vector<double>{2.0, -4.0});
  EXPECT_DOUBLE_EQ(p[0], 0.8);
  EXPECT_DOUBLE_EQ(p[1], -0.6);
}

TEST(Optimizer, AdamFirstStepIsLearningRateTimesSign) {
  Optimizer opt({"adam", 0.01}, 3);
  std::vector<double> p{0.0, 0.0, 0.0};
  opt.step(p, std::vector<double>{5.0, -0.003, 0.0});
  EXPECT_NEAR(p[0], -0.01, 1e-9);
  EXPECT_NEAR(p[1], 0.01, 1e-6);
  EXPECT_EQ(p[2], 0.0);
}

TEST(Optimizer, Errors) {
  EXPECT_THROW(Optimizer({"rmsprop", 0.1}, 1), ConfigError);
  EXPECT_THROW(Optimizer({"sgd", 0.0}, 1), ConfigError);
  Optimizer opt({"sgd", 0.1}, 2);
  std::vector<double> p{1.0};
  EXPECT_THROW(opt.step(p, std::vector<double>{1.0}), DimensionError);
}

TEST(Optimizer, ClipGlobalNorm) {
  std::vector<double> g{3.0, 4.0};
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 0.5), 5.0);
  EXPECT_NEAR(std::hypot(g[0], g[1]), 0.5, 1e-15);
  EXPECT_NEAR(g[0] / g[1], 0.75, 1e-15);
  std::vector<double> small{0.1, 0.1};
  clip_global_norm(small, 0.5);
  EXPECT_EQ(small, (std::vector<double>{0.1, 0.1}));
}

TEST(Update, SingleTransitionSgdMatchesHandOracle) {
  Rng rng(3);
  NetworkShape shape;
  shape.input = 3;
  shape.encoder = {4};
  shape.lstm = 3;
  PolicyParameters p(shape);
  for (double& v : p.values()) v = rng.uniform(-0.5, 0.5);
  SegmentBatch batch;
  batch.observations = {Matrix::Constant(3, 1, 0.3)};
  batch.actions = Eigen::MatrixXi::Constant(1, 1, 8);
  batch.advantages = Eigen::MatrixXd::Constant(1, 1, 0.7);
  batch.returns = Eigen::MatrixXd::Constant(1, 1, 1.2);
  batch.valid.setOnes(1, 1);
  batch.reset_after.setZero(1, 1);
  batch.initial = RecurrentState::zeros(3, 1);
  TrainerConfig cfg;
  cfg.max_grad_norm = 0.0;
  cfg.optimizer = {"sgd", 0.05};

  // Central differences of the scalar loss give the expected step.
  std::vector<double> expected(p.values().begin(), p.values().end());
  auto probe = p;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double h = 1e-5, saved = probe.values()[k];
    probe.values()[k] = saved + h;
    const double up = reference::loss(probe, batch, cfg.value_weight, cfg.entropy_weight);
    probe.values()[k] = saved - h;
    const double down = reference::loss(probe, batch, cfg.value_weight, cfg.entropy_weight);
    probe.values()[k] = saved;
    expected[k] -= 0.05 * (up - down) / (2 * h);
  }
  Optimizer opt(cfg.optimizer, p.size());
  a2c_update(p, opt, batch, cfg);
  for (std::size_t k = 0; k < p.size(); ++k) ASSERT_NEAR(p.values()[k], expected[k], 1e-6) << k;
}

TEST(Update, LargeEntropyWeightDrivesPolicyToUniform) {
  Rng rng(4);
  NetworkShape shape;
  shape.input = 2;
  shape.encoder = {};
  shape.lstm = 2;
  PolicyParameters p(shape);
  for (double& v : p.values()) v = rng.uniform(-1.0, 1.0);
  SegmentBatch batch;
  batch.observations = {Matrix::Constant(2, 2, 0.5)};
  batch.actions = Eigen::MatrixXi::Zero(1, 2);
  batch.advantages = Eigen::MatrixXd::Zero(1, 2);
  batch.returns = Eigen::MatrixXd::Zero(1, 2);
  batch.valid.setOnes(1, 2);
  batch.reset_after.setZero(1, 2);
  batch.initial = RecurrentState::zeros(2, 2);
  TrainerConfig cfg;
  cfg.value_weight = 0.0;
  cfg.entropy_weight = 10.0;
  cfg.optimizer = {"adam", 0.05};
  Optimizer opt(cfg.optimizer, p.size());
  const double start = a2c_update(p, opt, batch, cfg).entropy;
  double last = start;
  for (int i = 0; i < 2000; ++i) last = a2c_update(p, opt, batch, cfg).entropy;
  EXPECT_LT(start, std::log(25.0) - 0.05);
  EXPECT_NEAR(last, std::log(25.0), 1e-3);
}

TEST(Update, NonFiniteGradientLeavesParametersUntouched) {
  NetworkShape shape;
  shape.input = 2;
  shape.encoder = {};
  shape.lstm = 2;
  PolicyParameters p(shape);
  SegmentBatch batch;
  batch.observations = {Matrix::Constant(2, 1, 0.5)};
  batch.actions = Eigen::MatrixXi::Zero(1, 1);
  batch.advantages = Eigen::MatrixXd::Constant(1, 1, std::numeric_limits<double>::quiet_NaN());
  batch.returns = Eigen::MatrixXd::Zero(1, 1);
  batch.valid.setOnes(1, 1);
  batch.reset_after.setZero(1, 1);
  batch.initial = RecurrentState::zeros(2, 1);
  TrainerConfig cfg;
  Optimizer opt(cfg.optimizer, p.size());
  const auto before = std::vector<double>(p.values().begin(), p.values().end());
  EXPECT_THROW(a2c_update(p, opt, batch, cfg), NumericFault);
  EXPECT_TRUE(std::equal(before.begin(), before.end(), p.values().begin()));
}

TEST(TrainerConfig, EpsilonSchedule) {
  TrainerConfig c;
  c.updates = 100;
  EXPECT_DOUBLE_EQ(c.epsilon_at(0), 0.3);
  EXPECT_DOUBLE_EQ(c.epsilon_at(25), 0.16);
  EXPECT_DOUBLE_EQ(c.epsilon_at(50), 0.02);
  EXPECT_DOUBLE_EQ(c.epsilon_at(99), 0.02);
}

TEST(TrainerConfig, Validation) {
  TrainerConfig c;
  c.gamma = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.environments = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.epsilon_start = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.updates = -1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Trainer, ZeroUpdatesKeepsInitialization) {
  auto setup = tiny_setup();
  setup.trainer.updates = 0;
  const auto tables = testing_support::sample_tables();
  const auto result = train(tables, setup);
  EXPECT_TRUE(result.metrics.empty());
  auto shape = setup.network;
  shape.input = observation_size(tables->occupation_count());
  Rng init = Rng(setup.seed).split(1);
  const auto expected = PolicyParameters::initialize(shape, init);
  EXPECT_TRUE(std::equal(expected.values().begin(), expected.values().end(), result.checkpoint.parameters.values().begin()));
  EXPECT_EQ(result.checkpoint.step, 0u);
}

TEST(Trainer, ParametersChangeAndStayFinite) {
  const auto tables = testing_support::sample_tables();
  auto setup = tiny_setup();
  Trainer t(tables, setup);
  const auto before = std::vector<double>(t.parameters().values().begin(), t.parameters().values().end());
  std::uint64_t last_steps = 0;
  for (int u = 0; u < 4; ++u) {
    const auto m = t.run_update();
    EXPECT_EQ(m.update, u + 1);
    EXPECT_GT(m.steps, last_steps);
    EXPECT_LE(m.steps - last_steps, 3u * 20u * 5u);
    last_steps = m.steps;
    EXPECT_TRUE(std::isfinite(m.policy_loss) && std::isfinite(m.value_loss));
    EXPECT_GE(m.crisis_rate, 0.0);
    EXPECT_LE(m.crisis_rate, 1.0);
    EXPECT_LE(m.entropy, std::log(25.0) + 1e-9);
  }
  EXPECT_TRUE(t.parameters().all_finite());
  EXPECT_FALSE(std::equal(before.begin(), before.end(), t.parameters().values().begin()));
}

TEST(Trainer, DeterministicAcrossRunsAndWorkerCounts) {
  const auto tables = testing_support::sample_tables();
  auto setup = tiny_setup(11);
  const auto a = train(tables, setup);
  const auto b = train(tables, setup);
  setup.workers = 3;
  const auto c = train(tables, setup);
  ASSERT_EQ(a.metrics.size(), 4u);
  for (std::size_t u = 0; u < a.metrics.size(); ++u) {
    EXPECT_EQ(metrics_row(a.metrics[u]), metrics_row(b.metrics[u]));
    EXPECT_EQ(metrics_row(a.metrics[u]), metrics_row(c.metrics[u]));
  }
  EXPECT_EQ(checkpoint_to_json(a.checkpoint).dump(), checkpoint_to_json(c.checkpoint).dump());
}

TEST(Trainer, DifferentSeedsDiffer) {
  const auto tables = testing_support::sample_tables();
  const auto a = train(tables, tiny_setup(1));
  const auto b = train(tables, tiny_setup(2));
  EXPECT_NE(metrics_row(a.metrics.back()), metrics_row(b.metrics.back()));
}

TEST(Trainer, WritesMetricsAndCheckpoint) {
  const auto tables = testing_support::sample_tables();
  testing_support::TempDir dir;
  auto setup = tiny_setup();
  setup.trainer.checkpoint_interval = 2;
  const auto result = train(tables, setup, dir.path());
  std::ifstream in(dir / "metrics.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, kMetricsHeader);
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, setup.trainer.updates);
  const auto ck = load_checkpoint((dir / "checkpoint.json").string());
  EXPECT_EQ(ck.step, 4u);
  EXPECT_EQ(checkpoint_to_json(ck).dump(), checkpoint_to_json(result.checkpoint).dump());
}

TEST(Trainer, ShortEpisodesAndLongSegmentsRestartCleanly) {
  const auto tables = testing_support::sample_tables();
  auto setup = tiny_setup();
  setup.env.episode_ticks = 2;
  setup.trainer.segment_length = 9;
  const auto r = train(tables, setup);
  EXPECT_EQ(r.metrics.size(), 4u);
  EXPECT_TRUE(r.checkpoint.parameters.all_finite());
}

TEST(Evaluate, UniformRandomFrequencies) {
  const auto tables = testing_support::sample_tables();
  auto setup = tiny_setup();
  setup.population.count = 200;
  setup.trainer.updates = 0;
  const auto ck = train(tables, setup).checkpoint;
  const auto r = evaluate(tables, setup, ck, EvaluationPolicy::uniform_random, 5, 2, 30);
  ASSERT_GT(r.transitions, 5000u);
  for (double f : r.action_frequency) EXPECT_NEAR(f, 0.04, 4 * testing_support::binomial_sd(0.04, r.transitions));
  EXPECT_NEAR(std::accumulate(r.mean_action_probability.begin(), r.mean_action_probability.end(), 0.0), 1.0, 1e-9);
  const auto g1 = evaluate(tables, setup, ck, EvaluationPolicy::greedy, 5, 2, 30);
  const auto g2 = evaluate(tables, setup, ck, EvaluationPolicy::greedy, 5, 2, 30);
  EXPECT_EQ(g1.mean_episodic_reward, g2.mean_episodic_reward);
}
