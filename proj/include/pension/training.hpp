#pragma once

// Advantage actor-critic training over parallel cohorts.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pension/csv.hpp"
#include "pension/environment.hpp"
#include "pension/errors.hpp"
#include "pension/parallel.hpp"
#include "pension/policy.hpp"
#include "pension/population.hpp"
#include "pension/random.hpp"
#include "pension/socialgraph.hpp"

namespace pension {

/// G_t = r_t + gamma * G_{t+1}. The value after the last reward is the
/// critic's bootstrap estimate when the trajectory was truncated, or zero
/// (nullopt) at a true episode end.
inline std::vector<double> discounted_returns(std::span<const double> rewards, double gamma,
                                              std::optional<double> bootstrap = std::nullopt) {
  std::vector<double> out(rewards.size());
  double next = bootstrap.value_or(0.0);
  for (std::size_t k = rewards.size(); k-- > 0;) {
    next = rewards[k] + gamma * next;
    out[k] = next;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizers

struct OptimizerConfig {
  std::string kind = "adam";  // "adam" or "sgd"
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(OptimizerConfig config, std::size_t size)
      : config_(std::move(config)), m_(size, 0.0), v_(size, 0.0) {
    if (config_.kind != "adam" && config_.kind != "sgd")
      throw ConfigError("unknown optimizer '" + config_.kind + "'");
    if (!(config_.learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
  }

  const OptimizerConfig& config() const { return config_; }
  std::uint64_t steps() const { return t_; }

  void step(std::span<double> params, std::span<const double> grad) {
    if (params.size() != grad.size() || params.size() != m_.size())
      throw DimensionError("optimizer state does not match the parameter count");
    ++t_;
    const double lr = config_.learning_rate;
    if (config_.kind == "sgd") {
      for (std::size_t k = 0; k < params.size(); ++k) params[k] -= lr * grad[k];
      return;
    }
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      m_[k] = b1 * m_[k] + (1.0 - b1) * grad[k];
      v_[k] = b2 * v_[k] + (1.0 - b2) * grad[k] * grad[k];
      params[k] -= lr * (m_[k] / c1) / (std::sqrt(v_[k] / c2) + config_.epsilon);
    }
  }

 private:
  OptimizerConfig config_;
  std::vector<double> m_, v_;
  std::uint64_t t_ = 0;
};

/// Scales `grad` in place so its L2 norm is at most max_norm (<= 0 disables).
/// Returns the norm before clipping.
inline double clip_global_norm(std::span<double> grad, double max_norm) {
  double s = 0.0;
  for (double g : grad) s += g * g;
  const double norm = std::sqrt(s);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (double& g : grad) g *= f;
  }
  return norm;
}

// ---------------------------------------------------------------------------

struct TrainerConfig {
  double gamma = 0.99;
  OptimizerConfig optimizer;
  double value_weight = 0.5;
  double entropy_weight = 0.01;
  double max_grad_norm = 0.5;
  int updates = 1000;
  int environments = 32;
  int segment_length = 16;
  std::size_t batch_size = 14656;  // buffer reservation
  double reward_scale = 1e-4;
  bool normalize_advantages = true;
  double epsilon_start = 0.3;
  double epsilon_end = 0.02;
  double epsilon_decay_fraction = 0.5;
  int checkpoint_interval = 100;

  void validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0,1]");
    if (value_weight < 0.0 || entropy_weight < 0.0) throw ConfigError("loss weights must be >= 0");
    if (updates < 0) throw ConfigError("updates must be >= 0");
    if (environments < 1) throw ConfigError("environments must be >= 1");
    if (segment_length < 1) throw ConfigError("segment_length must be >= 1");
    if (!(reward_scale > 0.0)) throw ConfigError("reward_scale must be > 0");
    for (double e : {epsilon_start, epsilon_end})
      if (!(e >= 0.0 && e <= 1.0)) throw ConfigError("epsilon must lie in [0,1]");
  }

  /// Linear decay from epsilon_start to epsilon_end over the first
  /// epsilon_decay_fraction of the updates.
  double epsilon_at(int update) const {
    const double horizon = epsilon_decay_fraction * updates;
    if (horizon <= 0.0) return epsilon_end;
    const double f = update / horizon;
    if (f >= 1.0) return epsilon_end;
    return epsilon_start + (epsilon_end - epsilon_start) * f;
  }
};

/// Everything needed to build cohorts and the network.
struct TrainingSetup {
  EnvConfig env;
  MarketState market;
  PopulationSpec population;
  GraphSpec graph;
  NetworkShape network;  // input width is filled from the tables
  TrainerConfig trainer;
  std::uint64_t seed = 0;
  int workers = 1;
};

/// One segment of experience from one cohort, indexed [step][agent].
struct RolloutBuffer {
  int steps = 0;
  int slots = 0;
  std::vector<Matrix> observations;  // per step: features x slots
  Eigen::MatrixXi actions;
  Eigen::MatrixXd rewards;  // already scaled
  Eigen::MatrixXd values;
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> valid;
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> done;
  Eigen::RowVectorXd bootstrap;  // value after the last step for unfinished slots
  RecurrentState initial;
  double raw_reward_sum = 0.0;
  int crises = 0;

  void reset(int segment, int agents, int features, const RecurrentState& state) {
    steps = segment;
    slots = agents;
    observations.assign(segment, Matrix::Zero(features, agents));
    actions = Eigen::MatrixXi::Zero(segment, agents);
    rewards = Eigen::MatrixXd::Zero(segment, agents);
    values = Eigen::MatrixXd::Zero(segment, agents);
    valid.setZero(segment, agents);
    done.setZero(segment, agents);
    bootstrap = Eigen::RowVectorXd::Zero(agents);
    initial = state;
    raw_reward_sum = 0.0;
    crises = 0;
  }

  int transitions() const {
    int n = 0;
    for (Eigen::Index t = 0; t < valid.rows(); ++t)
      for (Eigen::Index b = 0; b < valid.cols(); ++b) n += valid(t, b);
    return n;
  }
};

/// Fills returns and advantages (G - V) for one buffer. Each slot's
/// recursion restarts at `done` steps and is seeded by the bootstrap value
/// when the segment ends mid-trajectory.
inline void compute_returns(const RolloutBuffer& buf, double gamma, Eigen::MatrixXd& returns,
                            Eigen::MatrixXd& advantages) {
  returns = Eigen::MatrixXd::Zero(buf.steps, buf.slots);
  advantages = Eigen::MatrixXd::Zero(buf.steps, buf.slots);
  for (int b = 0; b < buf.slots; ++b) {
    double next = buf.bootstrap(b);
    for (int t = buf.steps - 1; t >= 0; --t) {
      if (!buf.valid(t, b)) {
        next = 0.0;
        continue;
      }
      if (buf.done(t, b)) next = 0.0;
      next = buf.rewards(t, b) + gamma * next;
      returns(t, b) = next;
      advantages(t, b) = next - buf.values(t, b);
    }
  }
}

/// (A - mean) / (sd + 1e-8) over valid transitions. Monotone, so the order of
/// advantages (and hence the best action in each state) is unchanged.
inline void normalize_valid_advantages(SegmentBatch& batch) {
  double sum = 0.0, sq = 0.0;
  int n = 0;
  for (Eigen::Index t = 0; t < batch.valid.rows(); ++t)
    for (Eigen::Index b = 0; b < batch.valid.cols(); ++b)
      if (batch.valid(t, b)) {
        sum += batch.advantages(t, b);
        ++n;
      }
  if (n == 0) return;
  const double mean = sum / n;
  for (Eigen::Index t = 0; t < batch.valid.rows(); ++t)
    for (Eigen::Index b = 0; b < batch.valid.cols(); ++b)
      if (batch.valid(t, b)) sq += (batch.advantages(t, b) - mean) * (batch.advantages(t, b) - mean);
  const double sd = std::sqrt(sq / n);
  for (Eigen::Index t = 0; t < batch.valid.rows(); ++t)
    for (Eigen::Index b = 0; b < batch.valid.cols(); ++b)
      if (batch.valid(t, b)) batch.advantages(t, b) = (batch.advantages(t, b) - mean) / (sd + 1e-8);
}

/// Concatenates cohort buffers into one batch, keeping only slots with at
/// least one transition.
inline SegmentBatch assemble_batch(std::span<const RolloutBuffer> buffers, double gamma, bool normalize_advantages) {
  int total_slots = 0;
  int steps = 0;
  std::vector<std::vector<int>> kept(buffers.size());
  for (std::size_t e = 0; e < buffers.size(); ++e) {
    steps = std::max(steps, buffers[e].steps);
    for (int b = 0; b < buffers[e].slots; ++b)
      if (buffers[e].valid.col(b).any()) kept[e].push_back(b);
    total_slots += static_cast<int>(kept[e].size());
  }
  SegmentBatch batch;
  if (buffers.empty()) return batch;
  const Eigen::Index features = buffers.front().observations.front().rows();
  const int width = static_cast<int>(buffers.front().initial.h.rows());
  batch.observations.assign(steps, Matrix::Zero(features, total_slots));
  batch.actions = Eigen::MatrixXi::Zero(steps, total_slots);
  batch.advantages = Eigen::MatrixXd::Zero(steps, total_slots);
  batch.returns = Eigen::MatrixXd::Zero(steps, total_slots);
  batch.valid.setZero(steps, total_slots);
  batch.reset_after.setZero(steps, total_slots);
  batch.initial = RecurrentState::zeros(width, total_slots);
  int col = 0;
  for (std::size_t e = 0; e < buffers.size(); ++e) {
    const RolloutBuffer& buf = buffers[e];
    Eigen::MatrixXd returns, advantages;
    compute_returns(buf, gamma, returns, advantages);
    for (int b : kept[e]) {
      for (int t = 0; t < buf.steps; ++t) {
        batch.observations[t].col(col) = buf.observations[t].col(b);
        batch.actions(t, col) = buf.actions(t, b);
        batch.advantages(t, col) = advantages(t, b);
        batch.returns(t, col) = returns(t, b);
        batch.valid(t, col) = buf.valid(t, b);
        batch.reset_after(t, col) = buf.done(t, b);
      }
      batch.initial.h.col(col) = buf.initial.h.col(b);
      batch.initial.c.col(col) = buf.initial.c.col(b);
      ++col;
    }
  }
  if (normalize_advantages) normalize_valid_advantages(batch);
  return batch;
}

struct UpdateMetrics {
  int update = 0;
  std::uint64_t steps = 0;
  double mean_reward = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double grad_norm = 0.0;
  double crisis_rate = 0.0;
};

/// One A2C step: loss gradient, global-norm clipping, optimizer update. On a
/// non-finite loss or gradient the parameters are left untouched and a
/// NumericFault naming the offending transition is thrown.
inline UpdateMetrics a2c_update(PolicyParameters& params, Optimizer& optimizer, const SegmentBatch& batch,
                                const TrainerConfig& config) {
  PolicyParameters grad;
  const LossBreakdown loss =
      a2c_loss(params, batch, {config.value_weight, config.entropy_weight}, &grad);
  if (!std::isfinite(loss.total)) throw NumericFault("non-finite loss", -1);
  if (!grad.all_finite()) throw NumericFault("non-finite gradient", -1);
  UpdateMetrics m;
  m.policy_loss = loss.policy;
  m.value_loss = loss.value;
  m.entropy = loss.entropy;
  m.grad_norm = clip_global_norm(grad.values(), config.max_grad_norm);
  optimizer.step(params.values(), grad.values());
  return m;
}

// ---------------------------------------------------------------------------

namespace detail {

/// A cohort plus the per-agent recurrent state used while acting.
struct Cohort {
  std::unique_ptr<Environment> env;
  RecurrentState state;
  Rng action_rng{0};
  int episode_tick = 0;
  int episode = 0;
  std::vector<int> active;  // agents acting this tick
  Matrix raw;               // raw observations of `active`
};

}  // namespace detail

/// Collects segments from all cohorts and applies A2C updates.
class Trainer {
 public:
  Trainer(std::shared_ptr<const CalibrationTables> tables, TrainingSetup setup)
      : tables_(std::move(tables)), setup_(std::move(setup)), master_(setup_.seed) {
    setup_.trainer.validate();
    setup_.env.validate();
    setup_.network.input = observation_size(tables_->occupation_count());
    Rng init_rng = master_.split(1);
    params_ = PolicyParameters::initialize(setup_.network, init_rng);
    scaler_.reset(setup_.network.input);
    optimizer_ = Optimizer(setup_.trainer.optimizer, params_.size());
    cohorts_.resize(setup_.trainer.environments);
    for (int e = 0; e < setup_.trainer.environments; ++e) {
      cohorts_[e].action_rng = master_.split(1000 + e);
      start_episode(e);
    }
    buffers_.resize(cohorts_.size());
  }

  const PolicyParameters& parameters() const { return params_; }
  const OnlineScaler& scaler() const { return scaler_; }
  int updates_done() const { return update_; }
  std::uint64_t steps() const { return steps_; }
  const TrainingSetup& setup() const { return setup_; }

  Checkpoint checkpoint() const { return {params_, scaler_, static_cast<std::uint64_t>(update_)}; }

  /// Collects one segment per cohort and updates the parameters.
  UpdateMetrics run_update() {
    const double epsilon = setup_.trainer.epsilon_at(update_);
    collect(epsilon);
    const SegmentBatch batch = assemble_batch(buffers_, setup_.trainer.gamma, setup_.trainer.normalize_advantages);
    UpdateMetrics m = a2c_update(params_, optimizer_, batch, setup_.trainer);
    int transitions = 0, crises = 0;
    double reward_sum = 0.0;
    for (const auto& b : buffers_) {
      transitions += b.transitions();
      crises += b.crises;
      reward_sum += b.raw_reward_sum;
    }
    steps_ += transitions;
    m.update = ++update_;
    m.steps = steps_;
    m.mean_reward = transitions ? reward_sum / transitions : 0.0;
    m.crisis_rate = transitions ? static_cast<double>(crises) / transitions : 0.0;
    return m;
  }

 private:
  void start_episode(int e) {
    detail::Cohort& c = cohorts_[e];
    const std::uint64_t stream = (static_cast<std::uint64_t>(e) << 32) | static_cast<std::uint64_t>(c.episode);
    c.env = std::make_unique<Environment>(Environment::create(tables_, setup_.env, setup_.market, setup_.population,
                                                              setup_.graph, master_.split(0x1000000 + 2 * stream),
                                                              master_.split(0x1000000 + 2 * stream + 1)));
    c.state = RecurrentState::zeros(setup_.network.lstm, static_cast<Eigen::Index>(c.env->size()));
    c.episode_tick = 0;
    ++c.episode;
  }

  void gather_observations(detail::Cohort& c) const {
    if (!c.env->awaiting_actions()) c.env->begin_tick();
    c.active.clear();
    for (int i = 0; i < static_cast<int>(c.env->size()); ++i)
      if (c.env->needs_action(i)) c.active.push_back(i);
    c.raw.resize(setup_.network.input, static_cast<Eigen::Index>(c.active.size()));
    for (std::size_t k = 0; k < c.active.size(); ++k) {
      const auto obs = c.env->observe(c.active[k]).flatten();
      c.raw.col(static_cast<Eigen::Index>(k)) = Eigen::Map<const Eigen::VectorXd>(obs.data(), obs.size());
    }
  }

  Matrix scale(const Matrix& raw, bool update) {
    Matrix out(raw.rows(), raw.cols());
    std::vector<double> x(raw.rows()), y(raw.rows());
    for (Eigen::Index j = 0; j < raw.cols(); ++j) {
      for (Eigen::Index i = 0; i < raw.rows(); ++i) x[i] = raw(i, j);
      if (update) scaler_.update(x);
      scaler_.transform(x, y);
      for (Eigen::Index i = 0; i < raw.rows(); ++i) out(i, j) = y[i];
    }
    return out;
  }

  static void gather_state(const RecurrentState& s, const std::vector<int>& idx, Matrix& h, Matrix& c) {
    h.resize(s.h.rows(), static_cast<Eigen::Index>(idx.size()));
    c.resize(s.c.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      h.col(static_cast<Eigen::Index>(k)) = s.h.col(idx[k]);
      c.col(static_cast<Eigen::Index>(k)) = s.c.col(idx[k]);
    }
  }

  void collect(double epsilon) {
    const int T = setup_.trainer.segment_length;
    const int E = static_cast<int>(cohorts_.size());
    const double scale_r = setup_.trainer.reward_scale;
    const int episode_ticks = setup_.env.episode_ticks;
    for (int e = 0; e < E; ++e)
      buffers_[e].reset(T, static_cast<int>(cohorts_[e].env->size()), setup_.network.input, cohorts_[e].state);

    std::vector<Matrix> scaled(E);
    std::vector<char> ended(E, 0);
    for (int t = 0; t < T; ++t) {
      parallel_for(E, setup_.workers, [&](int e) { gather_observations(cohorts_[e]); });
      for (int e = 0; e < E; ++e) scaled[e] = scale(cohorts_[e].raw, true);
      parallel_for(E, setup_.workers, [&](int e) {
        detail::Cohort& c = cohorts_[e];
        RolloutBuffer& buf = buffers_[e];
        if (buf.slots != static_cast<int>(c.env->size())) throw InvariantViolation("cohort size changed mid-segment");
        Matrix h, cs;
        gather_state(c.state, c.active, h, cs);
        StepCache cache;
        forward_step(params_, scaled[e], h, cs, cache);
        std::vector<std::optional<ActionChoice>> actions(c.env->size());
        for (std::size_t k = 0; k < c.active.size(); ++k) {
          const int i = c.active[k];
          const auto col = cache.probs.col(static_cast<Eigen::Index>(k));
          actions[i] = sample_action(std::span<const double>(col.data(), col.size()), epsilon, c.action_rng);
          c.state.h.col(i) = cache.hidden.col(static_cast<Eigen::Index>(k));
          c.state.c.col(i) = cache.cell.col(static_cast<Eigen::Index>(k));
          buf.observations[t].col(i) = scaled[e].col(static_cast<Eigen::Index>(k));
          buf.actions(t, i) = actions[i]->id();
          buf.values(t, i) = cache.value(static_cast<Eigen::Index>(k));
          buf.valid(t, i) = 1;
        }
        const auto outcomes = c.env->finish_tick(actions);
        for (const StepOutcome& o : outcomes) {
          if (!o.acted) continue;
          const int i = o.agent_id;
          buf.rewards(t, i) = o.reward * scale_r;
          buf.raw_reward_sum += o.reward;
          buf.crises += o.crisis ? 1 : 0;
        }
        ++c.episode_tick;
        if (episode_ticks > 0 && c.episode_tick >= episode_ticks) {
          for (int i : c.active) buf.done(t, i) = 1;
          ended[e] = 1;
          return;
        }
        c.env->begin_tick();
        bool any_acting = false;
        for (int i = 0; i < static_cast<int>(c.env->size()); ++i) any_acting = any_acting || c.env->needs_action(i);
        for (int i : c.active)
          if (!c.env->needs_action(i)) {
            buf.done(t, i) = 1;
            c.state.h.col(i).setZero();
            c.state.c.col(i).setZero();
          }
        if (!any_acting) ended[e] = 1;
      });
      for (int e = 0; e < E; ++e) {
        if (!ended[e]) continue;
        ended[e] = 0;
        if (t + 1 < T)
          start_episode(e);
        else
          pending_restart_.push_back(e);
      }
    }

    // Bootstrap values for trajectories cut by the segment end.
    for (int e = 0; e < E; ++e) {
      detail::Cohort& c = cohorts_[e];
      RolloutBuffer& buf = buffers_[e];
      if (std::find(pending_restart_.begin(), pending_restart_.end(), e) != pending_restart_.end()) continue;
      gather_observations(c);
      if (c.active.empty()) continue;
      const Matrix x = scale(c.raw, false);
      Matrix h, cs;
      gather_state(c.state, c.active, h, cs);
      StepCache cache;
      forward_step(params_, x, h, cs, cache);
      for (std::size_t k = 0; k < c.active.size(); ++k) buf.bootstrap(c.active[k]) = cache.value(static_cast<Eigen::Index>(k));
    }
    for (int e : pending_restart_) start_episode(e);
    pending_restart_.clear();
  }

  std::shared_ptr<const CalibrationTables> tables_;
  TrainingSetup setup_;
  Rng master_;
  PolicyParameters params_;
  OnlineScaler scaler_;
  Optimizer optimizer_;
  std::vector<detail::Cohort> cohorts_;
  std::vector<RolloutBuffer> buffers_;
  std::vector<int> pending_restart_;
  int update_ = 0;
  std::uint64_t steps_ = 0;
};

inline const char* kMetricsHeader = "update,steps,mean_reward,policy_loss,value_loss,entropy,grad_norm,crisis_rate";

inline std::string metrics_row(const UpdateMetrics& m) {
  auto f = [](double v) { return csv::format_double(v); };
  return std::to_string(m.update) + "," + std::to_string(m.steps) + "," + f(m.mean_reward) + "," + f(m.policy_loss) +
         "," + f(m.value_loss) + "," + f(m.entropy) + "," + f(m.grad_norm) + "," + f(m.crisis_rate);
}

struct TrainingResult {
  Checkpoint checkpoint;
  std::vector<UpdateMetrics> metrics;
};

/// Runs setup.trainer.updates updates. With an output directory, writes
/// metrics.csv, periodic and final checkpoint.json; on a fault the current
/// parameters are saved to checkpoint_fault.json before rethrowing.
inline TrainingResult train(std::shared_ptr<const CalibrationTables> tables, const TrainingSetup& setup,
                            const std::optional<std::filesystem::path>& output_dir = std::nullopt,
                            const std::function<void(const UpdateMetrics&)>& on_update = {}) {
  Trainer trainer(std::move(tables), setup);
  TrainingResult result;
  std::ofstream metrics_out;
  if (output_dir) {
    std::filesystem::create_directories(*output_dir);
    metrics_out.open(*output_dir / "metrics.csv");
    if (!metrics_out) throw RuntimeFault("cannot write metrics.csv");
    metrics_out << kMetricsHeader << '\n';
  }
  try {
    for (int u = 0; u < setup.trainer.updates; ++u) {
      const UpdateMetrics m = trainer.run_update();
      result.metrics.push_back(m);
      if (on_update) on_update(m);
      if (output_dir) {
        metrics_out << metrics_row(m) << '\n';
        if (setup.trainer.checkpoint_interval > 0 && m.update % setup.trainer.checkpoint_interval == 0)
          save_checkpoint((*output_dir / "checkpoint.json").string(), trainer.checkpoint());
      }
    }
  } catch (const Error&) {
    if (output_dir) save_checkpoint((*output_dir / "checkpoint_fault.json").string(), trainer.checkpoint());
    throw;
  }
  result.checkpoint = trainer.checkpoint();
  if (output_dir) save_checkpoint((*output_dir / "checkpoint.json").string(), result.checkpoint);
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

enum class EvaluationPolicy { greedy, sampled, uniform_random };

struct EvaluationResult {
  double mean_episodic_reward = 0.0;  // mean over agents of summed rewards
  double crisis_rate = 0.0;           // crisis ticks / acting ticks
  double invalid_rate = 0.0;
  std::array<double, kActionCount> mean_action_probability{};  // averaged over visited states
  std::array<double, kActionCount> action_frequency{};
  std::uint64_t transitions = 0;
  int agents = 0;
};

/// Runs `cohorts` fresh cohorts for `ticks` ticks with a frozen policy.
inline EvaluationResult evaluate(std::shared_ptr<const CalibrationTables> tables, const TrainingSetup& setup,
                                 const Checkpoint& ck, EvaluationPolicy mode, std::uint64_t seed, int cohorts,
                                 int ticks) {
  EvaluationResult r;
  Rng master(seed);
  double reward_total = 0.0;
  std::uint64_t crises = 0, invalid = 0;
  const int input = ck.parameters.shape().input;
  for (int e = 0; e < cohorts; ++e) {
    Environment env = Environment::create(tables, setup.env, setup.market, setup.population, setup.graph,
                                          master.split(3 * e), master.split(3 * e + 1));
    if (env.observation_dim() != input) throw DimensionError("checkpoint input width does not match the tables");
    Rng action_rng = master.split(3 * e + 2);
    RecurrentState state = RecurrentState::zeros(ck.parameters.shape().lstm, static_cast<Eigen::Index>(env.size()));
    std::vector<double> episodic(env.size(), 0.0);
    std::vector<char> acted(env.size(), 0);
    for (int t = 0; t < ticks; ++t) {
      env.begin_tick();
      std::vector<int> active;
      for (int i = 0; i < static_cast<int>(env.size()); ++i)
        if (env.needs_action(i)) active.push_back(i);
      std::vector<std::optional<ActionChoice>> actions(env.size());
      if (!active.empty()) {
        Matrix x(input, static_cast<Eigen::Index>(active.size()));
        Matrix h(state.h.rows(), x.cols()), c(state.c.rows(), x.cols());
        std::vector<double> y(input);
        for (std::size_t k = 0; k < active.size(); ++k) {
          const auto obs = env.observe(active[k]).flatten();
          ck.scaler.transform(obs, y);
          x.col(static_cast<Eigen::Index>(k)) = Eigen::Map<const Eigen::VectorXd>(y.data(), input);
          h.col(static_cast<Eigen::Index>(k)) = state.h.col(active[k]);
          c.col(static_cast<Eigen::Index>(k)) = state.c.col(active[k]);
        }
        StepCache cache;
        forward_step(ck.parameters, x, h, c, cache);
        for (std::size_t k = 0; k < active.size(); ++k) {
          const int i = active[k];
          const auto col = cache.probs.col(static_cast<Eigen::Index>(k));
          const std::span<const double> probs(col.data(), col.size());
          for (int a = 0; a < kActionCount; ++a) r.mean_action_probability[a] += probs[a];
          switch (mode) {
            case EvaluationPolicy::greedy: actions[i] = greedy_action(probs); break;
            case EvaluationPolicy::sampled: actions[i] = sample_action(probs, 0.0, action_rng); break;
            case EvaluationPolicy::uniform_random:
              actions[i] = ActionChoice::from_id(static_cast<int>(action_rng.below(kActionCount)));
              break;
          }
          r.action_frequency[actions[i]->id()] += 1.0;
          state.h.col(i) = cache.hidden.col(static_cast<Eigen::Index>(k));
          state.c.col(i) = cache.cell.col(static_cast<Eigen::Index>(k));
        }
      }
      for (const StepOutcome& o : env.finish_tick(actions)) {
        if (!o.acted) continue;
        episodic[o.agent_id] += o.reward;
        acted[o.agent_id] = 1;
        crises += o.crisis ? 1 : 0;
        invalid += o.invalid ? 1 : 0;
        ++r.transitions;
      }
    }
    for (std::size_t i = 0; i < env.size(); ++i)
      if (acted[i]) {
        reward_total += episodic[i];
        ++r.agents;
      }
  }
  if (r.agents > 0) r.mean_episodic_reward = reward_total / r.agents;
  if (r.transitions > 0) {
    r.crisis_rate = static_cast<double>(crises) / r.transitions;
    r.invalid_rate = static_cast<double>(invalid) / r.transitions;
    for (int a = 0; a < kActionCount; ++a) {
      r.mean_action_probability[a] /= r.transitions;
      r.action_frequency[a] /= r.transitions;
    }
  }
  return r;
}

}  // namespace pension
