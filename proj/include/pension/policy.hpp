#pragma once

// Shared recurrent actor-critic network: tanh feed-forward encoder, LSTM
// cell, 25-way softmax actor head and scalar critic head. Includes the online
// min-max observation scaler and checkpoint I/O.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pension/environment.hpp"
#include "pension/errors.hpp"
#include "pension/random.hpp"

namespace pension {

using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using TensorMap = Eigen::Map<RowMatrix>;
using ConstTensorMap = Eigen::Map<const RowMatrix>;

// ---------------------------------------------------------------------------
// Online scaler

/// Running per-feature min/max; transforms into [0,1]. Also keeps a running
/// mean and variance (Welford) which the transform does not use yet.
class OnlineScaler {
 public:
  OnlineScaler() = default;
  explicit OnlineScaler(std::size_t dim) { reset(dim); }

  void reset(std::size_t dim) {
    min_.assign(dim, 0.0);
    max_.assign(dim, 0.0);
    mean_.assign(dim, 0.0);
    m2_.assign(dim, 0.0);
    count_ = 0;
  }

  std::size_t dim() const { return min_.size(); }
  std::uint64_t count() const { return count_; }
  const std::vector<double>& min() const { return min_; }
  const std::vector<double>& max() const { return max_; }
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& m2() const { return m2_; }

  double variance(std::size_t k) const { return count_ > 1 ? m2_[k] / static_cast<double>(count_ - 1) : 0.0; }

  void update(std::span<const double> x) {
    check(x);
    ++count_;
    for (std::size_t k = 0; k < x.size(); ++k) {
      if (count_ == 1) {
        min_[k] = max_[k] = x[k];
      } else {
        min_[k] = std::min(min_[k], x[k]);
        max_[k] = std::max(max_[k], x[k]);
      }
      const double d = x[k] - mean_[k];
      mean_[k] += d / static_cast<double>(count_);
      m2_[k] += d * (x[k] - mean_[k]);
    }
  }

  /// (x - min) / (max - min) clamped to [0,1]; 0.5 where the range is empty.
  void transform(std::span<const double> x, std::span<double> out) const {
    check(x);
    if (out.size() != x.size()) throw DimensionError("scaler output size mismatch");
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double range = max_[k] - min_[k];
      if (count_ == 0 || !(range > 0.0)) {
        out[k] = 0.5;
      } else {
        out[k] = std::clamp((x[k] - min_[k]) / range, 0.0, 1.0);
      }
    }
  }

  std::vector<double> transform(std::span<const double> x) const {
    std::vector<double> out(x.size());
    transform(x, out);
    return out;
  }

  std::vector<double> update_transform(std::span<const double> x) {
    update(x);
    return transform(x);
  }

  nlohmann::json to_json() const {
    return {{"count", count_}, {"min", min_}, {"max", max_}, {"mean", mean_}, {"m2", m2_}};
  }

  static OnlineScaler from_json(const nlohmann::json& j) {
    OnlineScaler s;
    s.count_ = j.at("count").get<std::uint64_t>();
    s.min_ = j.at("min").get<std::vector<double>>();
    s.max_ = j.at("max").get<std::vector<double>>();
    s.mean_ = j.at("mean").get<std::vector<double>>();
    s.m2_ = j.at("m2").get<std::vector<double>>();
    const std::size_t d = s.min_.size();
    if (s.max_.size() != d || s.mean_.size() != d || s.m2_.size() != d)
      throw ValidationError("scaler arrays have inconsistent lengths");
    return s;
  }

 private:
  void check(std::span<const double> x) const {
    if (x.size() != min_.size())
      throw DimensionError("scaler expects " + std::to_string(min_.size()) + " features, got " +
                           std::to_string(x.size()));
    for (double v : x)
      if (!std::isfinite(v)) throw InputError("non-finite observation feature");
  }

  std::vector<double> min_, max_, mean_, m2_;
  std::uint64_t count_ = 0;
};

// ---------------------------------------------------------------------------
// Parameters

struct NetworkShape {
  int input = 0;
  std::vector<int> encoder{128, 128};
  int lstm = 128;
  int actions = kActionCount;

  friend bool operator==(const NetworkShape&, const NetworkShape&) = default;
};

struct TensorSpec {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

/// All weights in one flat row-major buffer. Also used to hold gradients.
class PolicyParameters {
 public:
  PolicyParameters() = default;

  explicit PolicyParameters(NetworkShape shape) : shape_(std::move(shape)) {
    if (shape_.input < 1 || shape_.lstm < 1 || shape_.actions < 1) throw ConfigError("network sizes must be >= 1");
    int in = shape_.input;
    for (std::size_t l = 0; l < shape_.encoder.size(); ++l) {
      if (shape_.encoder[l] < 1) throw ConfigError("encoder widths must be >= 1");
      add("encoder." + std::to_string(l) + ".weight", shape_.encoder[l], in);
      add("encoder." + std::to_string(l) + ".bias", shape_.encoder[l], 1);
      in = shape_.encoder[l];
    }
    add("lstm.input_weight", 4 * shape_.lstm, in);
    add("lstm.recurrent_weight", 4 * shape_.lstm, shape_.lstm);
    add("lstm.bias", 4 * shape_.lstm, 1);
    add("actor.weight", shape_.actions, shape_.lstm);
    add("actor.bias", shape_.actions, 1);
    add("critic.weight", 1, shape_.lstm);
    add("critic.bias", 1, 1);
    values_.assign(total_, 0.0);
  }

  /// Xavier-uniform encoder, 1/sqrt(n) LSTM, near-zero actor head, forget
  /// gate bias 1.
  static PolicyParameters initialize(const NetworkShape& shape, Rng& rng) {
    PolicyParameters p(shape);
    const int layers = static_cast<int>(shape.encoder.size());
    auto fill = [&](int idx, double bound) {
      auto t = p.tensor(idx);
      for (Eigen::Index r = 0; r < t.rows(); ++r)
        for (Eigen::Index c = 0; c < t.cols(); ++c) t(r, c) = rng.uniform(-bound, bound);
    };
    for (int l = 0; l < layers; ++l) {
      const auto& spec = p.specs_[encoder_weight(l)];
      fill(encoder_weight(l), std::sqrt(6.0 / (spec.rows + spec.cols)));
    }
    const double k = 1.0 / std::sqrt(static_cast<double>(shape.lstm));
    fill(p.lstm_input_weight(), k);
    fill(p.lstm_recurrent_weight(), k);
    p.tensor(p.lstm_bias()).middleRows(shape.lstm, shape.lstm).setConstant(1.0);
    fill(p.actor_weight(), 0.01 * k);
    fill(p.critic_weight(), k);
    return p;
  }

  const NetworkShape& shape() const { return shape_; }
  const std::vector<TensorSpec>& specs() const { return specs_; }
  std::size_t size() const { return total_; }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& raw() { return values_; }

  TensorMap tensor(int idx) {
    const auto& s = specs_[idx];
    return TensorMap(values_.data() + s.offset, s.rows, s.cols);
  }
  ConstTensorMap tensor(int idx) const {
    const auto& s = specs_[idx];
    return ConstTensorMap(values_.data() + s.offset, s.rows, s.cols);
  }

  int encoder_layers() const { return static_cast<int>(shape_.encoder.size()); }
  static int encoder_weight(int l) { return 2 * l; }
  static int encoder_bias(int l) { return 2 * l + 1; }
  int lstm_input_weight() const { return 2 * encoder_layers(); }
  int lstm_recurrent_weight() const { return 2 * encoder_layers() + 1; }
  int lstm_bias() const { return 2 * encoder_layers() + 2; }
  int actor_weight() const { return 2 * encoder_layers() + 3; }
  int actor_bias() const { return 2 * encoder_layers() + 4; }
  int critic_weight() const { return 2 * encoder_layers() + 5; }
  int critic_bias() const { return 2 * encoder_layers() + 6; }

  void set_zero() { std::fill(values_.begin(), values_.end(), 0.0); }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  double norm() const {
    double s = 0.0;
    for (double v : values_) s += v * v;
    return std::sqrt(s);
  }

 private:
  void add(std::string name, int rows, int cols) {
    specs_.push_back({std::move(name), rows, cols, total_});
    total_ += static_cast<std::size_t>(rows) * cols;
  }

  NetworkShape shape_;
  std::vector<TensorSpec> specs_;
  std::vector<double> values_;
  std::size_t total_ = 0;
};

// ---------------------------------------------------------------------------
// Forward pass

/// Hidden and cell state, one column per agent.
struct RecurrentState {
  Matrix h;
  Matrix c;

  static RecurrentState zeros(int width, Eigen::Index columns) {
    return {Matrix::Zero(width, columns), Matrix::Zero(width, columns)};
  }
  Eigen::Index columns() const { return h.cols(); }
};

/// Activations of one time step, kept for backpropagation.
struct StepCache {
  std::vector<Matrix> encoder;  // post-activation of each encoder layer
  Matrix input_gate, forget_gate, cell_candidate, output_gate;
  Matrix cell, cell_tanh, hidden;
  Matrix logits, probs;
  Eigen::RowVectorXd value;
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline void check_finite(const Matrix& m, int layer) {
  if (!m.allFinite())
    throw NumericFault("non-finite activations in layer " + std::to_string(layer), layer);
}

/// Column-wise softmax with max subtraction.
inline Matrix softmax_columns(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const double mx = logits.col(j).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) sum += (p(i, j) = std::exp(logits(i, j) - mx));
    p.col(j) /= sum;
  }
  return p;
}

}  // namespace detail

/// Runs one step for a batch of agents. `obs` is features x agents, already
/// scaled. Layers are numbered encoder 0..L-1, LSTM L, actor L+1, critic L+2
/// in numeric fault reports.
inline void forward_step(const PolicyParameters& p, const Matrix& obs, const Matrix& h_prev, const Matrix& c_prev,
                         StepCache& cache) {
  const NetworkShape& shape = p.shape();
  if (obs.rows() != shape.input)
    throw DimensionError("observation has " + std::to_string(obs.rows()) + " features, network expects " +
                         std::to_string(shape.input));
  if (h_prev.rows() != shape.lstm || c_prev.rows() != shape.lstm || h_prev.cols() != obs.cols() ||
      c_prev.cols() != obs.cols())
    throw DimensionError("hidden state shape does not match the batch");
  const int layers = p.encoder_layers();
  const Eigen::Index batch = obs.cols();
  cache.encoder.resize(layers);
  const Matrix* in = &obs;
  for (int l = 0; l < layers; ++l) {
    Matrix& out = cache.encoder[l];
    out.noalias() = p.tensor(PolicyParameters::encoder_weight(l)) * (*in);
    out.colwise() += p.tensor(PolicyParameters::encoder_bias(l)).col(0);
    out = out.array().tanh();
    detail::check_finite(out, l);
    in = &out;
  }
  const int n = shape.lstm;
  Matrix gates(4 * n, batch);
  gates.noalias() = p.tensor(p.lstm_input_weight()) * (*in);
  gates.noalias() += p.tensor(p.lstm_recurrent_weight()) * h_prev;
  gates.colwise() += p.tensor(p.lstm_bias()).col(0);
  cache.input_gate = gates.topRows(n).unaryExpr(&detail::sigmoid);
  cache.forget_gate = gates.middleRows(n, n).unaryExpr(&detail::sigmoid);
  cache.cell_candidate = gates.middleRows(2 * n, n).array().tanh();
  cache.output_gate = gates.bottomRows(n).unaryExpr(&detail::sigmoid);
  cache.cell = cache.forget_gate.cwiseProduct(c_prev) + cache.input_gate.cwiseProduct(cache.cell_candidate);
  cache.cell_tanh = cache.cell.array().tanh();
  cache.hidden = cache.output_gate.cwiseProduct(cache.cell_tanh);
  detail::check_finite(cache.hidden, layers);
  detail::check_finite(cache.cell, layers);

  cache.logits.noalias() = p.tensor(p.actor_weight()) * cache.hidden;
  cache.logits.colwise() += p.tensor(p.actor_bias()).col(0);
  detail::check_finite(cache.logits, layers + 1);
  cache.probs = detail::softmax_columns(cache.logits);

  cache.value.noalias() = p.tensor(p.critic_weight()) * cache.hidden;
  cache.value.array() += p.tensor(p.critic_bias())(0, 0);
  detail::check_finite(cache.value, layers + 2);
}

struct PolicyOutput {
  Matrix probs;              // actions x agents
  Eigen::RowVectorXd value;  // 1 x agents
  RecurrentState next;
};

inline PolicyOutput forward(const PolicyParameters& p, const Matrix& obs, const RecurrentState& state) {
  StepCache cache;
  forward_step(p, obs, state.h, state.c, cache);
  return {std::move(cache.probs), std::move(cache.value), {std::move(cache.hidden), std::move(cache.cell)}};
}

// ---------------------------------------------------------------------------
// Action selection

/// With probability epsilon a uniformly random joint action, otherwise a draw
/// from the categorical distribution.
inline ActionChoice sample_action(std::span<const double> probs, double epsilon, Rng& rng) {
  if (probs.size() != static_cast<std::size_t>(kActionCount))
    throw DimensionError("expected " + std::to_string(kActionCount) + " action probabilities");
  if (epsilon > 0.0 && rng.uniform() < epsilon) return ActionChoice::from_id(static_cast<int>(rng.below(kActionCount)));
  const double u = rng.uniform();
  double cumulative = 0.0;
  int last_positive = 0;
  for (int k = 0; k < kActionCount; ++k) {
    if (probs[k] > 0.0) last_positive = k;
    cumulative += probs[k];
    if (u < cumulative) return ActionChoice::from_id(k);
  }
  return ActionChoice::from_id(last_positive);
}

inline ActionChoice greedy_action(std::span<const double> probs) {
  return ActionChoice::from_id(static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin()));
}

// ---------------------------------------------------------------------------
// A2C loss and its gradient by backpropagation through time

/// A rollout segment laid out as time x agent-slot. Slot b at step t holds a
/// transition iff `valid(t, b)`; `reset_after(t, b)` zeroes the recurrent
/// state before step t+1 (episode boundary).
struct SegmentBatch {
  std::vector<Matrix> observations;  // per step, features x slots
  Eigen::MatrixXi actions;           // steps x slots
  Eigen::MatrixXd advantages;        // steps x slots
  Eigen::MatrixXd returns;           // steps x slots
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> valid;
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> reset_after;
  RecurrentState initial;

  int steps() const { return static_cast<int>(observations.size()); }
  Eigen::Index slots() const { return actions.cols(); }
  int transitions() const {
    int n = 0;
    for (Eigen::Index t = 0; t < valid.rows(); ++t)
      for (Eigen::Index b = 0; b < valid.cols(); ++b) n += valid(t, b) ? 1 : 0;
    return n;
  }
};

struct LossCoefficients {
  double value_weight = 0.5;
  double entropy_weight = 0.01;
};

struct LossBreakdown {
  double total = 0.0;
  double policy = 0.0;   // mean of -A log pi(a)
  double value = 0.0;    // mean of (G - V)^2
  double entropy = 0.0;  // mean policy entropy
  int transitions = 0;
};

/// Mean over valid transitions of
///   -A log pi(a) + value_weight (G - V)^2 - entropy_weight H(pi).
/// Advantages and returns are constants. When `gradient` is given it is
/// overwritten with dLoss/dParameters. Gradients do not flow into the
/// initial recurrent state.
inline LossBreakdown a2c_loss(const PolicyParameters& p, const SegmentBatch& batch, const LossCoefficients& coeffs,
                              PolicyParameters* gradient = nullptr) {
  const int steps = batch.steps();
  const Eigen::Index slots = batch.slots();
  const int n = p.shape().lstm;
  const int layers = p.encoder_layers();
  LossBreakdown out;
  out.transitions = batch.transitions();
  if (out.transitions == 0) {
    if (gradient) *gradient = PolicyParameters(p.shape());
    return out;
  }
  const double inv_n = 1.0 / out.transitions;

  std::vector<StepCache> caches(steps);
  std::vector<Matrix> h_in(steps), c_in(steps);
  Matrix h = batch.initial.h, c = batch.initial.c;
  for (int t = 0; t < steps; ++t) {
    h_in[t] = h;
    c_in[t] = c;
    forward_step(p, batch.observations[t], h, c, caches[t]);
    h = caches[t].hidden;
    c = caches[t].cell;
    for (Eigen::Index b = 0; b < slots; ++b)
      if (batch.reset_after(t, b)) {
        h.col(b).setZero();
        c.col(b).setZero();
      }
  }

  for (int t = 0; t < steps; ++t) {
    const StepCache& s = caches[t];
    for (Eigen::Index b = 0; b < slots; ++b) {
      if (!batch.valid(t, b)) continue;
      const int a = batch.actions(t, b);
      const double logp = std::log(std::max(s.probs(a, b), std::numeric_limits<double>::min()));
      double entropy = 0.0;
      for (Eigen::Index k = 0; k < s.probs.rows(); ++k) {
        const double pk = s.probs(k, b);
        if (pk > 0.0) entropy -= pk * std::log(pk);
      }
      const double err = batch.returns(t, b) - s.value(b);
      const double contribution = -batch.advantages(t, b) * logp + coeffs.value_weight * err * err -
                                  coeffs.entropy_weight * entropy;
      if (!std::isfinite(contribution))
        throw NumericFault("non-finite loss at transition (step " + std::to_string(t) + ", slot " +
                               std::to_string(b) + ")",
                           static_cast<int>(t * slots + b));
      out.policy += -batch.advantages(t, b) * logp * inv_n;
      out.value += err * err * inv_n;
      out.entropy += entropy * inv_n;
    }
  }
  out.total = out.policy + coeffs.value_weight * out.value - coeffs.entropy_weight * out.entropy;
  if (!gradient) return out;

  PolicyParameters& g = *gradient;
  g = PolicyParameters(p.shape());
  auto actor_w = p.tensor(p.actor_weight());
  auto critic_w = p.tensor(p.critic_weight());
  auto lstm_wx = p.tensor(p.lstm_input_weight());
  auto lstm_wh = p.tensor(p.lstm_recurrent_weight());

  Matrix dh_next = Matrix::Zero(n, slots), dc_next = Matrix::Zero(n, slots);
  Matrix dlogits(p.shape().actions, slots);
  Eigen::RowVectorXd dvalue(slots);
  Matrix dgates(4 * n, slots);
  for (int t = steps - 1; t >= 0; --t) {
    const StepCache& s = caches[t];
    dlogits.setZero();
    dvalue.setZero();
    for (Eigen::Index b = 0; b < slots; ++b) {
      if (!batch.valid(t, b)) continue;
      const int a = batch.actions(t, b);
      const double adv = batch.advantages(t, b);
      double entropy = 0.0;
      for (Eigen::Index k = 0; k < s.probs.rows(); ++k) {
        const double pk = s.probs(k, b);
        if (pk > 0.0) entropy -= pk * std::log(pk);
      }
      for (Eigen::Index k = 0; k < s.probs.rows(); ++k) {
        const double pk = s.probs(k, b);
        const double logpk = pk > 0.0 ? std::log(pk) : 0.0;
        dlogits(k, b) = inv_n * (adv * pk + coeffs.entropy_weight * pk * (logpk + entropy));
      }
      dlogits(a, b) -= inv_n * adv;
      dvalue(b) = inv_n * 2.0 * coeffs.value_weight * (s.value(b) - batch.returns(t, b));
    }
    g.tensor(p.actor_weight()).noalias() += dlogits * s.hidden.transpose();
    g.tensor(p.actor_bias()).col(0) += dlogits.rowwise().sum();
    g.tensor(p.critic_weight()).noalias() += dvalue * s.hidden.transpose();
    g.tensor(p.critic_bias())(0, 0) += dvalue.sum();

    Matrix dh = dh_next;
    dh.noalias() += actor_w.transpose() * dlogits;
    dh.noalias() += critic_w.transpose() * dvalue;

    const Matrix d_out_gate = dh.cwiseProduct(s.cell_tanh);
    Matrix dc = dc_next;
    dc.array() += dh.array() * s.output_gate.array() * (1.0 - s.cell_tanh.array().square());
    dgates.topRows(n) = (dc.array() * s.cell_candidate.array() * s.input_gate.array() *
                         (1.0 - s.input_gate.array())).matrix();
    dgates.middleRows(n, n) = (dc.array() * c_in[t].array() * s.forget_gate.array() *
                               (1.0 - s.forget_gate.array())).matrix();
    dgates.middleRows(2 * n, n) = (dc.array() * s.input_gate.array() *
                                   (1.0 - s.cell_candidate.array().square())).matrix();
    dgates.bottomRows(n) = (d_out_gate.array() * s.output_gate.array() * (1.0 - s.output_gate.array())).matrix();

    const Matrix& x_lstm = layers > 0 ? s.encoder.back() : batch.observations[t];
    g.tensor(p.lstm_input_weight()).noalias() += dgates * x_lstm.transpose();
    g.tensor(p.lstm_recurrent_weight()).noalias() += dgates * h_in[t].transpose();
    g.tensor(p.lstm_bias()).col(0) += dgates.rowwise().sum();

    dh_next.noalias() = lstm_wh.transpose() * dgates;
    dc_next = dc.cwiseProduct(s.forget_gate);
    if (t > 0)
      for (Eigen::Index b = 0; b < slots; ++b)
        if (batch.reset_after(t - 1, b)) {
          dh_next.col(b).setZero();
          dc_next.col(b).setZero();
        }

    Matrix dx = lstm_wx.transpose() * dgates;
    for (int l = layers - 1; l >= 0; --l) {
      const Matrix& out_l = s.encoder[l];
      const Matrix& in_l = l > 0 ? s.encoder[l - 1] : batch.observations[t];
      const Matrix da = (dx.array() * (1.0 - out_l.array().square())).matrix();
      g.tensor(PolicyParameters::encoder_weight(l)).noalias() += da * in_l.transpose();
      g.tensor(PolicyParameters::encoder_bias(l)).col(0) += da.rowwise().sum();
      if (l > 0) dx.noalias() = p.tensor(PolicyParameters::encoder_weight(l)).transpose() * da;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr const char* kCheckpointFormat = "pension-a2c-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  PolicyParameters parameters;
  OnlineScaler scaler;
  std::uint64_t step = 0;
};

/// JSON container: format tag, version, network shape, one entry per tensor
/// with its shape and row-major data, the scaler state and the update count.
inline nlohmann::json checkpoint_to_json(const Checkpoint& ck) {
  const auto& p = ck.parameters;
  nlohmann::json tensors = nlohmann::json::array();
  for (std::size_t k = 0; k < p.specs().size(); ++k) {
    const auto& s = p.specs()[k];
    const auto v = p.values().subspan(s.offset, s.size());
    tensors.push_back({{"name", s.name}, {"shape", {s.rows, s.cols}}, {"data", std::vector<double>(v.begin(), v.end())}});
  }
  const auto& shape = p.shape();
  return {{"format", kCheckpointFormat},
          {"version", kCheckpointVersion},
          {"step", ck.step},
          {"shape", {{"input", shape.input}, {"encoder", shape.encoder}, {"lstm", shape.lstm}, {"actions", shape.actions}}},
          {"tensors", tensors},
          {"scaler", ck.scaler.to_json()}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat) throw ValidationError("not a policy checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw ValidationError("unsupported checkpoint version " + std::to_string(j.at("version").get<int>()));
    NetworkShape shape;
    const auto& js = j.at("shape");
    shape.input = js.at("input").get<int>();
    shape.encoder = js.at("encoder").get<std::vector<int>>();
    shape.lstm = js.at("lstm").get<int>();
    shape.actions = js.at("actions").get<int>();
    if (shape.actions != kActionCount) throw DimensionError("checkpoint action count does not match");
    Checkpoint ck{PolicyParameters(shape), OnlineScaler::from_json(j.at("scaler")), j.at("step").get<std::uint64_t>()};
    const auto& tensors = j.at("tensors");
    if (tensors.size() != ck.parameters.specs().size()) throw ValidationError("checkpoint tensor count mismatch");
    for (std::size_t k = 0; k < tensors.size(); ++k) {
      const auto& s = ck.parameters.specs()[k];
      const auto& t = tensors[k];
      if (t.at("name").get<std::string>() != s.name) throw ValidationError("unexpected tensor '" + t.at("name").get<std::string>() + "'");
      const auto dims = t.at("shape").get<std::vector<int>>();
      if (dims.size() != 2 || dims[0] != s.rows || dims[1] != s.cols)
        throw DimensionError("tensor '" + s.name + "' has the wrong shape");
      const auto data = t.at("data").get<std::vector<double>>();
      if (data.size() != s.size()) throw DimensionError("tensor '" + s.name + "' has the wrong element count");
      std::copy(data.begin(), data.end(), ck.parameters.values().begin() + s.offset);
    }
    if (ck.scaler.dim() != static_cast<std::size_t>(shape.input))
      throw DimensionError("scaler width does not match the network input");
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path);
  if (!out) throw RuntimeFault("cannot write checkpoint '" + path + "'");
  out << checkpoint_to_json(ck).dump() << '\n';
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open checkpoint '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("checkpoint '" + path + "' is not valid JSON: " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace pension
