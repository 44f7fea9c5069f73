#include "dmclab/engine.hpp"

#include <cmath>
#include <string>

#include "dmclab/errors.hpp"
#include "dmclab/rng.hpp"

namespace dmclab::engine {

namespace {
constexpr std::uint64_t kPathStream = 201;
constexpr double kAssertTol = 1e-12;

// Node states are stored one column per worker. The reduction below runs in
// ascending worker order so node averages are bit-reproducible.
Eigen::VectorXd node_mean(const Eigen::MatrixXd& states) {
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(states.rows());
  for (int i = 0; i < states.cols(); ++i) mean += states.col(i);
  return mean / static_cast<double>(states.cols());
}

double dispersion(const Eigen::MatrixXd& states, const Eigen::VectorXd& mean) {
  double sum = 0.0;
  for (int i = 0; i < states.cols(); ++i) sum += (states.col(i) - mean).squaredNorm();
  return sum;
}
}  // namespace

UpdateOrder order_from_tag(std::string_view tag) {
  if (tag == "ctg") return UpdateOrder::ConsensusThenGradient;
  if (tag == "gtc") return UpdateOrder::GradientThenConsensus;
  throw ParameterError("unknown update order: " + std::string(tag));
}

std::string_view order_tag(UpdateOrder order) {
  return order == UpdateOrder::ConsensusThenGradient ? "ctg" : "gtc";
}

Schedule Schedule::constant(double eta) {
  Schedule s;
  s.kind = Kind::Constant;
  s.eta = eta;
  return s;
}

Schedule Schedule::decreasing() {
  Schedule s;
  s.kind = Kind::Decreasing;
  return s;
}

Schedule Schedule::explicit_list(std::vector<double> values) {
  Schedule s;
  s.kind = Kind::Explicit;
  s.values = std::move(values);
  return s;
}

std::vector<double> Schedule::resolve(int horizon) const {
  if (horizon < 0) throw ConfigError("horizon must be nonnegative");
  std::vector<double> etas(static_cast<std::size_t>(horizon));
  switch (kind) {
    case Kind::Constant:
      if (eta < 0.0) throw ConfigError("stepsize must be nonnegative");
      std::fill(etas.begin(), etas.end(), eta);
      break;
    case Kind::Decreasing:
      for (int t = 1; t <= horizon; ++t) etas[static_cast<std::size_t>(t - 1)] = 1.0 / (t + 1);
      break;
    case Kind::Explicit:
      if (static_cast<int>(values.size()) != horizon)
        throw ConfigError("explicit schedule length does not match the horizon");
      for (double e : values)
        if (e < 0.0) throw ConfigError("stepsize must be nonnegative");
      etas = values;
      break;
  }
  return etas;
}

Eigen::MatrixXi sample_index_paths(const RunConfig& config, int per_worker) {
  const int m = config.gossip.size();
  Eigen::MatrixXi indices(config.horizon, m);
  for (int i = 0; i < m; ++i) {
    Rng rng(derive_seed(config.seed, kPathStream, static_cast<std::uint64_t>(i)));
    const int start = rng.uniform_int(per_worker);
    const auto path = chain::sample_path(config.chain, start, config.horizon, rng);
    for (int t = 0; t < config.horizon; ++t) indices(t, i) = path[static_cast<std::size_t>(t)];
  }
  if (config.lockstep_diagnostic)
    for (int i = 1; i < m; ++i) indices.col(i) = indices.col(0);
  return indices;
}

namespace {

void validate_config(const RunConfig& config, const problems::Dataset& data,
                     const std::vector<double>& etas) {
  if (config.gossip.size() != data.workers())
    throw ConfigError("gossip matrix size does not match the worker count");
  if (config.chain.size() != data.per_worker())
    throw ConfigError("chain size does not match the shard size");

  double max_eta = 0.0, sum_eta = 0.0;
  for (double e : etas) {
    max_eta = std::max(max_eta, e);
    sum_eta += e;
  }
  if (config.mode == Mode::Sgd) {
    if (config.loss.smoothness && *config.loss.smoothness > 0.0 &&
        max_eta > 2.0 / *config.loss.smoothness + kAssertTol)
      throw ConfigError("smooth-mode stepsize exceeds 2/beta");
  } else {
    const double beta = config.minimax.smoothness;
    if (beta > 0.0 && sum_eta > 1.0 / (2.0 * beta) + kAssertTol)
      throw ConfigError("sgda stepsize sum exceeds 1/(2 beta)");
  }
}

struct BlockState {
  Eigen::MatrixXd states;  // d x m, one column per worker
  double radius = 1.0;
};

// One synchronous round for one variable block. `signed_eta` is -eta for
// descent and +eta for ascent. Gradients were evaluated at the pre-consensus
// iterates.
void step_block(BlockState& block, const Eigen::MatrixXd& mixing,
                const Eigen::MatrixXd& grads, double signed_eta, UpdateOrder order) {
  if (order == UpdateOrder::ConsensusThenGradient) {
    block.states = block.states * mixing.transpose() + signed_eta * grads;
  } else {
    block.states = (block.states + signed_eta * grads) * mixing.transpose();
  }
  for (int i = 0; i < block.states.cols(); ++i)
    block.states.col(i) = problems::project(block.states.col(i), block.radius);
}

Trajectory run_internal(const RunConfig& config, const problems::Dataset& data,
                        const std::optional<Eigen::MatrixXi>& preset) {
  const std::vector<double> etas = config.schedule.resolve(config.horizon);
  validate_config(config, data, etas);

  const int m = data.workers();
  const int d = data.dim();
  const int horizon = config.horizon;
  const bool sgda = config.mode == Mode::Sgda;
  const double radius_w = sgda ? config.minimax.radius_w : config.loss.radius;

  Trajectory out;
  out.etas = etas;
  out.indices = preset ? *preset : sample_index_paths(config, data.per_worker());
  if (out.indices.rows() != horizon || out.indices.cols() != m)
    throw ConfigError("preset index paths have the wrong shape");

  BlockState primal;
  primal.radius = radius_w;
  const Eigen::VectorXd w0 =
      config.init_w.size() > 0 ? config.init_w : Eigen::VectorXd::Zero(d);
  if (w0.size() != d) throw ConfigError("initial primal point has the wrong dimension");
  if (w0.norm() > radius_w + kAssertTol)
    throw ConfigError("initial primal point lies outside the projection ball");
  primal.states = w0.replicate(1, m);

  BlockState dual;
  if (sgda) {
    dual.radius = config.minimax.radius_v;
    const Eigen::VectorXd v0 =
        config.init_v.size() > 0 ? config.init_v : Eigen::VectorXd::Zero(d);
    if (v0.size() != d) throw ConfigError("initial dual point has the wrong dimension");
    if (v0.norm() > dual.radius + kAssertTol)
      throw ConfigError("initial dual point lies outside the projection ball");
    dual.states = v0.replicate(1, m);
  }

  out.node_mean_w.resize(horizon + 1, d);
  if (sgda) out.node_mean_v.resize(horizon + 1, d);
  if (config.record.consensus)
    out.consensus_error.assign(static_cast<std::size_t>(horizon) + 1, 0.0);
  if (config.record.grad_norm && !sgda)
    out.grad_norm.assign(static_cast<std::size_t>(horizon), 0.0);

  Eigen::VectorXd mean_w = node_mean(primal.states);
  out.node_mean_w.row(0) = mean_w.transpose();
  Eigen::VectorXd mean_v;
  if (sgda) {
    mean_v = node_mean(dual.states);
    out.node_mean_v.row(0) = mean_v.transpose();
  }

  Eigen::VectorXd weighted_w = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd weighted_v = Eigen::VectorXd::Zero(d);
  double weight_total = 0.0;

  Eigen::MatrixXd grads_w(d, m);
  Eigen::MatrixXd grads_v(d, m);

  for (int t = 1; t <= horizon; ++t) {
    const double eta = etas[static_cast<std::size_t>(t - 1)];
    for (int i = 0; i < m; ++i) {
      const int shard = config.lockstep_diagnostic ? 0 : i;
      const problems::Sample& z = data.at(shard, out.indices(t - 1, i));
      if (sgda) {
        const problems::MinimaxGrad g = problems::grad_minimax(
            config.minimax, primal.states.col(i), dual.states.col(i), z);
        grads_w.col(i) = g.gw;
        grads_v.col(i) = g.gv;
      } else {
        grads_w.col(i) = problems::grad(config.loss, primal.states.col(i), z);
      }
    }
    step_block(primal, config.gossip.weights, grads_w, -eta, config.order);
    if (sgda) step_block(dual, config.gossip.weights, grads_v, +eta, config.order);

    mean_w = node_mean(primal.states);
    out.node_mean_w.row(t) = mean_w.transpose();
    double disp = dispersion(primal.states, mean_w);
    if (sgda) {
      mean_v = node_mean(dual.states);
      out.node_mean_v.row(t) = mean_v.transpose();
      disp += dispersion(dual.states, mean_v);
    }
    if (config.record.consensus)
      out.consensus_error[static_cast<std::size_t>(t)] = std::sqrt(disp);
    if (config.record.grad_norm && !sgda)
      out.grad_norm[static_cast<std::size_t>(t - 1)] =
          problems::empirical_risk_subgrad(config.loss, mean_w, data).norm();

    weighted_w += eta * mean_w;
    if (sgda) weighted_v += eta * mean_v;
    weight_total += eta;
  }

  if (weight_total > 0.0) {
    out.avg_w = weighted_w / weight_total;
    if (sgda) out.avg_v = weighted_v / weight_total;
  } else {
    // Degenerate all-zero schedule: the trajectory never moves.
    out.avg_w = mean_w;
    if (sgda) out.avg_v = mean_v;
  }

  if (config.record.per_node) {
    out.final_w = primal.states.transpose();
    if (sgda) out.final_v = dual.states.transpose();
  }
  if (!config.record.sampled_indices && !preset) out.indices.resize(0, 0);
  return out;
}

}  // namespace

Trajectory run(const RunConfig& config, const problems::Dataset& data) {
  return run_internal(config, data, std::nullopt);
}

Trajectory run(const RunConfig& config, const problems::Dataset& data,
               const Eigen::MatrixXi& preset_indices) {
  return run_internal(config, data, preset_indices);
}

double consensus_error(const Trajectory& trajectory, int t) {
  if (trajectory.consensus_error.empty())
    throw UnsupportedError("consensus errors were not recorded for this run");
  if (t < 0 || t >= static_cast<int>(trajectory.consensus_error.size()))
    throw ParameterError("step index outside the recorded horizon");
  return trajectory.consensus_error[static_cast<std::size_t>(t)];
}

}  // namespace dmclab::engine
