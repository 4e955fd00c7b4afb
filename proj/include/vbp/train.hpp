// Backpropagation through time, Adam, and the mini-batch training loop.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <type_traits>
#include <utility>
#include <vector>

#include "vbp/common.hpp"
#include "vbp/net.hpp"

namespace vbp {

/// (name, flat view) for every block, in for_each_block order.
template <class Blocks>
auto block_views(Blocks& b) {
  using Vec = std::conditional_t<std::is_const_v<Blocks>, const Eigen::VectorXd, Eigen::VectorXd>;
  std::vector<std::pair<std::string, Eigen::Map<Vec>>> out;
  for_each_block(b, [&](std::string name, auto& m) { out.emplace_back(std::move(name), Eigen::Map<Vec>(m.data(), m.size())); });
  return out;
}

class NonFiniteGradient : public std::runtime_error {
 public:
  explicit NonFiniteGradient(const std::string& block)
      : std::runtime_error("non-finite gradient in block " + block), block_(block) {}
  const std::string& block() const { return block_; }

 private:
  std::string block_;
};

/// Gradient of the lower bound (ascent direction) for one sequence. The
/// returned set carries a single init_latent entry: the gradient for this
/// trace's z_1. Stored eps are treated as constants.
inline std::pair<GradientSet, LossBreakdown> backward_sequence(const LatentTrace& tr, const EncodedSequence& target,
                                                               const Parameters& p, const NetworkSpec& spec,
                                                               double meta_prior_w) {
  check_meta_prior(meta_prior_w);
  const long C = spec.context_units();
  const long n0 = spec.lowest_size();
  const long T = static_cast<long>(tr.step_count());
  if (static_cast<std::size_t>(T) != target.step_count())
    throw std::domain_error("backward_sequence: trace and target lengths differ");
  if (target.dim() != spec.output_dim || tr.output.rows() != spec.output_dim || tr.z.rows() != C ||
      tr.inputs.rows() != spec.input_dim)
    throw std::domain_error("backward_sequence: trace/target shapes do not match spec");
  if (p.w_mu_c.rows() != C || p.w_mu_x.cols() != spec.input_dim || p.w_x_c.rows() != spec.output_dim ||
      p.w_x_c.cols() != n0)
    throw std::domain_error("backward_sequence: parameter shapes do not match spec");

  const double w = meta_prior_w;
  const double recon_w = 1.0 - w;
  const double inv_c = 1.0 / static_cast<double>(C);

  GradientSet g(WeightBlocks::zeros(spec, 1));
  const Eigen::VectorXd inv_tau = spec.unit_time_constants().cwiseInverse();
  const Eigen::ArrayXd leak = 1.0 - inv_tau.array();

  Eigen::VectorXd carry_c = Eigen::VectorXd::Zero(C);  // dL/dc_t from step t+1
  Eigen::VectorXd carry_z = Eigen::VectorXd::Zero(C);  // dL/dz_t from step t+1 via the leak
  Eigen::VectorXd g_o(spec.output_dim), dz(C), g_mu(C), g_a(C), g_u(C);

  for (long t = T - 1; t >= 0; --t) {
    const auto y = target.frames.col(t);
    g_o = recon_w * (y - tr.output.col(t) * y.sum());
    g.w_x_c.noalias() += g_o * tr.c.col(t).head(n0).transpose();
    g.b_x += g_o;

    carry_c.head(n0).noalias() += p.w_x_c.transpose() * g_o;
    dz = carry_z.array() + carry_c.array() * (1.0 - tr.c.col(t).array().square());

    if (t == 0) {
      g.init_latents[0] = dz;
      break;
    }
    const auto mu = tr.mu.col(t).array();
    const auto sigma = tr.sigma.col(t).array();
    g_mu = dz.array() - w * inv_c * mu;
    g_a = dz.array() * tr.eps.col(t).array() * 0.5 * sigma + 0.5 * w * inv_c * (1.0 - sigma.square());
    g_u = g_mu.cwiseProduct(inv_tau);

    const auto c_prev = tr.c.col(t - 1);
    g.w_mu_c.noalias() += g_u * c_prev.transpose();
    g.b_mu += g_u;
    g.w_mu_x.noalias() += g_u.head(n0) * tr.inputs.col(t - 1).transpose();
    g.w_sigma_c.noalias() += g_a * c_prev.transpose();
    g.b_sigma += g_a;

    carry_c.noalias() = p.w_mu_c.transpose() * g_u;
    carry_c.noalias() += p.w_sigma_c.transpose() * g_a;
    carry_z = g_mu.array() * leak;
  }

  if (spec.connectivity != Connectivity::full) {
    const Eigen::MatrixXd mask = spec.connectivity_mask();
    g.w_mu_c.array() *= mask.array();
    g.w_sigma_c.array() *= mask.array();
  }
  for (auto& [name, v] : block_views(g))
    if (!v.allFinite()) throw NonFiniteGradient(name);

  return {std::move(g), lower_bound(tr, target, meta_prior_w)};
}

struct AdamConfig {
  double alpha = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainingConfig {
  double meta_prior_w = 0.0;
  int epochs = 1;
  int batch_size = 8;
  AdamConfig adam;
  std::uint64_t seed = 1;
  std::optional<double> gradient_clip;  // global L2 norm
  int threads = 1;
};

struct AdamState {
  WeightBlocks m;
  WeightBlocks v;
  long timestep = 0;

  static AdamState for_parameters(const Parameters& p) {
    AdamState s;
    s.m = p;
    s.v = p;
    for (auto& [n, x] : block_views(s.m)) x.setZero();
    for (auto& [n, x] : block_views(s.v)) x.setZero();
    return s;
  }
};

/// One Adam step in the ascent direction of the lower bound.
inline void adam_step(Parameters& params, const GradientSet& grads, AdamState& state, const AdamConfig& cfg) {
  if (!params.same_shape(grads) || !params.same_shape(state.m) || !params.same_shape(state.v))
    throw std::domain_error("adam_step: shape mismatch");
  if (state.timestep < 0) throw std::domain_error("adam_step: negative timestep");
  auto pv = block_views(params);
  auto gv = block_views(grads);
  for (const auto& [name, g] : gv)
    if (!g.allFinite()) throw NonFiniteGradient(name);
  auto mv = block_views(state.m);
  auto vv = block_views(state.v);
  ++state.timestep;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.timestep));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.timestep));
  for (std::size_t b = 0; b < pv.size(); ++b) {
    auto& x = pv[b].second;
    const auto& g = gv[b].second;
    auto& m = mv[b].second;
    auto& v = vv[b].second;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseAbs2();
    x.array() += cfg.alpha * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.epsilon);
  }
}

struct EpochLog {
  int epoch = 0;
  double l = 0.0;
  double l_z = 0.0;
  double l_x = 0.0;
  double mean_sigma = 0.0;
  double seconds = 0.0;
  int clipped_batches = 0;
};

/// Everything needed to continue training bit-identically.
struct TrainingState {
  Parameters params;
  AdamState adam;
  int epochs_done = 0;
};

struct TrainCallbacks {
  std::function<void(const EpochLog&, const TrainingState&)> on_epoch;
};

struct TrainingResult {
  TrainingState state;
  std::vector<EpochLog> log;
};

namespace detail {

struct SequencePass {
  GradientSet grads;
  LossBreakdown loss;
  double sigma_sum = 0.0;
  long sigma_count = 0;
};

inline SequencePass run_sequence(const EncodedSequence& input, const EncodedSequence& target, const Parameters& p,
                                 const NetworkSpec& spec, double w, std::size_t index, std::uint64_t seed, int epoch) {
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(epoch) + 1, index));
  LatentTrace tr = forward_sequence(input, p.init_latents[index], p, spec, rng);
  SequencePass out;
  auto [g, loss] = backward_sequence(tr, target, p, spec, w);
  out.grads = std::move(g);
  out.loss = loss;
  const long T = tr.sigma.cols();
  out.sigma_sum = tr.sigma.rightCols(T - 1).sum();
  out.sigma_count = tr.sigma.rows() * (T - 1);
  return out;
}

template <class F>
inline void parallel_for(std::size_t n, int threads, F&& f) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        f(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  for (std::size_t i = 0; i < k; ++i) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

inline void validate(const TrainingConfig& cfg, std::size_t num_sequences) {
  check_meta_prior(cfg.meta_prior_w);
  if (cfg.epochs < 1) throw std::domain_error("epochs must be >= 1");
  if (cfg.batch_size < 1 || static_cast<std::size_t>(cfg.batch_size) > num_sequences)
    throw std::domain_error("batch_size must be in [1, number of sequences]");
  if (cfg.gradient_clip && !(*cfg.gradient_clip > 0.0)) throw std::domain_error("gradient_clip must be positive");
  if (cfg.threads < 1) throw std::domain_error("threads must be >= 1");
}

/// Trains on (input, target) pairs. Each epoch shuffles the sequence order,
/// draws fresh noise per sequence, and applies one Adam step per mini-batch
/// using the batch-mean gradient. Per-sequence results are reduced in index
/// order, so the outcome does not depend on the thread count.
inline TrainingResult train_pairs(const std::vector<EncodedSequence>& inputs,
                                  const std::vector<EncodedSequence>& targets, const NetworkSpec& spec,
                                  const TrainingConfig& cfg, const TrainCallbacks& callbacks = {},
                                  std::optional<TrainingState> resume = std::nullopt) {
  spec.validate();
  if (inputs.empty()) throw std::domain_error("train: empty dataset");
  if (inputs.size() != targets.size()) throw std::domain_error("train: inputs and targets differ in count");
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].step_count() != targets[i].step_count())
      throw std::domain_error("train: sequence " + std::to_string(i) + " input/target lengths differ");
    if (inputs[i].dim() != spec.input_dim || targets[i].dim() != spec.output_dim)
      throw std::domain_error("train: sequence " + std::to_string(i) + " has wrong frame dimension");
  }
  validate(cfg, inputs.size());

  TrainingResult result;
  if (resume) {
    resume->params.check_shapes(spec);
    if (resume->params.init_latents.size() != inputs.size())
      throw std::domain_error("train: checkpoint has a different number of sequences");
    result.state = std::move(*resume);
  } else {
    result.state.params = init_parameters(spec, inputs.size(), derive_seed(cfg.seed, 0, 0));
    result.state.adam = AdamState::for_parameters(result.state.params);
  }
  auto& params = result.state.params;
  auto& adam = result.state.adam;

  const std::size_t L = inputs.size();
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  std::vector<std::size_t> order(L);

  for (int epoch = result.state.epochs_done; epoch < cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch) + 1, 0xffffffffULL));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochLog rec;
    rec.epoch = epoch + 1;
    double sigma_sum = 0.0;
    long sigma_count = 0;

    for (std::size_t b0 = 0; b0 < L; b0 += batch) {
      const std::size_t b1 = std::min(L, b0 + batch);
      std::vector<detail::SequencePass> passes(b1 - b0);
      detail::parallel_for(passes.size(), cfg.threads, [&](std::size_t k) {
        const std::size_t idx = order[b0 + k];
        passes[k] = detail::run_sequence(inputs[idx], targets[idx], params, spec, cfg.meta_prior_w, idx, cfg.seed,
                                         epoch);
      });

      GradientSet total(WeightBlocks::zeros(spec, L));
      const double scale = 1.0 / static_cast<double>(passes.size());
      for (std::size_t k = 0; k < passes.size(); ++k) {
        const auto& g = passes[k].grads;
        total.w_mu_c += scale * g.w_mu_c;
        total.w_mu_x += scale * g.w_mu_x;
        total.w_sigma_c += scale * g.w_sigma_c;
        total.w_x_c += scale * g.w_x_c;
        total.b_mu += scale * g.b_mu;
        total.b_sigma += scale * g.b_sigma;
        total.b_x += scale * g.b_x;
        total.init_latents[order[b0 + k]] += scale * g.init_latents[0];
        rec.l_z += passes[k].loss.l_z;
        rec.l_x += passes[k].loss.l_x;
        sigma_sum += passes[k].sigma_sum;
        sigma_count += passes[k].sigma_count;
      }
      if (cfg.gradient_clip) {
        double sq = 0.0;
        for (const auto& [n, v] : block_views(total)) sq += v.squaredNorm();
        const double norm = std::sqrt(sq);
        if (norm > *cfg.gradient_clip) {
          for (auto& [n, v] : block_views(total)) v *= *cfg.gradient_clip / norm;
          ++rec.clipped_batches;
        }
      }
      adam_step(params, total, adam, cfg.adam);
    }

    rec.l = cfg.meta_prior_w * rec.l_z + (1.0 - cfg.meta_prior_w) * rec.l_x;
    rec.mean_sigma = sigma_count > 0 ? sigma_sum / static_cast<double>(sigma_count) : 0.0;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.state.epochs_done = epoch + 1;
    result.log.push_back(rec);
    if (callbacks.on_epoch) callbacks.on_epoch(rec, result.state);
  }
  return result;
}

inline TrainingResult train(const Dataset& dataset, const NetworkSpec& spec, const TrainingConfig& cfg,
                            const TrainCallbacks& callbacks = {}, std::optional<TrainingState> resume = std::nullopt) {
  if (dataset.sequences.empty()) throw std::domain_error("train: empty dataset");
  return train_pairs(dataset.sequences, dataset.sequences, spec, cfg, callbacks, std::move(resume));
}

// ---------------------------------------------------------------------------
// Finite-difference verification.

struct GradientCheckOptions {
  std::size_t steps = 6;
  double fd_step = 1e-5;
  double meta_prior_w = 0.5;
  std::optional<double> sigma_bias;  // overrides every b_sigma entry, e.g. -40
  double weight_scale = 1.0;         // multiplies the default init range
  /// Relative error denominators are floored at this value.
  double scale_floor = 1e-3;
};

struct BlockCheck {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t coordinates = 0;
};

struct GradientCheckReport {
  std::vector<BlockCheck> blocks;
  double tolerance = 0.0;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Relative error of an analytic vs numeric coordinate.
inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares backward_sequence against central differences of lower_bound on
/// the given instance, with eps held fixed.
inline GradientCheckReport check_gradients(const Parameters& params, const NetworkSpec& spec,
                                           const EncodedSequence& input, const EncodedSequence& target,
                                           const Eigen::MatrixXd& eps, double w, double tolerance,
                                           const GradientCheckOptions& opts = {}) {
  params.check_shapes(spec);
  if (params.init_latents.size() != 1) throw std::domain_error("check_gradients: expects one init latent");
  if (input.step_count() != target.step_count()) throw std::domain_error("check_gradients: length mismatch");
  Rng unused(0);
  ForwardOptions fo;
  fo.fixed_eps = &eps;
  auto objective = [&](const Parameters& p) {
    LatentTrace tr = forward_sequence(input, p.init_latents[0], p, spec, unused, fo);
    return lower_bound(tr, target, w).total;
  };
  LatentTrace tr = forward_sequence(input, params.init_latents[0], params, spec, unused, fo);
  auto [analytic, loss] = backward_sequence(tr, target, params, spec, w);

  const Eigen::MatrixXd mask = spec.connectivity_mask();
  GradientCheckReport report;
  report.tolerance = tolerance;
  Parameters probe = params;
  auto probe_views = block_views(probe);
  auto grad_views = block_views(analytic);
  for (std::size_t b = 0; b < probe_views.size(); ++b) {
    BlockCheck bc;
    bc.name = probe_views[b].first;
    auto& x = probe_views[b].second;
    const bool recurrent = bc.name == "w_mu_c" || bc.name == "w_sigma_c";
    for (long k = 0; k < x.size(); ++k) {
      if (recurrent && mask.data()[k] == 0.0) continue;
      const double orig = x[k];
      x[k] = orig + opts.fd_step;
      const double up = objective(probe);
      x[k] = orig - opts.fd_step;
      const double down = objective(probe);
      x[k] = orig;
      const double numeric = (up - down) / (2.0 * opts.fd_step);
      const double a = grad_views[b].second[k];
      bc.max_rel_error = std::max(bc.max_rel_error, relative_error(a, numeric, opts.scale_floor));
      bc.max_abs_error = std::max(bc.max_abs_error, std::abs(a - numeric));
      ++bc.coordinates;
    }
    report.max_rel_error = std::max(report.max_rel_error, bc.max_rel_error);
    report.blocks.push_back(bc);
  }
  report.passed = report.max_rel_error <= tolerance;
  return report;
}

/// Random probability vectors (Dirichlet(1)-like) as columns.
inline EncodedSequence random_distribution_sequence(int dim, std::size_t steps, Rng& rng) {
  std::exponential_distribution<double> ex(1.0);
  EncodedSequence s;
  s.frames.resize(dim, static_cast<long>(steps));
  for (long t = 0; t < s.frames.cols(); ++t) {
    for (int m = 0; m < dim; ++m) s.frames(m, t) = ex(rng);
    s.frames.col(t) /= s.frames.col(t).sum();
  }
  return s;
}

/// Builds a random instance for `spec` and checks its gradients.
inline GradientCheckReport gradient_check(const NetworkSpec& spec, std::uint64_t seed, double tolerance,
                                          const GradientCheckOptions& opts = {}) {
  spec.validate();
  if (opts.steps < 2) throw std::domain_error("gradient_check: need at least 2 steps");
  Parameters p = init_parameters(spec, 1, seed);
  if (opts.weight_scale != 1.0)
    for (auto& [n, v] : block_views(p)) v *= opts.weight_scale;
  Rng rng(derive_seed(seed, 1));
  std::normal_distribution<double> n01(0.0, 1.0);
  for (long i = 0; i < p.b_mu.size(); ++i) p.b_mu[i] = 0.3 * n01(rng);
  for (long i = 0; i < p.b_x.size(); ++i) p.b_x[i] = 0.3 * n01(rng);
  for (long i = 0; i < p.b_sigma.size(); ++i) p.b_sigma[i] = opts.sigma_bias ? *opts.sigma_bias : 0.5 * n01(rng);
  for (long i = 0; i < p.init_latents[0].size(); ++i) p.init_latents[0][i] = n01(rng);

  EncodedSequence input = random_distribution_sequence(spec.input_dim, opts.steps, rng);
  EncodedSequence target = spec.input_dim == spec.output_dim
                               ? input
                               : random_distribution_sequence(spec.output_dim, opts.steps, rng);
  Eigen::MatrixXd eps(spec.context_units(), static_cast<long>(opts.steps));
  for (long k = 0; k < eps.size(); ++k) eps.data()[k] = n01(rng);
  return check_gradients(p, spec, input, target, eps, opts.meta_prior_w, tolerance, opts);
}

}  // namespace vbp
