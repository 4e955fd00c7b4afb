// Variational Bayes predictive-coding multiple-timescale RNN.
//
// Every context unit i carries an internal state z_i driven by leaky
// integration with time constant tau_i. From step 2 on, the state is sampled
// through the reparameterization
//
//   mu_t    = (1 - 1/tau) * z_{t-1} + (1/tau) * (W_mu_c c_{t-1} + W_mu_x x_{t-1} + b_mu)
//   sigma_t = exp(0.5 * (W_sigma_c c_{t-1} + b_sigma))
//   z_t     = mu_t + sigma_t * eps_t,   eps_t ~ N(0, 1)
//   c_t     = tanh(z_t)
//
// and the prediction of the sensory frame at step t is softmax(W_x_c c_t + b_x)
// read from the lowest layer only. The state at step 1 is a free parameter,
// one per training sequence.
//
// The training objective is the weighted lower bound
//
//   L = W * L_z + (1 - W) * L_x
//   L_z = 1/(2C) sum_{t>=2} sum_i (1 + log sigma^2 - mu^2 - sigma^2)
//   L_x = sum_t sum_m x*_{t,m} log y_{t,m}
//
// where C is the total number of context units.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "vbp/common.hpp"
#include "vbp/seqdata.hpp"

namespace vbp {

enum class Connectivity {
  adjacent,  // layer k receives from layers k-1, k, k+1
  full,
};

struct NetworkSpec {
  std::vector<int> layer_sizes;         // lowest -> highest
  std::vector<double> time_constants;   // one per layer
  int input_dim = 121;
  int output_dim = 121;
  Connectivity connectivity = Connectivity::adjacent;

  int context_units() const {
    int c = 0;
    for (int n : layer_sizes) c += n;
    return c;
  }
  int lowest_size() const { return layer_sizes.front(); }

  int layer_offset(std::size_t layer) const {
    int off = 0;
    for (std::size_t k = 0; k < layer; ++k) off += layer_sizes[k];
    return off;
  }

  std::size_t layer_of(int unit) const {
    for (std::size_t k = 0; k < layer_sizes.size(); ++k) {
      if (unit < layer_sizes[k]) return k;
      unit -= layer_sizes[k];
    }
    throw std::out_of_range("unit index out of range");
  }

  void validate() const {
    if (layer_sizes.empty()) throw std::domain_error("network needs at least one layer");
    if (layer_sizes.size() != time_constants.size())
      throw std::domain_error("layer_sizes and time_constants differ in length");
    for (int n : layer_sizes)
      if (n <= 0) throw std::domain_error("layer sizes must be positive");
    for (std::size_t k = 0; k < time_constants.size(); ++k) {
      if (!(time_constants[k] >= 1.0)) throw std::domain_error("time constants must be >= 1");
      if (k > 0 && time_constants[k] < time_constants[k - 1])
        throw std::domain_error("time constants must be non-decreasing from lowest to highest layer");
    }
    if (input_dim <= 0 || output_dim <= 0) throw std::domain_error("input/output dims must be positive");
  }

  bool connected(int to_unit, int from_unit) const {
    if (connectivity == Connectivity::full) return true;
    const auto a = static_cast<long>(layer_of(to_unit));
    const auto b = static_cast<long>(layer_of(from_unit));
    return std::abs(a - b) <= 1;
  }

  /// C x C matrix with 1 where unit `row` receives from unit `col`.
  Eigen::MatrixXd connectivity_mask() const {
    const int c = context_units();
    Eigen::MatrixXd mask(c, c);
    for (int i = 0; i < c; ++i)
      for (int j = 0; j < c; ++j) mask(i, j) = connected(i, j) ? 1.0 : 0.0;
    return mask;
  }

  Eigen::VectorXd unit_time_constants() const {
    Eigen::VectorXd tau(context_units());
    int u = 0;
    for (std::size_t k = 0; k < layer_sizes.size(); ++k)
      for (int i = 0; i < layer_sizes[k]; ++i) tau[u++] = time_constants[k];
    return tau;
  }

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// Weight and bias blocks shared by parameters, gradients and optimizer
/// moments. Input weights exist for the lowest layer only; the output reads
/// the lowest layer only.
struct WeightBlocks {
  Eigen::MatrixXd w_mu_c;     // C x C, masked by connectivity
  Eigen::MatrixXd w_mu_x;     // N0 x input_dim
  Eigen::MatrixXd w_sigma_c;  // C x C, masked by connectivity
  Eigen::MatrixXd w_x_c;      // output_dim x N0
  Eigen::VectorXd b_mu;       // C
  Eigen::VectorXd b_sigma;    // C
  Eigen::VectorXd b_x;        // output_dim
  std::vector<Eigen::VectorXd> init_latents;  // one z_1 per training sequence

  /// Zero-filled blocks with the shapes required by `spec`.
  static WeightBlocks zeros(const NetworkSpec& spec, std::size_t num_latents) {
    const int c = spec.context_units(), n0 = spec.lowest_size();
    WeightBlocks b;
    b.w_mu_c = Eigen::MatrixXd::Zero(c, c);
    b.w_mu_x = Eigen::MatrixXd::Zero(n0, spec.input_dim);
    b.w_sigma_c = Eigen::MatrixXd::Zero(c, c);
    b.w_x_c = Eigen::MatrixXd::Zero(spec.output_dim, n0);
    b.b_mu = Eigen::VectorXd::Zero(c);
    b.b_sigma = Eigen::VectorXd::Zero(c);
    b.b_x = Eigen::VectorXd::Zero(spec.output_dim);
    b.init_latents.assign(num_latents, Eigen::VectorXd::Zero(c));
    return b;
  }

  bool same_shape(const WeightBlocks& o) const {
    auto eq = [](const auto& a, const auto& b) { return a.rows() == b.rows() && a.cols() == b.cols(); };
    if (!(eq(w_mu_c, o.w_mu_c) && eq(w_mu_x, o.w_mu_x) && eq(w_sigma_c, o.w_sigma_c) && eq(w_x_c, o.w_x_c) &&
          eq(b_mu, o.b_mu) && eq(b_sigma, o.b_sigma) && eq(b_x, o.b_x)))
      return false;
    if (init_latents.size() != o.init_latents.size()) return false;
    for (std::size_t i = 0; i < init_latents.size(); ++i)
      if (!eq(init_latents[i], o.init_latents[i])) return false;
    return true;
  }

  friend bool operator==(const WeightBlocks& a, const WeightBlocks& b) {
    if (!a.same_shape(b)) return false;
    bool eq = a.w_mu_c == b.w_mu_c && a.w_mu_x == b.w_mu_x && a.w_sigma_c == b.w_sigma_c &&
              a.w_x_c == b.w_x_c && a.b_mu == b.b_mu && a.b_sigma == b.b_sigma && a.b_x == b.b_x;
    for (std::size_t i = 0; eq && i < a.init_latents.size(); ++i) eq = a.init_latents[i] == b.init_latents[i];
    return eq;
  }
};

/// Calls f(name, block) for every block, weights first, then each z_1.
template <class Blocks, class F>
void for_each_block(Blocks& b, F&& f) {
  f(std::string("w_mu_c"), b.w_mu_c);
  f(std::string("w_mu_x"), b.w_mu_x);
  f(std::string("w_sigma_c"), b.w_sigma_c);
  f(std::string("w_x_c"), b.w_x_c);
  f(std::string("b_mu"), b.b_mu);
  f(std::string("b_sigma"), b.b_sigma);
  f(std::string("b_x"), b.b_x);
  for (std::size_t i = 0; i < b.init_latents.size(); ++i)
    f("init_latent[" + std::to_string(i) + "]", b.init_latents[i]);
}

struct Parameters : WeightBlocks {
  Parameters() = default;
  explicit Parameters(WeightBlocks b) : WeightBlocks(std::move(b)) {}

  void check_shapes(const NetworkSpec& spec) const {
    if (!same_shape(WeightBlocks::zeros(spec, init_latents.size())))
      throw std::domain_error("parameter shapes do not match network spec");
  }
};

struct GradientSet : WeightBlocks {
  GradientSet() = default;
  explicit GradientSet(WeightBlocks b) : WeightBlocks(std::move(b)) {}
};

inline Parameters init_parameters(const NetworkSpec& spec, std::size_t num_sequences, std::uint64_t seed) {
  spec.validate();
  if (num_sequences == 0) throw std::domain_error("init_parameters: need at least one sequence");
  Parameters p(WeightBlocks::zeros(spec, num_sequences));
  Rng rng(seed);
  const Eigen::MatrixXd mask = spec.connectivity_mask();
  const int c = spec.context_units();

  auto uniform_row = [&](auto& m, long row, double fan_in, const double* row_mask) {
    const double s = 1.0 / std::sqrt(fan_in);
    std::uniform_real_distribution<double> u(-s, s);
    for (long j = 0; j < m.cols(); ++j) {
      const double v = u(rng);
      m(row, j) = (row_mask == nullptr || row_mask[j * c] != 0.0) ? v : 0.0;
    }
  };

  for (int i = 0; i < c; ++i) {
    const double fan = mask.row(i).sum();
    uniform_row(p.w_mu_c, i, fan, mask.data() + i);
  }
  for (int i = 0; i < spec.lowest_size(); ++i) uniform_row(p.w_mu_x, i, spec.input_dim, nullptr);
  for (int i = 0; i < c; ++i) {
    const double fan = mask.row(i).sum();
    uniform_row(p.w_sigma_c, i, fan, mask.data() + i);
  }
  for (int i = 0; i < spec.output_dim; ++i) uniform_row(p.w_x_c, i, spec.lowest_size(), nullptr);

  std::normal_distribution<double> n01(0.0, 0.1);
  for (auto& z : p.init_latents)
    for (int i = 0; i < c; ++i) z[i] = n01(rng);
  return p;
}

/// State of all context units at one step.
struct StepState {
  Eigen::VectorXd mu;
  Eigen::VectorXd sigma;
  Eigen::VectorXd log_var;  // sigma pre-activation; equals log(sigma^2)
  Eigen::VectorXd z;
  Eigen::VectorXd c;
};

namespace detail {

// Writes one step into caller-provided storage. `inv_tau` is 1/tau per unit.
template <class Out>
inline void step_into(const Eigen::Ref<const Eigen::VectorXd>& prev_z, const Eigen::Ref<const Eigen::VectorXd>& prev_c,
                      const Eigen::Ref<const Eigen::VectorXd>& prev_input, const Eigen::Ref<const Eigen::VectorXd>& eps,
                      const WeightBlocks& p, const Eigen::VectorXd& inv_tau, Out&& mu, Out&& sigma, Out&& log_var,
                      Out&& z, Eigen::VectorXd& scratch) {
  const long n0 = p.w_mu_x.rows();
  scratch.noalias() = p.w_mu_c * prev_c;
  scratch += p.b_mu;
  scratch.head(n0).noalias() += p.w_mu_x * prev_input;
  mu = (1.0 - inv_tau.array()) * prev_z.array() + inv_tau.array() * scratch.array();
  log_var.noalias() = p.w_sigma_c * prev_c;
  log_var += p.b_sigma;
  sigma = (0.5 * log_var.array()).exp();
  z = mu.array() + sigma.array() * eps.array();
}

inline void softmax_inplace(Eigen::Ref<Eigen::VectorXd> v) {
  const double top = v.maxCoeff();
  v = (v.array() - top).exp();
  v /= v.sum();
}

}  // namespace detail

inline StepState step_dynamics(const Eigen::Ref<const Eigen::VectorXd>& prev_z,
                               const Eigen::Ref<const Eigen::VectorXd>& prev_c,
                               const Eigen::Ref<const Eigen::VectorXd>& prev_input_frame,
                               const Eigen::Ref<const Eigen::VectorXd>& eps, const Parameters& params,
                               const NetworkSpec& spec) {
  const int c = spec.context_units();
  if (prev_z.size() != c || prev_c.size() != c || eps.size() != c || prev_input_frame.size() != spec.input_dim)
    throw std::domain_error("step_dynamics: shape mismatch");
  const Eigen::VectorXd inv_tau = spec.unit_time_constants().cwiseInverse();
  StepState s;
  s.mu.resize(c);
  s.sigma.resize(c);
  s.log_var.resize(c);
  s.z.resize(c);
  Eigen::VectorXd scratch(c);
  detail::step_into(prev_z, prev_c, prev_input_frame, eps, params, inv_tau, s.mu, s.sigma, s.log_var, s.z, scratch);
  s.c = s.z.array().tanh();
  return s;
}

/// softmax(W_x_c c + b_x), shifted by the max logit.
inline Eigen::VectorXd output_distribution(const Eigen::Ref<const Eigen::VectorXd>& c_lowest, const Parameters& params) {
  if (c_lowest.size() != params.w_x_c.cols()) throw std::domain_error("output_distribution: shape mismatch");
  Eigen::VectorXd out = params.w_x_c * c_lowest + params.b_x;
  detail::softmax_inplace(out);
  return out;
}

enum class LoopMode { open_loop, closed_loop };

/// Forward-pass record. Columns are steps. Column 0 (step 1) holds z_1 and
/// c_1 only; mu, sigma, log_var and eps are NaN there.
struct LatentTrace {
  Eigen::MatrixXd mu, sigma, log_var, eps, z, c;  // C x T
  Eigen::MatrixXd output;                         // output_dim x T
  Eigen::MatrixXd inputs;                         // input_dim x T; column t feeds step t+1

  std::size_t step_count() const { return static_cast<std::size_t>(z.cols()); }
};

struct ForwardOptions {
  LoopMode mode = LoopMode::open_loop;
  /// Extra N(0, s^2) added to every unit's z at each step t >= 2.
  std::optional<double> noise_override;
  /// When set (C x T), replaces sampled noise; column 0 is ignored.
  const Eigen::MatrixXd* fixed_eps = nullptr;
  /// Closed loop only: number of steps to generate; 0 means seq length.
  std::size_t steps = 0;
};

/// In open loop the input at step t is the sequence frame t-1; in closed loop
/// it is the previous output, except that step 2 uses the sequence's first
/// frame.
inline LatentTrace forward_sequence(const EncodedSequence& seq, const Eigen::Ref<const Eigen::VectorXd>& init_latent,
                                    const Parameters& params, const NetworkSpec& spec, Rng& rng,
                                    const ForwardOptions& opts = {}) {
  const int c = spec.context_units();
  const long n0 = spec.lowest_size();
  if (seq.dim() != spec.input_dim) throw std::domain_error("forward_sequence: input dim mismatch");
  if (init_latent.size() != c) throw std::domain_error("forward_sequence: init latent size mismatch");
  const long T = static_cast<long>(opts.mode == LoopMode::closed_loop && opts.steps > 0 ? opts.steps : seq.step_count());
  if (T < 2) throw std::domain_error("forward_sequence: need at least 2 steps");
  if (opts.mode == LoopMode::open_loop && opts.steps > 0 && opts.steps != seq.step_count())
    throw std::domain_error("forward_sequence: open loop length is the sequence length");
  if (opts.fixed_eps != nullptr && (opts.fixed_eps->rows() != c || opts.fixed_eps->cols() < T))
    throw std::domain_error("forward_sequence: fixed eps shape mismatch");
  if (opts.mode == LoopMode::closed_loop && spec.input_dim != spec.output_dim)
    throw std::domain_error("forward_sequence: closed loop needs input_dim == output_dim");

  const double nan = std::numeric_limits<double>::quiet_NaN();
  LatentTrace tr;
  tr.mu.resize(c, T);
  tr.sigma.resize(c, T);
  tr.log_var.resize(c, T);
  tr.eps.resize(c, T);
  tr.z.resize(c, T);
  tr.c.resize(c, T);
  tr.output.resize(spec.output_dim, T);
  tr.inputs.resize(spec.input_dim, T);
  tr.mu.col(0).setConstant(nan);
  tr.sigma.col(0).setConstant(nan);
  tr.log_var.col(0).setConstant(nan);
  tr.eps.col(0).setConstant(nan);

  tr.z.col(0) = init_latent;
  tr.c.col(0) = init_latent.array().tanh();
  tr.output.col(0).noalias() = params.w_x_c * tr.c.col(0).head(n0);
  tr.output.col(0) += params.b_x;
  detail::softmax_inplace(tr.output.col(0));

  const Eigen::VectorXd inv_tau = spec.unit_time_constants().cwiseInverse();
  std::normal_distribution<double> n01(0.0, 1.0);
  std::optional<std::normal_distribution<double>> extra;
  if (opts.noise_override) extra.emplace(0.0, *opts.noise_override);
  Eigen::VectorXd scratch(c);

  for (long t = 1; t < T; ++t) {
    if (opts.mode == LoopMode::open_loop || t == 1)
      tr.inputs.col(t - 1) = seq.frames.col(t - 1);
    else
      tr.inputs.col(t - 1) = tr.output.col(t - 1);

    if (opts.fixed_eps != nullptr) {
      tr.eps.col(t) = opts.fixed_eps->col(t);
    } else {
      for (int i = 0; i < c; ++i) tr.eps(i, t) = n01(rng);
    }
    detail::step_into(tr.z.col(t - 1), tr.c.col(t - 1), tr.inputs.col(t - 1), tr.eps.col(t), params, inv_tau,
                      tr.mu.col(t), tr.sigma.col(t), tr.log_var.col(t), tr.z.col(t), scratch);
    if (extra) {
      for (int i = 0; i < c; ++i) tr.z(i, t) += (*extra)(rng);
    }
    tr.c.col(t) = tr.z.col(t).array().tanh();
    tr.output.col(t).noalias() = params.w_x_c * tr.c.col(t).head(n0);
    tr.output.col(t) += params.b_x;
    detail::softmax_inplace(tr.output.col(t));
  }
  if (opts.mode == LoopMode::open_loop)
    tr.inputs.col(T - 1) = seq.frames.col(T - 1);
  else
    tr.inputs.col(T - 1) = tr.output.col(T - 1);
  return tr;
}

/// Closed-loop generation that keeps only the outputs (and optionally the
/// sigma series), for runs too long to hold a full trace.
inline Eigen::MatrixXd free_run(const Eigen::Ref<const Eigen::VectorXd>& init_latent,
                                const Eigen::Ref<const Eigen::VectorXd>& first_frame, std::size_t steps,
                                const Parameters& params, const NetworkSpec& spec, Rng& rng,
                                std::optional<double> noise_override = std::nullopt,
                                Eigen::MatrixXd* sigma_out = nullptr) {
  const int c = spec.context_units();
  const long n0 = spec.lowest_size();
  if (init_latent.size() != c || first_frame.size() != spec.input_dim)
    throw std::domain_error("free_run: shape mismatch");
  if (steps < 2) throw std::domain_error("free_run: need at least 2 steps");
  const long T = static_cast<long>(steps);
  Eigen::MatrixXd out(spec.output_dim, T);
  if (sigma_out) sigma_out->setZero(c, T);
  Eigen::VectorXd z = init_latent, cc = init_latent.array().tanh();
  Eigen::VectorXd mu(c), sigma(c), log_var(c), eps(c), scratch(c), input = first_frame;
  out.col(0).noalias() = params.w_x_c * cc.head(n0);
  out.col(0) += params.b_x;
  detail::softmax_inplace(out.col(0));
  const Eigen::VectorXd inv_tau = spec.unit_time_constants().cwiseInverse();
  std::normal_distribution<double> n01(0.0, 1.0);
  std::optional<std::normal_distribution<double>> extra;
  if (noise_override) extra.emplace(0.0, *noise_override);
  for (long t = 1; t < T; ++t) {
    if (t > 1) input = out.col(t - 1);
    for (int i = 0; i < c; ++i) eps[i] = n01(rng);
    Eigen::VectorXd prev_z = z;
    detail::step_into(prev_z, cc, input, eps, params, inv_tau, mu, sigma, log_var, z, scratch);
    if (extra) {
      for (int i = 0; i < c; ++i) z[i] += (*extra)(rng);
    }
    cc = z.array().tanh();
    if (sigma_out) sigma_out->col(t) = sigma;
    out.col(t).noalias() = params.w_x_c * cc.head(n0);
    out.col(t) += params.b_x;
    detail::softmax_inplace(out.col(t));
  }
  return out;
}

/// Closed-form regularization term over steps 2..T.
inline double kl_term(const LatentTrace& trace) {
  const long C = trace.mu.rows(), T = trace.mu.cols();
  double acc = 0.0;
  for (long t = 1; t < T; ++t) {
    for (long i = 0; i < C; ++i) {
      const double s = trace.sigma(i, t);
      if (!(s > 0.0)) throw std::logic_error("kl_term: non-positive sigma in trace");
      const double m = trace.mu(i, t);
      acc += 1.0 + trace.log_var(i, t) - m * m - s * s;
    }
  }
  return acc / (2.0 * static_cast<double>(C));
}

inline constexpr double kProbabilityFloor = 1e-12;

/// sum_t sum_m target * log(output); `clamped` counts target-supported cells
/// whose predicted probability fell below the floor.
inline double reconstruction_term(const LatentTrace& trace, const EncodedSequence& target,
                                  std::size_t* clamped = nullptr) {
  if (static_cast<std::size_t>(trace.output.cols()) != target.step_count() || trace.output.rows() != target.dim())
    throw std::domain_error("reconstruction_term: trace and target differ in shape");
  double acc = 0.0;
  for (long t = 0; t < trace.output.cols(); ++t) {
    for (long m = 0; m < trace.output.rows(); ++m) {
      const double y = target.frames(m, t);
      if (y == 0.0) continue;
      double p = trace.output(m, t);
      if (p < kProbabilityFloor) {
        p = kProbabilityFloor;
        if (clamped) ++*clamped;
      }
      acc += y * std::log(p);
    }
  }
  return acc;
}

struct LossBreakdown {
  double l_z = 0.0;
  double l_x = 0.0;
  double total = 0.0;
  double meta_prior_w = 0.0;
};

inline void check_meta_prior(double w) {
  if (!(w >= 0.0 && w <= 1.0)) throw std::domain_error("meta-prior W must lie in [0,1]");
}

inline LossBreakdown make_loss(double l_z, double l_x, double w) {
  check_meta_prior(w);
  return {l_z, l_x, w * l_z + (1.0 - w) * l_x, w};
}

inline LossBreakdown lower_bound(const LatentTrace& trace, const EncodedSequence& target, double meta_prior_w) {
  check_meta_prior(meta_prior_w);
  return make_loss(kl_term(trace), reconstruction_term(trace, target), meta_prior_w);
}

}  // namespace vbp
