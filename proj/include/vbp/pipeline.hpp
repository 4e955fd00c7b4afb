// Experiment chain: pFSM label sampling, prototype rendering, the noisy
// target generator, and the label classifier.
#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vbp/common.hpp"
#include "vbp/net.hpp"
#include "vbp/seqdata.hpp"
#include "vbp/train.hpp"

namespace vbp {

enum class Label : std::uint8_t { A = 0, B = 1, C = 2 };
inline constexpr int kLabelCount = 3;

inline char to_char(Label l) { return static_cast<char>('A' + static_cast<int>(l)); }

inline Label label_from_char(char c) {
  if (c < 'A' || c > 'C') throw std::domain_error(std::string("unknown label '") + c + "'");
  return static_cast<Label>(c - 'A');
}

inline std::string to_string(const std::vector<Label>& labels) {
  std::string s;
  s.reserve(labels.size());
  for (Label l : labels) s.push_back(to_char(l));
  return s;
}

inline std::vector<Label> labels_from_string(std::string_view s) {
  std::vector<Label> out;
  out.reserve(s.size());
  for (char c : s) out.push_back(label_from_char(c));
  return out;
}

// ---------------------------------------------------------------------------
// Probabilistic finite state machine

struct Transition {
  Label label;
  int next;
  double probability;
};

struct PFSM {
  std::vector<std::vector<Transition>> states;
  int start = 0;

  void validate() const {
    if (states.empty()) throw std::domain_error("pFSM has no states");
    if (start < 0 || start >= static_cast<int>(states.size())) throw std::domain_error("pFSM start state out of range");
    for (std::size_t s = 0; s < states.size(); ++s) {
      if (states[s].empty()) throw std::domain_error("pFSM state " + std::to_string(s) + " has no transitions");
      double total = 0.0;
      for (const auto& tr : states[s]) {
        if (tr.next < 0 || tr.next >= static_cast<int>(states.size()))
          throw std::domain_error("pFSM transition target out of range");
        if (!(tr.probability >= 0.0)) throw std::domain_error("pFSM probability must be non-negative");
        total += tr.probability;
      }
      if (std::abs(total - 1.0) > 1e-9)
        throw std::domain_error("pFSM state " + std::to_string(s) + " probabilities do not sum to 1");
    }
  }
};

/// A then B deterministically, then B (0.3) or C (0.7), back to the start:
/// emits the triplets ABB / ABC.
inline PFSM default_pfsm() {
  PFSM f;
  f.states = {
      {{Label::A, 1, 1.0}},
      {{Label::B, 2, 1.0}},
      {{Label::B, 0, 0.3}, {Label::C, 0, 0.7}},
  };
  f.start = 0;
  return f;
}

inline std::vector<Label> sample_labels(const PFSM& fsm, std::size_t count, Rng& rng) {
  fsm.validate();
  if (count == 0) throw std::domain_error("sample_labels: count must be >= 1");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Label> out;
  out.reserve(count);
  int state = fsm.start;
  while (out.size() < count) {
    const auto& edges = fsm.states[static_cast<std::size_t>(state)];
    const Transition* pick = &edges.back();
    if (edges.size() > 1) {
      double r = u(rng), acc = 0.0;
      for (const auto& e : edges) {
        acc += e.probability;
        if (r < acc) {
          pick = &e;
          break;
        }
      }
    }
    out.push_back(pick->label);
    state = pick->next;
  }
  return out;
}

// Text form: one transition per line, "<state> <label> <next> <probability>".
// An optional "start <state>" line sets the start state (default 0); '#'
// starts a comment.
inline void write_pfsm(std::ostream& os, const PFSM& f) {
  os << "start " << f.start << '\n';
  for (std::size_t s = 0; s < f.states.size(); ++s)
    for (const auto& t : f.states[s])
      os << s << ' ' << to_char(t.label) << ' ' << t.next << ' ' << format_double(t.probability) << '\n';
}

inline PFSM read_pfsm(std::istream& is) {
  PFSM f;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    auto tok = detail::split_ws(line);
    if (tok.empty()) continue;
    if (tok[0] == "start") {
      if (tok.size() != 2 || !parse_int(tok[1], f.start)) throw LoadError("expected 'start <state>'", lineno);
      continue;
    }
    std::size_t state = 0;
    Transition t{};
    if (tok.size() != 4 || !parse_int(tok[0], state) || tok[1].size() != 1 || !parse_int(tok[2], t.next) ||
        !parse_double(tok[3], t.probability))
      throw LoadError("expected '<state> <label> <next> <probability>'", lineno);
    try {
      t.label = label_from_char(tok[1][0]);
    } catch (const std::domain_error& e) {
      throw LoadError(e.what(), lineno);
    }
    if (state >= f.states.size()) f.states.resize(state + 1);
    f.states[state].push_back(t);
  }
  try {
    f.validate();
  } catch (const std::domain_error& e) {
    throw LoadError(e.what(), lineno);
  }
  return f;
}

// ---------------------------------------------------------------------------
// Prototype rendering

/// A closed 2-D curve through `center`:
///   x(th) = cx + amp_x * (sin(freq_x th + phase_x) - sin(phase_x))
///   y(th) = cy + amp_y * (sin(freq_y th + phase_y) - sin(phase_y))
/// for th in [0, 2 pi * cycles). Integer frequencies close each cycle.
struct PrototypeShape {
  Label label = Label::A;
  Point2 center{0.5, 0.5};
  double freq_x = 1.0, freq_y = 1.0;
  double phase_x = 0.0, phase_y = 0.0;
  double amp_x = 0.1, amp_y = 0.1;
  int cycles = 3;
  double amplitude_jitter = 0.15;
  double period_jitter = 0.15;

  Point2 at(double theta, double amp_scale) const {
    return {center.x + amp_scale * amp_x * (std::sin(freq_x * theta + phase_x) - std::sin(phase_x)),
            center.y + amp_scale * amp_y * (std::sin(freq_y * theta + phase_y) - std::sin(phase_y))};
  }

  void validate() const {
    if (cycles < 1) throw std::domain_error("prototype needs at least one cycle");
    if (!(amplitude_jitter >= 0.0 && amplitude_jitter < 0.5) || !(period_jitter >= 0.0 && period_jitter < 0.5))
      throw std::domain_error("prototype jitter must lie in [0, 0.5)");
    const double worst = 1.0 + amplitude_jitter;
    for (int k = 0; k < 720; ++k) {
      const Point2 p = at(2.0 * std::numbers::pi * k / 720.0, worst);
      if (p.x < 0.05 || p.x > 0.95 || p.y < 0.05 || p.y > 0.95)
        throw std::domain_error(std::string("prototype ") + to_char(label) + " leaves the workspace at max jitter");
    }
  }
};

/// A: circle above the centre, B: horizontal figure-eight, C: vertical
/// ellipse below the centre. All pass through (0.5, 0.5).
inline std::array<PrototypeShape, kLabelCount> default_prototypes(double amplitude_jitter = 0.15,
                                                                  double period_jitter = 0.15) {
  constexpr double quarter = std::numbers::pi / 2.0;
  std::array<PrototypeShape, kLabelCount> s;
  s[0].label = Label::A;
  s[0].amp_x = 0.18;
  s[0].amp_y = 0.18;
  s[0].phase_y = -quarter;
  s[1].label = Label::B;
  s[1].amp_x = 0.3;
  s[1].amp_y = 0.14;
  s[1].freq_y = 2.0;
  s[2].label = Label::C;
  s[2].amp_x = 0.1;
  s[2].amp_y = -0.18;
  s[2].phase_y = -quarter;
  for (auto& p : s) {
    p.amplitude_jitter = amplitude_jitter;
    p.period_jitter = period_jitter;
  }
  return s;
}

struct RenderedSequence {
  Trajectory2D trajectory;
  std::vector<Label> step_labels;  // one per step
};

inline RenderedSequence render_labels(const std::vector<Label>& labels,
                                      const std::array<PrototypeShape, kLabelCount>& shapes, int steps_per_cycle,
                                      Rng& rng) {
  if (steps_per_cycle < 2) throw std::domain_error("render_labels: steps_per_cycle must be >= 2");
  for (std::size_t k = 0; k < shapes.size(); ++k) {
    if (shapes[k].label != static_cast<Label>(k)) throw std::domain_error("render_labels: shapes out of label order");
    shapes[k].validate();
  }
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  RenderedSequence out;
  std::vector<Point2> pts;
  for (Label l : labels) {
    const auto& sh = shapes[static_cast<std::size_t>(l)];
    const double amp = 1.0 + sh.amplitude_jitter * u(rng);
    const double period = 1.0 + sh.period_jitter * u(rng);
    const int n = std::max(sh.cycles * 2,
                           static_cast<int>(std::lround(sh.cycles * steps_per_cycle * period)));
    for (int k = 0; k < n; ++k) {
      const double theta = 2.0 * std::numbers::pi * sh.cycles * k / n;
      Point2 p = sh.at(theta, amp);
      p.x = std::clamp(p.x, 0.05, 0.95);
      p.y = std::clamp(p.y, 0.05, 0.95);
      pts.push_back(p);
      out.step_labels.push_back(l);
    }
  }
  out.trajectory = Trajectory2D(std::move(pts));
  return out;
}

// ---------------------------------------------------------------------------
// Label sequences

struct LabelSequence {
  std::vector<Label> steps;       // per step
  std::vector<Label> prototypes;  // one symbol per prototype emission
};

/// Run-length compression into prototype symbols. Runs shorter than
/// `min_run_fraction * nominal_duration` are dropped, neighbouring runs with
/// the same label are merged, and a run of length n counts as
/// max(1, round(n / nominal_duration)) emissions so that repeats such as the
/// second B in ABB survive.
inline std::vector<Label> compress_labels(const std::vector<Label>& steps, double nominal_duration,
                                          double min_run_fraction = 0.25) {
  if (!(nominal_duration > 0.0)) throw std::domain_error("compress_labels: nominal duration must be positive");
  std::vector<std::pair<Label, std::size_t>> runs;
  for (std::size_t i = 0; i < steps.size();) {
    std::size_t j = i;
    while (j < steps.size() && steps[j] == steps[i]) ++j;
    if (static_cast<double>(j - i) >= min_run_fraction * nominal_duration) {
      if (!runs.empty() && runs.back().first == steps[i])
        runs.back().second += j - i;
      else
        runs.emplace_back(steps[i], j - i);
    }
    i = j;
  }
  std::vector<Label> out;
  for (const auto& [l, n] : runs) {
    const long k = std::max(1L, std::lround(static_cast<double>(n) / nominal_duration));
    out.insert(out.end(), static_cast<std::size_t>(k), l);
  }
  return out;
}

// One line per step label, then a trailer "PROTOTYPES <string>".
inline void write_label_sequence(std::ostream& os, const LabelSequence& seq) {
  for (Label l : seq.steps) os << to_char(l) << '\n';
  os << "PROTOTYPES " << to_string(seq.prototypes) << '\n';
}

inline LabelSequence read_label_sequence(std::istream& is) {
  LabelSequence seq;
  std::string line;
  std::size_t lineno = 0;
  bool trailer = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (trailer) throw LoadError("content after trailer", lineno);
    try {
      if (line.rfind("PROTOTYPES", 0) == 0) {
        seq.prototypes = labels_from_string(line.size() > 11 ? std::string_view(line).substr(11) : "");
        trailer = true;
      } else if (line.size() == 1) {
        seq.steps.push_back(label_from_char(line[0]));
      } else {
        throw std::domain_error("expected a single label");
      }
    } catch (const std::domain_error& e) {
      throw LoadError(e.what(), lineno);
    }
  }
  if (!trailer) throw LoadError("missing PROTOTYPES trailer", lineno);
  return seq;
}

// ---------------------------------------------------------------------------
// Target generator

/// Trains the generator at W = 0 so that it settles into the deterministic
/// regime.
inline TrainingResult build_target_generator(const Dataset& rendered, const NetworkSpec& spec, TrainingConfig config,
                                             const TrainCallbacks& callbacks = {}) {
  config.meta_prior_w = 0.0;
  config.batch_size = std::min<int>(config.batch_size, static_cast<int>(rendered.size()));
  return train(rendered, spec, config, callbacks);
}

struct TargetRequest {
  std::size_t total_steps = 20000;
  std::size_t discard_steps = 10000;
  double noise_sigma = 0.1;
  std::size_t slice_length = 400;
  std::size_t slice_count = 16;
  std::size_t init_latent_index = 0;
  std::uint64_t seed = 1;
};

struct TargetStream {
  Trajectory2D kept;  // the post-discard stream, decoded
  Dataset slices;
};

/// Closed-loop run with extra internal noise; the first `discard_steps` are
/// dropped and non-overlapping windows are cut from the rest.
inline TargetStream generate_targets(const Parameters& generator, const NetworkSpec& spec, const GridCodec& codec,
                                     const Eigen::Ref<const Eigen::VectorXd>& first_frame, const TargetRequest& req) {
  if (codec.size() != spec.input_dim || spec.input_dim != spec.output_dim)
    throw std::domain_error("generate_targets: codec and network dims differ");
  if (req.init_latent_index >= generator.init_latents.size())
    throw std::domain_error("generate_targets: init latent index out of range");
  if (req.slice_length == 0 || req.slice_count == 0) throw std::domain_error("generate_targets: empty slicing");
  if (req.discard_steps >= req.total_steps ||
      req.slice_count * req.slice_length > req.total_steps - req.discard_steps)
    throw std::domain_error("generate_targets: " + std::to_string(req.slice_count) + " x " +
                            std::to_string(req.slice_length) + " steps exceed the " +
                            std::to_string(req.total_steps - req.discard_steps) + " kept steps");
  Rng rng(req.seed);
  Eigen::MatrixXd out = free_run(generator.init_latents[req.init_latent_index], first_frame, req.total_steps,
                                 generator, spec, rng, req.noise_sigma);
  const long kept = static_cast<long>(req.total_steps - req.discard_steps);
  TargetStream ts;
  ts.kept = decode_sequence(out.rightCols(kept), codec);
  std::vector<Trajectory2D> slices;
  for (std::size_t k = 0; k < req.slice_count; ++k) slices.push_back(ts.kept.slice(k * req.slice_length, req.slice_length));
  ts.slices = make_dataset(codec, req.seed, std::move(slices));
  return ts;
}

// ---------------------------------------------------------------------------
// Classifier

/// A trained label classifier with the context needed to apply it. The
/// network's output at step t + delay is trained on the label of step t, so
/// each decision sees `delay - 1` frames past the step it labels.
struct Classifier {
  NetworkSpec spec;
  Parameters params;
  GridCodec codec;
  int delay = 3;
  double nominal_duration = 30.0;
  double min_run_fraction = 0.25;
};

inline EncodedSequence one_hot_labels(const std::vector<Label>& labels, int delay) {
  EncodedSequence s;
  const long T = static_cast<long>(labels.size());
  s.frames = Eigen::MatrixXd::Zero(kLabelCount, T);
  for (long t = 0; t < T; ++t) {
    const long src = std::max(0L, t - delay);
    s.frames(static_cast<long>(labels[static_cast<std::size_t>(src)]), t) = 1.0;
  }
  return s;
}

struct ClassifierTraining {
  int delay = 3;
  std::size_t window = 200;  // training windows cut from the rendered streams
  std::size_t stride = 100;
};

/// Trains an input-driven network with a 3-way softmax head at W = 0 on
/// windows of the rendered streams and their step labels.
inline Classifier build_classifier(const std::vector<RenderedSequence>& rendered, const GridCodec& codec,
                                   NetworkSpec spec, TrainingConfig config, const ClassifierTraining& how,
                                   double nominal_duration, const TrainCallbacks& callbacks = {}) {
  spec.input_dim = codec.size();
  spec.output_dim = kLabelCount;
  std::vector<EncodedSequence> inputs, targets;
  for (const auto& r : rendered) {
    if (r.step_labels.size() != r.trajectory.step_count())
      throw std::domain_error("build_classifier: labels not aligned with steps");
    const std::size_t T = r.trajectory.step_count();
    const std::size_t win = std::min(how.window, T);
    for (std::size_t b = 0; b + win <= T; b += std::max<std::size_t>(how.stride, 1)) {
      Trajectory2D part = r.trajectory.slice(b, win);
      std::vector<Label> lab(r.step_labels.begin() + static_cast<long>(b),
                             r.step_labels.begin() + static_cast<long>(b + win));
      inputs.push_back(encode_trajectory(part, codec));
      targets.push_back(one_hot_labels(lab, how.delay));
    }
  }
  if (inputs.empty()) throw std::domain_error("build_classifier: no training windows");
  config.meta_prior_w = 0.0;
  config.batch_size = std::min<int>(config.batch_size, static_cast<int>(inputs.size()));
  TrainingResult res = train_pairs(inputs, targets, spec, config, callbacks);
  Classifier c;
  c.spec = spec;
  c.params = std::move(res.state.params);
  c.codec = codec;
  c.delay = how.delay;
  c.nominal_duration = nominal_duration;
  return c;
}

/// Input-driven pass with eps = 0, returning only the outputs.
inline Eigen::MatrixXd open_loop_outputs(const EncodedSequence& seq, const Eigen::Ref<const Eigen::VectorXd>& init_latent,
                                         const Parameters& params, const NetworkSpec& spec) {
  const int c = spec.context_units();
  const long n0 = spec.lowest_size();
  const long T = static_cast<long>(seq.step_count());
  if (seq.dim() != spec.input_dim) throw std::domain_error("open_loop_outputs: input dim mismatch");
  Eigen::MatrixXd out(spec.output_dim, T);
  Eigen::VectorXd z = init_latent, cc = init_latent.array().tanh(), prev_z(c);
  Eigen::VectorXd mu(c), sigma(c), log_var(c), scratch(c);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(c);
  const Eigen::VectorXd inv_tau = spec.unit_time_constants().cwiseInverse();
  for (long t = 0; t < T; ++t) {
    if (t > 0) {
      prev_z = z;
      detail::step_into(prev_z, cc, seq.frames.col(t - 1), zero, params, inv_tau, mu, sigma, log_var, z, scratch);
      cc = z.array().tanh();
    }
    out.col(t).noalias() = params.w_x_c * cc.head(n0);
    out.col(t) += params.b_x;
    detail::softmax_inplace(out.col(t));
  }
  return out;
}

/// Per-step argmax (ties go to the lowest label index), then compression.
inline LabelSequence classify(const Classifier& clf, const EncodedSequence& seq) {
  if (seq.dim() != clf.codec.size()) throw std::domain_error("classify: codec mismatch");
  LabelSequence out;
  const long T = static_cast<long>(seq.step_count());
  if (T == 0) return out;
  Eigen::VectorXd z1 = Eigen::VectorXd::Zero(clf.spec.context_units());
  for (const auto& z : clf.params.init_latents) z1 += z;
  z1 /= static_cast<double>(std::max<std::size_t>(1, clf.params.init_latents.size()));
  const Eigen::MatrixXd probs = open_loop_outputs(seq, z1, clf.params, clf.spec);
  out.steps.resize(static_cast<std::size_t>(T));
  for (long t = 0; t < T; ++t) {
    const long src = std::min(T - 1, t + clf.delay);
    long best = 0;
    for (long k = 1; k < probs.rows(); ++k)
      if (probs(k, src) > probs(best, src)) best = k;
    out.steps[static_cast<std::size_t>(t)] = static_cast<Label>(best);
  }
  out.prototypes = compress_labels(out.steps, clf.nominal_duration, clf.min_run_fraction);
  return out;
}

inline LabelSequence classify(const Classifier& clf, const Trajectory2D& traj) {
  return classify(clf, encode_trajectory(traj, clf.codec));
}

}  // namespace vbp
