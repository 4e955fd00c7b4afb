// End-to-end experiment stages shared by the command-line tool and the
// acceptance harness: synthesize targets, train, regenerate, evaluate.
#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vbp/analysis.hpp"
#include "vbp/checkpoint.hpp"
#include "vbp/config.hpp"
#include "vbp/pipeline.hpp"
#include "vbp/train.hpp"

namespace vbp {

namespace fs = std::filesystem;

/// Seed streams for the separate stages of one run.
namespace stream {
inline constexpr std::uint64_t render = 1;
inline constexpr std::uint64_t generator = 2;
inline constexpr std::uint64_t targets = 3;
inline constexpr std::uint64_t classifier = 4;
inline constexpr std::uint64_t holdout = 5;
inline constexpr std::uint64_t training = 100;
inline constexpr std::uint64_t regenerate = 200;
inline constexpr std::uint64_t free_run = 300;
}  // namespace stream

/// Training seed for a given W; a single run and the matching sweep entry agree.
inline std::uint64_t training_seed(std::uint64_t base, double w) {
  return derive_seed(base, stream::training, std::bit_cast<std::uint64_t>(w));
}

using ProgressFn = std::function<void(const std::string&)>;

// ---------------------------------------------------------------------------
// Synthesis

struct SynthResult {
  PFSM pfsm;
  std::vector<LabelSequence> human_labels;
  std::vector<RenderedSequence> human;
  Dataset human_data;
  NetworkSpec generator_spec;
  std::optional<TrainingResult> generator;
  TargetStream targets;
  Classifier classifier;
  std::vector<EpochLog> classifier_log;
  double classifier_holdout_accuracy = 0.0;
  LabelSequence target_labels;  // classified kept stream
};

inline PFSM load_pfsm(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open pFSM file " + path);
  try {
    return read_pfsm(is);
  } catch (const LoadError& e) {
    throw e.prefixed(path);
  }
}

/// Per-step agreement of classify() on zero-jitter renderings.
inline double holdout_accuracy(const Classifier& clf, const PFSM& fsm, int steps_per_cycle, std::size_t sequences,
                               std::size_t prototypes, std::uint64_t seed) {
  Rng rng(seed);
  const auto clean = default_prototypes(0.0, 0.0);
  std::size_t hit = 0, total = 0;
  for (std::size_t i = 0; i < sequences; ++i) {
    auto r = render_labels(sample_labels(fsm, prototypes, rng), clean, steps_per_cycle, rng);
    auto got = classify(clf, r.trajectory);
    for (std::size_t t = 0; t < got.steps.size(); ++t) hit += got.steps[t] == r.step_labels[t];
    total += got.steps.size();
  }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

inline SynthResult run_synth(const RunConfig& cfg, const ProgressFn& progress = {}) {
  cfg.validate();
  const auto& sc = cfg.synth;
  auto say = [&](const std::string& s) {
    if (progress) progress(s);
  };
  SynthResult out;
  out.pfsm = sc.pfsm_file.empty() ? default_pfsm() : load_pfsm(sc.pfsm_file);
  const auto shapes = default_prototypes(sc.amplitude_jitter, sc.period_jitter);
  const double nominal = 3.0 * sc.steps_per_cycle;

  Rng render_rng(derive_seed(cfg.seed, stream::render));
  std::vector<Trajectory2D> human;
  for (std::size_t h = 0; h < sc.human_sequences; ++h) {
    auto labels = sample_labels(out.pfsm, sc.human_prototypes, render_rng);
    out.human.push_back(render_labels(labels, shapes, sc.steps_per_cycle, render_rng));
    out.human_labels.push_back({out.human.back().step_labels, labels});
    human.push_back(out.human.back().trajectory);
  }
  out.human_data = make_dataset(cfg.codec, cfg.seed, human);
  out.generator_spec = cfg.network_spec();

  TargetRequest req;
  req.total_steps = sc.total_steps;
  req.discard_steps = sc.discard_steps;
  req.noise_sigma = sc.noise_sigma;
  req.slice_length = sc.slice_length;
  req.slice_count = sc.sequences;
  req.seed = derive_seed(cfg.seed, stream::targets);

  if (sc.use_target_generator) {
    TrainingConfig tc = cfg.training;
    tc.epochs = sc.generator_epochs;
    tc.adam.alpha = sc.generator_alpha;
    tc.seed = derive_seed(cfg.seed, stream::generator);
    tc.threads = cfg.threads;
    say("training target generator (" + std::to_string(tc.epochs) + " epochs)");
    out.generator = build_target_generator(out.human_data, out.generator_spec, tc);
    say("generating " + std::to_string(sc.total_steps) + " noisy closed-loop steps");
    out.targets = generate_targets(out.generator->state.params, out.generator_spec, cfg.codec,
                                   out.human_data.sequences.front().frames.col(0), req);
  } else {
    // Without a generator the targets are cut from one long rendering.
    std::vector<Point2> pts;
    while (pts.size() < sc.total_steps) {
      auto r = render_labels(sample_labels(out.pfsm, sc.human_prototypes, render_rng), shapes, sc.steps_per_cycle,
                             render_rng);
      pts.insert(pts.end(), r.trajectory.points().begin(), r.trajectory.points().end());
    }
    pts.resize(sc.total_steps);
    Trajectory2D all(std::move(pts));
    out.targets.kept = all.slice(sc.discard_steps, sc.total_steps - sc.discard_steps);
    std::vector<Trajectory2D> slices;
    for (std::size_t k = 0; k < sc.sequences; ++k)
      slices.push_back(out.targets.kept.slice(k * sc.slice_length, sc.slice_length));
    out.targets.slices = make_dataset(cfg.codec, req.seed, std::move(slices));
  }

  const auto& kc = cfg.classifier;
  TrainingConfig cc = cfg.training;
  cc.epochs = kc.epochs;
  cc.adam.alpha = kc.alpha;
  cc.seed = derive_seed(cfg.seed, stream::classifier);
  cc.threads = cfg.threads;
  ClassifierTraining how{kc.delay, kc.window, kc.stride};
  say("training classifier (" + std::to_string(cc.epochs) + " epochs)");
  TrainCallbacks cb;
  cb.on_epoch = [&](const EpochLog& e, const TrainingState&) { out.classifier_log.push_back(e); };
  out.classifier = build_classifier(out.human, cfg.codec, cfg.network_spec(), cc, how, nominal, cb);
  out.classifier.min_run_fraction = kc.min_run_fraction;
  out.classifier_holdout_accuracy = holdout_accuracy(out.classifier, out.pfsm, sc.steps_per_cycle,
                                                     kc.holdout_sequences, sc.human_prototypes,
                                                     derive_seed(cfg.seed, stream::holdout));
  out.target_labels = classify(out.classifier, out.targets.kept);
  return out;
}

// ---------------------------------------------------------------------------
// Plain-text artifacts

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create directory " + dir.string() + ": " + ec.message());
}

template <class F>
void write_file(const fs::path& path, F&& body) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  body(os);
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

inline void write_training_log(std::ostream& os, const std::vector<EpochLog>& log) {
  os << "epoch,L,L_z,L_x,mean_sigma,seconds\n";
  for (const auto& e : log)
    os << e.epoch << ',' << format_double(e.l) << ',' << format_double(e.l_z) << ',' << format_double(e.l_x) << ','
       << format_double(e.mean_sigma) << ',' << format_double(e.seconds) << '\n';
}

inline void write_label_file(const fs::path& path, const LabelSequence& seq) {
  write_file(path, [&](std::ostream& os) { write_label_sequence(os, seq); });
}

inline LabelSequence load_label_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  try {
    return read_label_sequence(is);
  } catch (const LoadError& e) {
    throw e.prefixed(path.string());
  }
}

/// `seq,step,x,y` rows, steps 1-based.
inline void write_trajectories_csv(std::ostream& os, const std::vector<Trajectory2D>& trajs) {
  os << "seq,step,x,y\n";
  for (std::size_t i = 0; i < trajs.size(); ++i)
    for (std::size_t t = 0; t < trajs[i].step_count(); ++t)
      os << i << ',' << t + 1 << ',' << format_double(trajs[i][t].x) << ',' << format_double(trajs[i][t].y) << '\n';
}

inline std::vector<Trajectory2D> read_trajectories_csv(std::istream& is) {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(is, line) || line.rfind("seq,step,x,y", 0) != 0)
    throw LoadError("expected header 'seq,step,x,y'", lineno);
  std::vector<std::vector<Point2>> pts;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string_view> f;
    std::string_view rest(line);
    for (std::size_t c; (c = rest.find(',')) != std::string_view::npos; rest.remove_prefix(c + 1))
      f.push_back(rest.substr(0, c));
    f.push_back(rest);
    std::size_t seq = 0, step = 0;
    Point2 p;
    if (f.size() != 4 || !parse_int(f[0], seq) || !parse_int(f[1], step) || !parse_double(f[2], p.x) ||
        !parse_double(f[3], p.y))
      throw LoadError("expected 'seq,step,x,y'", lineno);
    if (seq > pts.size() || (seq == pts.size() && step != 1) || (seq < pts.size() && step != pts[seq].size() + 1) ||
        seq + 1 < pts.size())
      throw LoadError("rows out of order", lineno, static_cast<long>(seq));
    if (seq == pts.size()) pts.emplace_back();
    if (!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0))
      throw LoadError("point outside [0,1]^2", lineno, static_cast<long>(seq));
    pts[seq].push_back(p);
  }
  std::vector<Trajectory2D> out;
  for (auto& v : pts) out.emplace_back(std::move(v));
  return out;
}

inline std::vector<Trajectory2D> load_trajectories_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  try {
    return read_trajectories_csv(is);
  } catch (const LoadError& e) {
    throw e.prefixed(path.string());
  }
}

inline json classifier_meta(const Classifier& c) {
  return {{"delay", c.delay},
          {"nominal_duration", c.nominal_duration},
          {"min_run_fraction", c.min_run_fraction},
          {"codec", {{"rows", c.codec.rows}, {"cols", c.codec.cols}, {"sharpness", c.codec.sharpness}}}};
}

inline void save_classifier(const fs::path& stem, const Classifier& c, std::uint64_t seed) {
  Checkpoint ck;
  ck.spec = c.spec;
  ck.state.params = c.params;
  ck.state.adam = AdamState::for_parameters(c.params);
  ck.seed = seed;
  ck.lineage.push_back("classifier");
  save_checkpoint(stem.string() + ".ckpt", ck);
  write_file(stem.string() + ".json", [&](std::ostream& os) { os << classifier_meta(c).dump(2) << '\n'; });
}

inline Classifier load_classifier(const fs::path& stem) {
  Checkpoint ck = load_checkpoint(stem.string() + ".ckpt");
  std::ifstream is(stem.string() + ".json");
  if (!is) throw std::runtime_error("cannot open " + stem.string() + ".json");
  json j;
  try {
    is >> j;
    Classifier c;
    c.spec = ck.spec;
    c.params = std::move(ck.state.params);
    c.delay = j.at("delay").get<int>();
    c.nominal_duration = j.at("nominal_duration").get<double>();
    c.min_run_fraction = j.at("min_run_fraction").get<double>();
    c.codec.rows = j.at("codec").at("rows").get<int>();
    c.codec.cols = j.at("codec").at("cols").get<int>();
    c.codec.sharpness = j.at("codec").at("sharpness").get<double>();
    c.codec.validate();
    if (c.codec.size() != c.spec.input_dim) throw std::runtime_error("codec does not match classifier input");
    return c;
  } catch (const std::exception& e) {
    throw std::runtime_error(stem.string() + ".json: " + e.what());
  }
}

/// Writes everything `synth` produces into `dir`.
inline void save_synth(const fs::path& dir, const RunConfig& cfg, const SynthResult& s) {
  ensure_dir(dir);
  save_config((dir / "config.json").string(), cfg);
  write_file(dir / "pfsm.txt", [&](std::ostream& os) { write_pfsm(os, s.pfsm); });
  save_dataset((dir / "human.txt").string(), s.human_data);
  for (std::size_t i = 0; i < s.human_labels.size(); ++i)
    write_label_file(dir / ("human_labels_" + std::to_string(i) + ".txt"), s.human_labels[i]);
  if (s.generator) {
    Checkpoint ck;
    ck.spec = s.generator_spec;
    ck.state = s.generator->state;
    ck.seed = derive_seed(cfg.seed, stream::generator);
    ck.lineage.push_back("target generator, run seed " + std::to_string(cfg.seed));
    save_checkpoint((dir / "generator.ckpt").string(), ck);
    write_file(dir / "generator_log.csv", [&](std::ostream& os) { write_training_log(os, s.generator->log); });
  }
  save_dataset((dir / "targets.txt").string(), s.targets.slices);
  save_dataset((dir / "target_stream.txt").string(), make_dataset(cfg.codec, s.targets.slices.seed, {s.targets.kept}));
  write_label_file(dir / "target_labels.txt", s.target_labels);
  save_classifier(dir / "classifier", s.classifier, derive_seed(cfg.seed, stream::classifier));
  write_file(dir / "classifier_log.csv", [&](std::ostream& os) { write_training_log(os, s.classifier_log); });
  json summary = {{"sequences", s.targets.slices.size()},
                  {"slice_length", cfg.synth.slice_length},
                  {"classifier_holdout_accuracy", s.classifier_holdout_accuracy},
                  {"target_prototypes", to_string(s.target_labels.prototypes)}};
  write_file(dir / "summary.json", [&](std::ostream& os) { os << summary.dump(2) << '\n'; });
}

/// The parts of a synth directory needed downstream.
struct SynthInputs {
  Dataset targets;
  Classifier classifier;
  LabelSequence target_labels;
};

inline SynthInputs load_synth(const fs::path& dir) {
  SynthInputs in;
  in.targets = load_dataset((dir / "targets.txt").string());
  in.classifier = load_classifier(dir / "classifier");
  in.target_labels = load_label_file(dir / "target_labels.txt");
  if (!(in.classifier.codec == in.targets.codec))
    throw std::runtime_error(dir.string() + ": classifier and targets use different codecs");
  return in;
}

// ---------------------------------------------------------------------------
// Training

/// Trains one model at meta-prior `w`. `on_epoch` sees every epoch.
inline TrainingResult run_training(const Dataset& data, const RunConfig& cfg, double w, std::uint64_t seed,
                                   const TrainCallbacks& callbacks = {},
                                   std::optional<TrainingState> resume = std::nullopt) {
  if (!(data.codec == cfg.codec)) throw std::domain_error("dataset codec differs from the configured codec");
  TrainingConfig tc = cfg.training;
  tc.meta_prior_w = w;
  tc.seed = seed;
  tc.threads = cfg.threads;
  tc.batch_size = std::min<int>(tc.batch_size, static_cast<int>(data.size()));
  return train(data, cfg.network_spec(), tc, callbacks, std::move(resume));
}

/// First `n` sequences of a dataset (all when n is 0 or too large).
inline Dataset head(const Dataset& d, std::size_t n) {
  if (n == 0 || n >= d.size()) return d;
  Dataset out;
  out.codec = d.codec;
  out.seed = d.seed;
  out.raw.assign(d.raw.begin(), d.raw.begin() + static_cast<long>(n));
  out.sequences.assign(d.sequences.begin(), d.sequences.begin() + static_cast<long>(n));
  return out;
}

// ---------------------------------------------------------------------------
// Generation

struct Generation {
  std::vector<Trajectory2D> trajectories;
  std::vector<Eigen::MatrixXd> sigma;  // C x steps per trajectory, column 0 zero
};

/// Closed-loop runs from every stored z_1, each started from the first frame
/// of its own training sequence.
inline Generation generate_from_latents(const Parameters& p, const NetworkSpec& spec, const Dataset& data,
                                        std::size_t steps, std::uint64_t seed, std::uint64_t stream_tag) {
  if (p.init_latents.size() != data.size())
    throw std::domain_error("checkpoint has " + std::to_string(p.init_latents.size()) + " latents but dataset has " +
                            std::to_string(data.size()) + " sequences");
  Generation g;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t n = steps ? steps : data.raw[i].step_count();
    Rng rng(derive_seed(seed, stream_tag, i));
    Eigen::MatrixXd sig;
    Eigen::MatrixXd out = free_run(p.init_latents[i], data.sequences[i].frames.col(0), n, p, spec, rng, std::nullopt,
                                   &sig);
    g.trajectories.push_back(decode_sequence(out, data.codec));
    g.sigma.push_back(std::move(sig));
  }
  return g;
}

inline double mean_generated_sigma(const Generation& g) {
  double acc = 0.0;
  long n = 0;
  for (const auto& s : g.sigma) {
    if (s.cols() < 2) continue;
    acc += s.rightCols(s.cols() - 1).sum();
    n += s.rows() * (s.cols() - 1);
  }
  return n ? acc / static_cast<double>(n) : 0.0;
}

// ---------------------------------------------------------------------------
// Evaluation

struct RunMetrics {
  double w = 0.0;
  std::uint64_t seed = 0;
  double final_train_sigma = 0.0;
  DivergenceReport divergence;
  NGramDistribution model_ngrams;
  double kl_target_model = 0.0;  // KL(target || model), the reported direction
  double kl_model_target = 0.0;
  PeriodicityResult periodicity;  // first free run
  double regen_sigma = 0.0;
  SigmaSummary sigma_units;  // selected units over the first regeneration
  Generation regenerated;
  Generation free_runs;
  std::vector<LabelSequence> regenerated_labels;
  std::vector<LabelSequence> free_run_labels;
};

/// Regenerates each training sequence, free-runs from each z_1, and scores
/// both against the targets and the target generator's N-gram statistics.
inline RunMetrics evaluate_run(const Parameters& p, const NetworkSpec& spec, const Dataset& data,
                               const Classifier& clf, const NGramDistribution& reference, const RunConfig& cfg,
                               std::uint64_t seed) {
  const auto& a = cfg.analysis;
  RunMetrics m;
  m.seed = seed;
  m.regenerated = generate_from_latents(p, spec, data, cfg.generate.steps, seed, stream::regenerate);
  std::vector<std::pair<Trajectory2D, Trajectory2D>> pairs;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Trajectory2D& gen = m.regenerated.trajectories[i];
    const std::size_t n = std::min(gen.step_count(), data.raw[i].step_count());
    pairs.emplace_back(data.raw[i].slice(0, n), gen.slice(0, n));
    m.regenerated_labels.push_back(classify(clf, gen));
  }
  m.divergence = average_divergence_step(pairs, a.threshold);
  m.regen_sigma = mean_generated_sigma(m.regenerated);

  m.free_runs = generate_from_latents(p, spec, data, cfg.generate.free_run_steps, seed, stream::free_run);
  std::vector<std::vector<Label>> streams;
  for (const auto& t : m.free_runs.trajectories) {
    m.free_run_labels.push_back(classify(clf, t));
    streams.push_back(m.free_run_labels.back().prototypes);
  }
  NGramCounter counter(a.ngram_order);
  for (const auto& s : streams) {
    counter.reset_window();
    for (Label l : s) counter.push(l);
  }
  try {
    m.model_ngrams = counter.finish(a.ngram_epsilon);
    m.kl_target_model = ngram_kl(reference, m.model_ngrams);
    m.kl_model_target = ngram_kl(m.model_ngrams, reference);
  } catch (const std::domain_error&) {
    // Free runs too short or too static to contain a single N-gram: every
    // tuple gets the smoothing mass only.
    m.model_ngrams = NGramDistribution{};
    m.model_ngrams.order = a.ngram_order;
    m.model_ngrams.epsilon = a.ngram_epsilon;
    const std::size_t k = ngram_support(a.ngram_order);
    m.model_ngrams.counts.assign(k, 0.0);
    m.model_ngrams.probabilities.assign(k, 1.0 / static_cast<double>(k));
    m.kl_target_model = ngram_kl(reference, m.model_ngrams);
    m.kl_model_target = ngram_kl(m.model_ngrams, reference);
  }
  const auto& first = m.free_runs.trajectories.front();
  const std::size_t lag = std::min(a.max_lag, (first.step_count() - 1) / 2);
  if (lag >= 1) m.periodicity = periodicity_score(first, lag);

  LatentTrace view;
  view.sigma = m.regenerated.sigma.front();
  if (view.sigma.cols() >= 2)
    m.sigma_units = sigma_statistics(view, units_in_layer(spec, std::min(a.sigma_layer, spec.layer_sizes.size() - 1),
                                                          a.sigma_units));
  return m;
}

inline NGramDistribution reference_ngrams(const LabelSequence& target_labels, const AnalysisConfig& a) {
  return ngram_distribution(target_labels.prototypes, a.ngram_order, a.ngram_epsilon);
}

inline std::string w_label(double w) {
  std::ostringstream s;
  s << "W=" << format_double(w);
  return s.str();
}

/// Rows are metrics, columns are W values, in the order given.
inline void write_table(std::ostream& os, const std::vector<RunMetrics>& runs, int ngram_order) {
  os << "metric";
  for (const auto& r : runs) os << ',' << w_label(r.w);
  os << "\nADS";
  for (const auto& r : runs) os << ',' << format_double(r.divergence.ads);
  os << "\n" << ngram_order << "-gram KL (nats)";
  for (const auto& r : runs) os << ',' << format_double(r.kl_target_model);
  os << '\n';
}

inline void write_run_details(std::ostream& os, const std::vector<RunMetrics>& runs) {
  os << "W,seed,ADS,kl_target_model,kl_model_target,final_train_sigma,regen_sigma,periodicity_lag,"
        "periodicity_peak,aperiodic\n";
  for (const auto& r : runs)
    os << format_double(r.w) << ',' << r.seed << ',' << format_double(r.divergence.ads) << ','
       << format_double(r.kl_target_model) << ',' << format_double(r.kl_model_target) << ','
       << format_double(r.final_train_sigma) << ',' << format_double(r.regen_sigma) << ',' << r.periodicity.peak_lag
       << ',' << format_double(r.periodicity.peak_correlation) << ',' << (r.periodicity.aperiodic ? 1 : 0) << '\n';
}

inline void write_divergence_csv(std::ostream& os, const std::vector<RunMetrics>& runs) {
  os << "W,seq,divergence_step,length\n";
  for (const auto& r : runs)
    for (std::size_t i = 0; i < r.divergence.steps.size(); ++i) {
      os << format_double(r.w) << ',' << i << ',';
      if (r.divergence.steps[i])
        os << *r.divergence.steps[i];
      else
        os << "none";
      os << ',' << r.divergence.lengths[i] << '\n';
    }
}

inline void write_ngram_csv(std::ostream& os, const NGramDistribution& reference, const std::vector<RunMetrics>& runs) {
  os << "tuple,target_count,target_p";
  for (const auto& r : runs) os << ',' << w_label(r.w) << "_count," << w_label(r.w) << "_p";
  os << '\n';
  for (std::size_t k = 0; k < reference.probabilities.size(); ++k) {
    os << ngram_name(k, reference.order) << ',' << format_double(reference.counts[k]) << ','
       << format_double(reference.probabilities[k]);
    for (const auto& r : runs)
      os << ',' << format_double(r.model_ngrams.counts[k]) << ',' << format_double(r.model_ngrams.probabilities[k]);
    os << '\n';
  }
}

inline void write_sigma_csv(std::ostream& os, const std::vector<RunMetrics>& runs) {
  os << "W,unit,step,sigma\n";
  for (const auto& r : runs)
    for (std::size_t u = 0; u < r.sigma_units.units.size(); ++u)
      for (std::size_t t = 0; t < r.sigma_units.series[u].size(); ++t)
        os << format_double(r.w) << ',' << r.sigma_units.units[u] << ',' << t + 2 << ','
           << format_double(r.sigma_units.series[u][t]) << '\n';
}

}  // namespace vbp
