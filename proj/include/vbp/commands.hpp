// The command-line subcommands as plain functions over a resolved config.
// Each writes the resolved config next to its outputs.
#pragma once

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "vbp/experiment.hpp"
#include "vbp/svg.hpp"

namespace vbp::cmd {

struct Context {
  RunConfig config;
  fs::path out;
  std::ostream* log = &std::cerr;  // progress lines; null silences them

  void say(const std::string& s) const {
    if (log) *log << s << std::endl;
  }
  ProgressFn progress() const {
    return [this](const std::string& s) { say(s); };
  }
};

inline void begin(const Context& ctx) {
  ctx.config.validate();
  ensure_dir(ctx.out);
  save_config((ctx.out / "config.json").string(), ctx.config);
}

/// Accepts either a synth directory (uses its targets.txt) or a dataset file.
inline Dataset load_training_data(const fs::path& p) {
  return load_dataset((fs::is_directory(p) ? p / "targets.txt" : p).string());
}

inline std::string w_dir_name(double w) { return "w" + format_double(w); }

// ---------------------------------------------------------------------------

inline SynthResult synth(const Context& ctx) {
  begin(ctx);
  SynthResult s = run_synth(ctx.config, ctx.progress());
  save_synth(ctx.out, ctx.config, s);
  ctx.say("synth: " + std::to_string(s.targets.slices.size()) + " sequences, classifier holdout accuracy " +
          format_double(s.classifier_holdout_accuracy));
  return s;
}

struct TrainOptions {
  fs::path data;
  std::vector<double> ws;         // one entry unless sweeping
  std::optional<fs::path> resume;  // checkpoint to continue from (single W only)
};

struct TrainedModel {
  double w = 0.0;
  std::uint64_t seed = 0;
  fs::path checkpoint;
  double final_sigma = 0.0;
};

inline std::vector<TrainedModel> read_models(const fs::path& train_dir) {
  std::ifstream is(train_dir / "models.json");
  if (!is) throw std::runtime_error("cannot open " + (train_dir / "models.json").string());
  json j;
  try {
    is >> j;
    std::vector<TrainedModel> out;
    for (const auto& m : j.at("models"))
      out.push_back({m.at("w").get<double>(), m.at("seed").get<std::uint64_t>(),
                     train_dir / m.at("checkpoint").get<std::string>(), m.at("final_sigma").get<double>()});
    return out;
  } catch (const json::exception& e) {
    throw std::runtime_error((train_dir / "models.json").string() + ": " + e.what());
  }
}

inline std::vector<TrainedModel> train(const Context& ctx, const TrainOptions& opt) {
  if (opt.ws.empty()) throw ConfigError("train: no W given");
  if (opt.resume && opt.ws.size() != 1) throw ConfigError("train: --resume needs a single W");
  begin(ctx);
  const RunConfig& cfg = ctx.config;
  Dataset data = head(load_training_data(opt.data), cfg.synth.sequences);
  std::vector<TrainedModel> models;
  std::ofstream combined;
  if (opt.ws.size() > 1) {
    combined.open(ctx.out / "sweep_log.csv");
    combined << "w,epoch,L,L_z,L_x,mean_sigma,seconds\n";
  }
  for (double w : opt.ws) {
    const fs::path dir = ctx.out / w_dir_name(w);
    ensure_dir(dir);
    std::optional<TrainingState> resume;
    std::vector<std::string> lineage;
    std::uint64_t seed = training_seed(cfg.seed, w);
    if (opt.resume) {
      Checkpoint ck = load_checkpoint(opt.resume->string());
      if (!(ck.spec == cfg.network_spec())) throw ConfigError(opt.resume->string() + ": network differs from config");
      resume = std::move(ck.state);
      seed = ck.seed;
      lineage = ck.lineage;
      lineage.push_back("resumed from " + opt.resume->string());
    }
    lineage.push_back("trained at W=" + format_double(w) + " on " + opt.data.string());
    auto save = [&](const TrainingState& st, const fs::path& path) {
      Checkpoint ck{cfg.network_spec(), st, seed, lineage};
      save_checkpoint(path.string(), ck);
    };
    ctx.say("train: W=" + format_double(w) + ", " + std::to_string(cfg.training.epochs) + " epochs, " +
            std::to_string(data.size()) + " sequences");
    TrainCallbacks cb;
    const int report = std::max(1, cfg.training.epochs / 10);
    cb.on_epoch = [&](const EpochLog& e, const TrainingState& st) {
      if (e.epoch % report == 0)
        ctx.say("  epoch " + std::to_string(e.epoch) + " L=" + format_double(e.l) +
                " mean_sigma=" + format_double(e.mean_sigma));
      if (cfg.checkpoint_every > 0 && e.epoch % cfg.checkpoint_every == 0)
        save(st, dir / ("model_epoch" + std::to_string(e.epoch) + ".ckpt"));
    };
    TrainingResult r = run_training(data, cfg, w, seed, cb, std::move(resume));
    save(r.state, dir / "model.ckpt");
    write_file(dir / "log.csv", [&](std::ostream& os) { write_training_log(os, r.log); });
    if (combined.is_open())
      for (const auto& e : r.log)
        combined << format_double(w) << ',' << e.epoch << ',' << format_double(e.l) << ',' << format_double(e.l_z)
                 << ',' << format_double(e.l_x) << ',' << format_double(e.mean_sigma) << ','
                 << format_double(e.seconds) << '\n';
    models.push_back({w, seed, dir / "model.ckpt", r.log.empty() ? 0.0 : r.log.back().mean_sigma});
  }
  json j;
  j["data"] = opt.data.string();
  for (const auto& m : models)
    j["models"].push_back({{"w", m.w},
                           {"seed", m.seed},
                           {"checkpoint", fs::relative(m.checkpoint, ctx.out).string()},
                           {"final_sigma", m.final_sigma}});
  write_file(ctx.out / "models.json", [&](std::ostream& os) { os << j.dump(2) << '\n'; });
  return models;
}

enum class GenerateMode { regenerate, free_run };

struct GenerateOptions {
  fs::path checkpoint;
  fs::path data;  // supplies first frames and default lengths
  GenerateMode mode = GenerateMode::regenerate;
};

inline Generation generate(const Context& ctx, const GenerateOptions& opt) {
  begin(ctx);
  Checkpoint ck = load_checkpoint(opt.checkpoint.string());
  Dataset data = head(load_training_data(opt.data), ck.state.params.init_latents.size());
  const bool free = opt.mode == GenerateMode::free_run;
  const std::size_t steps = free ? ctx.config.generate.free_run_steps : ctx.config.generate.steps;
  Generation g = generate_from_latents(ck.state.params, ck.spec, data, steps, ctx.config.seed,
                                       free ? stream::free_run : stream::regenerate);
  write_file(ctx.out / "trajectories.csv", [&](std::ostream& os) { write_trajectories_csv(os, g.trajectories); });
  write_file(ctx.out / "sigma_trace.csv", [&](std::ostream& os) {
    os << "seq,step,unit,sigma\n";
    for (std::size_t i = 0; i < g.sigma.size(); ++i)
      for (long t = 1; t < g.sigma[i].cols(); ++t)
        for (long u = 0; u < g.sigma[i].rows(); ++u)
          os << i << ',' << t + 1 << ',' << u << ',' << format_double(g.sigma[i](u, t)) << '\n';
  });
  ctx.say("generate: " + std::to_string(g.trajectories.size()) + " trajectories, mean sigma " +
          format_double(mean_generated_sigma(g)));
  return g;
}

inline std::vector<LabelSequence> classify(const Context& ctx, const fs::path& classifier_stem,
                                           const fs::path& trajectories_csv) {
  begin(ctx);
  Classifier clf = load_classifier(classifier_stem);
  auto trajs = load_trajectories_csv(trajectories_csv);
  std::vector<LabelSequence> out;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    out.push_back(vbp::classify(clf, trajs[i]));
    write_label_file(ctx.out / ("labels_" + std::to_string(i) + ".txt"), out.back());
  }
  ctx.say("classify: " + std::to_string(out.size()) + " sequences labelled");
  return out;
}

// ---------------------------------------------------------------------------

inline void write_figures(const fs::path& dir, const Dataset& targets, const std::vector<RunMetrics>& runs) {
  std::vector<svg::Panel> panels;
  panels.push_back({"target", {targets.raw.front()}});
  for (const auto& r : runs) panels.push_back({w_label(r.w), {targets.raw.front(), r.regenerated.trajectories.front()}});
  write_file(dir / "trajectories.svg", [&](std::ostream& os) { svg::trajectory_panels(os, panels); });

  std::vector<svg::Series> xs;
  const auto& t0 = targets.raw.front();
  std::vector<double> tx;
  for (const auto& p : t0.points()) tx.push_back(p.x);
  xs.push_back({"target x", tx});
  for (const auto& r : runs) {
    std::vector<double> gx;
    for (const auto& p : r.regenerated.trajectories.front().points()) gx.push_back(p.x);
    xs.push_back({w_label(r.w) + " x", gx});
  }
  write_file(dir / "x_series.svg", [&](std::ostream& os) { svg::line_chart(os, "x over time, sequence 0", "x", xs); });

  for (const auto& r : runs) {
    std::vector<svg::Series> ss;
    for (std::size_t u = 0; u < r.sigma_units.units.size(); ++u)
      ss.push_back({"unit " + std::to_string(r.sigma_units.units[u]), r.sigma_units.series[u], 2});
    write_file(dir / ("sigma_" + w_dir_name(r.w) + ".svg"),
               [&](std::ostream& os) { svg::line_chart(os, "sigma, " + w_label(r.w), "sigma", ss); });
  }
}

inline void write_trajectory_report(const fs::path& dir, const Dataset& targets, const std::vector<RunMetrics>& runs) {
  write_file(dir / "trajectories.csv", [&](std::ostream& os) {
    os << "source,seq,step,x,y\n";
    auto emit = [&](const std::string& src, const std::vector<Trajectory2D>& ts) {
      for (std::size_t i = 0; i < ts.size(); ++i)
        for (std::size_t t = 0; t < ts[i].step_count(); ++t)
          os << src << ',' << i << ',' << t + 1 << ',' << format_double(ts[i][t].x) << ','
             << format_double(ts[i][t].y) << '\n';
    };
    emit("target", targets.raw);
    for (const auto& r : runs) emit(w_label(r.w), r.regenerated.trajectories);
  });
}

inline void write_reports(const Context& ctx, const Dataset& targets, const NGramDistribution& reference,
                          const std::vector<RunMetrics>& runs) {
  const auto& a = ctx.config.analysis;
  write_file(ctx.out / "table.csv", [&](std::ostream& os) { write_table(os, runs, a.ngram_order); });
  write_file(ctx.out / "runs.csv", [&](std::ostream& os) { write_run_details(os, runs); });
  write_file(ctx.out / "divergence.csv", [&](std::ostream& os) { write_divergence_csv(os, runs); });
  write_file(ctx.out / "ngrams.csv", [&](std::ostream& os) { write_ngram_csv(os, reference, runs); });
  write_file(ctx.out / "sigma.csv", [&](std::ostream& os) { write_sigma_csv(os, runs); });
  write_trajectory_report(ctx.out, targets, runs);
  write_figures(ctx.out, targets, runs);

  std::ostringstream s;
  s << "W        ADS        KL(target||model)  KL(model||target)  aperiodic\n";
  for (const auto& r : runs) {
    char line[160];
    std::snprintf(line, sizeof line, "%-8s %-10.4g %-18.6g %-18.6g %s\n", format_double(r.w).c_str(),
                  r.divergence.ads, r.kl_target_model, r.kl_model_target, r.periodicity.aperiodic ? "yes" : "no");
    s << line;
  }
  s << "KL in nats, N=" << a.ngram_order << ", epsilon=" << format_double(a.ngram_epsilon) << '\n';
  write_file(ctx.out / "summary.txt", [&](std::ostream& os) { os << s.str(); });
  if (ctx.log) *ctx.log << s.str();
}

/// Evaluates every model of a training directory against its synth directory.
inline std::vector<RunMetrics> analyze(const Context& ctx, const fs::path& synth_dir, const fs::path& train_dir) {
  begin(ctx);
  SynthInputs in = load_synth(synth_dir);
  const auto reference = reference_ngrams(in.target_labels, ctx.config.analysis);
  std::vector<RunMetrics> runs;
  Dataset used;
  for (const auto& m : read_models(train_dir)) {
    Checkpoint ck = load_checkpoint(m.checkpoint.string());
    used = head(in.targets, ck.state.params.init_latents.size());
    ctx.say("analyze: W=" + format_double(m.w));
    RunMetrics r = evaluate_run(ck.state.params, ck.spec, used, in.classifier, reference, ctx.config, m.seed);
    r.w = m.w;
    r.final_train_sigma = m.final_sigma;
    runs.push_back(std::move(r));
  }
  if (runs.empty()) throw std::runtime_error(train_dir.string() + ": no models listed");
  write_reports(ctx, used, reference, runs);
  return runs;
}

/// Scores externally generated trajectories (rows `seq,step,x,y`) against the
/// synth targets; the CSV's sequences are compared in order.
inline RunMetrics analyze_generated(const Context& ctx, const fs::path& synth_dir, const fs::path& generated_csv) {
  begin(ctx);
  SynthInputs in = load_synth(synth_dir);
  const auto& a = ctx.config.analysis;
  auto gen = load_trajectories_csv(generated_csv);
  if (gen.size() > in.targets.size())
    throw std::runtime_error(generated_csv.string() + ": more sequences than targets");
  Dataset used = head(in.targets, gen.size());
  RunMetrics r;
  r.w = ctx.config.training.meta_prior_w;
  std::vector<std::pair<Trajectory2D, Trajectory2D>> pairs;
  std::vector<std::vector<Label>> streams;
  for (std::size_t i = 0; i < gen.size(); ++i) {
    const std::size_t n = std::min(gen[i].step_count(), used.raw[i].step_count());
    pairs.emplace_back(used.raw[i].slice(0, n), gen[i].slice(0, n));
    streams.push_back(vbp::classify(in.classifier, gen[i]).prototypes);
  }
  r.divergence = average_divergence_step(pairs, a.threshold);
  const auto reference = reference_ngrams(in.target_labels, a);
  r.model_ngrams = ngram_distribution(streams, a.ngram_order, a.ngram_epsilon);
  r.kl_target_model = ngram_kl(reference, r.model_ngrams);
  r.kl_model_target = ngram_kl(r.model_ngrams, reference);
  const std::size_t lag = std::min(a.max_lag, (gen.front().step_count() - 1) / 2);
  if (lag >= 1) r.periodicity = periodicity_score(gen.front(), lag);
  r.regenerated.trajectories = gen;
  std::vector<RunMetrics> runs{r};
  write_file(ctx.out / "table.csv", [&](std::ostream& os) { write_table(os, runs, a.ngram_order); });
  write_file(ctx.out / "runs.csv", [&](std::ostream& os) { write_run_details(os, runs); });
  write_file(ctx.out / "divergence.csv", [&](std::ostream& os) { write_divergence_csv(os, runs); });
  write_file(ctx.out / "ngrams.csv", [&](std::ostream& os) { write_ngram_csv(os, reference, runs); });
  write_trajectory_report(ctx.out, used, runs);
  std::vector<svg::Panel> panels{{"target", {used.raw.front()}}, {"generated", {used.raw.front(), gen.front()}}};
  write_file(ctx.out / "trajectories.svg", [&](std::ostream& os) { svg::trajectory_panels(os, panels); });
  ctx.say("analyze: ADS " + format_double(r.divergence.ads) + ", KL(target||model) " +
          format_double(r.kl_target_model) + " nats");
  return r;
}

struct GradcheckOptions {
  int instances = 20;
  double tolerance = 1e-5;
};

/// Random tiny two-layer networks checked against central differences.
inline bool gradcheck(const Context& ctx, const GradcheckOptions& opt) {
  begin(ctx);
  Rng rng(derive_seed(ctx.config.seed, 400));
  std::uniform_int_distribution<int> units(1, 5), dim(2, 9), steps(2, 8), tau(1, 6);
  std::uniform_real_distribution<double> wdist(0.0, 1.0);
  bool all = true;
  std::ofstream os(ctx.out / "gradcheck.csv");
  os << "instance,layers,input_dim,steps,w,max_rel_error,passed\n";
  for (int k = 0; k < opt.instances; ++k) {
    NetworkSpec spec;
    spec.layer_sizes = {units(rng), units(rng)};
    const double fast = tau(rng);
    spec.time_constants = {fast, fast + tau(rng)};
    spec.input_dim = spec.output_dim = dim(rng);
    GradientCheckOptions gopt;
    gopt.steps = static_cast<std::size_t>(steps(rng));
    gopt.meta_prior_w = wdist(rng);
    auto rep = gradient_check(spec, derive_seed(ctx.config.seed, 401, static_cast<std::uint64_t>(k)), opt.tolerance,
                              gopt);
    all = all && rep.passed;
    os << k << ",\"" << spec.layer_sizes[0] << '/' << spec.layer_sizes[1] << "\"," << spec.input_dim << ','
       << gopt.steps << ',' << format_double(gopt.meta_prior_w) << ',' << format_double(rep.max_rel_error) << ','
       << (rep.passed ? 1 : 0) << '\n';
  }
  ctx.say(std::string("gradcheck: ") + (all ? "all instances within " : "some instances exceed ") +
          format_double(opt.tolerance));
  return all;
}

}  // namespace vbp::cmd
