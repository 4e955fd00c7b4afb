#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "vbp/commands.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> threads;
  std::optional<std::string> preset;
  std::optional<std::size_t> sequences;
  std::optional<std::size_t> steps;
  std::optional<int> epochs;
  bool quiet = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON config; missing keys keep preset defaults")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "base seed");
  app->add_option("--out", c.out, "output directory")->required();
  app->add_option("--threads", c.threads, "worker threads (results do not depend on it)")->check(CLI::PositiveNumber);
  app->add_option("--preset", c.preset, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  app->add_option("--sequences", c.sequences, "number of target sequences")->check(CLI::PositiveNumber);
  app->add_option("--steps", c.steps, "generation length (0: training length)");
  app->add_option("--epochs", c.epochs, "training epochs")->check(CLI::PositiveNumber);
  app->add_flag("--quiet", c.quiet, "no progress output");
}

vbp::cmd::Context resolve(const Common& c) {
  vbp::RunConfig cfg = c.config.empty() ? vbp::preset(c.preset.value_or("paper")) : vbp::load_config(c.config, c.preset);
  if (c.seed) cfg.seed = *c.seed;
  if (c.threads) cfg.threads = *c.threads;
  if (c.sequences) cfg.synth.sequences = *c.sequences;
  if (c.epochs) cfg.training.epochs = *c.epochs;
  return {cfg, c.out, c.quiet ? nullptr : &std::cerr};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variational recurrent network with multiple timescales: data, training and analysis"};
  app.require_subcommand(1);

  Common synth_c, train_c, gen_c, cls_c, an_c, gc_c;

  auto* synth = app.add_subcommand("synth", "render surrogate data, train the target generator and the classifier");
  add_common(synth, synth_c);

  auto* train = app.add_subcommand("train", "train at one meta-prior W or sweep all configured values");
  add_common(train, train_c);
  std::string train_data, resume;
  std::optional<double> w;
  bool sweep = false;
  train->add_option("--data", train_data, "synth directory or dataset file")->required()->check(CLI::ExistingPath);
  auto* w_opt = train->add_option("--w", w, "meta-prior W")->check(CLI::Range(0.0, 1.0));
  train->add_flag("--sweep", sweep, "train every W in the config sweep")->excludes(w_opt);
  train->add_option("--resume", resume, "checkpoint to continue from")->check(CLI::ExistingFile);

  auto* gen = app.add_subcommand("generate", "closed-loop generation from every stored initial latent state");
  add_common(gen, gen_c);
  std::string gen_ckpt, gen_data, gen_mode = "regenerate";
  gen->add_option("--checkpoint", gen_ckpt, "trained model")->required()->check(CLI::ExistingFile);
  gen->add_option("--data", gen_data, "synth directory or dataset file")->required()->check(CLI::ExistingPath);
  gen->add_option("--mode", gen_mode, "regenerate or free-run")->check(CLI::IsMember({"regenerate", "free-run"}));

  auto* cls = app.add_subcommand("classify", "label trajectories with the prototype classifier");
  add_common(cls, cls_c);
  std::string cls_synth, cls_input;
  cls->add_option("--synth", cls_synth, "synth directory holding the classifier")->required()->check(
      CLI::ExistingDirectory);
  cls->add_option("--input", cls_input, "trajectory CSV (seq,step,x,y)")->required()->check(CLI::ExistingFile);

  auto* an = app.add_subcommand("analyze", "divergence steps, N-gram KL, periodicity, sigma; CSV and SVG reports");
  add_common(an, an_c);
  std::string an_synth, an_train, an_generated;
  an->add_option("--synth", an_synth, "synth directory")->required()->check(CLI::ExistingDirectory);
  auto* an_t = an->add_option("--train", an_train, "training directory")->check(CLI::ExistingDirectory);
  an->add_option("--generated", an_generated, "trajectory CSV to score instead of trained models")
      ->check(CLI::ExistingFile)
      ->excludes(an_t);
  std::optional<double> an_w;
  an->add_option("--w", an_w, "W column label for --generated")->check(CLI::Range(0.0, 1.0));
  std::optional<std::size_t> an_free;
  an->add_option("--free-run-steps", an_free, "free-run length for N-gram statistics");

  auto* gc = app.add_subcommand("gradcheck", "compare analytic gradients with central differences");
  add_common(gc, gc_c);
  vbp::cmd::GradcheckOptions gc_opt;
  gc->add_option("--instances", gc_opt.instances, "random networks")->check(CLI::PositiveNumber);
  gc->add_option("--tolerance", gc_opt.tolerance, "relative error bound");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      vbp::cmd::synth(resolve(synth_c));
    } else if (train->parsed()) {
      auto ctx = resolve(train_c);
      vbp::cmd::TrainOptions opt;
      opt.data = train_data;
      if (sweep)
        opt.ws = ctx.config.sweep;
      else
        opt.ws = {w.value_or(ctx.config.training.meta_prior_w)};
      if (!resume.empty()) opt.resume = resume;
      vbp::cmd::train(ctx, opt);
    } else if (gen->parsed()) {
      auto ctx = resolve(gen_c);
      const bool free = gen_mode == "free-run";
      if (gen_c.steps) (free ? ctx.config.generate.free_run_steps : ctx.config.generate.steps) = *gen_c.steps;
      vbp::cmd::generate(ctx, {gen_ckpt, gen_data, free ? vbp::cmd::GenerateMode::free_run
                                                        : vbp::cmd::GenerateMode::regenerate});
    } else if (cls->parsed()) {
      vbp::cmd::classify(resolve(cls_c), std::filesystem::path(cls_synth) / "classifier", cls_input);
    } else if (an->parsed()) {
      auto ctx = resolve(an_c);
      if (an_c.steps) ctx.config.generate.steps = *an_c.steps;
      if (an_free) ctx.config.generate.free_run_steps = *an_free;
      if (an_w) ctx.config.training.meta_prior_w = *an_w;
      if (!an_generated.empty())
        vbp::cmd::analyze_generated(ctx, an_synth, an_generated);
      else if (!an_train.empty())
        vbp::cmd::analyze(ctx, an_synth, an_train);
      else
        throw vbp::ConfigError("analyze needs --train or --generated");
    } else if (gc->parsed()) {
      return vbp::cmd::gradcheck(resolve(gc_c), gc_opt) ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
