#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "vbp/commands.hpp"

namespace vbp {
namespace {

NetworkSpec small_spec() {
  NetworkSpec s;
  s.layer_sizes = {6, 3};
  s.time_constants = {2, 8};
  s.input_dim = s.output_dim = 9;
  return s;
}

Dataset small_data(std::size_t n, std::size_t len, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  std::vector<Trajectory2D> ts;
  for (std::size_t i = 0; i < n; ++i) {
    Trajectory2D t;
    for (std::size_t k = 0; k < len; ++k) t.push_back({u(rng), u(rng)});
    ts.push_back(t);
  }
  return make_dataset(GridCodec{3, 3, 20.0}, seed, ts);
}

void expect_same(const WeightBlocks& a, const WeightBlocks& b) {
  auto va = block_views(const_cast<WeightBlocks&>(a));
  auto vb = block_views(const_cast<WeightBlocks&>(b));
  ASSERT_EQ(va.size(), vb.size());
  for (std::size_t k = 0; k < va.size(); ++k) EXPECT_EQ(va[k].second, vb[k].second) << va[k].first;
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  NetworkSpec spec = small_spec();
  TrainingConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 2;
  auto res = train(small_data(3, 12, 1), spec, cfg);
  Checkpoint ck{spec, res.state, 42, {"first", "second line"}};
  std::stringstream ss;
  write_checkpoint(ss, ck);
  Checkpoint back = read_checkpoint(ss);
  EXPECT_EQ(back.spec, spec);
  EXPECT_EQ(back.seed, 42u);
  EXPECT_EQ(back.lineage, ck.lineage);
  EXPECT_EQ(back.state.epochs_done, 3);
  EXPECT_EQ(back.state.adam.timestep, res.state.adam.timestep);
  expect_same(back.state.params, res.state.params);
  expect_same(back.state.adam.m, res.state.adam.m);
  expect_same(back.state.adam.v, res.state.adam.v);
  ASSERT_EQ(back.state.params.init_latents.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(back.state.params.init_latents[i], res.state.params.init_latents[i]);
}

TEST(Checkpoint, ResumeAfterReloadMatchesUninterruptedRun) {
  NetworkSpec spec = small_spec();
  Dataset data = small_data(4, 10, 2);
  TrainingConfig cfg;
  cfg.batch_size = 2;
  cfg.seed = 5;
  cfg.meta_prior_w = 0.1;
  cfg.epochs = 6;
  auto full = train(data, spec, cfg);
  cfg.epochs = 2;
  auto part = train(data, spec, cfg);
  std::stringstream ss;
  write_checkpoint(ss, Checkpoint{spec, part.state, 5, {}});
  cfg.epochs = 6;
  auto resumed = train(data, spec, cfg, {}, read_checkpoint(ss).state);
  expect_same(resumed.state.params, full.state.params);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(resumed.state.params.init_latents[i], full.state.params.init_latents[i]);
  ASSERT_EQ(resumed.log.size(), 4u);
  EXPECT_EQ(resumed.log.back().l, full.log.back().l);
}

TEST(Checkpoint, CorruptInputNamesLine) {
  NetworkSpec spec = small_spec();
  Checkpoint ck{spec, {init_parameters(spec, 1, 1), {}, 0}, 1, {}};
  ck.state.adam = AdamState::for_parameters(ck.state.params);
  std::stringstream ss;
  write_checkpoint(ss, ck);
  std::string text = ss.str();
  auto pos = text.find("block param");
  pos = text.find('\n', pos) + 1;
  text.replace(pos, text.find('\n', pos) - pos, "not numbers");
  std::istringstream in(text);
  try {
    read_checkpoint(in);
    FAIL();
  } catch (const LoadError& e) {
    EXPECT_GT(e.line(), 0u);
  }
  std::istringstream bad_header("VBPCKPT v9\n");
  EXPECT_THROW(read_checkpoint(bad_header), LoadError);
}

TEST(Config, PresetsValidate) {
  EXPECT_NO_THROW(paper_preset().validate());
  EXPECT_NO_THROW(desk_preset().validate());
  EXPECT_EQ(desk_preset().network_spec().input_dim, 81);
  EXPECT_EQ(paper_preset().network_spec().input_dim, 121);
  EXPECT_EQ(paper_preset().network.layer_sizes, (std::vector<int>{121, 60, 30, 15, 10, 10, 10}));
  EXPECT_EQ(paper_preset().sweep, (std::vector<double>{0.0, 0.01, 0.1, 0.2}));
  EXPECT_THROW(preset("laptop"), ConfigError);
}

TEST(Config, JsonRoundTripReproducesEveryField) {
  RunConfig c = desk_preset();
  c.seed = 77;
  c.threads = 3;
  c.training.gradient_clip = 5.0;
  c.synth.pfsm_file = "machine.txt";
  c.analysis.sigma_units = 4;
  RunConfig back = config_from_json(to_json(c));
  EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
  EXPECT_EQ(back.training.gradient_clip, std::optional<double>(5.0));
}

TEST(Config, MissingKeysKeepPresetDefaults) {
  RunConfig c = config_from_json(json::parse(R"({"preset":"desk","training":{"epochs":12}})"));
  EXPECT_EQ(c.training.epochs, 12);
  EXPECT_EQ(c.network.layer_sizes, desk_preset().network.layer_sizes);
  EXPECT_EQ(c.preset, "desk");
}

TEST(Config, UnknownKeysRejectedWithPath) {
  try {
    config_from_json(json::parse(R"({"training":{"epoch":12}})"));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("config.training"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
  EXPECT_THROW(config_from_json(json::parse(R"({"colour":1})")), ConfigError);
  EXPECT_THROW(config_from_json(json::parse(R"({"seed":"one"})")), ConfigError);
  EXPECT_THROW(config_from_json(json::parse(R"({"network":{"connectivity":"ring"}})")), ConfigError);
}

TEST(Config, InvalidValuesFailValidation) {
  RunConfig c = desk_preset();
  c.synth.sequences = 100;
  EXPECT_THROW(c.validate(), ConfigError);
  c = desk_preset();
  c.sweep = {0.0, 1.5};
  EXPECT_THROW(c.validate(), std::domain_error);
}

TEST(TrajectoryCsv, RoundTripIsExact) {
  Dataset d = small_data(3, 7, 4);
  std::stringstream ss;
  write_trajectories_csv(ss, d.raw);
  auto back = read_trajectories_csv(ss);
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(back[i], d.raw[i]);
}

TEST(TrajectoryCsv, MalformedRowsNameLine) {
  auto fails_at = [](const std::string& text, std::size_t line) {
    std::istringstream in(text);
    try {
      read_trajectories_csv(in);
      ADD_FAILURE() << text;
    } catch (const LoadError& e) {
      EXPECT_EQ(e.line(), line) << text;
    }
  };
  fails_at("x,y\n", 1);
  fails_at("seq,step,x,y\n0,1,0.5,0.5\n0,3,0.5,0.5\n", 3);
  fails_at("seq,step,x,y\n0,1,0.5,1.5\n", 2);
  fails_at("seq,step,x,y\n0,1,0.5\n", 2);
  fails_at("seq,step,x,y\n1,1,0.5,0.5\n", 2);
}

TEST(Reports, TableHasTwoMetricRowsAndOneColumnPerW) {
  std::vector<RunMetrics> runs(4);
  const double ws[] = {0.0, 0.01, 0.1, 0.2};
  for (int k = 0; k < 4; ++k) {
    runs[k].w = ws[k];
    runs[k].divergence.ads = 400 - 100 * k;
    runs[k].kl_target_model = 0.1 * k;
  }
  std::stringstream ss;
  write_table(ss, runs, 3);
  std::string header, ads, kl, extra;
  std::getline(ss, header);
  std::getline(ss, ads);
  std::getline(ss, kl);
  EXPECT_FALSE(std::getline(ss, extra));
  EXPECT_EQ(header, "metric,W=0,W=0.01,W=0.1,W=0.2");
  EXPECT_EQ(ads, "ADS,400,300,200,100");
  EXPECT_EQ(kl.substr(0, 17), "3-gram KL (nats),");
}

TEST(Svg, OutputIsWellFormedAndDeterministic) {
  Dataset d = small_data(2, 20, 6);
  auto render = [&] {
    std::ostringstream os;
    svg::trajectory_panels(os, {{"target <0>", {d.raw[0]}}, {"W=0.1 & gen", {d.raw[0], d.raw[1]}}});
    svg::line_chart(os, "sigma", "s", {{"unit 30", {0.1, 0.2, 0.15}, 2}, {"unit 31", {}, 2}});
    return os.str();
  };
  const std::string a = render();
  EXPECT_EQ(a, render());
  EXPECT_NE(a.find("target &lt;0&gt;"), std::string::npos);
  EXPECT_NE(a.find("W=0.1 &amp; gen"), std::string::npos);
  std::size_t open = 0, close = 0;
  for (std::size_t p = 0; (p = a.find("<svg", p)) != std::string::npos; ++p) ++open;
  for (std::size_t p = 0; (p = a.find("</svg>", p)) != std::string::npos; ++p) ++close;
  EXPECT_EQ(open, 2u);
  EXPECT_EQ(close, 2u);
}

// The whole command chain on a miniature configuration.
class CommandChain : public ::testing::Test {
 protected:
  static RunConfig tiny() {
    RunConfig c = desk_preset();
    c.network.layer_sizes = {8, 4};
    c.network.time_constants = {2, 8};
    c.codec = GridCodec{5, 5, 60.0};
    c.training.epochs = 4;
    c.synth.human_prototypes = 9;
    c.synth.generator_epochs = 4;
    c.synth.total_steps = 900;
    c.synth.discard_steps = 100;
    c.synth.slice_length = 100;
    c.synth.sequences = 4;
    c.classifier.epochs = 4;
    c.classifier.holdout_sequences = 1;
    c.generate.free_run_steps = 120;
    c.analysis.max_lag = 20;
    return c;
  }
  static std::filesystem::path scratch(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("vbp_io_test_" + name);
    std::filesystem::remove_all(p);
    return p;
  }
};

TEST_F(CommandChain, RunsEndToEndAndWritesResolvedConfigs) {
  const auto root = scratch("chain");
  cmd::Context ctx{tiny(), root / "synth", nullptr};
  cmd::synth(ctx);
  ctx.out = root / "train";
  auto models = cmd::train(ctx, {root / "synth", ctx.config.sweep, std::nullopt});
  EXPECT_EQ(models.size(), 4u);
  ctx.out = root / "analyze";
  auto runs = cmd::analyze(ctx, root / "synth", root / "train");
  ASSERT_EQ(runs.size(), 4u);
  for (const char* f : {"synth/config.json", "synth/targets.txt", "synth/classifier.ckpt", "train/sweep_log.csv",
                        "train/w0.01/model.ckpt", "train/w0.01/log.csv", "analyze/table.csv", "analyze/config.json",
                        "analyze/trajectories.svg", "analyze/sigma_w0.2.svg"})
    EXPECT_TRUE(std::filesystem::exists(root / f)) << f;
  RunConfig reread = load_config((root / "analyze/config.json").string());
  EXPECT_EQ(to_json(reread).dump(), to_json(ctx.config).dump());
  std::filesystem::remove_all(root);
}

TEST_F(CommandChain, AnalyzeIdenticalGeneratedInputGivesFullLengthAndZeroKl) {
  const auto root = scratch("identity");
  cmd::Context ctx{tiny(), root / "synth", nullptr};
  auto s = cmd::synth(ctx);
  write_file(root / "same.csv", [&](std::ostream& os) { write_trajectories_csv(os, s.targets.slices.raw); });
  ctx.out = root / "analyze";
  auto r = cmd::analyze_generated(ctx, root / "synth", root / "same.csv");
  EXPECT_DOUBLE_EQ(r.divergence.ads, 100.0);
  // Reference labels come from the whole kept stream, so the slices only
  // approximate its N-gram statistics; a slice scored against itself is exact.
  std::vector<std::vector<Label>> streams;
  for (const auto& t : s.targets.slices.raw) streams.push_back(classify(s.classifier, t).prototypes);
  EXPECT_EQ(r.model_ngrams.counts, ngram_distribution(streams, 3, 1e-6).counts);
  std::filesystem::remove_all(root);
}

TEST_F(CommandChain, ResumeNeedsSingleW) {
  cmd::Context ctx{tiny(), scratch("resume"), nullptr};
  EXPECT_THROW(cmd::train(ctx, {"x", {0.0, 0.1}, std::filesystem::path("c.ckpt")}), ConfigError);
}

}  // namespace
}  // namespace vbp
