#include <gtest/gtest.h>

#include <cmath>

#include <random>

#include "vbp/train.hpp"

namespace vbp {
namespace {

NetworkSpec tiny_spec(int m = 4) {
  NetworkSpec s;
  s.layer_sizes = {3, 3};
  s.time_constants = {2.0, 4.0};
  s.input_dim = m;
  s.output_dim = m;
  return s;
}

TEST(GradientCheck, StochasticTinyNetwork) {
  GradientCheckOptions o;
  o.steps = 5;
  auto r = gradient_check(tiny_spec(), 7, 1e-5, o);
  for (const auto& b : r.blocks) EXPECT_LE(b.max_rel_error, 1e-5) << b.name;
  EXPECT_TRUE(r.passed);
}

TEST(GradientCheck, DeterministicSigmaConfiguration) {
  GradientCheckOptions o;
  o.sigma_bias = -40.0;
  // log sigma^2 = -40 makes L large; a wider step keeps roundoff below 1e-6.
  o.fd_step = 1e-4;
  auto r = gradient_check(tiny_spec(), 11, 1e-6, o);
  for (const auto& b : r.blocks) EXPECT_LE(b.max_rel_error, 1e-6) << b.name;
  EXPECT_TRUE(r.passed);
}

TEST(GradientCheck, MeasuredAtBothEndpointsOfW) {
  for (double w : {0.0, 1.0}) {
    GradientCheckOptions o;
    o.meta_prior_w = w;
    EXPECT_TRUE(gradient_check(tiny_spec(), 3, 1e-5, o).passed) << "W=" << w;
  }
}

TEST(GradientCheck, ClassifierShapedHead) {
  NetworkSpec s = tiny_spec(5);
  s.output_dim = 3;
  EXPECT_TRUE(gradient_check(s, 5, 1e-5).passed);
}

TEST(GradientCheck, RejectsInvalidSpec) {
  NetworkSpec s = tiny_spec();
  s.time_constants.pop_back();
  EXPECT_THROW(gradient_check(s, 1, 1e-5), std::domain_error);
}

Dataset toy_data(std::size_t n, std::size_t len, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 6.28);
  std::vector<Trajectory2D> ts;
  for (std::size_t i = 0; i < n; ++i) {
    const double ph = phase(rng);
    Trajectory2D t;
    for (std::size_t k = 0; k < len; ++k)
      t.push_back({0.5 + 0.3 * std::sin(0.6 * k + ph), 0.5 + 0.3 * std::cos(0.6 * k + ph)});
    ts.push_back(t);
  }
  return make_dataset(GridCodec{3, 3, 20.0}, seed, ts);
}

NetworkSpec toy_spec() {
  NetworkSpec s;
  s.layer_sizes = {8, 4};
  s.time_constants = {2, 6};
  s.input_dim = s.output_dim = 9;
  return s;
}

GradientSet constant_gradient(const Parameters& like, double g) {
  GradientSet out{static_cast<const WeightBlocks&>(like)};
  for (auto& [n, v] : block_views(out)) v.setConstant(g);
  for (auto& z : out.init_latents) z.setConstant(g);
  return out;
}

TEST(Adam, FirstStepMovesEveryCoordinateByAlphaUphill) {
  Parameters p = init_parameters(tiny_spec(), 1, 1);
  Parameters before = p;
  AdamState st = AdamState::for_parameters(p);
  AdamConfig cfg;
  cfg.alpha = 0.01;
  adam_step(p, constant_gradient(p, -3.0), st, cfg);
  auto a = block_views(p), b = block_views(before);
  for (std::size_t k = 0; k < a.size(); ++k)
    for (long i = 0; i < a[k].second.size(); ++i)
      EXPECT_NEAR(a[k].second[i] - b[k].second[i], -0.01, 1e-8) << a[k].first;
  EXPECT_EQ(st.timestep, 1);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Parameters p = init_parameters(tiny_spec(), 2, 3);
  Parameters before = p;
  AdamState st = AdamState::for_parameters(p);
  adam_step(p, constant_gradient(p, 0.0), st, AdamConfig{});
  auto a = block_views(p), b = block_views(before);
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a[k].second, b[k].second);
}

TEST(Adam, ClimbsAConcaveBowlToItsPeak) {
  Parameters p = init_parameters(tiny_spec(), 1, 4);
  AdamState st = AdamState::for_parameters(p);
  AdamConfig cfg;
  cfg.alpha = 0.05;
  for (int it = 0; it < 2000; ++it) {
    GradientSet g{static_cast<const WeightBlocks&>(p)};  // gradient of -(x - 1.5)^2 / 2 is (1.5 - x)
    for (auto& [n, v] : block_views(g)) v = (1.5 - v.array()).matrix();
    adam_step(p, g, st, cfg);
  }
  for (auto& [n, v] : block_views(p)) EXPECT_LT((v.array() - 1.5).abs().maxCoeff(), 1e-2) << n;
}

TEST(Adam, NonFiniteGradientNamesBlock) {
  Parameters p = init_parameters(tiny_spec(), 1, 1);
  AdamState st = AdamState::for_parameters(p);
  GradientSet g = constant_gradient(p, 0.0);
  g.b_mu[0] = std::nan("");
  EXPECT_THROW(adam_step(p, g, st, AdamConfig{}), NonFiniteGradient);
}

TEST(Train, RejectsBadConfiguration) {
  Dataset d = toy_data(2, 10, 1);
  TrainingConfig cfg;
  cfg.epochs = 0;
  EXPECT_THROW(train(d, toy_spec(), cfg), std::domain_error);
  cfg.epochs = 1;
  cfg.meta_prior_w = 1.5;
  EXPECT_THROW(train(d, toy_spec(), cfg), std::domain_error);
  cfg.meta_prior_w = 0.0;
  EXPECT_THROW(train(d, tiny_spec(), cfg), std::domain_error);
}

TEST(Train, ResultIsIndependentOfThreadCount) {
  Dataset d = toy_data(5, 20, 2);
  TrainingConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 2;
  cfg.meta_prior_w = 0.1;
  cfg.threads = 1;
  auto one = train(d, toy_spec(), cfg);
  cfg.threads = 4;
  auto four = train(d, toy_spec(), cfg);
  auto a = block_views(one.state.params), b = block_views(four.state.params);
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a[k].second, b[k].second) << a[k].first;
  for (std::size_t e = 0; e < one.log.size(); ++e) EXPECT_EQ(one.log[e].l, four.log[e].l);
}

TEST(Train, LowerBoundRisesAndSigmaShrinksTenfoldAtZeroW) {
  Dataset d = toy_data(3, 30, 3);
  TrainingConfig cfg;
  cfg.epochs = 3000;
  cfg.batch_size = 3;
  cfg.adam.alpha = 0.01;
  auto r = train(d, toy_spec(), cfg);
  EXPECT_GT(r.log.back().l, r.log.front().l);
  EXPECT_LT(r.log.back().mean_sigma, 0.1 * r.log.front().mean_sigma);
  EXPECT_EQ(r.state.epochs_done, 3000);
}

TEST(Train, SigmaGrowsWithMetaPrior) {
  Dataset d = toy_data(3, 30, 3);
  TrainingConfig cfg;
  cfg.epochs = 300;
  cfg.batch_size = 3;
  cfg.adam.alpha = 0.01;
  std::vector<double> sig;
  for (double w : {0.0, 0.1, 0.5}) {
    cfg.meta_prior_w = w;
    sig.push_back(train(d, toy_spec(), cfg).log.back().mean_sigma);
  }
  EXPECT_LT(sig[0], sig[1]);
  EXPECT_LT(sig[1], sig[2]);
}

TEST(Train, GradientClipBoundsUpdateNorm) {
  Dataset d = toy_data(2, 15, 4);
  TrainingConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 2;
  cfg.gradient_clip = 1e-6;
  auto r = train(d, toy_spec(), cfg);
  EXPECT_EQ(r.log.back().clipped_batches, 1);
  cfg.gradient_clip = -1.0;
  EXPECT_THROW(train(d, toy_spec(), cfg), std::domain_error);
}

}  // namespace
}  // namespace vbp
