#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "survconf/predictor.hpp"
#include "survconf/synth.hpp"

using namespace survconf;

namespace {

std::vector<double> random_g(std::size_t n, std::uint64_t seed, double sd = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, sd);
  std::vector<double> g(n);
  for (auto& v : g) v = normal(rng);
  return g;
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST(PartialLogLik, UniformRisk) {
  const auto ds = oracle::make_dataset({}, {1.0, 2.0, 3.0}, {1, 1, 1});
  EXPECT_NEAR(partial_log_lik(std::vector<double>(3, 0.0), ds, ds.all_indices()), -std::log(6.0), 1e-14);
}

TEST(PartialLogLik, LoneEventIsZero) {
  const auto ds = oracle::make_dataset({}, {1.0}, {1});
  EXPECT_DOUBLE_EQ(partial_log_lik(std::vector<double>{2.5}, ds, ds.all_indices()), 0.0);
}

TEST(PartialLogLik, MatchesDoubleLoop) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto ds = oracle::random_dataset(6, 1, seed);
    const auto g = random_g(6, seed + 100);
    const auto all = ds.all_indices();
    EXPECT_NEAR(partial_log_lik(g, ds, all), oracle::partial_log_lik(g, ds, all), 1e-10);
  }
}

TEST(PartialLogLik, TiesUseBreslowDenominator) {
  const auto ds = oracle::make_dataset({}, {1.0, 1.0, 2.0, 2.0, 3.0}, {1, 1, 0, 1, 1});
  const auto g = random_g(5, 9);
  EXPECT_NEAR(partial_log_lik(g, ds, ds.all_indices()), oracle::partial_log_lik(g, ds, ds.all_indices()), 1e-12);
}

TEST(PartialLogLik, ShiftInvariant) {
  const auto ds = oracle::random_dataset(30, 1, 4);
  auto g = random_g(30, 5);
  const double base = partial_log_lik(g, ds, ds.all_indices());
  for (double c : {-50.0, -1.0, 3.0, 700.0}) {
    auto h = g;
    for (auto& v : h) v += c;
    EXPECT_NEAR(partial_log_lik(h, ds, ds.all_indices()), base, 1e-10) << c;
  }
}

TEST(PartialLogLik, SubPoolRestrictsRiskSets) {
  const auto ds = oracle::random_dataset(12, 1, 8);
  const auto g = random_g(12, 2);
  const IndexSet pool{0, 2, 3, 7, 9, 11};
  EXPECT_NEAR(partial_log_lik(g, ds, pool), oracle::partial_log_lik(g, ds, pool), 1e-12);
}

TEST(FitLinear, IdenticalCovariatesGiveZero) {
  const auto ds = oracle::make_dataset({{1.0}, {1.0}, {1.0}, {1.0}}, {1, 2, 3, 4}, {1, 0, 1, 1});
  const auto fit = fit_linear(ds, ds.all_indices());
  EXPECT_TRUE(fit.converged);
  EXPECT_NEAR(fit.predictor.beta(0), 0.0, 1e-12);
}

TEST(FitLinear, MatchesGoldenSection) {
  const auto ds = oracle::make_dataset({{0.3}, {-1.2}, {0.8}, {2.0}, {-0.4}}, {2.0, 0.5, 1.5, 1.0, 3.0},
                                       {1, 1, 0, 1, 1});
  const double ridge = 1e-4;
  LinearFitOptions opts;
  opts.ridge = ridge;
  const auto fit = fit_linear(ds, ds.all_indices(), opts);
  ASSERT_TRUE(fit.converged);
  const auto objective = [&](double b) {
    std::vector<double> g(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) g[i] = b * ds[i].covariates[0];
    return oracle::partial_log_lik(g, ds, ds.all_indices()) - 0.5 * ridge * b * b;
  };
  EXPECT_NEAR(fit.predictor.beta(0), oracle::golden_section_max(objective, -20.0, 20.0), 1e-4);
}

TEST(FitLinear, ScalingCovariatesHalvesBeta) {
  auto ds = oracle::random_dataset(80, 2, 21);
  std::vector<std::vector<double>> x2;
  std::vector<double> t;
  std::vector<int> e;
  for (const auto& s : ds.subjects()) {
    x2.push_back({2.0 * s.covariates[0], 2.0 * s.covariates[1]});
    t.push_back(s.observed_time);
    e.push_back(s.event);
  }
  const auto doubled = oracle::make_dataset(x2, t, e);
  LinearFitOptions opts;
  opts.ridge = 0.0;
  const auto a = fit_linear(ds, ds.all_indices(), opts);
  const auto b = fit_linear(doubled, doubled.all_indices(), opts);
  ASSERT_TRUE(a.converged && b.converged);
  for (int j = 0; j < 2; ++j) EXPECT_NEAR(b.predictor.beta(j), 0.5 * a.predictor.beta(j), 1e-8);
  const Predictor pa(a.predictor), pb(b.predictor);
  const auto ga = pa.evaluate(ds), gb = pb.evaluate(doubled);
  for (std::size_t i = 0; i < ga.size(); ++i) EXPECT_NEAR(ga[i], gb[i], 1e-8);
}

TEST(FitLinear, ObjectiveNeverDecreases) {
  SynthConfig cfg;
  cfg.n = 400;
  cfg.seed = 3;
  const auto ds = generate(cfg);
  const auto fit = fit_linear(ds, ds.all_indices());
  ASSERT_GE(fit.objective_trace.size(), 2u);
  for (std::size_t i = 1; i < fit.objective_trace.size(); ++i)
    EXPECT_GE(fit.objective_trace[i], fit.objective_trace[i - 1]);
  EXPECT_TRUE(fit.converged);
  EXPECT_NEAR(fit.predictor.beta(0), 0.8, 0.25);
  EXPECT_NEAR(fit.predictor.beta(1), -0.6, 0.25);
}

TEST(FitLinear, SeparationWithoutRidgeIsReported) {
  // the higher-risk subject always fails first: the MLE diverges
  const auto ds = oracle::make_dataset({{1.0}, {0.0}, {2.0}, {-1.0}}, {2.0, 3.0, 1.0, 4.0}, {1, 1, 1, 1});
  LinearFitOptions opts;
  opts.ridge = 0.0;
  opts.max_iter = 500;
  try {
    const auto fit = fit_linear(ds, ds.all_indices(), opts);
    EXPECT_FALSE(fit.converged && std::abs(fit.predictor.beta(0)) < 5.0);
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("ridge"), std::string::npos);
  }
  opts.ridge = 1e-2;
  EXPECT_TRUE(fit_linear(ds, ds.all_indices(), opts).converged);
}

TEST(Mlp, GradientMatchesFiniteDifferences) {
  const auto ds = oracle::random_dataset(10, 3, 17, 0.6);
  const auto batch = ds.all_indices();
  auto net = init_mlp(3, {5, 4}, 99);
  // nonzero biases keep ReLU kinks away from the evaluation point
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.1, 0.4);
  for (auto& l : net.layers)
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = u(rng);

  std::vector<Eigen::MatrixXd> masks{Eigen::MatrixXd::Constant(10, 5, 1.0), Eigen::MatrixXd::Constant(10, 4, 1.0)};
  masks[0](3, 1) = 0.0;
  masks[1](5, 2) = 2.0;
  const double penalty = 1e-3;
  MlpGradient grad;
  mlp_batch_loss(net, ds, batch, penalty, &grad, &masks);

  const double h = 1e-5;
  double worst = 0.0;
  auto check = [&](double& param, double analytic) {
    const double keep = param;
    param = keep + h;
    const double up = mlp_batch_loss(net, ds, batch, penalty, nullptr, &masks);
    param = keep - h;
    const double down = mlp_batch_loss(net, ds, batch, penalty, nullptr, &masks);
    param = keep;
    const double numeric = (up - down) / (2.0 * h);
    const double err = std::abs(numeric - analytic) / std::max(1e-6, std::max(std::abs(numeric), std::abs(analytic)));
    worst = std::max(worst, err);
  };
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    auto& layer = net.layers[l];
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) check(layer.weight(r, c), grad[l].weight(r, c));
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) check(layer.bias(r), grad[l].bias(r));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Mlp, NoHiddenLayerTracksLinearCox) {
  SynthConfig cfg;
  cfg.n = 300;
  cfg.seed = 8;
  const auto ds = generate(cfg);
  MlpOptions opts;
  opts.hidden_sizes = {};
  opts.dropout = 0.0;
  opts.epochs = 300;
  opts.learning_rate = 1e-2;
  opts.weight_penalty = 0.0;
  opts.batch_size = 300;
  const auto mlp = fit_mlp(ds, ds.all_indices(), opts);
  const auto lin = fit_linear(ds, ds.all_indices());
  const auto gm = Predictor(mlp.predictor).evaluate(ds);
  const auto gl = Predictor(lin.predictor).evaluate(ds);
  EXPECT_GT(correlation(gm, gl), 0.99);
}

TEST(Mlp, SeedDeterminism) {
  const auto ds = oracle::random_dataset(120, 3, 2);
  MlpOptions opts;
  opts.epochs = 5;
  opts.batch_size = 32;
  opts.seed = 12;
  const auto a = fit_mlp(ds, ds.all_indices(), opts);
  const auto b = fit_mlp(ds, ds.all_indices(), opts);
  ASSERT_EQ(a.predictor.layers.size(), b.predictor.layers.size());
  for (std::size_t l = 0; l < a.predictor.layers.size(); ++l) {
    EXPECT_TRUE(a.predictor.layers[l].weight == b.predictor.layers[l].weight);
    EXPECT_TRUE(a.predictor.layers[l].bias == b.predictor.layers[l].bias);
  }
}

TEST(Mlp, LossFallsOverFirstEpochs) {
  SynthConfig cfg;
  cfg.n = 1000;
  cfg.seed = 5;
  const auto ds = generate(cfg);
  MlpOptions opts;
  opts.seed = 1;
  opts.epochs = 5;
  opts.learning_rate = 3e-3;
  const auto fit = fit_mlp(ds, ds.all_indices(), opts);
  ASSERT_EQ(fit.epoch_losses.size(), 5u);
  for (std::size_t i = 1; i < 5; ++i) EXPECT_LT(fit.epoch_losses[i], fit.epoch_losses[i - 1]);
}

TEST(Mlp, EventlessBatchesAreSkipped) {
  // a single event among many censored subjects: most batches have none
  std::vector<double> t(40);
  std::vector<int> e(40, 0);
  std::iota(t.begin(), t.end(), 1.0);
  e[3] = 1;
  e[30] = 1;
  const auto ds = oracle::make_dataset({}, t, e);
  MlpOptions opts;
  opts.batch_size = 4;
  opts.epochs = 2;
  const auto fit = fit_mlp(ds, ds.all_indices(), opts);
  EXPECT_GT(fit.skipped_batches, 0);

  const auto one = oracle::make_dataset({}, {1.0, 2.0, 3.0}, {1, 0, 0});
  EXPECT_THROW(fit_mlp(one, one.all_indices(), opts), std::invalid_argument);
}

TEST(Mlp, FullPreset) {
  const auto p = MlpOptions::full();
  EXPECT_EQ(p.hidden_sizes, (std::vector<int>{32, 32, 32}));
  EXPECT_DOUBLE_EQ(p.dropout, 0.1);
  EXPECT_EQ(p.batch_size, 128);
  EXPECT_EQ(p.epochs, 512);
}

TEST(Breslow, NelsonAalenWithZeroRisk) {
  const auto ds = oracle::make_dataset({}, {1.0, 2.0, 3.0}, {1, 1, 0});
  const auto h = breslow(ds, ds.all_indices(), std::vector<double>(3, 0.0));
  EXPECT_NEAR(h.at(1.0), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(h.at(2.0), 5.0 / 6.0, 1e-15);
  EXPECT_DOUBLE_EQ(h.at(0.5), 0.0);
  EXPECT_NEAR(h.at(10.0), 5.0 / 6.0, 1e-15);
}

TEST(Breslow, NoEventsIsZero) {
  const auto ds = oracle::make_dataset({}, {1.0, 2.0}, {0, 0});
  const auto h = breslow(ds, ds.all_indices(), std::vector<double>(2, 0.3));
  EXPECT_DOUBLE_EQ(h.at(5.0), 0.0);
  EXPECT_TRUE(h.event_times.empty());
}

TEST(Breslow, MatchesDoubleLoop) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto ds = oracle::random_dataset(8, 1, seed + 40);
    const auto g = random_g(8, seed);
    const auto h = breslow(ds, ds.all_indices(), g);
    for (const auto& s : ds.subjects())
      for (double t : {s.observed_time, s.observed_time * 0.999, s.observed_time * 1.001})
        EXPECT_NEAR(h.at(t), oracle::breslow(g, ds, ds.all_indices(), t), 1e-12);
    for (std::size_t i = 1; i < h.cumulative.size(); ++i) EXPECT_GE(h.cumulative[i], h.cumulative[i - 1]);
  }
}

TEST(NaiveBand, FirstTimeBelowAlpha) {
  BaselineHazard h{{1.0}, {3.0}};
  const auto b = naive_band(0.0, h, 0.05, 10.0);
  EXPECT_DOUBLE_EQ(b.lower, 0.0);
  EXPECT_DOUBLE_EQ(b.upper, 1.0);
  EXPECT_FALSE(b.truncated);
}

TEST(NaiveBand, FlatHazardTruncates) {
  const auto b = naive_band(0.0, BaselineHazard{}, 0.1, 7.0);
  EXPECT_TRUE(b.truncated);
  EXPECT_DOUBLE_EQ(b.upper, 7.0);
  EXPECT_DOUBLE_EQ(b.lower, 0.0);
}

TEST(NaiveBand, HigherRiskNeverLengthens) {
  BaselineHazard h{{0.5, 1.0, 2.0, 4.0}, {0.1, 0.4, 1.0, 2.5}};
  double prev = kInf;
  for (double g = -3.0; g <= 3.0; g += 0.25) {
    const auto b = naive_band(g, h, 0.1, 5.0);
    EXPECT_LE(b.upper, prev);
    prev = b.upper;
  }
}
