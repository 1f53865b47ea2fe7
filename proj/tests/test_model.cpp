#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "survconf/model.hpp"
#include "survconf/synth.hpp"

using namespace survconf;

namespace {

struct Fitted {
  SurvivalDataset ds;
  FoldSplit split;
  SurvivalModel model;
};

Fitted fit(PredictorType type, std::uint64_t seed = 1) {
  SynthConfig cfg;
  cfg.n = 800;
  cfg.seed = seed;
  Fitted f;
  f.ds = generate(cfg);
  f.split = split_dataset(f.ds, {0.6, 0.15, 0.15, 0.1}, seed);
  ModelOptions opts;
  opts.predictor = type;
  opts.mlp.epochs = 5;
  f.model = fit_model(f.ds, f.split, opts);
  return f;
}

std::vector<std::vector<double>> queries(const Fitted& f) {
  std::vector<std::vector<double>> xs;
  for (auto i : f.split.test) xs.push_back(f.model.to_model_space(f.ds[i].covariates));
  return xs;
}

}  // namespace

TEST(FitModel, CollectsCalibrationFolds) {
  const auto f = fit(PredictorType::Linear);
  EXPECT_EQ(f.model.train_time_g.size(), f.split.train.size());
  EXPECT_EQ(f.model.cal1_x.size(), uncensored(f.ds, f.split.cal1).size());
  EXPECT_EQ(f.model.cal2_x.size(), uncensored(f.ds, f.split.cal2).size());
  ASSERT_TRUE(f.model.normalization);
  EXPECT_EQ(f.model.grid.times.front(), 0.0);
  EXPECT_EQ(f.model.grid.times.back(), f.model.max_duration);

  double mean = 0.0;
  for (const auto& x : f.model.cal1_x) mean += f.model.weight_model(x);
  EXPECT_NEAR(mean / static_cast<double>(f.model.cal1_x.size()), 1.0, 1e-12);
}

TEST(ModelJson, RoundTripReproducesBands) {
  for (auto type : {PredictorType::Linear, PredictorType::Mlp}) {
    const auto f = fit(type);
    const auto path = (std::filesystem::temp_directory_path() / "survconf_model_roundtrip.json").string();
    save_model(path, f.model);
    const auto back = load_model(path);
    std::remove(path.c_str());

    BandEngine a(f.model), b(back);
    const auto xs = queries(f);
    for (auto m : {Method::Naive, Method::Wcci, Method::Tsci, Method::TsciUnweighted}) {
      const auto ba = a.bands(m, 0.1, xs), bb = b.bands(m, 0.1, xs);
      for (std::size_t i = 0; i < xs.size(); ++i) {
        EXPECT_EQ(ba[i].lower, bb[i].lower);
        EXPECT_EQ(ba[i].upper, bb[i].upper);
        EXPECT_EQ(ba[i].truncated, bb[i].truncated);
      }
    }
    EXPECT_EQ(to_json(back).dump(), to_json(f.model).dump());
  }
}

TEST(ModelJson, RejectsForeignDocuments) {
  const auto f = fit(PredictorType::Linear);
  auto j = to_json(f.model);
  j["version"] = 99;
  EXPECT_THROW(model_from_json(j), std::invalid_argument);
  j = to_json(f.model);
  j["format"] = "something-else";
  EXPECT_THROW(model_from_json(j), std::invalid_argument);
}

TEST(BandEngine, UnweightedVariantUsesUnitWeights) {
  const auto f = fit(PredictorType::Linear);
  BandEngine e(f.model);
  for (double w : e.wcci(true).calibration().raw_weights) EXPECT_EQ(w, 1.0);
  bool varied = false;
  for (double w : e.wcci(false).calibration().raw_weights) varied |= std::abs(w - 1.0) > 1e-6;
  EXPECT_TRUE(varied);
  // same scores either way; only the weights differ
  EXPECT_EQ(e.wcci(true).calibration().scores, e.wcci(false).calibration().scores);
}

TEST(BandEngine, WeightOverrideIsUsed) {
  const auto f = fit(PredictorType::Linear);
  BandEngine plain(f.model, {}, [](std::span<const double>) { return 1.0; });
  BandEngine unit(f.model);
  const auto xs = queries(f);
  const auto a = plain.bands(Method::Tsci, 0.1, xs), b = unit.bands(Method::TsciUnweighted, 0.1, xs);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    EXPECT_EQ(a[i].lower, b[i].lower);
    EXPECT_EQ(a[i].upper, b[i].upper);
  }
}

TEST(BandEngine, SharedEtaUsesOneEtaPerBatch) {
  const auto f = fit(PredictorType::Linear);
  BandEngine e(f.model, {FirstStage::Split, true});
  const auto xs = queries(f);
  const auto bands = e.bands(Method::Tsci, 0.1, xs);
  ASSERT_EQ(bands.size(), xs.size());
  for (const auto& b : bands) {
    EXPECT_LE(b.lower, b.upper);
    EXPECT_GE(b.lower, 0.0);
  }
}

TEST(BandEngine, RejectsBadAlpha) {
  const auto f = fit(PredictorType::Linear);
  BandEngine e(f.model);
  EXPECT_THROW(e.bands(Method::Wcci, 1.0, queries(f)), std::invalid_argument);
}
