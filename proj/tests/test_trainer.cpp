#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>

#include "onering/evaluation.hpp"

namespace onering {
namespace {

struct Toy {
  ScenarioConfig scenario = toy_scenario(0);
  BlobScenario data = generate_blobs(scenario);
  LabelSpaceSplit split = scenario.split();
  ModelSpec spec = default_model_spec(2, 3);
};

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.size() == b.size() && std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)) == 0;
}

TEST(TrainSource, FitsToyBlobs) {
  Toy t;
  OneRingModel m(t.spec, 0);
  const auto log = train_source(m, t.data.source, TrainConfig{});
  ASSERT_EQ(log.size(), 100u);
  EXPECT_GE(*log.back().accuracy, 0.99);
  EXPECT_GE(accuracy(m, t.data.source), 0.99);
  EXPECT_LT(log.back().loss, log.front().loss);
}

TEST(TrainSource, ZeroLambdaMatchesPlainCrossEntropyTrainer) {
  Toy t;
  TrainConfig cfg;
  cfg.epochs_source = 5;
  cfg.lambda_second_ce = 0.0;
  OneRingModel a(t.spec, 3);
  const auto log = train_source(a, t.data.source, cfg);

  // reference loop: plain CE with the same batches, normalization and optimizer
  OneRingModel b(t.spec, 3);
  b.fit_input_normalization(t.data.source.samples);
  SgdMomentum opt(cfg.lr, cfg.momentum);
  const auto params = b.params().all();
  for (std::size_t epoch = 0; epoch < cfg.epochs_source; ++epoch) {
    double total = 0.0;
    for (const auto& idx : batches(t.data.source, cfg.bs, cfg.seed, epoch)) {
      std::vector<std::size_t> y;
      for (std::size_t i : idx) y.push_back(static_cast<std::size_t>(t.data.source.labels[i]));
      Graph g;
      Var loss = cross_entropy(forward(g, b, t.data.source.samples.gather_rows(idx)).logits, y);
      g.backward(loss);
      opt.step(params);
      total += loss.item() * static_cast<double>(idx.size());
    }
    EXPECT_EQ(log[epoch].loss, total / static_cast<double>(t.data.source.size())) << "epoch " << epoch;
  }
  EXPECT_TRUE(a == b);
}

TEST(TrainSource, RunnerUpIsUnknownAfterTraining) {
  Toy t;
  OneRingModel m(t.spec, 0);
  train_source(m, t.data.source, TrainConfig{});
  const auto second = runner_up(infer(m, t.data.source.samples).logits);
  const auto hits = std::count(second.begin(), second.end(), m.unknown_index());
  EXPECT_GE(static_cast<double>(hits) / static_cast<double>(second.size()), 0.95);
}

TEST(TrainSource, WithoutSecondTermRunnerUpPropertyFails) {
  Toy t;
  TrainConfig cfg;
  cfg.two_phase = true;
  cfg.phase1_epochs = cfg.epochs_source;
  OneRingModel m(t.spec, 0);
  train_source(m, t.data.source, cfg);
  const auto second = runner_up(infer(m, t.data.source.samples).logits);
  const auto hits = std::count(second.begin(), second.end(), m.unknown_index());
  EXPECT_LT(static_cast<double>(hits) / static_cast<double>(second.size()), 0.95);
}

TEST(TrainSource, RejectsLabelsOutsideSourceClasses) {
  Toy t;
  OneRingModel m(t.spec, 0);
  Dataset bad = t.data.source;
  bad.labels[0] = 3;
  EXPECT_THROW(train_source(m, bad, TrainConfig{}), Error);
  TrainConfig neg;
  neg.lr = -1.0;
  EXPECT_THROW(train_source(m, t.data.source, neg), Error);
}

struct Adapted {
  ScenarioConfig scenario;
  BlobScenario data = generate_blobs(scenario);
  OneRingModel model;
  Adapted() {
    TrainConfig cfg;
    cfg.epochs_source = 30;
    model = OneRingModel(default_model_spec(scenario.dim, scenario.split().n_known()), 0);
    train_source(model, data.source, cfg);
  }
};

TEST(AdaptTarget, ZeroEpochsIsNoOp) {
  Adapted a;
  OneRingModel m = a.model;
  TrainConfig cfg;
  cfg.epochs_adapt = 0;
  for (Variant v : {Variant::OneRing, Variant::OneRingPlus}) {
    cfg.variant = v;
    EXPECT_TRUE(adapt_target(m, a.data.target.samples, cfg).empty());
    EXPECT_TRUE(m == a.model);
  }
}

TEST(AdaptTarget, HeadStaysFrozen) {
  Adapted a;
  for (Variant v : {Variant::OneRing, Variant::OneRingPlus}) {
    for (RatioMode mode : {RatioMode::MiniBatch, RatioMode::WholeDataset}) {
      OneRingModel m = a.model;
      TrainConfig cfg;
      cfg.epochs_adapt = 3;
      cfg.variant = v;
      cfg.ratio_mode = mode;
      adapt_target(m, a.data.target.samples, cfg);
      EXPECT_TRUE(same_bits(m.head().weight, a.model.head().weight));
      EXPECT_TRUE(same_bits(m.head().bias, a.model.head().bias));
      EXPECT_FALSE(same_bits(m.extractor_layers()[0].weight, a.model.extractor_layers()[0].weight));
    }
  }
}

TEST(AdaptTarget, LogsPredictedCountsAndHookMetrics) {
  Adapted a;
  OneRingModel m = a.model;
  TrainConfig cfg;
  cfg.epochs_adapt = 2;
  int calls = 0;
  const auto split = a.scenario.split();
  const auto log = adapt_target(m, a.data.target.samples, cfg, [&](const OneRingModel& model) {
    ++calls;
    return std::optional<MetricsReport>(evaluate(model, a.data.target, split));
  });
  ASSERT_EQ(log.size(), 2u);
  EXPECT_EQ(calls, 2);
  EXPECT_EQ(*log[0].n_known_hat + *log[0].n_unknown_hat, a.data.target.size());
  EXPECT_TRUE(log[1].metrics.has_value());
  const auto j = to_json(log[1]);
  EXPECT_EQ(j["phase"], "adapt");
  EXPECT_TRUE(j.contains("h"));
}

TEST(AdaptTarget, RequiresOpenHead) {
  Adapted a;
  ModelSpec spec = a.model.spec();
  spec.open_head = false;
  OneRingModel plain(spec, 0);
  EXPECT_THROW(adapt_target(plain, a.data.target.samples, TrainConfig{}), Error);
}

TEST(AdaptTarget, Deterministic) {
  Adapted a;
  OneRingModel x = a.model, y = a.model;
  TrainConfig cfg;
  cfg.epochs_adapt = 3;
  cfg.variant = Variant::OneRingPlus;
  adapt_target(x, a.data.target.samples, cfg);
  adapt_target(y, a.data.target.samples, cfg);
  EXPECT_TRUE(x == y);
}

TEST(TrainConfig, DefaultsAndValidation) {
  TrainConfig cfg;
  EXPECT_EQ(cfg.lambda_second_ce, 1.0);
  EXPECT_EQ(cfg.aad.k, 3u);
  EXPECT_EQ(cfg.aad.beta, 1.0);
  EXPECT_EQ(cfg.ratio_mode, RatioMode::MiniBatch);
  EXPECT_DOUBLE_EQ(cfg.effective_adapt_lr(), 0.1 * cfg.lr);
  EXPECT_TRUE(cfg.problems().empty());
  cfg.lr = 0.0;
  cfg.bs = 0;
  cfg.momentum = 1.0;
  EXPECT_EQ(cfg.problems().size(), 3u);
}

}  // namespace
}  // namespace onering
