#include <gtest/gtest.h>

#include <sstream>

#include "midx/config.hpp"
#include "midx/trainer.hpp"
#include "support/planted.hpp"

using namespace midx;

namespace {

TrainConfig small_config(TrainSampler s) {
  TrainConfig c;
  c.latent_dim = 8;
  c.codebook_size = 4;
  c.sample_count = 20;
  c.sampler = s;
  c.learning_rate = 0.01;
  c.batch_size = 32;
  c.epochs = 5;
  c.input_dropout_prob = 0.5;
  c.eval_every = 0;
  c.seed = 3;
  return c;
}

}  // namespace

TEST(Metrics, HandComputedNdcg) {
  // Holdout items at ranks 1 and 3, k = 5.
  const std::vector<ItemId> ranked{10, 11, 12, 13, 14};
  const std::vector<ItemId> relevant{10, 12};
  EXPECT_NEAR(ndcg_at_k(ranked, relevant, 5), 1.5 / (1.0 + 1.0 / std::log2(3.0)), 1e-12);
  EXPECT_NEAR(ndcg_at_k(ranked, relevant, 5), 0.9197, 1e-4);
  EXPECT_EQ(recall_at_k(ranked, relevant, 5), 1.0);
}

TEST(Metrics, TopAndMissedSingleItem) {
  const std::vector<ItemId> ranked{4, 1, 2};
  EXPECT_EQ(ndcg_at_k(ranked, std::vector<ItemId>{4}, 10), 1.0);
  EXPECT_EQ(recall_at_k(ranked, std::vector<ItemId>{4}, 10), 1.0);
  EXPECT_EQ(ndcg_at_k(ranked, std::vector<ItemId>{9}, 10), 0.0);
  EXPECT_EQ(recall_at_k(ranked, std::vector<ItemId>{9}, 10), 0.0);
  EXPECT_EQ(ndcg_at_k(ranked, std::vector<ItemId>{2}, 2), 0.0);
}

TEST(Metrics, RecallNonDecreasingInK) {
  Rng rng(1);
  std::vector<double> scores(50);
  std::normal_distribution<double> n;
  for (double& s : scores) s = n(rng);
  const std::vector<ItemId> relevant{3, 8, 17, 22, 40, 41};
  const auto ranked = top_k(scores, std::vector<ItemId>{}, 50);
  double prev = 0.0;
  for (std::size_t k = 1; k <= 50; ++k) {
    const double r = recall_at_k(ranked, relevant, k);
    EXPECT_GE(r, prev);
    prev = r;
  }
  EXPECT_EQ(prev, 1.0);
}

TEST(Metrics, TopKMasksAndBreaksTiesById) {
  const std::vector<double> scores{1.0, 3.0, 3.0, 2.0, 5.0};
  EXPECT_EQ(top_k(scores, std::vector<ItemId>{4}, 3), (std::vector<ItemId>{1, 2, 3}));
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  const auto ds = split_holdout(midx::testing::planted_blocks(1, 40, 20, 2, 6), 0.8, 1);
  auto cfg = small_config(TrainSampler::uni);
  cfg.learning_rate = 0.0;
  cfg.epochs = 2;
  const auto res = train(ds, cfg);
  Rng rng(cfg.seed);
  EXPECT_EQ(res.params, ModelParams::random(ds.num_items, cfg.latent_dim, rng, cfg.init_std));
}

TEST(Train, DeterministicGivenSeed) {
  const auto ds = split_holdout(midx::testing::planted_blocks(2, 40, 20, 2, 6), 0.8, 1);
  for (TrainSampler s : {TrainSampler::full, TrainSampler::uni, TrainSampler::pop,
                         TrainSampler::exact, TrainSampler::uniform, TrainSampler::popularity}) {
    const auto cfg = small_config(s);
    const auto a = train(ds, cfg);
    const auto b = train(ds, cfg);
    EXPECT_EQ(a.params, b.params) << to_string(s);
    ASSERT_EQ(a.trace.size(), cfg.epochs);
    EXPECT_EQ(a.trace.back().loss, b.trace.back().loss);
  }
}

TEST(Train, FullSoftmaxRecoversPlantedBlocks) {
  const auto ds = split_holdout(midx::testing::planted_blocks(7), 0.8, 7);
  auto cfg = small_config(TrainSampler::full);
  cfg.epochs = 60;
  cfg.latent_dim = 16;
  cfg.learning_rate = 0.02;
  const auto res = train(ds, cfg);
  EXPECT_GE(res.final_eval.recall, 0.9);
  EXPECT_LT(res.trace.back().loss, res.trace.front().loss);
}

TEST(Train, MidxSamplerImprovesRanking) {
  // The sampled loss is not comparable across epochs (the proposal moves
  // with the model), so progress is judged on the ranking metric.
  const auto ds = split_holdout(midx::testing::planted_blocks(8), 0.8, 8);
  auto cfg = small_config(TrainSampler::uni);
  cfg.epochs = 20;
  const auto res = train(ds, cfg);
  auto frozen = cfg;
  frozen.learning_rate = 0.0;
  frozen.epochs = 1;
  const auto base = train(ds, frozen);
  EXPECT_GT(res.final_eval.ndcg, base.final_eval.ndcg + 0.2)
      << res.final_eval.ndcg << " vs " << base.final_eval.ndcg;
}

TEST(Train, RejectsInvalidConfigAndUnsplitData) {
  const auto raw = midx::testing::planted_blocks(1, 40, 20, 2, 6);
  EXPECT_THROW(train(raw, small_config(TrainSampler::uni)), Error);
  const auto ds = split_holdout(raw, 0.8, 1);
  auto odd = small_config(TrainSampler::uni);
  odd.latent_dim = 7;
  EXPECT_THROW(train(ds, odd), UsageError);
  auto none = small_config(TrainSampler::uniform);
  none.sample_count = 0;
  EXPECT_THROW(train(ds, none), UsageError);
}

TEST(Config, ParsesKeysAndRejectsUnknownOnes) {
  std::istringstream in(
      "# comment\n"
      "dataset = data/ratings.dat\n"
      "sampler_kind = pop   # trailing comment\n"
      "sample_count = 50\n"
      "learning_rate = 0.005\n"
      "pop_function = pow075\n");
  const auto c = pipeline_config_from(parse_key_values(in));
  EXPECT_EQ(c.dataset, "data/ratings.dat");
  EXPECT_EQ(c.train.sampler, TrainSampler::pop);
  EXPECT_EQ(c.train.sample_count, 50u);
  EXPECT_EQ(c.train.learning_rate, 0.005);
  EXPECT_EQ(c.train.pop_function, PopFunction::pow075);

  std::istringstream unknown("dataset = x\nlearning_rat = 1\n");
  EXPECT_THROW(pipeline_config_from(parse_key_values(unknown)), UsageError);
  std::istringstream missing("epochs = 3\n");
  try {
    pipeline_config_from(parse_key_values(missing));
    FAIL();
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("dataset"), std::string::npos);
  }
  std::istringstream bad_number("dataset = x\nepochs = three\n");
  EXPECT_THROW(pipeline_config_from(parse_key_values(bad_number)), UsageError);
  std::istringstream no_equals("dataset x\n");
  EXPECT_THROW(parse_key_values(no_equals), UsageError);
}
