#include "dvae/config.hpp"

#include <gtest/gtest.h>

namespace dvae {
namespace {

TEST(Config, ParsesKeysAndComments) {
  const auto c = parse_config(
      "# collapse demo\n"
      "objective.mode = beta   # trailing comment\n"
      "objective.beta = 0.25\n"
      "\n"
      "  train.steps=300\n"
      "model.encoder = non_causal\n"
      "data.seq_len = 12\n");
  EXPECT_EQ(c.objective.mode, ObjectiveMode::beta);
  EXPECT_EQ(c.objective.beta, 0.25);
  EXPECT_EQ(c.steps, 300u);
  EXPECT_EQ(c.model.encoder, EncoderMode::non_causal);
  EXPECT_EQ(c.model.seq_len, 12u);  // copied from data
  EXPECT_EQ(c.batch_size, TrainConfig{}.batch_size);
}

TEST(Config, UnknownKeyIsAnError) {
  try {
    parse_config("train.steps = 3\ntrain.stpes = 4\n", "demo.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("demo.cfg:2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("train.stpes"), std::string::npos);
  }
}

TEST(Config, RejectsMalformedInput) {
  EXPECT_THROW(parse_config("train.steps 3\n"), ConfigError);
  EXPECT_THROW(parse_config("train.steps = three\n"), ConfigError);
  EXPECT_THROW(parse_config("train.steps = -3\n"), ConfigError);
  EXPECT_THROW(parse_config("train.steps = 3\ntrain.steps = 4\n"), ConfigError);
  EXPECT_THROW(parse_config("model.encoder = causal\n"), ConfigError);
  EXPECT_THROW(parse_config("train.learning_rate = nan\n"), ConfigError);
}

TEST(Config, ModeAndConstraintMustAgree) {
  EXPECT_THROW(parse_config("objective.mode = delta_structural\n"), ConfigError);
  EXPECT_THROW(parse_config("model.constraint = temporal_delta\nmodel.delta = 2\n"), ConfigError);
  EXPECT_NO_THROW(parse_config(
      "objective.mode = delta_structural\nmodel.constraint = temporal_delta\nmodel.delta = 2\n"));
}

TEST(Config, CanonicalFormRoundTrips) {
  TrainConfig c = parse_config("objective.mode = free_bits\nobjective.free_bits_per_cell = 0.1\n"
                               "train.learning_rate = 0.0003\ndata.hidden_scale = 0.07\n");
  const std::string text = canonical_config(c);
  const TrainConfig back = parse_config(text);
  EXPECT_EQ(canonical_config(back), text);
  EXPECT_EQ(config_hash(back), config_hash(c));
  EXPECT_EQ(back.learning_rate, 0.0003);
}

TEST(Config, HashTracksContent) {
  const TrainConfig a = parse_config("train.seed = 1\n");
  const TrainConfig b = parse_config("train.seed = 2\n");
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a), config_hash(parse_config("# same\ntrain.seed=1\n")));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

}  // namespace
}  // namespace dvae
