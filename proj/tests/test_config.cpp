#include <gtest/gtest.h>

#include "dmvae/config.hpp"

using namespace dmvae;

TEST(Config, Defaults) {
  const RunConfig c;
  EXPECT_EQ(c.batch_size, 100u);
  EXPECT_DOUBLE_EQ(c.learning_rate, 1e-3);
  EXPECT_EQ(c.epochs, 60u);
  EXPECT_DOUBLE_EQ(c.temperature, 1.0);
  EXPECT_DOUBLE_EQ(c.beta_tc_private, 3.0);
  EXPECT_EQ(c.private_dim, 10u);
  EXPECT_EQ(c.model_config(784, 10).shared_dim, 10u);
}

TEST(Config, ParseAndDumpRoundTrip) {
  const RunConfig c = parse_config("# comment\nseed = 4\nshared_kind=continuous  # trailing\n\npaired_batch=20\n");
  EXPECT_EQ(c.seed, 4u);
  EXPECT_EQ(c.shared_kind, SharedKind::continuous);
  EXPECT_EQ(c.paired_batch, 20u);
  EXPECT_EQ(parse_config(c.dump()).dump(), c.dump());
  for (const auto& k : RunConfig::keys()) EXPECT_NE(c.dump().find(k + "="), std::string::npos);
}

TEST(Config, Errors) {
  EXPECT_THROW(parse_config("no_such_key=1\n"), ConfigError);
  EXPECT_THROW(parse_config("seed\n"), ConfigError);
  EXPECT_THROW(parse_config("seed=abc\n"), ConfigError);
  EXPECT_THROW(parse_config("temperature=nan\n"), ConfigError);
  EXPECT_THROW(parse_config("shared_kind=both\n"), ConfigError);
  EXPECT_THROW(parse_config("paired_fraction=1.5\n").validate(), ConfigError);
  EXPECT_THROW(parse_config("shared_dim=7\n").validate(), ConfigError);
  EXPECT_THROW(load_config("/nonexistent.cfg"), ConfigError);
}

TEST(Config, MissingDataDirNamesPath) {
  RunConfig c;
  c.data_dir = "/no/such/mnist";
  try {
    load_run_data(c);
    FAIL();
  } catch (const data::IdxError& e) {
    EXPECT_NE(std::string(e.what()).find("/no/such/mnist"), std::string::npos);
  }
}

TEST(Config, TrainConfigCarriesSettings) {
  RunConfig c;
  c.seed = 3;
  const auto t = c.train_config();
  EXPECT_EQ(t.seed, 3u);
  EXPECT_EQ(t.settings.at("seed"), "3");
  EXPECT_EQ(t.settings.size(), RunConfig::keys().size());
}
