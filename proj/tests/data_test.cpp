#include "dvae/data.hpp"

#include <cstdio>
#include <map>

#include <gtest/gtest.h>

namespace dvae {
namespace {

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.n_train = 400;
  s.n_test = 400;
  s.seed = 5;
  return s;
}

TEST(GenSynthetic, SameSeedSameHash) {
  const auto a = gen_synthetic(small_spec());
  const auto b = gen_synthetic(small_spec());
  EXPECT_EQ(dataset_hash(a), dataset_hash(b));
  auto other = small_spec();
  other.seed = 6;
  EXPECT_NE(dataset_hash(a), dataset_hash(gen_synthetic(other)));
}

TEST(GenSynthetic, ShapesAndRecordedParams) {
  const auto ds = gen_synthetic(small_spec());
  EXPECT_EQ(ds.train_x.rows(), 400);
  EXPECT_EQ(ds.train_x.cols(), 24 * 4);
  ASSERT_EQ(ds.regimes.size(), 4u);
  for (const auto& r : ds.regimes) {
    EXPECT_GT(r.rho, 0.0);
    EXPECT_LT(r.rho, 1.0);
    EXPECT_EQ(r.mixing.rows(), 4);
    EXPECT_EQ(r.mixing.cols(), 2);
    EXPECT_EQ(r.drift.size(), 4);
  }
  EXPECT_TRUE(ds.train_x.allFinite());
}

TEST(GenSynthetic, RejectsSingleRegime) {
  auto s = small_spec();
  s.k_regimes = 1;
  EXPECT_THROW(gen_synthetic(s), DomainError);
}

TEST(GenSynthetic, LabelsBalancedAndSplitsDisjoint) {
  auto s = small_spec();
  s.n_train = 8000;
  s.n_test = 2000;
  const auto ds = gen_synthetic(s);
  for (const auto* y : {&ds.train_y, &ds.test_y}) {
    std::map<int, int> counts;
    for (int v : *y) ++counts[v];
    ASSERT_EQ(counts.size(), 4u);
    for (auto [k, c] : counts) EXPECT_NEAR(double(c) / y->size(), 0.25, 0.01) << k;
  }
  // Continuous draws: any shared row would mean the splits overlap.
  std::map<double, int> first_values;
  for (Eigen::Index i = 0; i < ds.train_x.rows(); ++i) first_values[ds.train_x(i, 5)]++;
  for (Eigen::Index i = 0; i < ds.test_x.rows(); ++i)
    EXPECT_EQ(first_values.count(ds.test_x(i, 5)), 0u);
}

TEST(GenSynthetic, BayesClassifierSeparatesRegimes) {
  const auto ds = gen_synthetic(small_spec());
  EXPECT_GT(bayes_accuracy(ds, ds.test_x, ds.test_y), 0.95);
}

TEST(GenSynthetic, SequencesStartNearOrigin) {
  const auto ds = gen_synthetic(small_spec());
  const double rms = std::sqrt(ds.train_x.leftCols(4).squaredNorm() / (400.0 * 4));
  EXPECT_LT(rms, 0.15);
}

TEST(DatasetFile, RoundTrip) {
  auto s = small_spec();
  s.n_train = 20;
  s.n_test = 8;
  const auto ds = gen_synthetic(s);
  const std::string path = ::testing::TempDir() + "dvae_dataset.json";
  save_dataset(ds, path);
  const auto back = load_dataset(path);
  std::remove(path.c_str());
  EXPECT_EQ(dataset_hash(back), dataset_hash(ds));
  EXPECT_EQ(back.train_x, ds.train_x);
  EXPECT_EQ(back.test_y, ds.test_y);
  EXPECT_EQ(back.regimes[2].mixing, ds.regimes[2].mixing);
  EXPECT_EQ(back.spec.seed, ds.spec.seed);
}

TEST(DatasetFile, RejectsTampering) {
  auto s = small_spec();
  s.n_train = 8;
  s.n_test = 8;
  auto j = dataset_to_json(gen_synthetic(s));
  j["train"]["x"]["data"][0] = 123.0;
  EXPECT_THROW(dataset_from_json(j), ConfigError);
  j["version"] = 99;
  EXPECT_THROW(dataset_from_json(j), ConfigError);
}

}  // namespace
}  // namespace dvae
