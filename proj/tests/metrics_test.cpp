#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "lincal/metrics.hpp"

using namespace lincal;

namespace {

struct Oracle {
  double ece = 0.0;
  double mce = 0.0;
};

// Direct transcription of the definitions: bucket by scanning edges,
// weighted and max midpoint distance over nonempty bins.
Oracle oracle(const std::vector<double>& p, const std::vector<int>& y, std::size_t bins) {
  std::vector<double> n(bins, 0.0), c(bins, 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    std::size_t b = 0;
    for (std::size_t k = 1; k < bins; ++k) {
      if (p[i] >= static_cast<double>(k) / static_cast<double>(bins)) b = k;
    }
    n[b] += 1;
    c[b] += y[i];
  }
  Oracle o;
  for (std::size_t b = 0; b < bins; ++b) {
    if (n[b] == 0) continue;
    const double mid = (static_cast<double>(b) + 0.5) / static_cast<double>(bins);
    const double d = std::abs(mid - c[b] / n[b]);
    o.ece += n[b] / static_cast<double>(p.size()) * d;
    o.mce = std::max(o.mce, d);
  }
  return o;
}

}  // namespace

TEST(BinSpec, EqualWidthMembership) {
  const BinSpec s = BinSpec::equal_width(20);
  EXPECT_EQ(s.size(), 20u);
  EXPECT_EQ(s.bin_of(0.0), 0u);
  EXPECT_EQ(s.bin_of(0.0499), 0u);
  EXPECT_EQ(s.bin_of(0.05), 1u);
  EXPECT_EQ(s.bin_of(0.975), 19u);
  EXPECT_EQ(s.bin_of(1.0), 19u);
  EXPECT_DOUBLE_EQ(s.lo(19), 0.95);
  EXPECT_DOUBLE_EQ(s.hi(19), 1.0);
  EXPECT_THROW(BinSpec::equal_width(0), DataError);
}

TEST(BinSpec, ExplicitThresholds) {
  const BinSpec s = BinSpec::thresholds({0.375});
  EXPECT_EQ(s.size(), 2u);
  EXPECT_EQ(s.bin_of(0.374), 0u);
  EXPECT_EQ(s.bin_of(0.375), 1u);
  EXPECT_EQ(s.bin_of(1.0), 1u);
  EXPECT_THROW(BinSpec::thresholds({0.5, 0.2}), DataError);
  EXPECT_THROW(BinSpec::thresholds({0.0}), DataError);
  EXPECT_THROW(BinSpec::thresholds({1.0}), DataError);
}

TEST(Reliability, FourPointTwoBinFixture) {
  const std::vector<double> p = {0.1, 0.3, 0.6, 0.9};
  const std::vector<int> y = {0, 0, 1, 1};
  const auto r = bin_reliability(p, y, BinSpec::equal_width(2));
  ASSERT_EQ(r.bins.size(), 2u);
  EXPECT_DOUBLE_EQ(r.bins[0].midpoint, 0.25);
  EXPECT_DOUBLE_EQ(r.bins[1].midpoint, 0.75);
  EXPECT_DOUBLE_EQ(*r.bins[0].empirical_accuracy, 0.0);
  EXPECT_DOUBLE_EQ(*r.bins[1].empirical_accuracy, 1.0);
  EXPECT_NEAR(r.ece, 0.25, 1e-12);
  EXPECT_NEAR(r.mce, 0.25, 1e-12);
  EXPECT_EQ(r.total_n, 4u);
}

TEST(Reliability, SinglePairTwentyBins) {
  const std::vector<double> p = {0.975};
  const std::vector<int> y = {1};
  const auto r = bin_reliability(p, y, BinSpec::equal_width(20));
  EXPECT_NEAR(r.ece, 0.025, 1e-12);
  EXPECT_NEAR(r.mce, 0.025, 1e-12);
  EXPECT_FALSE(r.bins[0].empirical_accuracy.has_value());
  EXPECT_FALSE(r.bins[0].distance.has_value());
}

TEST(Reliability, Errors) {
  EXPECT_THROW(bin_reliability({}, {}, BinSpec::equal_width(2)), DataError);
  const std::vector<double> bad = {1.5};
  const std::vector<int> one = {1};
  EXPECT_THROW(bin_reliability(bad, one, BinSpec::equal_width(2)), DataError);
  const std::vector<double> two = {0.1, 0.2};
  EXPECT_THROW(bin_reliability(two, one, BinSpec::equal_width(2)), DataError);
  const std::vector<int> notbinary = {2};
  const std::vector<double> p1 = {0.5};
  EXPECT_THROW(bin_reliability(p1, notbinary, BinSpec::equal_width(2)), DataError);
  const std::vector<double> nan = {std::nan("")};
  EXPECT_THROW(anll(nan, one), DataError);
}

TEST(Reliability, MatchesOracleAndInvariantsProperty) {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng() % 60;
    const std::size_t bins = 1 + rng() % 25;
    std::vector<double> p(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      // include exact bin edges now and then
      p[i] = rng() % 5 == 0 ? static_cast<double>(rng() % (bins + 1)) / static_cast<double>(bins) : u(rng);
      y[i] = u(rng) < p[i];
    }
    const auto r = bin_reliability(p, y, BinSpec::equal_width(bins));
    const Oracle o = oracle(p, y, bins);
    EXPECT_NEAR(r.ece, o.ece, 1e-12);
    EXPECT_NEAR(r.mce, o.mce, 1e-12);
    EXPECT_LE(r.ece, r.mce);
    std::size_t total = 0;
    for (const auto& b : r.bins) {
      total += b.n;
      if (b.n) EXPECT_DOUBLE_EQ(*b.distance, std::abs(b.midpoint - *b.empirical_accuracy));
    }
    EXPECT_EQ(total, n);
  }
}

TEST(Reliability, ConstantPredictorIdentity) {
  std::mt19937_64 rng(8);
  for (double c : {0.12, 0.5, 0.88, 0.0, 1.0}) {
    for (std::size_t bins : {1u, 2u, 10u, 20u}) {
      std::vector<double> p(97, c);
      std::vector<int> y(97);
      int correct = 0;
      for (auto& v : y) correct += (v = static_cast<int>(rng() % 2));
      const auto r = bin_reliability(p, y, BinSpec::equal_width(bins));
      const BinSpec s = BinSpec::equal_width(bins);
      const std::size_t b = s.bin_of(c);
      const double expected = std::abs((s.lo(b) + s.hi(b)) / 2.0 - correct / 97.0);
      EXPECT_EQ(r.ece, expected);
      EXPECT_EQ(r.mce, expected);
    }
  }
}

TEST(Anll, ReferenceValues) {
  const std::vector<double> perfect = {1.0};
  const std::vector<int> one = {1};
  EXPECT_LT(anll(perfect, one), 1e-11);
  const std::vector<double> half = {0.5, 0.5};
  const std::vector<int> mixed = {0, 1};
  EXPECT_NEAR(anll(half, mixed), std::log(2.0), 1e-12);
  const std::vector<double> p = {0.8, 0.4};
  const std::vector<int> y = {1, 0};
  EXPECT_NEAR(anll(p, y), 0.3669846, 1e-6);
  EXPECT_NEAR(anll(p, y), (-std::log(0.8) - std::log(0.6)) / 2.0, 1e-12);
  const std::vector<double> zero = {0.0};
  EXPECT_NEAR(anll(zero, one), -std::log(1e-12), 1e-6);
}

TEST(Anll, PermutationDuplicationAndHalfProperty) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng() % 40;
    std::vector<double> p(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = u(rng);
      y[i] = static_cast<int>(rng() % 2);
    }
    const double base = anll(p, y);
    EXPECT_GE(base, 0.0);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<double> ps;
    std::vector<int> ys;
    for (auto i : idx) {
      ps.push_back(p[i]);
      ys.push_back(y[i]);
    }
    EXPECT_NEAR(anll(ps, ys), base, 1e-12);
    auto pd = p;
    auto yd = y;
    pd.insert(pd.end(), p.begin(), p.end());
    yd.insert(yd.end(), y.begin(), y.end());
    EXPECT_NEAR(anll(pd, yd), base, 1e-12);
    std::vector<double> halves(n, 0.5);
    EXPECT_NEAR(anll(halves, y), std::log(2.0), 1e-12);
  }
}

TEST(Export, CsvRowsAndEmptyBins) {
  const std::vector<double> p = {0.1, 0.3, 0.6, 0.9};
  const std::vector<int> y = {0, 0, 1, 1};
  const std::string two = export_reliability_csv(bin_reliability(p, y, BinSpec::equal_width(2)));
  EXPECT_EQ(two, "bin_lo,bin_hi,midpoint,n,empirical_accuracy\n0,0.5,0.25,2,0\n0.5,1,0.75,2,1\n");

  const auto r20 = bin_reliability(p, y, BinSpec::equal_width(20));
  const std::string csv = export_reliability_csv(r20);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 21);
  // bin [0, 0.05) is empty
  EXPECT_NE(csv.find("\n0,0.050000000000000003,0.025000000000000001,0,\n"), std::string::npos) << csv;

  const Json j = reliability_to_json(r20);
  EXPECT_EQ(j["bins"].size(), 20u);
  EXPECT_TRUE(j["bins"][0]["empirical_accuracy"].is_null());
  EXPECT_DOUBLE_EQ(j["ece"].get<double>(), r20.ece);
}
