#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "lincal/ngram.hpp"

using namespace lincal;

namespace {

const std::string kAnchor(kStartAnchor);

// Plain dense logistic loss, written independently of the sparse code.
double dense_loss(const std::vector<std::vector<double>>& x, const std::vector<int>& y, const std::vector<double>& w,
                  double b) {
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double z = b;
    for (std::size_t j = 0; j < w.size(); ++j) z += x[i][j] * w[j];
    const double p = 1.0 / (1.0 + std::exp(-z));
    total += y[i] ? -std::log(p) : -std::log(1.0 - p);
  }
  return total / static_cast<double>(x.size());
}

SparseMatrix to_sparse(const std::vector<std::vector<double>>& x) {
  SparseMatrix m;
  m.cols = x.empty() ? 0 : x[0].size();
  for (const auto& row : x) {
    std::vector<std::pair<std::uint32_t, double>> entries;
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (row[j] != 0.0) entries.emplace_back(static_cast<std::uint32_t>(j), row[j]);
    }
    m.add_row(entries);
  }
  return m;
}

struct Planted {
  std::vector<std::string> texts;
  std::vector<int> labels;
};

// label = 1 iff the text contains "city is"; everything else is noise drawn
// from a shared pool, so no other n-gram carries signal.
Planted planted_city(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::vector<std::string> pool = {"the", "old", "town", "river", "near", "big", "was", "a", "my", "blue"};
  Planted p;
  for (std::size_t i = 0; i < n; ++i) {
    std::string t;
    const int len = 3 + static_cast<int>(rng() % 4);
    for (int k = 0; k < len; ++k) t += pool[rng() % pool.size()] + " ";
    const bool pos = rng() % 2 == 0;
    const std::size_t insert_at = rng() % 3;
    std::string tail;
    for (std::size_t k = 0; k < insert_at; ++k) tail += " " + pool[rng() % pool.size()];
    if (pos) t += "city is" + tail;
    else t += "city" + tail;
    p.texts.push_back(t);
    p.labels.push_back(pos ? 1 : 0);
  }
  return p;
}

std::size_t nonzeros(const SparseLinearModel& m) {
  std::size_t n = 0;
  for (double w : m.weights) n += w != 0.0;
  return n;
}

}  // namespace

TEST(NGrams, HandEnumeratedVocabulary) {
  const std::vector<std::string> texts(5, "who was the");
  const NGramVocab v = extract_ngrams(texts, {2, 7, 5});
  for (const std::string& g : std::vector<std::string>{"who was", "was the", "who was the", kAnchor + " who", kAnchor + " who was",
                              kAnchor + " who was the"}) {
    EXPECT_TRUE(v.contains(g)) << g;
  }
  EXPECT_FALSE(v.contains("who"));
  EXPECT_EQ(v.size(), 6u);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(v.find(v.ngram(i)), i);
  EXPECT_TRUE(std::is_sorted(v.ngrams().begin(), v.ngrams().end()));
  EXPECT_TRUE(extract_ngrams(texts, {2, 7, 6}).empty());
  EXPECT_TRUE(extract_ngrams({}, {}).empty());
}

TEST(NGrams, AnchoredGramIsDistinctFeature) {
  const std::vector<std::string> texts = {"Who is it", "who is it", "And who is it"};
  const NGramVocab v = extract_ngrams(texts, {2, 3, 1});
  const auto anchored = feature_indices("Who knows", v);
  const auto inner = feature_indices("so who is", v);
  ASSERT_TRUE(v.contains(kAnchor + " who"));
  EXPECT_NE(std::find(anchored.begin(), anchored.end(), *v.find(kAnchor + " who")), anchored.end());
  EXPECT_EQ(std::find(inner.begin(), inner.end(), *v.find(kAnchor + " who")), inner.end());
}

TEST(NGrams, CountsOccurrencesNotDocuments) {
  const std::vector<std::string> texts = {"a b a b a b a b a b"};
  EXPECT_TRUE(extract_ngrams(texts, {2, 2, 5}).contains("a b"));
  EXPECT_FALSE(extract_ngrams(texts, {2, 2, 5}).contains("b a"));
}

TEST(SoftThreshold, ClosedFormValues) {
  EXPECT_DOUBLE_EQ(soft_threshold(3.0, 1.0), 2.0);
  EXPECT_DOUBLE_EQ(soft_threshold(-3.0, 1.0), -2.0);
  EXPECT_DOUBLE_EQ(soft_threshold(0.5, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(soft_threshold(-1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(soft_threshold(0.25, 0.0), 0.25);
}

TEST(LogisticGradient, MatchesCentralDifferencesOnFiveFeatures) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<std::vector<double>> x(12, std::vector<double>(5));
  std::vector<int> y(12);
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (auto& v : x[i]) v = (rng() % 3 == 0) ? 0.0 : n01(rng);
    y[i] = static_cast<int>(rng() % 2);
  }
  std::vector<double> w(5);
  for (auto& v : w) v = n01(rng);
  const double b = 0.3;
  const SparseMatrix sx = to_sparse(x);
  EXPECT_NEAR(logistic_loss(sx, y, w, b), dense_loss(x, y, w, b), 1e-12);

  std::vector<double> gw(5);
  double gb = 0.0;
  logistic_gradient(sx, y, w, b, gw, &gb);
  const double h = 1e-6;
  for (std::size_t j = 0; j <= w.size(); ++j) {
    auto wp = w, wm = w;
    double bp = b, bm = b;
    if (j < w.size()) {
      wp[j] += h;
      wm[j] -= h;
    } else {
      bp += h;
      bm -= h;
    }
    const double fd = (dense_loss(x, y, wp, bp) - dense_loss(x, y, wm, bm)) / (2 * h);
    const double analytic = j < w.size() ? gw[j] : gb;
    EXPECT_LE(std::abs(fd - analytic) / std::max(1e-8, std::abs(fd)), 1e-6) << "coordinate " << j;
  }
}

TEST(FitL1, ObjectiveNeverIncreases) {
  const Planted p = planted_city(200, 4);
  const NGramVocab v = extract_ngrams(p.texts, {1, 3, 3});
  L1FitOptions opts;
  opts.record_objective = true;
  for (double lambda : {0.0005, 0.01, 0.1}) {
    const L1Fit fit = fit_l1(featurize(p.texts, v), p.labels, lambda, 0, opts);
    ASSERT_GE(fit.objective_trace.size(), 2u);
    for (std::size_t i = 1; i < fit.objective_trace.size(); ++i) {
      EXPECT_LE(fit.objective_trace[i], fit.objective_trace[i - 1] + 1e-12) << "step " << i;
    }
  }
}

TEST(FitL1, HugeLambdaZeroesWeightsAndFitsBaseRate) {
  const Planted p = planted_city(301, 8);
  const NGramVocab v = extract_ngrams(p.texts, {2, 4, 2});
  const L1Fit fit = fit_l1(featurize(p.texts, v), p.labels, 1e3);
  EXPECT_EQ(nonzeros(fit.model), 0u);
  double pos = 0;
  for (int y : p.labels) pos += y;
  const double rate = pos / static_cast<double>(p.labels.size());
  EXPECT_NEAR(fit.model.bias, std::log(rate / (1.0 - rate)), 1e-6);
}

TEST(FitL1, RecoversPlantedBigram) {
  const Planted p = planted_city(400, 12);
  NGramModel m;
  m.vocab = extract_ngrams(p.texts, {2, 7, 5});
  const L1Fit fit = fit_l1(featurize(p.texts, m.vocab), p.labels, 0.05);
  m.linear = fit.model;
  const auto target = m.vocab.find("city is");
  ASSERT_TRUE(target.has_value());
  EXPECT_GT(m.linear.weights[*target], 0.0);
  for (std::size_t j = 0; j < m.vocab.size(); ++j) {
    if (j != *target) EXPECT_LT(std::abs(m.linear.weights[j]), 0.01) << m.vocab.ngram(j);
  }
  const TopNGrams top = top_ngrams(m, 3);
  ASSERT_EQ(top.most_positive.size(), 3u);
  EXPECT_EQ(top.most_positive[0].ngram, "city is");
  EXPECT_GT(m.predict_logit("my town city is old"), m.predict_logit("my town city old"));
}

TEST(FitL1, SparsityMonotoneAlongLambdaLadder) {
  const Planted p = planted_city(300, 21);
  const NGramVocab v = extract_ngrams(p.texts, {1, 3, 3});
  const SparseMatrix x = featurize(p.texts, v);
  std::size_t prev = v.size() + 1;
  for (double lambda : {1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1, 1.0}) {
    const std::size_t nz = nonzeros(fit_l1(x, p.labels, lambda).model);
    EXPECT_LE(nz, prev) << "lambda " << lambda;
    prev = nz;
  }
  EXPECT_EQ(prev, 0u);
}

TEST(FitL1, SeparableDataStopsAtWeightCap) {
  const std::vector<std::string> texts = {"yes yes", "yes yes", "no no", "no no", "yes yes", "no no"};
  const std::vector<int> labels = {1, 1, 0, 0, 1, 0};
  const NGramVocab v = extract_ngrams(texts, {2, 2, 1});
  const L1Fit fit = fit_l1(featurize(texts, v), labels, 0.0);
  EXPECT_TRUE(fit.capped);
  double biggest = 0.0;
  for (double w : fit.model.weights) biggest = std::max(biggest, std::abs(w));
  EXPECT_LE(biggest, 50.0);
  EXPECT_GE(biggest, 49.0);
}

TEST(FitL1, DegenerateLabelsRejectedAndDeterministic) {
  const std::vector<std::string> texts = {"a b", "b c"};
  const NGramVocab v = extract_ngrams(texts, {2, 2, 1});
  const std::vector<int> same = {1, 1};
  EXPECT_THROW(fit_l1(featurize(texts, v), same, 0.1), DataError);
  const Planted p = planted_city(100, 2);
  const NGramVocab pv = extract_ngrams(p.texts, {1, 2, 2});
  const auto a = fit_l1(featurize(p.texts, pv), p.labels, 0.01, 5).model;
  const auto b = fit_l1(featurize(p.texts, pv), p.labels, 0.01, 5).model;
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_EQ(a.bias, b.bias);
}

TEST(TopNGrams, BoundaryRules) {
  NGramModel m;
  m.vocab = NGramVocab({"a b", "b c", "c d", "d e", "e f"}, {2, 2, 1});
  m.linear.weights = {0.0, -2.0, 1.5, 0.0, 3.0};
  const TopNGrams none = top_ngrams(m, 0);
  EXPECT_TRUE(none.most_negative.empty());
  EXPECT_TRUE(none.most_positive.empty());

  const TopNGrams all = top_ngrams(m, 10);
  // each list: its signed weights by magnitude, padded with zero weights
  ASSERT_EQ(all.most_positive.size(), 4u);
  ASSERT_EQ(all.most_negative.size(), 3u);
  EXPECT_EQ(all.most_positive[0].ngram, "e f");
  EXPECT_EQ(all.most_positive[1].ngram, "c d");
  EXPECT_EQ(all.most_positive[2].ngram, "a b");
  EXPECT_EQ(all.most_positive[3].ngram, "d e");
  EXPECT_EQ(all.most_negative[0].ngram, "b c");
  EXPECT_EQ(all.most_negative[1].ngram, "a b");
}

TEST(NGramModel, JsonRoundTrip) {
  const Planted p = planted_city(120, 30);
  NGramModel m;
  m.vocab = extract_ngrams(p.texts, {2, 3, 3});
  m.linear = fit_l1(featurize(p.texts, m.vocab), p.labels, 0.01).model;
  m.linear.label_semantics = "positive=incorrect";
  const Json j = ngram_model_to_json(m);
  EXPECT_TRUE(j.contains("vocab"));
  EXPECT_TRUE(j["vocab"][0].is_array());
  const NGramModel back = ngram_model_from_json(Json::parse(j.dump()));
  EXPECT_EQ(back.vocab.ngrams(), m.vocab.ngrams());
  EXPECT_EQ(back.linear.weights, m.linear.weights);
  EXPECT_EQ(back.linear.label_semantics, "positive=incorrect");
  for (const auto& t : p.texts) EXPECT_EQ(back.predict_logit(t), m.predict_logit(t));
}
