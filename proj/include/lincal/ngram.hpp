#pragma once

// Word n-gram features and sparse L1-regularized logistic regression, used
// both for the question/answer predictiveness analyses and as the feature
// backbone of the confidence classifier.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lincal/corpus.hpp"

namespace lincal {

// Marker prefixed to n-grams anchored at the start of a text.
inline constexpr std::string_view kStartAnchor = "\xE2\x89\xAB";  // U+226B

struct NGramOptions {
  int n_min = 2;
  int n_max = 7;
  std::size_t min_count = 5;
};

class NGramVocab {
 public:
  NGramVocab() = default;
  // `ngrams` must be sorted and unique.
  NGramVocab(std::vector<std::string> ngrams, NGramOptions options);

  std::size_t size() const { return ngrams_.size(); }
  bool empty() const { return ngrams_.empty(); }
  const std::string& ngram(std::size_t index) const { return ngrams_[index]; }
  const std::vector<std::string>& ngrams() const { return ngrams_; }
  std::optional<std::size_t> find(std::string_view ngram) const;
  bool contains(std::string_view ngram) const { return find(ngram).has_value(); }
  const NGramOptions& options() const { return options_; }

 private:
  std::vector<std::string> ngrams_;
  std::unordered_map<std::string, std::size_t> index_;
  NGramOptions options_;
};

// Every n-gram occurrence in a token sequence, joined by single spaces. The
// anchor counts as one token: an anchored gram "≫ w1 .. wm" has length m+1,
// so "≫ who" is a bigram.
std::vector<std::string> ngrams_of(std::span<const std::string> tokens, int n_min, int n_max);

// Counts occurrences over tokenized texts and keeps grams seen at least
// `min_count` times. Indices follow lexicographic order.
NGramVocab extract_ngrams(std::span<const std::string> texts, const NGramOptions& options = {});

// Row-compressed binary design matrix.
struct SparseMatrix {
  std::size_t cols = 0;
  std::vector<std::size_t> row_ptr{0};
  std::vector<std::uint32_t> col_idx;
  std::vector<double> values;

  std::size_t rows() const { return row_ptr.size() - 1; }
  void add_row(std::span<const std::pair<std::uint32_t, double>> entries);
};

// Indicator features: 1 for each vocab gram present in the text.
SparseMatrix featurize(std::span<const std::string> texts, const NGramVocab& vocab);
std::vector<std::uint32_t> feature_indices(std::string_view text, const NGramVocab& vocab);

struct SparseLinearModel {
  std::vector<double> weights;
  double bias = 0.0;
  double l1_lambda = 0.0;
  // Which outcome label 1 denotes; positive weights push towards it.
  std::string label_semantics;
};

struct L1FitOptions {
  double tolerance = 1e-8;
  int max_iterations = 10000;
  double weight_cap = 50.0;
  bool record_objective = false;
};

struct L1Fit {
  SparseLinearModel model;
  int iterations = 0;
  bool converged = false;
  bool capped = false;
  // Composite objective after each accepted step (when requested).
  std::vector<double> objective_trace;
};

// Smooth part of the objective: mean logistic loss and its gradient.
double logistic_loss(const SparseMatrix& x, std::span<const int> labels, std::span<const double> weights,
                     double bias);
void logistic_gradient(const SparseMatrix& x, std::span<const int> labels, std::span<const double> weights,
                       double bias, std::span<double> grad_weights, double* grad_bias);

double soft_threshold(double z, double threshold);

// Minimizes mean logistic loss + l1_lambda * ||w||_1 (bias unpenalized) by
// proximal gradient descent with backtracking line search. Stops when the
// largest parameter change drops below the tolerance, at the iteration
// limit, or when a weight reaches the cap (separable data).
L1Fit fit_l1(const SparseMatrix& x, std::span<const int> labels, double l1_lambda, std::uint64_t seed = 0,
             const L1FitOptions& options = {});

struct NGramModel {
  NGramVocab vocab;
  SparseLinearModel linear;

  double predict_logit(std::string_view text) const;
};

struct WeightedNGram {
  std::string ngram;
  double weight;
};

struct TopNGrams {
  std::vector<WeightedNGram> most_negative;
  std::vector<WeightedNGram> most_positive;
};

// Strictly signed weights first (by magnitude), then zero weights in
// lexicographic order, truncated to k per list.
TopNGrams top_ngrams(const NGramModel& model, std::size_t k);

Json ngram_model_to_json(const NGramModel& model);
NGramModel ngram_model_from_json(const Json& j);

}  // namespace lincal
