#pragma once

// Automatic annotation: match-based correctness and linguistic-confidence
// classification (hedge lexicon cascade or a trained linear classifier).

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lincal/corpus.hpp"
#include "lincal/ngram.hpp"

namespace lincal {

Correctness binarize_correctness(Correctness4 c);

// Correct iff some alias's tokens occur contiguously in the response tokens.
Correctness match_correct(std::string_view response, std::span<const std::string> gold_aliases);

using Phrase = std::vector<std::string>;

// Hedge phrases as token sequences. DK phrases only count at the very start
// of a response; LO phrases count anywhere.
struct HedgeLexicon {
  std::vector<Phrase> dk;
  std::vector<Phrase> lo;

  static const HedgeLexicon& defaults();
  // Plain text, one phrase per line under "[DK]" / "[LO]" headers; '#'
  // starts a comment line.
  static HedgeLexicon parse(std::string_view text);
  static HedgeLexicon load(const std::string& path);
  std::string serialize() const;
};

// Length in tokens of the longest phrase matching `tokens` at `pos`, or 0.
std::size_t match_phrase_at(std::span<const std::string> tokens, std::size_t pos,
                            std::span<const Phrase> phrases);

Confidence classify_confidence_lexicon(std::string_view response,
                                       const HedgeLexicon& lexicon = HedgeLexicon::defaults());

struct LabeledResponse {
  std::string question;
  std::string response;
  Confidence label;
};

struct ConfidenceClassifierConfig {
  NGramOptions ngrams{1, 3, 1};
  bool include_question = false;
  int iterations = 400;
  double learning_rate = 1.0;
  double l2 = 1e-4;
  std::uint64_t seed = 0;
};

// Multinomial logistic regression over n-gram indicators. Class biases are
// fixed at the log class priors, so a text without known n-grams is assigned
// the majority training class.
class ConfidenceClassifier {
 public:
  static ConfidenceClassifier train(std::span<const LabeledResponse> data, const ConfidenceClassifierConfig& config = {});

  std::array<double, 4> scores(std::string_view question, std::string_view response) const;
  // Argmax of scores; ties go to the earliest class in OT < DK < LO < HI.
  Confidence predict(std::string_view question, std::string_view response) const;

  const NGramVocab& vocab() const { return vocab_; }
  double weight(std::size_t feature, Confidence c) const { return weights_[feature][static_cast<int>(c)]; }
  const std::array<double, 4>& bias() const { return bias_; }

  Json to_json() const;
  static ConfidenceClassifier from_json(const Json& j);

 private:
  std::vector<std::uint32_t> features(std::string_view question, std::string_view response) const;

  ConfidenceClassifierConfig config_;
  NGramVocab vocab_;
  std::vector<std::array<double, 4>> weights_;
  std::array<double, 4> bias_{};
};

struct PrecisionRecall {
  std::size_t true_positive = 0;
  std::size_t false_positive = 0;
  std::size_t false_negative = 0;
  double precision = 0.0;
  double recall = 0.0;
};

// One-vs-rest evaluation of `positive` (HI vs not-HI by default).
PrecisionRecall binary_precision_recall(std::span<const Confidence> predicted, std::span<const Confidence> gold,
                                        Confidence positive = Confidence::kHI);

}  // namespace lincal
