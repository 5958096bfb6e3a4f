#pragma once

// Maps calibrator probabilities to confidence control tokens and rewrites
// responses to the requested confidence while keeping their content.

#include <span>
#include <string>
#include <string_view>

#include "lincal/corpus.hpp"
#include "lincal/scoring.hpp"

namespace lincal {

enum class ControlToken { kDK, kLO, kHI };

std::string_view to_string(ControlToken t);
ControlToken parse_control_token(std::string_view s);
Confidence to_confidence(ControlToken t);

struct ControlPolicy {
  double t_dk = 0.0;
  double t_lo = 0.375;
  double step = 0.025;

  // Shipped defaults: DK is never selected, HI from 0.375 up.
  static ControlPolicy defaults() { return {}; }
  bool valid() const { return 0.0 <= t_dk && t_dk <= t_lo && t_lo <= 1.0; }
};

// p < t_dk -> DK, t_dk <= p < t_lo -> LO, p >= t_lo -> HI.
ControlToken select_token(double p, const ControlPolicy& policy);

struct ThresholdSearch {
  ControlPolicy policy;
  std::size_t hi_count = 0;
  std::size_t hi_correct = 0;
  double objective = 0.0;  // p(correct | HI)
};

// Exhaustive search over the grid {0, step, ..., 1}^2 with t_dk <= t_lo,
// maximizing accuracy among HI-mapped examples. Ties prefer more HI
// examples, then smaller t_lo, then smaller t_dk.
ThresholdSearch tune_thresholds(std::span<const double> preds, std::span<const int> labels, double step = 0.025);

Json policy_to_json(const ControlPolicy& policy);
ControlPolicy policy_from_json(const Json& j);

// Removes leading hedges (and a following "but" connective) and capitalizes
// the first remaining character. Returns "" when nothing but hedging remains.
std::string extract_content(std::string_view response, const HedgeLexicon& lexicon = HedgeLexicon::defaults());

struct RewriteResult {
  std::string text;
  ControlToken token = ControlToken::kHI;
  std::string content;
  bool changed = false;
};

RewriteResult rewrite(std::string_view response, ControlToken target,
                      const HedgeLexicon& lexicon = HedgeLexicon::defaults());

}  // namespace lincal
