#include "lincal/control.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <functional>

namespace lincal {

std::string_view to_string(ControlToken t) {
  switch (t) {
    case ControlToken::kDK: return "DK";
    case ControlToken::kLO: return "LO";
    case ControlToken::kHI: return "HI";
  }
  return "HI";
}

ControlToken parse_control_token(std::string_view s) {
  if (s == "DK" || s == "<DK>") return ControlToken::kDK;
  if (s == "LO" || s == "<LO>") return ControlToken::kLO;
  if (s == "HI" || s == "<HI>") return ControlToken::kHI;
  throw DataError("unknown control token '" + std::string(s) + "'");
}

Confidence to_confidence(ControlToken t) {
  switch (t) {
    case ControlToken::kDK: return Confidence::kDK;
    case ControlToken::kLO: return Confidence::kLO;
    case ControlToken::kHI: return Confidence::kHI;
  }
  return Confidence::kHI;
}

ControlToken select_token(double p, const ControlPolicy& policy) {
  if (!policy.valid()) throw DataError("invalid control policy: need 0 <= t_dk <= t_lo <= 1");
  if (!(p >= 0.0 && p <= 1.0)) throw DataError("probability outside [0, 1]");
  if (p < policy.t_dk) return ControlToken::kDK;
  if (p < policy.t_lo) return ControlToken::kLO;
  return ControlToken::kHI;
}

ThresholdSearch tune_thresholds(std::span<const double> preds, std::span<const int> labels, double step) {
  if (preds.empty()) throw DataError("threshold tuning needs at least one example");
  if (preds.size() != labels.size()) throw DataError("prediction and label counts differ");
  if (!(step > 0.0 && step <= 1.0)) throw DataError("grid step must lie in (0, 1]");
  const double steps = std::round(1.0 / step);
  if (std::abs(steps * step - 1.0) > 1e-9) throw DataError("grid step must divide 1 evenly");
  const auto grid = static_cast<std::size_t>(steps);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!(preds[i] >= 0.0 && preds[i] <= 1.0)) throw DataError("prediction outside [0, 1]");
    if (labels[i] != 0 && labels[i] != 1) throw DataError("labels must be 0 or 1");
  }

  // Sweep t_lo upwards over predictions sorted ascending; the HI set is the
  // suffix with p >= t_lo. t_dk does not affect the objective, so the
  // tie-break settles it at 0.
  std::vector<std::pair<double, int>> sorted;
  sorted.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) sorted.emplace_back(preds[i], labels[i]);
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> suffix_correct(sorted.size() + 1, 0);
  for (std::size_t i = sorted.size(); i-- > 0;) suffix_correct[i] = suffix_correct[i + 1] + sorted[i].second;

  ThresholdSearch best;
  bool found = false;
  std::size_t cursor = 0;
  for (std::size_t j = 0; j <= grid; ++j) {
    const double t_lo = static_cast<double>(j) / static_cast<double>(grid);
    while (cursor < sorted.size() && sorted[cursor].first < t_lo) ++cursor;
    const std::size_t hi = sorted.size() - cursor;
    if (hi == 0) continue;
    const std::size_t correct = suffix_correct[cursor];
    bool better = !found;
    if (found) {
      const auto lhs = correct * best.hi_count;
      const auto rhs = best.hi_correct * hi;
      better = lhs > rhs || (lhs == rhs && hi > best.hi_count);
    }
    if (better) {
      found = true;
      best.policy = ControlPolicy{0.0, t_lo, step};
      best.hi_count = hi;
      best.hi_correct = correct;
    }
  }
  if (!found) throw DataError("no policy maps any example to HI");
  best.objective = static_cast<double>(best.hi_correct) / static_cast<double>(best.hi_count);
  return best;
}

Json policy_to_json(const ControlPolicy& policy) {
  Json j = Json::object();
  j["t_dk"] = policy.t_dk;
  j["t_lo"] = policy.t_lo;
  j["step"] = policy.step;
  j["objective"] = "p_correct_given_hi";
  return j;
}

ControlPolicy policy_from_json(const Json& j) {
  ControlPolicy p;
  try {
    p.t_dk = j.at("t_dk").get<double>();
    p.t_lo = j.at("t_lo").get<double>();
    p.step = j.value("step", 0.025);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed policy: ") + e.what());
  }
  if (!p.valid()) throw DataError("invalid control policy: need 0 <= t_dk <= t_lo <= 1");
  return p;
}

// --- rewriting --------------------------------------------------------------

namespace {

bool ascii_lower(char c) { return c >= 'a' && c <= 'z'; }
bool ascii_upper(char c) { return c >= 'A' && c <= 'Z'; }

std::string capitalize(std::string s) {
  if (!s.empty() && ascii_lower(s[0])) s[0] = static_cast<char>(s[0] - 32);
  return s;
}

// Lowercases the first letter unless the first word is "I" or an acronym.
std::string decapitalize(std::string s) {
  if (s.empty() || !ascii_upper(s[0])) return s;
  std::size_t end = 0;
  while (end < s.size() && std::isalnum(static_cast<unsigned char>(s[end]))) ++end;
  const std::string_view word(s.data(), end);
  if (word == "I") return s;
  if (word.size() > 1 && std::all_of(word.begin(), word.end(), [](char c) { return !ascii_lower(c); })) return s;
  s[0] = static_cast<char>(s[0] + 32);
  return s;
}

}  // namespace

std::string extract_content(std::string_view response, const HedgeLexicon& lexicon) {
  const auto spans = tokenize_spans(response);
  std::vector<std::string> tokens;
  tokens.reserve(spans.size());
  for (const auto& s : spans) tokens.push_back(s.text);

  std::size_t pos = 0;
  bool stripped = false;
  while (pos < tokens.size()) {
    const std::size_t m =
        std::max(match_phrase_at(tokens, pos, lexicon.dk), match_phrase_at(tokens, pos, lexicon.lo));
    if (m > 0) {
      pos += m;
      stripped = true;
    } else if (stripped && tokens[pos] == "but") {
      ++pos;
    } else {
      break;
    }
  }
  if (!stripped) return std::string(response);
  if (pos == tokens.size()) return "";
  return capitalize(std::string(response.substr(spans[pos].begin)));
}

RewriteResult rewrite(std::string_view response, ControlToken target, const HedgeLexicon& lexicon) {
  RewriteResult result;
  result.token = target;
  result.content = extract_content(response, lexicon);
  if (classify_confidence_lexicon(response, lexicon) == to_confidence(target)) {
    result.text = std::string(response);
    return result;
  }
  const std::string& content = result.content;
  switch (target) {
    case ControlToken::kDK:
      result.text = content.empty() ? "I don't know." : "I don't know, but I think " + decapitalize(content);
      break;
    case ControlToken::kLO:
      result.text = content.empty() ? "I'm not sure." : "I'm not sure, but I think " + decapitalize(content);
      break;
    case ControlToken::kHI:
      result.text = content.empty() ? std::string(response) : content;
      break;
  }
  result.changed = result.text != response;
  return result;
}

}  // namespace lincal
