#include "lincal/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace lincal {

Correctness binarize_correctness(Correctness4 c) {
  switch (c) {
    case Correctness4::kOther:
    case Correctness4::kWrong:
      return Correctness::kIncorrect;
    case Correctness4::kExtra:
    case Correctness4::kRight:
      return Correctness::kCorrect;
  }
  return Correctness::kIncorrect;
}

Correctness match_correct(std::string_view response, std::span<const std::string> gold_aliases) {
  if (gold_aliases.empty()) throw DataError("match_correct needs at least one gold alias");
  const auto tokens = tokenize(response);
  if (tokens.empty()) return Correctness::kIncorrect;
  for (const auto& alias : gold_aliases) {
    const auto needle = tokenize(alias);
    if (needle.empty()) continue;
    if (std::search(tokens.begin(), tokens.end(), needle.begin(), needle.end()) != tokens.end()) {
      return Correctness::kCorrect;
    }
  }
  return Correctness::kIncorrect;
}

// --- hedge lexicon --------------------------------------------------------

namespace {

std::vector<Phrase> phrases(std::initializer_list<const char*> texts) {
  std::vector<Phrase> out;
  for (const char* t : texts) out.push_back(tokenize(t));
  return out;
}

}  // namespace

const HedgeLexicon& HedgeLexicon::defaults() {
  static const HedgeLexicon lex{
      phrases({"i don t know", "i don know", "i have no idea", "no idea"}),
      phrases({"i m not sure", "not sure", "i think", "i believe", "maybe", "probably", "i guess",
               "if i had to guess", "could be"}),
  };
  return lex;
}

HedgeLexicon HedgeLexicon::parse(std::string_view text) {
  HedgeLexicon lex;
  std::vector<Phrase>* section = nullptr;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string trimmed = normalize_whitespace(line);
    if (trimmed.empty() || trimmed.front() == '#') continue;
    if (trimmed == "[DK]") {
      section = &lex.dk;
    } else if (trimmed == "[LO]") {
      section = &lex.lo;
    } else if (trimmed.front() == '[') {
      throw DataError("lexicon line " + std::to_string(line_no) + ": unknown section " + trimmed);
    } else {
      if (section == nullptr) throw DataError("lexicon line " + std::to_string(line_no) + ": phrase outside a section");
      auto tokens = tokenize(trimmed);
      if (!tokens.empty()) section->push_back(std::move(tokens));
    }
  }
  return lex;
}

HedgeLexicon HedgeLexicon::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open lexicon " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string HedgeLexicon::serialize() const {
  std::string out;
  auto emit = [&](const char* header, const std::vector<Phrase>& list) {
    out += header;
    out += '\n';
    for (const auto& p : list) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (i) out += ' ';
        out += p[i];
      }
      out += '\n';
    }
  };
  emit("[DK]", dk);
  emit("[LO]", lo);
  return out;
}

std::size_t match_phrase_at(std::span<const std::string> tokens, std::size_t pos, std::span<const Phrase> list) {
  std::size_t best = 0;
  for (const auto& p : list) {
    if (p.empty() || p.size() <= best || pos + p.size() > tokens.size()) continue;
    if (std::equal(p.begin(), p.end(), tokens.begin() + static_cast<std::ptrdiff_t>(pos))) best = p.size();
  }
  return best;
}

Confidence classify_confidence_lexicon(std::string_view response, const HedgeLexicon& lexicon) {
  const auto tokens = tokenize(response);
  if (match_phrase_at(tokens, 0, lexicon.dk) > 0) return Confidence::kDK;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (match_phrase_at(tokens, i, lexicon.lo) > 0) return Confidence::kLO;
  }
  return Confidence::kHI;
}

// --- trained classifier ---------------------------------------------------

namespace {

constexpr std::string_view kQuestionPrefix = "Q|";

std::vector<std::string> raw_grams(std::string_view question, std::string_view response,
                                   const ConfidenceClassifierConfig& config) {
  auto grams = ngrams_of(tokenize(response), config.ngrams.n_min, config.ngrams.n_max);
  if (config.include_question) {
    for (auto& g : ngrams_of(tokenize(question), config.ngrams.n_min, config.ngrams.n_max)) {
      grams.push_back(std::string(kQuestionPrefix) + g);
    }
  }
  return grams;
}

}  // namespace

std::vector<std::uint32_t> ConfidenceClassifier::features(std::string_view question, std::string_view response) const {
  std::vector<std::uint32_t> idx;
  for (const auto& g : raw_grams(question, response, config_)) {
    if (auto i = vocab_.find(g)) idx.push_back(static_cast<std::uint32_t>(*i));
  }
  std::sort(idx.begin(), idx.end());
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  return idx;
}

ConfidenceClassifier ConfidenceClassifier::train(std::span<const LabeledResponse> data,
                                                 const ConfidenceClassifierConfig& config) {
  std::array<std::size_t, 4> class_counts{};
  for (const auto& d : data) ++class_counts[static_cast<int>(d.label)];
  const auto distinct = std::count_if(class_counts.begin(), class_counts.end(), [](std::size_t c) { return c > 0; });
  if (distinct < 2) throw DataError("degenerate label distribution");

  ConfidenceClassifier model;
  model.config_ = config;

  std::map<std::string, std::size_t> counts;
  for (const auto& d : data) {
    for (auto& g : raw_grams(d.question, d.response, config)) ++counts[std::move(g)];
  }
  std::vector<std::string> kept;
  for (auto& [g, n] : counts) {
    if (n >= config.ngrams.min_count) kept.push_back(g);
  }
  model.vocab_ = NGramVocab(std::move(kept), config.ngrams);
  model.weights_.assign(model.vocab_.size(), {0.0, 0.0, 0.0, 0.0});

  const double n = static_cast<double>(data.size());
  for (int c = 0; c < 4; ++c) model.bias_[c] = std::log((static_cast<double>(class_counts[c]) + 0.5) / (n + 2.0));

  std::vector<std::vector<std::uint32_t>> rows;
  rows.reserve(data.size());
  for (const auto& d : data) rows.push_back(model.features(d.question, d.response));

  std::vector<std::array<double, 4>> grad(model.weights_.size());
  for (int iter = 0; iter < config.iterations; ++iter) {
    for (std::size_t f = 0; f < grad.size(); ++f) {
      for (int c = 0; c < 4; ++c) grad[f][c] = config.l2 * model.weights_[f][c];
    }
    for (std::size_t r = 0; r < rows.size(); ++r) {
      std::array<double, 4> s = model.bias_;
      for (auto f : rows[r]) {
        for (int c = 0; c < 4; ++c) s[c] += model.weights_[f][c];
      }
      const double mx = *std::max_element(s.begin(), s.end());
      double z = 0.0;
      for (double& v : s) {
        v = std::exp(v - mx);
        z += v;
      }
      const int y = static_cast<int>(data[r].label);
      for (int c = 0; c < 4; ++c) {
        const double residual = (s[c] / z - (c == y ? 1.0 : 0.0)) / n;
        for (auto f : rows[r]) grad[f][c] += residual;
      }
    }
    for (std::size_t f = 0; f < grad.size(); ++f) {
      for (int c = 0; c < 4; ++c) model.weights_[f][c] -= config.learning_rate * grad[f][c];
    }
  }
  return model;
}

std::array<double, 4> ConfidenceClassifier::scores(std::string_view question, std::string_view response) const {
  std::array<double, 4> s = bias_;
  for (auto f : features(question, response)) {
    for (int c = 0; c < 4; ++c) s[c] += weights_[f][c];
  }
  return s;
}

Confidence ConfidenceClassifier::predict(std::string_view question, std::string_view response) const {
  const auto s = scores(question, response);
  int best = 0;
  for (int c = 1; c < 4; ++c) {
    if (s[c] > s[best]) best = c;
  }
  return static_cast<Confidence>(best);
}

Json ConfidenceClassifier::to_json() const {
  Json j = Json::object();
  j["type"] = "confidence_classifier";
  j["n_min"] = config_.ngrams.n_min;
  j["n_max"] = config_.ngrams.n_max;
  j["min_count"] = config_.ngrams.min_count;
  j["include_question"] = config_.include_question;
  j["classes"] = Json::array({"OT", "DK", "LO", "HI"});
  j["vocab"] = vocab_.ngrams();
  Json w = Json::array();
  for (const auto& row : weights_) w.push_back(Json::array({row[0], row[1], row[2], row[3]}));
  j["weights"] = std::move(w);
  j["bias"] = Json::array({bias_[0], bias_[1], bias_[2], bias_[3]});
  return j;
}

ConfidenceClassifier ConfidenceClassifier::from_json(const Json& j) {
  ConfidenceClassifier m;
  try {
    m.config_.ngrams.n_min = j.at("n_min").get<int>();
    m.config_.ngrams.n_max = j.at("n_max").get<int>();
    m.config_.ngrams.min_count = j.at("min_count").get<std::size_t>();
    m.config_.include_question = j.at("include_question").get<bool>();
    m.vocab_ = NGramVocab(j.at("vocab").get<std::vector<std::string>>(), m.config_.ngrams);
    for (const auto& row : j.at("weights")) {
      m.weights_.push_back({row.at(0).get<double>(), row.at(1).get<double>(), row.at(2).get<double>(),
                            row.at(3).get<double>()});
    }
    const auto& b = j.at("bias");
    for (int c = 0; c < 4; ++c) m.bias_[c] = b.at(c).get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed confidence classifier: ") + e.what());
  }
  if (m.weights_.size() != m.vocab_.size()) throw DataError("classifier weights do not match vocab size");
  return m;
}

PrecisionRecall binary_precision_recall(std::span<const Confidence> predicted, std::span<const Confidence> gold,
                                        Confidence positive) {
  if (predicted.size() != gold.size()) throw DataError("prediction and gold lengths differ");
  PrecisionRecall pr;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool p = predicted[i] == positive;
    const bool g = gold[i] == positive;
    if (p && g) ++pr.true_positive;
    if (p && !g) ++pr.false_positive;
    if (!p && g) ++pr.false_negative;
  }
  const auto tp = static_cast<double>(pr.true_positive);
  if (pr.true_positive + pr.false_positive > 0) pr.precision = tp / static_cast<double>(pr.true_positive + pr.false_positive);
  if (pr.true_positive + pr.false_negative > 0) pr.recall = tp / static_cast<double>(pr.true_positive + pr.false_negative);
  return pr;
}

}  // namespace lincal
