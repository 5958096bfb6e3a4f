#include "synthetic.hpp"

#include <algorithm>
#include <array>

#include "lincal/scoring.hpp"

namespace lincal::synth {
namespace {

constexpr std::array<const char*, 24> kFiller = {
    "river", "castle", "painter", "island", "engine", "novel",   "planet", "bridge",
    "garden", "market", "violin", "harbor", "empire", "glacier", "temple", "canyon",
    "comet",  "forest", "lantern", "mirror", "orchard", "saddle", "thunder", "valley"};

constexpr std::array<const char*, 12> kSyllables = {"ka", "zu", "mor", "tel", "vi", "dran",
                                                    "qo", "pex", "lu", "sar", "nim", "fo"};

}  // namespace

std::string nonce_word(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> syl(0, kSyllables.size() - 1);
  std::string w;
  for (int i = 0; i < 3; ++i) w += kSyllables[syl(rng)];
  w[0] = static_cast<char>(w[0] - 'a' + 'A');
  return w;
}

Corpus synthetic_corpus(const SyntheticOptions& o) {
  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> filler(0, kFiller.size() - 1);
  Corpus out;
  for (std::size_t i = 0; i < o.count; ++i) {
    QARecord r;
    const bool easy = u(rng) < o.easy_share;
    r.question = std::string(easy ? "Easy" : "Hard") + " question " + std::to_string(i) + ": which " +
                 kFiller[filler(rng)] + " is near the " + kFiller[filler(rng)] + "?";
    r.id = record_id_for(r.question);
    const std::string alias = nonce_word(rng);
    r.gold_aliases = {alias};
    const bool correct = u(rng) < (easy ? o.easy_accuracy : o.hard_accuracy);
    std::string answer = alias;
    while (correct == false && tokenize(answer) == tokenize(alias)) answer = nonce_word(rng);
    const std::string content = "It is " + answer + ", by the " + kFiller[filler(rng)] + ".";
    const double style = u(rng);
    if (style < o.dk_share) {
      r.response = "I don't know, but I think it is " + answer + ".";
    } else if (style < o.dk_share + o.lo_share) {
      r.response = "I think it is " + answer + ", by the " + kFiller[filler(rng)] + ".";
    } else {
      r.response = content;
    }
    r.split = o.split;
    out.push_back(std::move(r));
  }
  std::sort(out.begin(), out.end(), [](const QARecord& a, const QARecord& b) { return a.id < b.id; });
  return out;
}

bool is_easy(const QARecord& record) { return record.question.starts_with("Easy"); }

void annotate_simulated(Corpus* corpus, std::uint64_t seed, double noise) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> cls(1, 3);
  for (auto& r : *corpus) {
    r.annotations.clear();
    const Confidence conf = classify_confidence_lexicon(r.response);
    const bool ok = match_correct(r.response, r.gold_aliases) == Correctness::kCorrect;
    for (int a = 0; a < 3; ++a) {
      AnnotationLabel l;
      l.annotator_id = "sim" + std::to_string(a);
      l.confidence = a == 2 && u(rng) < noise ? static_cast<Confidence>(cls(rng)) : conf;
      l.correctness4 = ok ? Correctness4::kRight : Correctness4::kWrong;
      r.annotations.push_back(l);
    }
  }
}

}  // namespace lincal::synth
