#include "lincal/corpus.hpp"

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace lincal {

std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    case Split::kTest: return "test";
  }
  return "train";
}

std::string_view to_string(Confidence c) {
  switch (c) {
    case Confidence::kOT: return "OT";
    case Confidence::kDK: return "DK";
    case Confidence::kLO: return "LO";
    case Confidence::kHI: return "HI";
  }
  return "OT";
}

std::string_view to_string(Correctness4 c) {
  switch (c) {
    case Correctness4::kOther: return "OTHER";
    case Correctness4::kWrong: return "WRONG";
    case Correctness4::kExtra: return "EXTRA";
    case Correctness4::kRight: return "RIGHT";
  }
  return "OTHER";
}

std::string_view to_string(Correctness c) {
  return c == Correctness::kCorrect ? "correct" : "incorrect";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "valid" || s == "dev" || s == "validation") return Split::kValid;
  if (s == "test") return Split::kTest;
  throw DataError("unknown split '" + std::string(s) + "'");
}

Confidence parse_confidence(std::string_view s) {
  if (s == "OT") return Confidence::kOT;
  if (s == "DK") return Confidence::kDK;
  if (s == "LO") return Confidence::kLO;
  if (s == "HI") return Confidence::kHI;
  throw DataError("unknown confidence class '" + std::string(s) + "'");
}

Correctness4 parse_correctness4(std::string_view s) {
  if (s == "OTHER") return Correctness4::kOther;
  if (s == "WRONG") return Correctness4::kWrong;
  if (s == "EXTRA") return Correctness4::kExtra;
  if (s == "RIGHT") return Correctness4::kRight;
  throw DataError("unknown correctness class '" + std::string(s) + "'");
}

// --- ingestion ------------------------------------------------------------

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

constexpr std::string_view kDisambiguation = " (disambiguation)";

}  // namespace

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

std::string strip_disambiguation(std::string_view alias) {
  std::string out = normalize_whitespace(alias);
  if (out == kDisambiguation.substr(1)) return {};
  while (out.ends_with(kDisambiguation)) {
    out.erase(out.size() - kDisambiguation.size());
    out = normalize_whitespace(out);
  }
  return out;
}

std::string record_id_for(std::string_view question) {
  const std::string norm = normalize_whitespace(question);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : norm) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "q%016llx", static_cast<unsigned long long>(h));
  return buf;
}

IngestResult ingest_trivia(std::span<const RawQAEntry> web, std::span<const RawQAEntry> wiki, Split split) {
  IngestResult result;
  std::unordered_map<std::string, std::size_t> by_question;

  auto add_section = [&](std::span<const RawQAEntry> entries, const char* section) {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const RawQAEntry& e = entries[i];
      std::string question = normalize_whitespace(e.question);
      if (question.empty()) {
        result.errors.push_back({section, i, "missing question text"});
        continue;
      }
      std::vector<std::string> aliases;
      for (const auto& a : e.aliases) {
        std::string stripped = strip_disambiguation(a);
        if (!stripped.empty()) aliases.push_back(std::move(stripped));
      }
      if (aliases.empty()) {
        result.errors.push_back({section, i, "entry has no gold aliases"});
        continue;
      }
      auto [it, inserted] = by_question.try_emplace(question, result.records.size());
      if (inserted) {
        QARecord r;
        r.id = record_id_for(question);
        r.question = question;
        r.split = split;
        result.records.push_back(std::move(r));
      }
      auto& gold = result.records[it->second].gold_aliases;
      for (auto& a : aliases) {
        if (std::find(gold.begin(), gold.end(), a) == gold.end()) gold.push_back(std::move(a));
      }
    }
  };
  add_section(web, "web");
  add_section(wiki, "wiki");

  std::sort(result.records.begin(), result.records.end(),
            [](const QARecord& a, const QARecord& b) { return a.id < b.id; });
  return result;
}

namespace {

RawQAEntry raw_from_json(const Json& j) {
  RawQAEntry e;
  if (!j.is_object()) throw DataError("raw QA entry is not a JSON object");
  if (j.contains("Question")) {
    e.question = j.at("Question").get<std::string>();
  } else if (j.contains("question")) {
    e.question = j.at("question").get<std::string>();
  }
  if (auto it = j.find("Answer"); it != j.end() && it->is_object()) {
    if (auto v = it->find("Value"); v != it->end() && v->is_string()) e.aliases.push_back(v->get<std::string>());
    if (auto a = it->find("Aliases"); a != it->end() && a->is_array()) {
      for (const auto& x : *a) e.aliases.push_back(x.get<std::string>());
    }
  }
  for (const char* key : {"gold_aliases", "aliases"}) {
    if (auto a = j.find(key); a != j.end() && a->is_array()) {
      for (const auto& x : *a) e.aliases.push_back(x.get<std::string>());
    }
  }
  return e;
}

}  // namespace

std::vector<RawQAEntry> parse_raw_entries(std::string_view content) {
  std::vector<RawQAEntry> out;
  Json whole = Json::parse(content.begin(), content.end(), nullptr, /*allow_exceptions=*/false);
  if (!whole.is_discarded()) {
    const Json* arr = &whole;
    if (whole.is_object() && whole.contains("Data")) arr = &whole.at("Data");
    if (arr->is_array()) {
      for (const auto& j : *arr) out.push_back(raw_from_json(j));
    } else {
      out.push_back(raw_from_json(*arr));
    }
    return out;
  }
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    std::size_t nl = content.find('\n', pos);
    if (nl == std::string_view::npos) nl = content.size();
    std::string_view line = content.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (normalize_whitespace(line).empty()) continue;
    Json j = Json::parse(line.begin(), line.end(), nullptr, false);
    if (j.is_discarded()) throw DataError("line " + std::to_string(line_no) + ": invalid JSON");
    out.push_back(raw_from_json(j));
  }
  return out;
}

// --- JSONL persistence ----------------------------------------------------

namespace {

const std::unordered_set<std::string>& known_keys() {
  static const std::unordered_set<std::string> keys = {
      "id", "question", "gold_aliases", "response", "split", "annotations", "state_ref"};
  return keys;
}

}  // namespace

Json record_to_json(const QARecord& r) {
  Json j = Json::object();
  j["id"] = r.id;
  j["question"] = r.question;
  j["gold_aliases"] = r.gold_aliases;
  j["response"] = r.response;
  j["split"] = to_string(r.split);
  Json anns = Json::array();
  for (const auto& a : r.annotations) {
    Json aj = Json::object();
    aj["annotator_id"] = a.annotator_id;
    aj["confidence"] = to_string(a.confidence);
    if (a.correctness4) {
      aj["correctness4"] = to_string(*a.correctness4);
    } else {
      aj["correctness4"] = nullptr;
    }
    anns.push_back(std::move(aj));
  }
  j["annotations"] = std::move(anns);
  if (r.state_ref) j["state_ref"] = *r.state_ref;
  for (const auto& [k, v] : r.extra.items()) j[k] = v;
  return j;
}

QARecord record_from_json(const Json& j) {
  if (!j.is_object()) throw DataError("record is not a JSON object");
  QARecord r;
  try {
    r.id = j.at("id").get<std::string>();
    r.question = j.at("question").get<std::string>();
    r.gold_aliases = j.at("gold_aliases").get<std::vector<std::string>>();
    if (auto it = j.find("response"); it != j.end() && !it->is_null()) r.response = it->get<std::string>();
    if (auto it = j.find("split"); it != j.end() && !it->is_null()) r.split = parse_split(it->get<std::string>());
    if (auto it = j.find("annotations"); it != j.end() && it->is_array()) {
      for (const auto& aj : *it) {
        AnnotationLabel a;
        a.annotator_id = aj.value("annotator_id", "");
        a.confidence = parse_confidence(aj.at("confidence").get<std::string>());
        if (auto c = aj.find("correctness4"); c != aj.end() && !c->is_null()) {
          a.correctness4 = parse_correctness4(c->get<std::string>());
        }
        if (!a.valid()) {
          throw DataError("annotation by '" + a.annotator_id + "' violates the taxonomy (correctness4 must be "
                          "absent exactly when confidence is OT)");
        }
        r.annotations.push_back(std::move(a));
      }
    }
    if (auto it = j.find("state_ref"); it != j.end() && !it->is_null()) r.state_ref = it->get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed record: ") + e.what());
  }
  if (r.gold_aliases.empty()) throw DataError("record " + r.id + " has no gold aliases");
  for (const auto& a : r.gold_aliases) {
    if (a.ends_with(kDisambiguation)) throw DataError("record " + r.id + " has an unstripped alias '" + a + "'");
  }
  for (const auto& [k, v] : j.items()) {
    if (!known_keys().contains(k)) r.extra[k] = v;
  }
  return r;
}

Corpus parse_corpus(std::string_view jsonl) {
  Corpus corpus;
  std::unordered_set<std::string> ids;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < jsonl.size()) {
    std::size_t nl = jsonl.find('\n', pos);
    if (nl == std::string_view::npos) nl = jsonl.size();
    std::string_view line = jsonl.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (normalize_whitespace(line).empty()) continue;
    Json j = Json::parse(line.begin(), line.end(), nullptr, false);
    if (j.is_discarded()) throw DataError("corpus line " + std::to_string(line_no) + ": invalid JSON");
    QARecord r;
    try {
      r = record_from_json(j);
    } catch (const DataError& e) {
      throw DataError("corpus line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!ids.insert(r.id).second) throw DataError("duplicate record id " + r.id);
    corpus.push_back(std::move(r));
  }
  return corpus;
}

std::string serialize_corpus(const Corpus& corpus) {
  std::string out;
  for (const auto& r : corpus) {
    out += record_to_json(r).dump();
    out += '\n';
  }
  return out;
}

Corpus read_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open corpus file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_corpus(ss.str());
}

void write_corpus(const std::string& path, const Corpus& corpus) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write corpus file " + path);
  out << serialize_corpus(corpus);
}

// --- annotation aggregation ----------------------------------------------

std::optional<MajorityValue> majority_label(std::span<const AnnotationLabel> labels, LabelAxis axis) {
  if (labels.empty()) throw DataError("no annotations");
  std::map<int, std::size_t> votes;
  for (const auto& l : labels) {
    int v = 0;
    switch (axis) {
      case LabelAxis::kConfidence:
        v = static_cast<int>(l.confidence);
        break;
      case LabelAxis::kCorrectness4:
      case LabelAxis::kCorrectnessBinary:
        if (!l.correctness4) throw DataError("label by '" + l.annotator_id + "' has no correctness");
        v = static_cast<int>(*l.correctness4);
        if (axis == LabelAxis::kCorrectnessBinary) {
          v = (*l.correctness4 == Correctness4::kExtra || *l.correctness4 == Correctness4::kRight) ? 1 : 0;
        }
        break;
    }
    ++votes[v];
  }
  for (const auto& [value, count] : votes) {
    if (2 * count > labels.size()) return MajorityValue{axis, value};
  }
  return std::nullopt;
}

namespace {

// Vote value per label on an axis; -1 stands for "no correctness".
int axis_vote(const AnnotationLabel& l, LabelAxis axis) {
  if (axis == LabelAxis::kConfidence) return static_cast<int>(l.confidence);
  if (!l.correctness4) return -1;
  if (axis == LabelAxis::kCorrectness4) return static_cast<int>(*l.correctness4);
  return (*l.correctness4 == Correctness4::kExtra || *l.correctness4 == Correctness4::kRight) ? 1 : 0;
}

}  // namespace

CorpusSplitStats agreement_stats(std::span<const QARecord> corpus) {
  CorpusSplitStats stats;
  stats.total = corpus.size();
  std::array<std::size_t, 3> unanimous{};
  std::array<std::size_t, 3> majority{};
  constexpr std::array<LabelAxis, 3> axes = {LabelAxis::kConfidence, LabelAxis::kCorrectness4,
                                             LabelAxis::kCorrectnessBinary};
  for (const auto& r : corpus) {
    if (r.annotations.size() != 3) {
      throw DataError("record " + r.id + " has " + std::to_string(r.annotations.size()) +
                      " annotations; agreement statistics need exactly 3");
    }
    for (std::size_t a = 0; a < axes.size(); ++a) {
      const int v0 = axis_vote(r.annotations[0], axes[a]);
      const int v1 = axis_vote(r.annotations[1], axes[a]);
      const int v2 = axis_vote(r.annotations[2], axes[a]);
      if (v0 == v1 && v1 == v2) ++unanimous[a];
      int winner = -2;
      if (v0 == v1 || v0 == v2) {
        winner = v0;
      } else if (v1 == v2) {
        winner = v1;
      }
      if (winner != -2) ++majority[a];
      if (a == 0) ++stats.confidence_counts[winner >= 0 ? winner : 4];
      if (a == 1) ++stats.correctness4_counts[winner >= 0 ? winner : 4];
    }
  }
  auto pct = [&](std::size_t n) { return stats.total == 0 ? 0.0 : 100.0 * static_cast<double>(n) / stats.total; };
  stats.confidence = {pct(unanimous[0]), pct(majority[0])};
  stats.correctness4 = {pct(unanimous[1]), pct(majority[1])};
  stats.correctness_binary = {pct(unanimous[2]), pct(majority[2])};
  return stats;
}

}  // namespace lincal
