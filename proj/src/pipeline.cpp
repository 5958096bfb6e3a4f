#include "lincal/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

namespace lincal {

// --- recalibration ----------------------------------------------------------

RecalibrationResult recalibrate(std::span<const QARecord> corpus, const CalibratorModel& model,
                                const ControlPolicy& policy, const StateStore* store, const HedgeLexicon& lexicon) {
  if (!policy.valid()) throw DataError("invalid control policy: need 0 <= t_dk <= t_lo <= 1");
  RecalibrationResult result;
  result.records.reserve(corpus.size());
  for (const auto& in : corpus) {
    QARecord out = in;
    try {
      const StateBundle states = states_for(in, model, store);
      const double p = model.forward(states);
      const ControlToken token = select_token(p, policy);
      RewriteResult rw = rewrite(in.response, token, lexicon);
      out.extra["original_response"] = in.response;
      out.extra["p_correct"] = p;
      out.extra["control_token"] = to_string(token);
      if (rw.text != in.response && !out.annotations.empty()) {
        // judgments of the old wording do not carry over to the rewrite
        Json old = Json::array();
        for (const auto& a : out.annotations) {
          old.push_back({{"annotator_id", a.annotator_id},
                         {"confidence", to_string(a.confidence)},
                         {"correctness4", a.correctness4 ? Json(to_string(*a.correctness4)) : Json(nullptr)}});
        }
        out.extra["original_annotations"] = std::move(old);
        out.annotations.clear();
      }
      out.response = std::move(rw.text);
    } catch (const DataError& e) {
      out.extra["recalibration_error"] = e.what();
      result.failures.push_back({in.id, e.what()});
    }
    result.records.push_back(std::move(out));
  }
  std::sort(result.records.begin(), result.records.end(),
            [](const QARecord& a, const QARecord& b) { return a.id < b.id; });
  return result;
}

std::set<std::string> tuning_ids(std::span<const QARecord> corpus, std::size_t count) {
  std::vector<std::string> ids;
  ids.reserve(corpus.size());
  for (const auto& r : corpus) ids.push_back(r.id);
  std::sort(ids.begin(), ids.end());
  if (ids.size() > count) ids.resize(count);
  return {ids.begin(), ids.end()};
}

// --- evaluation -------------------------------------------------------------

std::string_view to_string(LabelSource s) {
  return s == LabelSource::kHumanMajority ? "human_majority" : "automatic";
}

LabelSource parse_label_source(std::string_view s) {
  if (s == "human_majority" || s == "human") return LabelSource::kHumanMajority;
  if (s == "automatic" || s == "auto") return LabelSource::kAutomatic;
  throw DataError("unknown label source '" + std::string(s) + "'");
}

std::optional<Judgement> judge(const QARecord& record, LabelSource source, const HedgeLexicon& lexicon,
                               const ConfidenceClassifier* classifier) {
  Judgement j;
  if (source == LabelSource::kAutomatic) {
    j.confidence = classifier ? classifier->predict(record.question, record.response)
                              : classify_confidence_lexicon(record.response, lexicon);
    if (j.confidence != Confidence::kOT) j.correct = match_correct(record.response, record.gold_aliases);
    return j;
  }
  if (record.annotations.empty()) return std::nullopt;
  const auto conf = majority_label(record.annotations, LabelAxis::kConfidence);
  if (!conf) return std::nullopt;
  j.confidence = conf->confidence();
  if (j.confidence == Confidence::kOT) return j;
  std::vector<AnnotationLabel> graded;
  for (const auto& a : record.annotations) {
    if (a.correctness4) graded.push_back(a);
  }
  const auto binary = majority_label(graded, LabelAxis::kCorrectnessBinary);
  if (!binary) return std::nullopt;
  j.correct = binary->correctness();
  if (auto c4 = majority_label(graded, LabelAxis::kCorrectness4)) j.correctness4 = c4->correctness4();
  return j;
}

namespace {

SystemTable build_table(const std::vector<Judgement>& judged) {
  SystemTable t;
  t.total = judged.size();
  std::array<std::array<std::size_t, 4>, 4> c4{};
  std::array<std::array<std::size_t, 2>, 4> bin{};
  for (const auto& j : judged) {
    const int row = static_cast<int>(j.confidence);
    ++t.rows[row].count;
    if (j.correctness4) {
      ++c4[row][static_cast<int>(*j.correctness4)];
      ++t.rows[row].graded4;
    }
    if (j.correct) ++bin[row][static_cast<int>(*j.correct)];
    const bool ok = j.correct == Correctness::kCorrect;
    t.correct += ok;
    if (j.confidence == Confidence::kHI) {
      ++t.hi_count;
      t.hi_correct += ok;
    }
  }
  for (int row = 0; row < 4; ++row) {
    auto& r = t.rows[row];
    if (t.total) r.share_pct = 100.0 * static_cast<double>(r.count) / static_cast<double>(t.total);
    if (r.graded4) {
      std::array<double, 4> pct{};
      for (int c = 0; c < 4; ++c) pct[c] = 100.0 * static_cast<double>(c4[row][c]) / static_cast<double>(r.graded4);
      r.correctness4_pct = pct;
    }
    const std::size_t graded = bin[row][0] + bin[row][1];
    if (row != static_cast<int>(Confidence::kOT) && graded) {
      r.binary_pct = std::array<double, 2>{100.0 * static_cast<double>(bin[row][0]) / static_cast<double>(graded),
                                           100.0 * static_cast<double>(bin[row][1]) / static_cast<double>(graded)};
    }
  }
  if (t.total) t.accuracy = static_cast<double>(t.correct) / static_cast<double>(t.total);
  if (t.hi_count) t.p_correct_given_hi = static_cast<double>(t.hi_correct) / static_cast<double>(t.hi_count);
  return t;
}

}  // namespace

EvaluationReport evaluate(std::span<const QARecord> vanilla, std::span<const QARecord> recalibrated,
                          const EvaluationOptions& options) {
  std::map<std::string, const QARecord*> van, rec;
  for (const auto& r : vanilla) van[r.id] = &r;
  for (const auto& r : recalibrated) rec[r.id] = &r;
  std::vector<std::string> only;
  for (const auto& [id, r] : van) {
    if (!rec.contains(id)) only.push_back(id);
  }
  for (const auto& [id, r] : rec) {
    if (!van.contains(id)) only.push_back(id);
  }
  if (!only.empty()) {
    std::string msg = "vanilla and recalibrated corpora differ in record ids:";
    for (std::size_t i = 0; i < only.size() && i < 20; ++i) msg += " " + only[i];
    if (only.size() > 20) msg += " ... (" + std::to_string(only.size()) + " total)";
    throw DataError(msg);
  }

  const HedgeLexicon& lexicon = options.lexicon ? *options.lexicon : HedgeLexicon::defaults();
  const auto excluded = tuning_ids(vanilla, options.tuning_count);

  EvaluationReport report;
  report.labels = options.labels;
  if (report.labels == LabelSource::kHumanMajority) {
    auto annotated = [&](const std::map<std::string, const QARecord*>& m) {
      return std::any_of(m.begin(), m.end(), [&](const auto& kv) {
        return !excluded.contains(kv.first) && !kv.second->annotations.empty();
      });
    };
    if (!annotated(van) || !annotated(rec)) {
      report.labels = LabelSource::kAutomatic;
      report.label_fallback = true;
    }
  }
  report.excluded_tuning = excluded.size();
  std::vector<Judgement> jv, jr;
  std::vector<double> probs;
  std::vector<int> prob_labels;
  for (const auto& [id, vr] : van) {
    if (excluded.contains(id)) continue;
    const QARecord& rr = *rec.at(id);
    auto a = judge(*vr, report.labels, lexicon, options.classifier);
    auto b = judge(rr, report.labels, lexicon, options.classifier);
    if (!a || !b) {
      ++report.dropped;
      continue;
    }
    ++report.confusion[static_cast<int>(a->confidence)][static_cast<int>(b->confidence)];
    if (auto p = rr.extra.find("p_correct"); p != rr.extra.end() && p->is_number() && a->correct) {
      probs.push_back(p->get<double>());
      prob_labels.push_back(*a->correct == Correctness::kCorrect ? 1 : 0);
    }
    jv.push_back(*a);
    jr.push_back(*b);
  }
  report.evaluated = jv.size();
  report.vanilla = build_table(jv);
  report.recalibrated = build_table(jr);

  if (!jv.empty()) {
    std::vector<int> ca, cb;
    std::vector<HiOutcome> ha, hb;
    for (std::size_t i = 0; i < jv.size(); ++i) {
      const bool okv = jv[i].correct == Correctness::kCorrect;
      const bool okr = jr[i].correct == Correctness::kCorrect;
      ca.push_back(okv);
      cb.push_back(okr);
      ha.push_back({jv[i].confidence == Confidence::kHI, okv});
      hb.push_back({jr[i].confidence == Confidence::kHI, okr});
    }
    report.p_value_accuracy = paired_permutation_test(ca, cb, options.permutation);
    report.p_value_hi = paired_permutation_test_hi(ha, hb, options.permutation);
  }
  if (!probs.empty()) {
    report.calibration = bin_reliability(probs, prob_labels, BinSpec::equal_width(options.calibration_bins));
  }
  return report;
}

namespace {

Json table_to_json(const SystemTable& t) {
  Json j = Json::object();
  j["total"] = t.total;
  j["accuracy"] = t.accuracy;
  j["hi_count"] = t.hi_count;
  j["p_correct_given_hi"] = t.p_correct_given_hi;
  Json rows = Json::object();
  for (int c = 0; c < 4; ++c) {
    const auto& r = t.rows[c];
    Json rj = Json::object();
    rj["count"] = r.count;
    rj["share_pct"] = r.share_pct;
    if (r.correctness4_pct) {
      Json c4 = Json::object();
      for (int k = 0; k < 4; ++k) c4[std::string(to_string(static_cast<Correctness4>(k)))] = (*r.correctness4_pct)[k];
      rj["correctness4_pct"] = std::move(c4);
    } else {
      rj["correctness4_pct"] = nullptr;
    }
    if (r.binary_pct) {
      rj["incorrect_pct"] = (*r.binary_pct)[0];
      rj["correct_pct"] = (*r.binary_pct)[1];
    } else {
      rj["incorrect_pct"] = nullptr;
      rj["correct_pct"] = nullptr;
    }
    rows[std::string(to_string(static_cast<Confidence>(c)))] = std::move(rj);
  }
  j["rows"] = std::move(rows);
  return j;
}

std::string cell(const std::optional<double>& v) {
  if (!v) return "     ---";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%8.2f", *v);
  return buf;
}

void append_table(std::string* out, const char* title, const SystemTable& t) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%s (n=%zu, accuracy %.2f%%, p(correct|HI) %.2f%% over %zu HI)\n", title, t.total,
                100.0 * t.accuracy, 100.0 * t.p_correct_given_hi, t.hi_count);
  *out += buf;
  *out += "  class   share     OTHER    WRONG    EXTRA    RIGHT      inc     corr\n";
  for (int c = 0; c < 4; ++c) {
    const auto& r = t.rows[c];
    std::snprintf(buf, sizeof(buf), "  %-4s %7.2f%%", std::string(to_string(static_cast<Confidence>(c))).c_str(),
                  r.share_pct);
    std::string line = buf;
    for (int k = 0; k < 4; ++k) {
      line += " " + cell(r.correctness4_pct ? std::optional<double>((*r.correctness4_pct)[k]) : std::nullopt);
    }
    line += " " + cell(r.binary_pct ? std::optional<double>((*r.binary_pct)[0]) : std::nullopt);
    line += " " + cell(r.binary_pct ? std::optional<double>((*r.binary_pct)[1]) : std::nullopt);
    *out += line + "\n";
  }
}

}  // namespace

Json evaluation_to_json(const EvaluationReport& report) {
  Json j = Json::object();
  j["label_source"] = to_string(report.labels);
  j["label_fallback"] = report.label_fallback;
  j["evaluated"] = report.evaluated;
  j["excluded_tuning"] = report.excluded_tuning;
  j["dropped"] = report.dropped;
  j["vanilla"] = table_to_json(report.vanilla);
  j["recalibrated"] = table_to_json(report.recalibrated);
  Json confusion = Json::array();
  for (const auto& row : report.confusion) confusion.push_back(Json(row));
  j["confusion_classes"] = Json::array({"OT", "DK", "LO", "HI"});
  j["confusion"] = std::move(confusion);
  j["p_value_hi"] = report.p_value_hi;
  j["p_value_accuracy"] = report.p_value_accuracy;
  j["calibration"] = report.calibration ? reliability_to_json(*report.calibration) : Json(nullptr);
  return j;
}

std::string evaluation_table_text(const EvaluationReport& report) {
  std::string out;
  if (report.labels == LabelSource::kAutomatic) {
    if (report.label_fallback) out += "NOTE: no human annotations found; falling back to automatic labels\n";
    out += "NOTE: labels are automatic (match-based correctness, lexicon confidence), not human majorities\n";
  }
  char buf[256];
  std::snprintf(buf, sizeof(buf), "evaluated %zu records (%zu excluded for tuning, %zu without majority)\n\n",
                report.evaluated, report.excluded_tuning, report.dropped);
  out += buf;
  append_table(&out, "vanilla", report.vanilla);
  out += "\n";
  append_table(&out, "recalibrated", report.recalibrated);
  out += "\nconfusion (rows vanilla, columns recalibrated)\n        OT      DK      LO      HI\n";
  for (int r = 0; r < 4; ++r) {
    std::snprintf(buf, sizeof(buf), "  %-3s %7zu %7zu %7zu %7zu\n", std::string(to_string(static_cast<Confidence>(r))).c_str(),
                  report.confusion[r][0], report.confusion[r][1], report.confusion[r][2], report.confusion[r][3]);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "\npaired permutation p-value: p(correct|HI) %.6g, accuracy %.6g\n",
                report.p_value_hi, report.p_value_accuracy);
  out += buf;
  if (report.calibration) {
    std::snprintf(buf, sizeof(buf), "calibrator: ECE %.4f  MCE %.4f  ANLL %.4f (n=%zu)\n", report.calibration->ece,
                  report.calibration->mce, report.calibration->anll, report.calibration->total_n);
    out += buf;
  }
  return out;
}

}  // namespace lincal
