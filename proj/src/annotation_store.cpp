#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <mutex>
#include <sstream>

#include "lincal/annotation_service.hpp"
#include "lincal/scoring.hpp"

namespace lincal {
namespace {

std::string_view to_string(OnboardingStatus s) {
  switch (s) {
    case OnboardingStatus::kPending: return "pending";
    case OnboardingStatus::kPassed: return "passed";
    case OnboardingStatus::kFailed: return "failed";
  }
  return "pending";
}

std::string numbered(const char* prefix, std::uint64_t n) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%06llu", prefix, static_cast<unsigned long long>(n));
  return buf;
}

Json label_json(const std::string& record_id, Confidence c, const std::optional<Correctness4>& c4) {
  Json j = Json::object();
  j["record_id"] = record_id;
  j["confidence"] = to_string(c);
  j["correctness4"] = c4 ? Json(to_string(*c4)) : Json(nullptr);
  return j;
}

std::optional<Correctness> binary_of(const std::optional<Correctness4>& c4) {
  if (!c4) return std::nullopt;
  return binarize_correctness(*c4);
}

}  // namespace

AnnotationStore::AnnotationStore(Corpus corpus, std::vector<OnboardingItem> onboarding, Options options)
    : onboarding_(std::move(onboarding)), options_(std::move(options)) {
  if (onboarding_.empty()) throw DataError("annotation service needs at least one onboarding item");
  for (const auto& item : onboarding_) {
    if (!item.gold.valid()) throw DataError("onboarding gold label for " + item.record.id + " violates the taxonomy");
  }
  for (auto& r : corpus) {
    std::string id = r.id;
    if (!corpus_.emplace(std::move(id), std::move(r)).second) throw DataError("duplicate record id in corpus");
  }
  if (options_.batch_size == 0 || options_.coverage_target == 0) throw DataError("batch size and coverage must be positive");

  if (options_.log_path.empty()) return;
  namespace fs = std::filesystem;
  if (fs::exists(options_.log_path)) {
    std::ifstream in(options_.log_path, std::ios::binary);
    std::string line;
    std::uintmax_t valid_bytes = 0;
    std::uintmax_t offset = 0;
    while (std::getline(in, line)) {
      const bool complete = !in.eof();
      offset += line.size() + (complete ? 1 : 0);
      if (normalize_whitespace(line).empty()) {
        if (complete) valid_bytes = offset;
        continue;
      }
      Json event = Json::parse(line, nullptr, false);
      if (event.is_discarded() || !complete) {
        // a torn final write is dropped; anything else is corruption
        if (in.peek() == std::char_traits<char>::eof()) break;
        throw DataError("corrupt annotation log line in " + options_.log_path);
      }
      apply(event);
      valid_bytes = offset;
    }
    in.close();
    if (valid_bytes != fs::file_size(options_.log_path)) fs::resize_file(options_.log_path, valid_bytes);
  }
  log_.open(options_.log_path, std::ios::binary | std::ios::app);
  if (!log_) throw DataError("cannot open annotation log " + options_.log_path);
}

AnnotationStore::~AnnotationStore() = default;

std::int64_t AnnotationStore::now() const {
  if (options_.clock) return options_.clock();
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

void AnnotationStore::record(const Json& event) {
  apply(event);
  if (log_.is_open()) {
    log_ << event.dump() << '\n';
    log_.flush();
    if (!log_) throw DataError("failed to append to annotation log");
  }
}

void AnnotationStore::apply(const Json& e) {
  const std::string type = e.at("type").get<std::string>();
  if (type == "register") {
    Annotator a;
    a.name = e.at("name").get<std::string>();
    annotators_[e.at("annotator_id").get<std::string>()] = std::move(a);
    ++next_annotator_;
  } else if (type == "assign") {
    Batch b;
    b.annotator_id = e.at("annotator_id").get<std::string>();
    b.onboarding = e.at("onboarding").get<bool>();
    b.record_ids = e.at("record_ids").get<std::vector<std::string>>();
    b.issued_ms = e.at("ts").get<std::int64_t>();
    const std::string id = e.at("batch_id").get<std::string>();
    Annotator& a = annotators_.at(b.annotator_id);
    a.batches.push_back(id);
    if (!b.onboarding) {
      for (const auto& r : b.record_ids) {
        a.assigned.insert(r);
        leased_[r].insert(b.annotator_id);
      }
    }
    batches_[id] = std::move(b);
    ++next_batch_;
  } else if (type == "expire") {
    Batch& b = batches_.at(e.at("batch_id").get<std::string>());
    b.expired = true;
    if (!b.onboarding) {
      for (const auto& r : b.record_ids) leased_[r].erase(b.annotator_id);
    }
  } else if (type == "onboarding") {
    Batch& b = batches_.at(e.at("batch_id").get<std::string>());
    b.submitted = true;
    annotators_.at(b.annotator_id).status =
        e.at("passed").get<bool>() ? OnboardingStatus::kPassed : OnboardingStatus::kFailed;
  } else if (type == "labels") {
    const std::string batch_id = e.at("batch_id").get<std::string>();
    Batch& b = batches_.at(batch_id);
    b.submitted = true;
    const std::int64_t ts = e.at("ts").get<std::int64_t>();
    for (const auto& lj : e.at("labels")) {
      LabelEvent ev;
      ev.annotator_id = b.annotator_id;
      ev.record_id = lj.at("record_id").get<std::string>();
      ev.confidence = parse_confidence(lj.at("confidence").get<std::string>());
      if (!lj.at("correctness4").is_null()) ev.correctness4 = parse_correctness4(lj.at("correctness4").get<std::string>());
      ev.timestamp = ts;
      ev.batch_id = batch_id;
      labelled_[ev.record_id].insert(ev.annotator_id);
      leased_[ev.record_id].erase(ev.annotator_id);
      labels_[{ev.annotator_id, ev.record_id}] = std::move(ev);
    }
  } else {
    throw DataError("unknown annotation event type '" + type + "'");
  }
}

void AnnotationStore::expire_leases() {
  const std::int64_t t = now();
  for (const auto& [id, b] : batches_) {
    if (b.submitted || b.expired || t - b.issued_ms < options_.lease_ttl_ms) continue;
    Json e = Json::object();
    e["type"] = "expire";
    e["batch_id"] = id;
    e["ts"] = t;
    record(e);
  }
}

std::size_t AnnotationStore::coverage_locked(const std::string& record_id) const {
  std::set<std::string> who;
  if (auto it = labelled_.find(record_id); it != labelled_.end()) who.insert(it->second.begin(), it->second.end());
  if (auto it = leased_.find(record_id); it != leased_.end()) who.insert(it->second.begin(), it->second.end());
  return who.size();
}

std::size_t AnnotationStore::coverage(const std::string& record_id) const {
  std::shared_lock lock(mu_);
  auto it = labelled_.find(record_id);
  return it == labelled_.end() ? 0 : it->second.size();
}

BatchView AnnotationStore::view_of(const std::string& batch_id) const {
  const Batch& b = batches_.at(batch_id);
  BatchView v;
  v.batch_id = batch_id;
  v.onboarding = b.onboarding;
  for (const auto& rid : b.record_ids) {
    const QARecord* r = nullptr;
    if (b.onboarding) {
      for (const auto& item : onboarding_) {
        if (item.record.id == rid) r = &item.record;
      }
    } else {
      r = &corpus_.at(rid);
    }
    if (!r) throw DataError("batch " + batch_id + " references unknown record " + rid);
    v.items.push_back({r->id, r->question, r->response, r->gold_aliases});
  }
  return v;
}

std::string AnnotationStore::register_annotator(const std::string& name) {
  std::unique_lock lock(mu_);
  Json e = Json::object();
  e["type"] = "register";
  e["annotator_id"] = numbered("ann-", next_annotator_);
  e["name"] = name;
  e["ts"] = now();
  const std::string id = e["annotator_id"].get<std::string>();
  record(e);
  return id;
}

BatchView AnnotationStore::next_batch(const std::string& annotator_id) {
  std::unique_lock lock(mu_);
  auto it = annotators_.find(annotator_id);
  if (it == annotators_.end()) throw AnnotationError(AnnotationError::Kind::kNotFound, "unknown annotator " + annotator_id);
  expire_leases();
  const Annotator& a = it->second;
  if (a.status == OnboardingStatus::kFailed) {
    throw AnnotationError(AnnotationError::Kind::kForbidden, "onboarding not passed");
  }
  for (const auto& bid : a.batches) {
    const Batch& b = batches_.at(bid);
    if (!b.submitted && !b.expired) return view_of(bid);
  }

  std::vector<std::string> chosen;
  bool onboarding = a.status == OnboardingStatus::kPending;
  if (onboarding) {
    for (const auto& item : onboarding_) chosen.push_back(item.record.id);
  } else {
    std::vector<std::pair<std::size_t, std::string>> candidates;
    for (const auto& [rid, r] : corpus_) {
      if (a.assigned.contains(rid)) continue;
      const std::size_t cov = coverage_locked(rid);
      if (cov < options_.coverage_target) candidates.emplace_back(cov, rid);
    }
    std::sort(candidates.begin(), candidates.end());
    for (std::size_t i = 0; i < candidates.size() && i < options_.batch_size; ++i) chosen.push_back(candidates[i].second);
    if (chosen.empty()) return {};
  }
  Json e = Json::object();
  e["type"] = "assign";
  e["batch_id"] = numbered("b-", next_batch_);
  e["annotator_id"] = annotator_id;
  e["onboarding"] = onboarding;
  e["record_ids"] = chosen;
  e["ts"] = now();
  const std::string bid = e["batch_id"].get<std::string>();
  record(e);
  return view_of(bid);
}

SubmitSummary AnnotationStore::submit_labels(const std::string& annotator_id, const std::string& batch_id,
                                             std::span<const SubmittedLabel> labels) {
  using Kind = AnnotationError::Kind;
  std::unique_lock lock(mu_);
  if (!annotators_.contains(annotator_id)) throw AnnotationError(Kind::kNotFound, "unknown annotator " + annotator_id);
  auto bit = batches_.find(batch_id);
  if (bit == batches_.end() || bit->second.annotator_id != annotator_id) {
    throw AnnotationError(Kind::kNotFound, "unknown batch " + batch_id);
  }
  expire_leases();
  const Batch& batch = bit->second;
  if (batch.expired) throw AnnotationError(Kind::kInvalid, "batch " + batch_id + " lease expired");
  if (batch.onboarding && batch.submitted) throw AnnotationError(Kind::kInvalid, "onboarding already graded");

  std::vector<AnnotationError::FieldError> errors;
  std::set<std::string> expected(batch.record_ids.begin(), batch.record_ids.end());
  std::set<std::string> seen;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto& l = labels[i];
    if (!expected.contains(l.record_id)) {
      errors.push_back({i, l.record_id, "record_id", "record is not part of this batch"});
    } else if (!seen.insert(l.record_id).second) {
      errors.push_back({i, l.record_id, "record_id", "duplicate label for record"});
    }
    if (l.confidence == Confidence::kOT && l.correctness4) {
      errors.push_back({i, l.record_id, "correctness4", "must be absent when confidence is OT"});
    } else if (l.confidence != Confidence::kOT && !l.correctness4) {
      errors.push_back({i, l.record_id, "correctness4", "required unless confidence is OT"});
    }
  }
  for (const auto& rid : expected) {
    if (!seen.contains(rid)) errors.push_back({labels.size(), rid, "record_id", "missing label for record"});
  }
  if (!errors.empty()) throw AnnotationError(Kind::kInvalid, "submission rejected", std::move(errors));

  SubmitSummary summary;
  if (batch.onboarding) {
    std::size_t matches = 0;
    for (const auto& l : labels) {
      for (const auto& item : onboarding_) {
        if (item.record.id != l.record_id) continue;
        if (item.gold.confidence == l.confidence && binary_of(item.gold.correctness4) == binary_of(l.correctness4)) {
          ++matches;
        }
      }
    }
    const bool passed = 2 * matches > onboarding_.size();
    Json e = Json::object();
    e["type"] = "onboarding";
    e["batch_id"] = batch_id;
    e["annotator_id"] = annotator_id;
    e["matches"] = matches;
    e["passed"] = passed;
    e["ts"] = now();
    record(e);
    summary.onboarding_passed = passed;
    return summary;
  }

  Json e = Json::object();
  e["type"] = "labels";
  e["batch_id"] = batch_id;
  e["annotator_id"] = annotator_id;
  Json arr = Json::array();
  for (const auto& l : labels) {
    arr.push_back(label_json(l.record_id, l.confidence, l.correctness4));
    if (labels_.contains({annotator_id, l.record_id})) {
      ++summary.overwritten;
    } else {
      ++summary.stored;
    }
  }
  e["labels"] = std::move(arr);
  e["ts"] = now();
  record(e);
  return summary;
}

Json AnnotationStore::progress() const {
  std::shared_lock lock(mu_);
  std::vector<std::size_t> at(options_.coverage_target + 1, 0);
  for (const auto& [rid, r] : corpus_) {
    auto it = labelled_.find(rid);
    const std::size_t n = it == labelled_.end() ? 0 : it->second.size();
    ++at[std::min(n, options_.coverage_target)];
  }
  std::map<std::string, std::size_t> per_annotator;
  for (const auto& [key, ev] : labels_) ++per_annotator[key.first];
  Json j = Json::object();
  j["total_records"] = corpus_.size();
  j["coverage_target"] = options_.coverage_target;
  j["records_at"] = at;
  Json anns = Json::object();
  for (const auto& [id, a] : annotators_) {
    Json aj = Json::object();
    aj["name"] = a.name;
    aj["onboarding"] = to_string(a.status);
    aj["labels"] = per_annotator.contains(id) ? per_annotator.at(id) : 0;
    anns[id] = std::move(aj);
  }
  j["annotators"] = std::move(anns);
  return j;
}

Corpus AnnotationStore::export_corpus() const {
  std::shared_lock lock(mu_);
  Corpus out;
  for (const auto& [rid, r] : corpus_) {
    QARecord copy = r;
    std::vector<const LabelEvent*> events;
    for (const auto& [key, ev] : labels_) {
      if (key.second == rid) events.push_back(&ev);
    }
    std::erase_if(copy.annotations, [&](const AnnotationLabel& a) {
      return std::any_of(events.begin(), events.end(), [&](const LabelEvent* ev) { return ev->annotator_id == a.annotator_id; });
    });
    for (const LabelEvent* ev : events) copy.annotations.push_back({ev->annotator_id, ev->confidence, ev->correctness4});
    out.push_back(std::move(copy));
  }
  return out;
}

std::vector<LabelEvent> AnnotationStore::labels() const {
  std::shared_lock lock(mu_);
  std::vector<LabelEvent> out;
  for (const auto& [key, ev] : labels_) out.push_back(ev);
  return out;
}

std::string AnnotationStore::snapshot() const {
  std::shared_lock lock(mu_);
  Json j = Json::object();
  j["next_annotator"] = next_annotator_;
  j["next_batch"] = next_batch_;
  Json anns = Json::object();
  for (const auto& [id, a] : annotators_) {
    Json aj = Json::object();
    aj["name"] = a.name;
    aj["status"] = to_string(a.status);
    aj["batches"] = a.batches;
    aj["assigned"] = a.assigned;
    anns[id] = std::move(aj);
  }
  j["annotators"] = std::move(anns);
  Json batches = Json::object();
  for (const auto& [id, b] : batches_) {
    Json bj = Json::object();
    bj["annotator_id"] = b.annotator_id;
    bj["onboarding"] = b.onboarding;
    bj["record_ids"] = b.record_ids;
    bj["issued_ms"] = b.issued_ms;
    bj["submitted"] = b.submitted;
    bj["expired"] = b.expired;
    batches[id] = std::move(bj);
  }
  j["batches"] = std::move(batches);
  auto sets = [](const std::map<std::string, std::set<std::string>>& m) {
    Json out = Json::object();
    for (const auto& [k, v] : m) {
      if (!v.empty()) out[k] = v;
    }
    return out;
  };
  j["labelled"] = sets(labelled_);
  j["leased"] = sets(leased_);
  Json labels = Json::array();
  for (const auto& [key, ev] : labels_) {
    Json lj = label_json(ev.record_id, ev.confidence, ev.correctness4);
    lj["annotator_id"] = ev.annotator_id;
    lj["batch_id"] = ev.batch_id;
    lj["timestamp"] = ev.timestamp;
    labels.push_back(std::move(lj));
  }
  j["labels"] = std::move(labels);
  return j.dump();
}

std::vector<OnboardingItem> onboarding_from_corpus(std::span<const QARecord> corpus, std::size_t count) {
  std::vector<const QARecord*> sorted;
  for (const auto& r : corpus) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(), [](const QARecord* a, const QARecord* b) { return a->id < b->id; });
  std::vector<OnboardingItem> out;
  for (const QARecord* r : sorted) {
    if (out.size() == count) break;
    if (r->annotations.empty()) continue;
    auto conf = majority_label(r->annotations, LabelAxis::kConfidence);
    if (!conf) continue;
    AnnotationLabel gold{"gold", conf->confidence(), std::nullopt};
    if (gold.confidence != Confidence::kOT) {
      std::vector<AnnotationLabel> graded;
      for (const auto& a : r->annotations) {
        if (a.correctness4) graded.push_back(a);
      }
      auto c4 = graded.empty() ? std::nullopt : majority_label(graded, LabelAxis::kCorrectness4);
      if (!c4) continue;
      gold.correctness4 = c4->correctness4();
    }
    out.push_back({*r, gold});
  }
  if (out.size() < count) {
    throw DataError("need " + std::to_string(count) + " annotated records with majority labels for onboarding, found " +
                    std::to_string(out.size()));
  }
  return out;
}

}  // namespace lincal
