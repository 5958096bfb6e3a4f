#pragma once

// Human annotation workflow: onboarding, leased batches, label collection.
//
// All state lives in an append-only JSONL event log; the in-memory state is
// a fold over that log, so restarting from the log reconstructs it exactly.
// Mutations are serialized by one writer lock; reads share a lock and see a
// consistent snapshot.

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "lincal/corpus.hpp"

namespace httplib {
class Server;
}

namespace lincal {

class AnnotationError : public DataError {
 public:
  enum class Kind { kNotFound, kForbidden, kInvalid };

  struct FieldError {
    std::size_t index;
    std::string record_id;
    std::string field;
    std::string message;
  };

  AnnotationError(Kind kind, const std::string& message, std::vector<FieldError> fields = {})
      : DataError(message), kind_(kind), fields_(std::move(fields)) {}

  Kind kind() const { return kind_; }
  const std::vector<FieldError>& fields() const { return fields_; }

 private:
  Kind kind_;
  std::vector<FieldError> fields_;
};

struct OnboardingItem {
  QARecord record;
  AnnotationLabel gold;
};

struct BatchItem {
  std::string record_id;
  std::string question;
  std::string response;
  std::vector<std::string> gold_aliases;
};

struct BatchView {
  std::string batch_id;  // empty when no work remains
  bool onboarding = false;
  std::vector<BatchItem> items;
};

struct SubmittedLabel {
  std::string record_id;
  Confidence confidence = Confidence::kOT;
  std::optional<Correctness4> correctness4;
};

struct SubmitSummary {
  std::size_t stored = 0;
  std::size_t overwritten = 0;
  std::optional<bool> onboarding_passed;
};

struct LabelEvent {
  std::string annotator_id;
  std::string record_id;
  Confidence confidence = Confidence::kOT;
  std::optional<Correctness4> correctness4;
  std::int64_t timestamp = 0;
  std::string batch_id;
};

enum class OnboardingStatus { kPending, kPassed, kFailed };

class AnnotationStore {
 public:
  struct Options {
    std::string log_path;  // empty: in-memory only
    std::int64_t lease_ttl_ms = 60 * 60 * 1000;
    std::size_t batch_size = 9;
    std::size_t coverage_target = 3;
    // Milliseconds since the epoch; defaults to the system clock.
    std::function<std::int64_t()> clock;
  };

  // Replays an existing log at `options.log_path` before accepting requests.
  AnnotationStore(Corpus corpus, std::vector<OnboardingItem> onboarding, Options options);
  ~AnnotationStore();

  AnnotationStore(const AnnotationStore&) = delete;
  AnnotationStore& operator=(const AnnotationStore&) = delete;

  std::string register_annotator(const std::string& name);
  // Onboarding batch for new annotators, else up to batch_size records that
  // still need annotators (lowest coverage first, ties by id). An open
  // lease is returned again rather than issuing a new batch.
  BatchView next_batch(const std::string& annotator_id);
  SubmitSummary submit_labels(const std::string& annotator_id, const std::string& batch_id,
                              std::span<const SubmittedLabel> labels);

  Json progress() const;
  // Corpus with collected labels merged into each record's annotations.
  Corpus export_corpus() const;
  // Canonical serialization of the whole state, for recovery checks.
  std::string snapshot() const;

  // Distinct annotators who have submitted labels for the record.
  std::size_t coverage(const std::string& record_id) const;
  std::vector<LabelEvent> labels() const;

 private:
  struct Annotator {
    std::string name;
    OnboardingStatus status = OnboardingStatus::kPending;
    std::vector<std::string> batches;
    std::set<std::string> assigned;
  };
  struct Batch {
    std::string annotator_id;
    bool onboarding = false;
    std::vector<std::string> record_ids;
    std::int64_t issued_ms = 0;
    bool submitted = false;
    bool expired = false;
  };

  std::int64_t now() const;
  void record(const Json& event);
  void apply(const Json& event);
  void expire_leases();
  BatchView view_of(const std::string& batch_id) const;
  std::size_t coverage_locked(const std::string& record_id) const;

  std::map<std::string, QARecord> corpus_;
  std::vector<OnboardingItem> onboarding_;
  Options options_;

  mutable std::shared_mutex mu_;
  std::ofstream log_;
  std::map<std::string, Annotator> annotators_;
  std::map<std::string, Batch> batches_;
  std::map<std::string, std::set<std::string>> labelled_;  // record -> annotators
  std::map<std::string, std::set<std::string>> leased_;    // record -> annotators holding open leases
  std::map<std::pair<std::string, std::string>, LabelEvent> labels_;  // (annotator, record)
  std::uint64_t next_annotator_ = 1;
  std::uint64_t next_batch_ = 1;
};

// First `count` records (by id) with a human majority on confidence and, if
// not OT, on 4-way correctness; the majority becomes the gold label.
std::vector<OnboardingItem> onboarding_from_corpus(std::span<const QARecord> corpus, std::size_t count = 3);

// HTTP+JSON front end:
//   POST /api/annotators   {name} -> {annotator_id}
//   GET  /api/batch?annotator=ID -> {batch_id, onboarding, items}
//   POST /api/labels       {annotator_id, batch_id, labels} -> {stored, overwritten}
//   GET  /api/progress
//   GET  /                 UI bundle from `ui_dir` (index.html)
class AnnotationServer {
 public:
  AnnotationServer(AnnotationStore& store, std::string ui_dir = {});
  ~AnnotationServer();

  // Returns the bound port.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  bool listen();
  void stop();
  void wait_until_ready() const;

 private:
  AnnotationStore& store_;
  std::string ui_dir_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace lincal
