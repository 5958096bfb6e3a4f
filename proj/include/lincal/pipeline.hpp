#pragma once

// Calibrator-controlled recalibration of a corpus and the evaluation that
// compares vanilla against recalibrated answers.

#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "lincal/calibrator.hpp"
#include "lincal/control.hpp"
#include "lincal/corpus.hpp"
#include "lincal/metrics.hpp"
#include "lincal/scoring.hpp"

namespace lincal {

// --- significance -----------------------------------------------------------

struct PermutationOptions {
  std::size_t max_exhaustive = 20;
  std::size_t draws = 100000;
  std::uint64_t seed = 0;
};

// Two-sided paired permutation test on mean(a) - mean(b) for binary
// vectors. Pairs are swapped independently; only discordant pairs can change
// the statistic, and the null distribution is enumerated exactly when there
// are at most `max_exhaustive` of them, else sampled (observed assignment
// counted). Returns a value in (0, 1].
double paired_permutation_test(std::span<const int> a, std::span<const int> b, const PermutationOptions& options = {});

// Outcome of one system on one record, for the p(correct | HI) test.
struct HiOutcome {
  bool hi = false;
  bool correct = false;
  bool operator==(const HiOutcome&) const = default;
};

// Same swapping scheme with statistic p(correct|HI, a) - p(correct|HI, b);
// a system with no HI answers has rate 0.
double paired_permutation_test_hi(std::span<const HiOutcome> a, std::span<const HiOutcome> b,
                                  const PermutationOptions& options = {});

// --- recalibration ----------------------------------------------------------

struct RecalibrationFailure {
  std::string id;
  std::string message;
};

struct RecalibrationResult {
  // Sorted by id. Each record keeps its original response under
  // "original_response" and carries "p_correct" and "control_token"; records
  // that failed are passed through unchanged with "recalibration_error".
  // A rewritten record's annotations judged the old wording; they move to
  // "original_annotations".
  Corpus records;
  std::vector<RecalibrationFailure> failures;
};

RecalibrationResult recalibrate(std::span<const QARecord> corpus, const CalibratorModel& model,
                                const ControlPolicy& policy, const StateStore* store = nullptr,
                                const HedgeLexicon& lexicon = HedgeLexicon::defaults());

// Ids of the first `count` records by sorted id: the threshold-tuning split.
std::set<std::string> tuning_ids(std::span<const QARecord> corpus, std::size_t count);

// --- evaluation -------------------------------------------------------------

enum class LabelSource { kHumanMajority, kAutomatic };

std::string_view to_string(LabelSource s);
LabelSource parse_label_source(std::string_view s);

struct Judgement {
  Confidence confidence = Confidence::kOT;
  std::optional<Correctness4> correctness4;
  std::optional<Correctness> correct;  // absent for OT
};

// Human majority: needs a confidence majority and, unless OT, a binary
// correctness majority; otherwise the record is dropped (nullopt).
// Automatic: match-based correctness and lexicon (or classifier) confidence.
std::optional<Judgement> judge(const QARecord& record, LabelSource source,
                               const HedgeLexicon& lexicon = HedgeLexicon::defaults(),
                               const ConfidenceClassifier* classifier = nullptr);

struct ClassRow {
  std::size_t count = 0;
  double share_pct = 0.0;
  // Over records of this row that have a 4-way majority.
  std::size_t graded4 = 0;
  std::optional<std::array<double, 4>> correctness4_pct;
  // incorrect / correct; empty for OT.
  std::optional<std::array<double, 2>> binary_pct;
};

struct SystemTable {
  std::array<ClassRow, 4> rows;  // OT, DK, LO, HI
  std::size_t total = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;  // OT answers count as not correct
  std::size_t hi_count = 0;
  std::size_t hi_correct = 0;
  double p_correct_given_hi = 0.0;
};

struct EvaluationReport {
  LabelSource labels = LabelSource::kAutomatic;
  // Human majorities were requested but one corpus carries no annotations.
  bool label_fallback = false;
  std::size_t evaluated = 0;
  std::size_t excluded_tuning = 0;
  std::size_t dropped = 0;
  SystemTable vanilla;
  SystemTable recalibrated;
  // confusion[vanilla class][recalibrated class]
  std::array<std::array<std::size_t, 4>, 4> confusion{};
  double p_value_hi = 1.0;
  double p_value_accuracy = 1.0;
  // Calibrator probabilities against vanilla correctness, when present.
  std::optional<ReliabilityReport> calibration;
};

struct EvaluationOptions {
  LabelSource labels = LabelSource::kHumanMajority;
  // Falls back to automatic labels (flagged in the report) when either
  // corpus has no annotations outside the tuning split.
  // The first N records by id were used for threshold tuning and are excluded.
  std::size_t tuning_count = 0;
  std::size_t calibration_bins = 20;
  PermutationOptions permutation;
  const HedgeLexicon* lexicon = nullptr;
  const ConfidenceClassifier* classifier = nullptr;
};

EvaluationReport evaluate(std::span<const QARecord> vanilla, std::span<const QARecord> recalibrated,
                          const EvaluationOptions& options = {});

Json evaluation_to_json(const EvaluationReport& report);
std::string evaluation_table_text(const EvaluationReport& report);

}  // namespace lincal
