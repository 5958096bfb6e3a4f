#pragma once

// Data model for closed-book QA corpora: records, human annotation labels,
// TriviaQA ingestion, JSONL persistence and annotation aggregation.

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace lincal {

using Json = nlohmann::ordered_json;

// Raised for malformed or inconsistent input data (bad files, violated
// invariants). The CLI maps it to exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Split { kTrain, kValid, kTest };

// Linguistic confidence. OT is "not classifiable" and sits outside the
// DK < LO < HI order.
enum class Confidence { kOT, kDK, kLO, kHI };

enum class Correctness4 { kOther, kWrong, kExtra, kRight };

enum class Correctness { kIncorrect, kCorrect };

std::string_view to_string(Split s);
std::string_view to_string(Confidence c);
std::string_view to_string(Correctness4 c);
std::string_view to_string(Correctness c);

Split parse_split(std::string_view s);
Confidence parse_confidence(std::string_view s);
Correctness4 parse_correctness4(std::string_view s);

struct AnnotationLabel {
  std::string annotator_id;
  Confidence confidence = Confidence::kOT;
  std::optional<Correctness4> correctness4;

  // correctness4 must be absent exactly when confidence is OT.
  bool valid() const { return correctness4.has_value() == (confidence != Confidence::kOT); }
};

struct QARecord {
  std::string id;
  std::string question;
  std::vector<std::string> gold_aliases;
  std::string response;
  Split split = Split::kTrain;
  std::vector<AnnotationLabel> annotations;
  std::optional<std::string> state_ref;
  // Keys not known to this schema, kept verbatim for round-tripping.
  Json extra = Json::object();
};

using Corpus = std::vector<QARecord>;

// --- tokenization ---------------------------------------------------------

struct TokenSpan {
  std::string text;   // lowercased token
  std::size_t begin;  // byte offset into the source text
  std::size_t end;
};

// Lowercases and splits on maximal runs of non-alphanumeric code points.
std::vector<std::string> tokenize(std::string_view text);
std::vector<TokenSpan> tokenize_spans(std::string_view text);

// --- ingestion ------------------------------------------------------------

struct RawQAEntry {
  std::string question;
  std::vector<std::string> aliases;
};

struct IngestError {
  std::string section;  // "web" or "wiki"
  std::size_t index;
  std::string message;
};

struct IngestResult {
  Corpus records;
  std::vector<IngestError> errors;
};

std::string normalize_whitespace(std::string_view text);
std::string strip_disambiguation(std::string_view alias);
// Stable record id: 64-bit FNV-1a of the normalized question, hex encoded.
std::string record_id_for(std::string_view question);

// Merges the Web and Wikipedia sections; shared questions appear once with
// the union of their aliases. Output is sorted by id.
IngestResult ingest_trivia(std::span<const RawQAEntry> web, std::span<const RawQAEntry> wiki,
                           Split split = Split::kTrain);

// Accepts TriviaQA JSON ({"Data": [...]}), a bare JSON array, or JSONL.
// Each entry may use TriviaQA keys (Question, Answer.Aliases/Value) or
// corpus keys (question, gold_aliases).
std::vector<RawQAEntry> parse_raw_entries(std::string_view content);

// --- JSONL persistence ----------------------------------------------------

Json record_to_json(const QARecord& record);
QARecord record_from_json(const Json& j);

Corpus read_corpus(const std::string& path);
void write_corpus(const std::string& path, const Corpus& corpus);
Corpus parse_corpus(std::string_view jsonl);
std::string serialize_corpus(const Corpus& corpus);

// --- annotation aggregation ----------------------------------------------

enum class LabelAxis { kConfidence, kCorrectness4, kCorrectnessBinary };

// A strict-majority vote on one axis. The int holds the enum value of
// Confidence, Correctness4 or Correctness depending on the axis.
struct MajorityValue {
  LabelAxis axis;
  int value;

  Confidence confidence() const { return static_cast<Confidence>(value); }
  Correctness4 correctness4() const { return static_cast<Correctness4>(value); }
  Correctness correctness() const { return static_cast<Correctness>(value); }
  bool operator==(const MajorityValue&) const = default;
};

std::optional<MajorityValue> majority_label(std::span<const AnnotationLabel> labels, LabelAxis axis);

struct AxisAgreement {
  double unanimous_pct = 0.0;
  double majority_pct = 0.0;
};

struct CorpusSplitStats {
  std::size_t total = 0;
  // Records per majority class, indexed by enum value; the last slot counts
  // records without a strict majority. Each array sums to `total`.
  std::array<std::size_t, 5> confidence_counts{};
  std::array<std::size_t, 5> correctness4_counts{};
  AxisAgreement confidence;
  AxisAgreement correctness4;
  AxisAgreement correctness_binary;
};

// Requires exactly three annotations per record. On the correctness axes a
// label without correctness (OT) votes for its own "none" category.
CorpusSplitStats agreement_stats(std::span<const QARecord> corpus);

}  // namespace lincal
