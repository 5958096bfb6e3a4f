#pragma once

// Correctness predictor over per-token hidden states.
//
// Every included state goes through a shared linear+GELU transform, the
// results are max-pooled elementwise (encoder and decoder states jointly),
// and a linear-GELU-linear head produces two logits (incorrect, correct).
// When real model states are not available, trainable hashed token
// embeddings stand in for them.

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lincal/corpus.hpp"

namespace lincal {

// x * Phi(x) with the exact (erf-based) normal CDF.
double gelu(double x);
double gelu_derivative(double x);

// Hidden states for one record, row-major. `enc_rows`/`dec_rows` hold the
// embedding-table rows the states were read from, when hashed.
struct StateBundle {
  std::size_t dim = 0;
  std::vector<double> enc;
  std::vector<double> dec;
  std::vector<std::uint32_t> enc_rows;
  std::vector<std::uint32_t> dec_rows;

  std::size_t enc_count() const { return dim ? enc.size() / dim : 0; }
  std::size_t dec_count() const { return dim ? dec.size() / dim : 0; }
  std::span<const double> enc_state(std::size_t i) const { return {enc.data() + i * dim, dim}; }
  std::span<const double> dec_state(std::size_t i) const { return {dec.data() + i * dim, dim}; }
  bool hashed() const { return !enc_rows.empty() || !dec_rows.empty(); }
};

class HashedEmbedding {
 public:
  static constexpr std::size_t kBuckets = std::size_t{1} << 16;

  HashedEmbedding() = default;
  // Rows drawn from N(0, 0.02^2).
  HashedEmbedding(std::size_t dim, std::uint64_t seed);

  static std::uint64_t hash(std::string_view token);  // 64-bit FNV-1a
  static std::uint32_t bucket(std::string_view token) { return static_cast<std::uint32_t>(hash(token) % kBuckets); }

  std::size_t dim() const { return dim_; }
  std::span<const double> row(std::uint32_t bucket) const { return {table_.data() + bucket * dim_, dim_}; }
  std::vector<double>& table() { return table_; }
  const std::vector<double>& table() const { return table_; }

  StateBundle featurize(std::string_view question, std::string_view response) const;
  // Re-reads the state vectors of a hashed bundle from the current table.
  void refresh(StateBundle* bundle) const;

 private:
  std::size_t dim_ = 0;
  std::vector<double> table_;
};

// Question tokens become encoder states, response tokens decoder states.
StateBundle featurize_hashed(std::string_view question, std::string_view response, std::size_t dim,
                             std::uint64_t seed);

struct CalibratorConfig {
  bool use_enc = true;
  bool use_dec = true;
  // Required when both streams are off: the head then sees a zero vector.
  bool bias_only = false;
  std::size_t input_dim = 16;
  std::size_t hidden_dim = 256;
  std::uint64_t seed = 0;
  double learning_rate = 1e-3;
  int max_epochs = 50;
  int patience = 5;
  std::size_t batch_size = 256;
  bool train_embeddings = true;

  void validate() const;
  Json to_json() const;
  static CalibratorConfig from_json(const Json& j);
};

struct CalibratorParams {
  std::vector<double> w_in;      // input_dim x hidden, row-major
  std::vector<double> b_in;      // hidden
  std::vector<double> w_hidden;  // hidden x hidden
  std::vector<double> b_hidden;  // hidden
  std::vector<double> w_out;     // hidden x 2
  std::vector<double> b_out;     // 2

  std::array<std::vector<double>*, 6> blocks() { return {&w_in, &b_in, &w_hidden, &b_hidden, &w_out, &b_out}; }
  std::array<const std::vector<double>*, 6> blocks() const {
    return {&w_in, &b_in, &w_hidden, &b_hidden, &w_out, &b_out};
  }
  static constexpr std::array<const char*, 6> kNames = {"w_in", "b_in", "w_hidden", "b_hidden", "w_out", "b_out"};

  // Same shapes, all zero.
  CalibratorParams zeros_like() const;
};

class CalibratorModel {
 public:
  CalibratorModel() = default;
  // Random init from config.seed; with `hashed` the model also owns a
  // trainable embedding table of width config.input_dim.
  CalibratorModel(const CalibratorConfig& config, bool hashed);

  const CalibratorConfig& config() const { return config_; }
  CalibratorParams& params() { return params_; }
  const CalibratorParams& params() const { return params_; }
  bool has_embedding() const { return embedding_.has_value(); }
  HashedEmbedding& embedding() { return *embedding_; }
  const HashedEmbedding& embedding() const { return *embedding_; }

  // Builds states from the model's own embedding table.
  StateBundle featurize(std::string_view question, std::string_view response) const;

  std::array<double, 2> logits(const StateBundle& bundle) const;
  // Probability that the answer is correct.
  double forward(const StateBundle& bundle) const;

  // Adds scale * d(-log p(label))/d(params) into `grad` and, when given,
  // the gradient with respect to the input states into `state_grad`
  // (shaped like `bundle`). Returns the unscaled loss.
  double backward(const StateBundle& bundle, int label, double scale, CalibratorParams* grad,
                  StateBundle* state_grad = nullptr) const;

  void save(const std::string& path) const;
  static CalibratorModel load(const std::string& path);

 private:
  struct Activations;
  void run(const StateBundle& bundle, Activations* act) const;

  CalibratorConfig config_;
  CalibratorParams params_;
  std::optional<HashedEmbedding> embedding_;
};

struct CalibratorExample {
  StateBundle states;
  int label = 0;  // 1 = correct
};

struct TrainingLog {
  std::vector<double> train_loss;
  std::vector<double> valid_anll;
  int best_epoch = -1;
  int epochs_run = 0;
};

// Adam on mean cross-entropy with minibatches, early stopping on the valid
// ANLL (patience in epochs); leaves the best-valid parameters in `model`.
// Hashed examples also update the model's embedding rows when
// config.train_embeddings is set.
TrainingLog fit_calibrator(CalibratorModel& model, std::span<CalibratorExample> train,
                           std::span<CalibratorExample> valid);

// --- state sidecar ----------------------------------------------------------

using StateStore = std::map<std::string, StateBundle>;

void write_state_sidecar(const std::string& path, const StateStore& states);
StateStore read_state_sidecar(const std::string& path);

// --- corpus-level training --------------------------------------------------

// Binary correctness label used for validation: the human majority when the
// record carries annotations with one, else the match-based label.
std::optional<int> human_or_match_label(const QARecord& record);

// States for a record: sidecar entry under state_ref (or id) when a store is
// given, else the model's hashed featurizer.
StateBundle states_for(const QARecord& record, const CalibratorModel& model, const StateStore* store);

// Train labels come from match-based scoring; valid labels from human
// majority (falling back to match-based).
CalibratorModel train_calibrator(std::span<const QARecord> train, std::span<const QARecord> valid,
                                 const CalibratorConfig& config, const StateStore* store = nullptr,
                                 TrainingLog* log = nullptr);

}  // namespace lincal
