#include "lincal/calibrator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "lincal/metrics.hpp"
#include "lincal/scoring.hpp"

namespace lincal {

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return cdf + x * pdf;
}

// --- hashed embeddings ------------------------------------------------------

HashedEmbedding::HashedEmbedding(std::size_t dim, std::uint64_t seed) : dim_(dim), table_(kBuckets * dim) {
  if (dim == 0) throw DataError("embedding dimension must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  for (double& v : table_) v = normal(rng);
}

std::uint64_t HashedEmbedding::hash(std::string_view token) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : token) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

StateBundle HashedEmbedding::featurize(std::string_view question, std::string_view response) const {
  StateBundle b;
  b.dim = dim_;
  for (const auto& t : tokenize(question)) b.enc_rows.push_back(bucket(t));
  for (const auto& t : tokenize(response)) b.dec_rows.push_back(bucket(t));
  refresh(&b);
  return b;
}

void HashedEmbedding::refresh(StateBundle* b) const {
  b->dim = dim_;
  b->enc.resize(b->enc_rows.size() * dim_);
  b->dec.resize(b->dec_rows.size() * dim_);
  for (std::size_t i = 0; i < b->enc_rows.size(); ++i) {
    const auto r = row(b->enc_rows[i]);
    std::copy(r.begin(), r.end(), b->enc.begin() + static_cast<std::ptrdiff_t>(i * dim_));
  }
  for (std::size_t i = 0; i < b->dec_rows.size(); ++i) {
    const auto r = row(b->dec_rows[i]);
    std::copy(r.begin(), r.end(), b->dec.begin() + static_cast<std::ptrdiff_t>(i * dim_));
  }
}

StateBundle featurize_hashed(std::string_view question, std::string_view response, std::size_t dim,
                             std::uint64_t seed) {
  return HashedEmbedding(dim, seed).featurize(question, response);
}

// --- config -----------------------------------------------------------------

void CalibratorConfig::validate() const {
  if (hidden_dim == 0) throw DataError("hidden_dim must be positive");
  if (input_dim == 0) throw DataError("input_dim must be positive");
  if (!use_enc && !use_dec && !bias_only) {
    throw DataError("calibrator has no input stream; enable use_enc/use_dec or request bias_only");
  }
  if (!(learning_rate > 0.0)) throw DataError("learning_rate must be positive");
  if (batch_size == 0) throw DataError("batch_size must be positive");
  if (max_epochs < 1) throw DataError("max_epochs must be at least 1");
  if (patience < 1) throw DataError("patience must be at least 1");
}

Json CalibratorConfig::to_json() const {
  Json j = Json::object();
  j["use_enc"] = use_enc;
  j["use_dec"] = use_dec;
  j["bias_only"] = bias_only;
  j["input_dim"] = input_dim;
  j["hidden_dim"] = hidden_dim;
  j["seed"] = seed;
  j["learning_rate"] = learning_rate;
  j["max_epochs"] = max_epochs;
  j["patience"] = patience;
  j["batch_size"] = batch_size;
  j["train_embeddings"] = train_embeddings;
  return j;
}

CalibratorConfig CalibratorConfig::from_json(const Json& j) {
  CalibratorConfig c;
  c.use_enc = j.value("use_enc", c.use_enc);
  c.use_dec = j.value("use_dec", c.use_dec);
  c.bias_only = j.value("bias_only", c.bias_only);
  c.input_dim = j.value("input_dim", c.input_dim);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.seed = j.value("seed", c.seed);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.train_embeddings = j.value("train_embeddings", c.train_embeddings);
  return c;
}

CalibratorParams CalibratorParams::zeros_like() const {
  CalibratorParams z;
  auto dst = z.blocks();
  auto src = blocks();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->assign(src[i]->size(), 0.0);
  return z;
}

// --- model ------------------------------------------------------------------

CalibratorModel::CalibratorModel(const CalibratorConfig& config, bool hashed) : config_(config) {
  config_.validate();
  const std::size_t in = config_.input_dim;
  const std::size_t h = config_.hidden_dim;
  // separate stream from the embedding table, which is seeded with config.seed
  std::mt19937_64 rng(config_.seed ^ 0x9E3779B97F4A7C15ULL);
  auto init = [&](std::vector<double>* w, std::size_t fan_in, std::size_t size) {
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
    w->resize(size);
    for (double& v : *w) v = normal(rng);
  };
  init(&params_.w_in, in, in * h);
  params_.b_in.assign(h, 0.0);
  init(&params_.w_hidden, h, h * h);
  params_.b_hidden.assign(h, 0.0);
  init(&params_.w_out, h, h * 2);
  params_.b_out.assign(2, 0.0);
  if (hashed) embedding_.emplace(in, config_.seed);
}

StateBundle CalibratorModel::featurize(std::string_view question, std::string_view response) const {
  if (!embedding_) throw DataError("model has no hashed embedding table; supply a state sidecar");
  return embedding_->featurize(question, response);
}

struct CalibratorModel::Activations {
  std::vector<const double*> inputs;
  // (stream, index) of each input: stream 0 = enc, 1 = dec
  std::vector<std::pair<int, std::size_t>> origin;
  std::vector<double> pre;  // inputs x hidden
  std::vector<double> pooled;
  std::vector<std::size_t> argmax;
  std::vector<double> z1;
  std::vector<double> g1;
  std::array<double, 2> logits{};
};

void CalibratorModel::run(const StateBundle& bundle, Activations* act) const {
  const std::size_t in = config_.input_dim;
  const std::size_t h = config_.hidden_dim;
  act->inputs.clear();
  act->origin.clear();
  if (!config_.bias_only) {
    if (bundle.dim != in && (!bundle.enc.empty() || !bundle.dec.empty())) {
      throw DataError("state dimension " + std::to_string(bundle.dim) + " does not match calibrator input_dim " +
                      std::to_string(in));
    }
    if (config_.use_enc) {
      for (std::size_t i = 0; i < bundle.enc_count(); ++i) {
        act->inputs.push_back(bundle.enc.data() + i * in);
        act->origin.emplace_back(0, i);
      }
    }
    if (config_.use_dec) {
      for (std::size_t i = 0; i < bundle.dec_count(); ++i) {
        act->inputs.push_back(bundle.dec.data() + i * in);
        act->origin.emplace_back(1, i);
      }
    }
    if (act->inputs.empty()) throw DataError("no input states for the calibrator");
  }

  act->pooled.assign(h, 0.0);
  act->argmax.assign(h, 0);
  const std::size_t count = act->inputs.size();
  act->pre.assign(count * h, 0.0);
  for (std::size_t s = 0; s < count; ++s) {
    double* pre = act->pre.data() + s * h;
    std::copy(params_.b_in.begin(), params_.b_in.end(), pre);
    const double* x = act->inputs[s];
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = x[i];
      const double* w = params_.w_in.data() + i * h;
      for (std::size_t k = 0; k < h; ++k) pre[k] += xi * w[k];
    }
    for (std::size_t k = 0; k < h; ++k) {
      const double v = gelu(pre[k]);
      if (s == 0 || v > act->pooled[k]) {
        act->pooled[k] = v;
        act->argmax[k] = s;
      }
    }
  }

  act->z1.assign(params_.b_hidden.begin(), params_.b_hidden.end());
  for (std::size_t k = 0; k < h; ++k) {
    const double pk = act->pooled[k];
    if (pk == 0.0) continue;
    const double* w = params_.w_hidden.data() + k * h;
    for (std::size_t j = 0; j < h; ++j) act->z1[j] += pk * w[j];
  }
  act->g1.resize(h);
  for (std::size_t j = 0; j < h; ++j) act->g1[j] = gelu(act->z1[j]);
  act->logits = {params_.b_out[0], params_.b_out[1]};
  for (std::size_t j = 0; j < h; ++j) {
    act->logits[0] += act->g1[j] * params_.w_out[j * 2];
    act->logits[1] += act->g1[j] * params_.w_out[j * 2 + 1];
  }
}

std::array<double, 2> CalibratorModel::logits(const StateBundle& bundle) const {
  Activations act;
  run(bundle, &act);
  return act.logits;
}

double CalibratorModel::forward(const StateBundle& bundle) const {
  const auto l = logits(bundle);
  const double m = std::max(l[0], l[1]);
  const double e0 = std::exp(l[0] - m);
  const double e1 = std::exp(l[1] - m);
  return e1 / (e0 + e1);
}

double CalibratorModel::backward(const StateBundle& bundle, int label, double scale, CalibratorParams* grad,
                                 StateBundle* state_grad) const {
  Activations act;
  run(bundle, &act);
  const std::size_t in = config_.input_dim;
  const std::size_t h = config_.hidden_dim;

  const double m = std::max(act.logits[0], act.logits[1]);
  const double lse = m + std::log(std::exp(act.logits[0] - m) + std::exp(act.logits[1] - m));
  const double loss = lse - act.logits[label ? 1 : 0];
  std::array<double, 2> d = {std::exp(act.logits[0] - lse), std::exp(act.logits[1] - lse)};
  d[label ? 1 : 0] -= 1.0;

  std::vector<double> dz1(h);
  for (std::size_t j = 0; j < h; ++j) {
    grad->w_out[j * 2] += scale * act.g1[j] * d[0];
    grad->w_out[j * 2 + 1] += scale * act.g1[j] * d[1];
    const double dg = params_.w_out[j * 2] * d[0] + params_.w_out[j * 2 + 1] * d[1];
    dz1[j] = dg * gelu_derivative(act.z1[j]);
    grad->b_hidden[j] += scale * dz1[j];
  }
  grad->b_out[0] += scale * d[0];
  grad->b_out[1] += scale * d[1];

  std::vector<double> dpooled(h, 0.0);
  for (std::size_t k = 0; k < h; ++k) {
    const double pk = act.pooled[k];
    const double* w = params_.w_hidden.data() + k * h;
    double* gw = grad->w_hidden.data() + k * h;
    double acc = 0.0;
    for (std::size_t j = 0; j < h; ++j) {
      gw[j] += scale * pk * dz1[j];
      acc += w[j] * dz1[j];
    }
    dpooled[k] = acc;
  }
  if (act.inputs.empty()) return loss;

  if (state_grad) {
    state_grad->dim = bundle.dim;
    state_grad->enc.assign(bundle.enc.size(), 0.0);
    state_grad->dec.assign(bundle.dec.size(), 0.0);
    state_grad->enc_rows = bundle.enc_rows;
    state_grad->dec_rows = bundle.dec_rows;
  }
  for (std::size_t k = 0; k < h; ++k) {
    const std::size_t s = act.argmax[k];
    const double da = scale * dpooled[k] * gelu_derivative(act.pre[s * h + k]);
    if (da == 0.0) continue;
    grad->b_in[k] += da;
    const double* x = act.inputs[s];
    for (std::size_t i = 0; i < in; ++i) grad->w_in[i * h + k] += x[i] * da;
    if (state_grad) {
      const auto [stream, idx] = act.origin[s];
      double* g = (stream == 0 ? state_grad->enc.data() : state_grad->dec.data()) + idx * in;
      for (std::size_t i = 0; i < in; ++i) g[i] += params_.w_in[i * h + k] * da;
    }
  }
  return loss;
}

// --- training ---------------------------------------------------------------

namespace {

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
};

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

void adam_step(std::vector<double>* params, const std::vector<double>& grad, AdamState* st, double lr, long step) {
  if (st->m.empty()) {
    st->m.assign(params->size(), 0.0);
    st->v.assign(params->size(), 0.0);
  }
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params->size(); ++i) {
    const double g = grad[i];
    st->m[i] = kBeta1 * st->m[i] + (1.0 - kBeta1) * g;
    st->v[i] = kBeta2 * st->v[i] + (1.0 - kBeta2) * g * g;
    (*params)[i] -= lr * (st->m[i] / c1) / (std::sqrt(st->v[i] / c2) + kAdamEps);
  }
}

double mean_anll(const CalibratorModel& model, std::span<CalibratorExample> data) {
  std::vector<double> preds;
  std::vector<int> labels;
  preds.reserve(data.size());
  for (auto& ex : data) {
    if (model.has_embedding() && ex.states.hashed()) model.embedding().refresh(&ex.states);
    preds.push_back(model.forward(ex.states));
    labels.push_back(ex.label);
  }
  return anll(preds, labels);
}

}  // namespace

TrainingLog fit_calibrator(CalibratorModel& model, std::span<CalibratorExample> train,
                           std::span<CalibratorExample> valid) {
  const CalibratorConfig& config = model.config();
  config.validate();
  if (train.empty()) throw DataError("calibrator training set is empty");
  std::size_t positives = 0;
  for (const auto& ex : train) {
    if (ex.label != 0 && ex.label != 1) throw DataError("calibrator labels must be 0 or 1");
    positives += static_cast<std::size_t>(ex.label);
  }
  if (positives == 0 || positives == train.size()) throw DataError("degenerate labels: need both classes");

  const bool update_table =
      model.has_embedding() && config.train_embeddings && !config.bias_only &&
      std::any_of(train.begin(), train.end(), [](const CalibratorExample& ex) { return ex.states.hashed(); });

  std::mt19937_64 rng(config.seed + 1);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  std::array<AdamState, 6> adam;
  AdamState table_adam;
  std::vector<double> table_grad;
  if (update_table) table_grad.assign(model.embedding().table().size(), 0.0);

  CalibratorParams best = model.params();
  std::vector<double> best_table;
  if (model.has_embedding()) best_table = model.embedding().table();
  double best_score = std::numeric_limits<double>::infinity();
  int since_best = 0;
  long step = 0;
  TrainingLog log;
  StateBundle state_grad;

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double scale = 1.0 / static_cast<double>(end - start);
      CalibratorParams grad = model.params().zeros_like();
      if (update_table) std::fill(table_grad.begin(), table_grad.end(), 0.0);
      for (std::size_t b = start; b < end; ++b) {
        CalibratorExample& ex = train[order[b]];
        if (model.has_embedding() && ex.states.hashed()) model.embedding().refresh(&ex.states);
        const bool hashed = update_table && ex.states.hashed();
        const double loss = model.backward(ex.states, ex.label, scale, &grad, hashed ? &state_grad : nullptr);
        if (!std::isfinite(loss)) {
          throw DataError("calibrator training diverged (non-finite loss) at epoch " + std::to_string(epoch));
        }
        epoch_loss += loss;
        if (hashed) {
          const std::size_t dim = ex.states.dim;
          for (std::size_t i = 0; i < ex.states.enc_rows.size(); ++i) {
            double* dst = table_grad.data() + ex.states.enc_rows[i] * dim;
            for (std::size_t c = 0; c < dim; ++c) dst[c] += state_grad.enc[i * dim + c];
          }
          for (std::size_t i = 0; i < ex.states.dec_rows.size(); ++i) {
            double* dst = table_grad.data() + ex.states.dec_rows[i] * dim;
            for (std::size_t c = 0; c < dim; ++c) dst[c] += state_grad.dec[i * dim + c];
          }
        }
      }
      ++step;
      auto params = model.params().blocks();
      auto grads = grad.blocks();
      for (std::size_t i = 0; i < params.size(); ++i) {
        adam_step(params[i], *grads[i], &adam[i], config.learning_rate, step);
      }
      if (update_table) adam_step(&model.embedding().table(), table_grad, &table_adam, config.learning_rate, step);
    }
    epoch_loss /= static_cast<double>(train.size());
    if (!std::isfinite(epoch_loss)) {
      throw DataError("calibrator training diverged (non-finite loss) at epoch " + std::to_string(epoch));
    }
    log.train_loss.push_back(epoch_loss);
    log.epochs_run = epoch + 1;

    const double score = valid.empty() ? epoch_loss : mean_anll(model, valid);
    if (!valid.empty()) log.valid_anll.push_back(score);
    if (score < best_score) {
      best_score = score;
      best = model.params();
      if (model.has_embedding()) best_table = model.embedding().table();
      log.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  model.params() = std::move(best);
  if (model.has_embedding()) model.embedding().table() = std::move(best_table);
  for (auto& ex : train) {
    if (model.has_embedding() && ex.states.hashed()) model.embedding().refresh(&ex.states);
  }
  for (auto& ex : valid) {
    if (model.has_embedding() && ex.states.hashed()) model.embedding().refresh(&ex.states);
  }
  return log;
}

// --- corpus-level -------------------------------------------------------------

std::optional<int> human_or_match_label(const QARecord& record) {
  std::vector<AnnotationLabel> graded;
  for (const auto& a : record.annotations) {
    if (a.correctness4) graded.push_back(a);
  }
  if (!graded.empty()) {
    auto m = majority_label(graded, LabelAxis::kCorrectnessBinary);
    if (!m) return std::nullopt;
    return m->correctness() == Correctness::kCorrect ? 1 : 0;
  }
  return match_correct(record.response, record.gold_aliases) == Correctness::kCorrect ? 1 : 0;
}

StateBundle states_for(const QARecord& record, const CalibratorModel& model, const StateStore* store) {
  if (store) {
    const std::string& key = record.state_ref ? *record.state_ref : record.id;
    auto it = store->find(key);
    if (it == store->end()) throw DataError("no states for record " + record.id + " (key " + key + ")");
    return it->second;
  }
  return model.featurize(record.question, record.response);
}

CalibratorModel train_calibrator(std::span<const QARecord> train, std::span<const QARecord> valid,
                                 const CalibratorConfig& config, const StateStore* store, TrainingLog* log) {
  CalibratorModel model(config, store == nullptr);
  std::vector<CalibratorExample> train_ex;
  train_ex.reserve(train.size());
  for (const auto& r : train) {
    const int label = match_correct(r.response, r.gold_aliases) == Correctness::kCorrect ? 1 : 0;
    train_ex.push_back({states_for(r, model, store), label});
  }
  std::vector<CalibratorExample> valid_ex;
  for (const auto& r : valid) {
    if (auto label = human_or_match_label(r)) valid_ex.push_back({states_for(r, model, store), *label});
  }
  TrainingLog l = fit_calibrator(model, train_ex, valid_ex);
  if (log) *log = std::move(l);
  return model;
}

}  // namespace lincal
