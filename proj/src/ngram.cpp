#include "lincal/ngram.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace lincal {

NGramVocab::NGramVocab(std::vector<std::string> ngrams, NGramOptions options)
    : ngrams_(std::move(ngrams)), options_(options) {
  index_.reserve(ngrams_.size());
  for (std::size_t i = 0; i < ngrams_.size(); ++i) index_.emplace(ngrams_[i], i);
}

std::optional<std::size_t> NGramVocab::find(std::string_view ngram) const {
  auto it = index_.find(std::string(ngram));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> ngrams_of(std::span<const std::string> tokens, int n_min, int n_max) {
  std::vector<std::string> out;
  if (n_min < 1) n_min = 1;
  const auto count = static_cast<int>(tokens.size());
  for (int start = 0; start < count; ++start) {
    std::string gram;
    for (int len = 1; len <= n_max && start + len <= count; ++len) {
      if (len > 1) gram += ' ';
      gram += tokens[start + len - 1];
      if (len >= n_min) out.push_back(gram);
      if (start == 0 && len + 1 >= n_min && len + 1 <= n_max) {
        std::string anchored(kStartAnchor);
        anchored += ' ';
        anchored += gram;
        out.push_back(std::move(anchored));
      }
    }
  }
  return out;
}

NGramVocab extract_ngrams(std::span<const std::string> texts, const NGramOptions& options) {
  std::map<std::string, std::size_t> counts;
  for (const auto& text : texts) {
    const auto tokens = tokenize(text);
    for (auto& g : ngrams_of(tokens, options.n_min, options.n_max)) ++counts[std::move(g)];
  }
  std::vector<std::string> kept;
  for (auto& [gram, n] : counts) {
    if (n >= options.min_count) kept.push_back(gram);
  }
  return NGramVocab(std::move(kept), options);
}

void SparseMatrix::add_row(std::span<const std::pair<std::uint32_t, double>> entries) {
  for (const auto& [c, v] : entries) {
    col_idx.push_back(c);
    values.push_back(v);
  }
  row_ptr.push_back(col_idx.size());
}

std::vector<std::uint32_t> feature_indices(std::string_view text, const NGramVocab& vocab) {
  std::vector<std::uint32_t> idx;
  const auto tokens = tokenize(text);
  for (const auto& g : ngrams_of(tokens, vocab.options().n_min, vocab.options().n_max)) {
    if (auto i = vocab.find(g)) idx.push_back(static_cast<std::uint32_t>(*i));
  }
  std::sort(idx.begin(), idx.end());
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  return idx;
}

SparseMatrix featurize(std::span<const std::string> texts, const NGramVocab& vocab) {
  SparseMatrix m;
  m.cols = vocab.size();
  std::vector<std::pair<std::uint32_t, double>> row;
  for (const auto& text : texts) {
    row.clear();
    for (auto i : feature_indices(text, vocab)) row.emplace_back(i, 1.0);
    m.add_row(row);
  }
  return m;
}

// --- L1 logistic regression ----------------------------------------------

namespace {

// log(1 + exp(z)) without overflow.
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void linear_scores(const SparseMatrix& x, std::span<const double> w, double b, std::vector<double>* z) {
  z->assign(x.rows(), b);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s = b;
    for (std::size_t k = x.row_ptr[r]; k < x.row_ptr[r + 1]; ++k) s += x.values[k] * w[x.col_idx[k]];
    (*z)[r] = s;
  }
}

double loss_from_scores(const std::vector<double>& z, std::span<const int> labels) {
  double total = 0.0;
  for (std::size_t r = 0; r < z.size(); ++r) total += softplus(labels[r] ? -z[r] : z[r]);
  return total / static_cast<double>(z.size());
}

double l1_norm(std::span<const double> w) {
  double s = 0.0;
  for (double v : w) s += std::abs(v);
  return s;
}

void check_labels(const SparseMatrix& x, std::span<const int> labels) {
  if (labels.size() != x.rows()) throw DataError("label count does not match design matrix rows");
  std::size_t pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw DataError("labels must be 0 or 1");
    pos += static_cast<std::size_t>(y);
  }
  if (pos == 0 || pos == labels.size()) throw DataError("degenerate labels: need both classes");
}

}  // namespace

double soft_threshold(double z, double threshold) {
  const double mag = std::abs(z) - threshold;
  if (mag <= 0.0) return 0.0;
  return z > 0 ? mag : -mag;
}

double logistic_loss(const SparseMatrix& x, std::span<const int> labels, std::span<const double> weights,
                     double bias) {
  std::vector<double> z;
  linear_scores(x, weights, bias, &z);
  return loss_from_scores(z, labels);
}

void logistic_gradient(const SparseMatrix& x, std::span<const int> labels, std::span<const double> weights,
                       double bias, std::span<double> grad_weights, double* grad_bias) {
  std::vector<double> z;
  linear_scores(x, weights, bias, &z);
  std::fill(grad_weights.begin(), grad_weights.end(), 0.0);
  double gb = 0.0;
  const double inv_n = 1.0 / static_cast<double>(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    // written to avoid cancellation when the margin is large
    const double residual = (labels[r] ? -sigmoid(-z[r]) : sigmoid(z[r])) * inv_n;
    gb += residual;
    for (std::size_t k = x.row_ptr[r]; k < x.row_ptr[r + 1]; ++k) {
      grad_weights[x.col_idx[k]] += residual * x.values[k];
    }
  }
  *grad_bias = gb;
}

L1Fit fit_l1(const SparseMatrix& x, std::span<const int> labels, double l1_lambda, std::uint64_t seed,
             const L1FitOptions& options) {
  (void)seed;  // the solver is deterministic; the seed is kept for interface stability
  check_labels(x, labels);
  if (!(l1_lambda >= 0.0) || !std::isfinite(l1_lambda)) throw DataError("l1_lambda must be a finite value >= 0");

  const std::size_t dim = x.cols;
  std::vector<double> w(dim, 0.0);
  std::size_t pos = 0;
  for (int y : labels) pos += static_cast<std::size_t>(y);
  const double rate = static_cast<double>(pos) / static_cast<double>(labels.size());
  double b = std::log(rate / (1.0 - rate));

  std::vector<double> gw(dim), w_next(dim), z;
  double gb = 0.0;
  double step = 1.0;

  L1Fit fit;
  linear_scores(x, w, b, &z);
  double smooth = loss_from_scores(z, labels);
  if (options.record_objective) fit.objective_trace.push_back(smooth + l1_lambda * l1_norm(w));

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    logistic_gradient(x, labels, w, b, gw, &gb);
    double b_next = b;
    double smooth_next = 0.0;
    step *= 2.0;
    for (;;) {
      double lin = 0.0, sq = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        w_next[j] = soft_threshold(w[j] - step * gw[j], step * l1_lambda);
        const double d = w_next[j] - w[j];
        lin += gw[j] * d;
        sq += d * d;
      }
      b_next = b - step * gb;
      const double db = b_next - b;
      lin += gb * db;
      sq += db * db;
      linear_scores(x, w_next, b_next, &z);
      smooth_next = loss_from_scores(z, labels);
      if (smooth_next <= smooth + lin + sq / (2.0 * step) + 1e-15 || step < 1e-20) break;
      step *= 0.5;
    }

    double max_change = std::abs(b_next - b);
    double max_weight = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      max_change = std::max(max_change, std::abs(w_next[j] - w[j]));
      max_weight = std::max(max_weight, std::abs(w_next[j]));
    }
    w.swap(w_next);
    b = b_next;
    smooth = smooth_next;
    fit.iterations = iter + 1;

    if (max_weight >= options.weight_cap) {
      for (double& v : w) v = std::clamp(v, -options.weight_cap, options.weight_cap);
      fit.capped = true;
      linear_scores(x, w, b, &z);
      smooth = loss_from_scores(z, labels);
    }
    if (options.record_objective) fit.objective_trace.push_back(smooth + l1_lambda * l1_norm(w));
    if (fit.capped) break;
    if (max_change < options.tolerance) {
      fit.converged = true;
      break;
    }
  }
  for (double v : w) {
    if (!std::isfinite(v)) throw DataError("L1 fit diverged");
  }
  fit.model.weights = std::move(w);
  fit.model.bias = b;
  fit.model.l1_lambda = l1_lambda;
  return fit;
}

double NGramModel::predict_logit(std::string_view text) const {
  double s = linear.bias;
  for (auto i : feature_indices(text, vocab)) s += linear.weights[i];
  return s;
}

TopNGrams top_ngrams(const NGramModel& model, std::size_t k) {
  TopNGrams out;
  if (k == 0) return out;
  std::vector<WeightedNGram> neg, pos, zero;
  for (std::size_t i = 0; i < model.vocab.size(); ++i) {
    const double w = model.linear.weights[i];
    WeightedNGram item{model.vocab.ngram(i), w};
    if (w < 0) {
      neg.push_back(std::move(item));
    } else if (w > 0) {
      pos.push_back(std::move(item));
    } else {
      zero.push_back(std::move(item));
    }
  }
  std::sort(neg.begin(), neg.end(), [](const auto& a, const auto& b) {
    return a.weight != b.weight ? a.weight < b.weight : a.ngram < b.ngram;
  });
  std::sort(pos.begin(), pos.end(), [](const auto& a, const auto& b) {
    return a.weight != b.weight ? a.weight > b.weight : a.ngram < b.ngram;
  });
  // vocab order is already lexicographic, so `zero` is sorted
  auto fill = [&](std::vector<WeightedNGram>& signed_list, std::vector<WeightedNGram>* dst) {
    for (auto& item : signed_list) {
      if (dst->size() == k) return;
      dst->push_back(item);
    }
    for (auto& item : zero) {
      if (dst->size() == k) return;
      dst->push_back(item);
    }
  };
  fill(neg, &out.most_negative);
  fill(pos, &out.most_positive);
  return out;
}

Json ngram_model_to_json(const NGramModel& model) {
  Json j = Json::object();
  Json vocab = Json::array();
  for (std::size_t i = 0; i < model.vocab.size(); ++i) vocab.push_back(Json::array({model.vocab.ngram(i), i}));
  j["vocab"] = std::move(vocab);
  j["weights"] = model.linear.weights;
  j["bias"] = model.linear.bias;
  j["l1_lambda"] = model.linear.l1_lambda;
  j["label_semantics"] = model.linear.label_semantics;
  j["n_min"] = model.vocab.options().n_min;
  j["n_max"] = model.vocab.options().n_max;
  j["min_count"] = model.vocab.options().min_count;
  return j;
}

NGramModel ngram_model_from_json(const Json& j) {
  NGramModel m;
  try {
    NGramOptions opts;
    opts.n_min = j.value("n_min", 2);
    opts.n_max = j.value("n_max", 7);
    opts.min_count = j.value("min_count", std::size_t{5});
    const auto& vocab = j.at("vocab");
    std::vector<std::string> grams(vocab.size());
    for (const auto& entry : vocab) {
      const auto idx = entry.at(1).get<std::size_t>();
      if (idx >= grams.size()) throw DataError("vocab index out of range");
      grams[idx] = entry.at(0).get<std::string>();
    }
    m.vocab = NGramVocab(std::move(grams), opts);
    m.linear.weights = j.at("weights").get<std::vector<double>>();
    m.linear.bias = j.at("bias").get<double>();
    m.linear.l1_lambda = j.value("l1_lambda", 0.0);
    m.linear.label_semantics = j.value("label_semantics", "");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed n-gram model: ") + e.what());
  }
  if (m.linear.weights.size() != m.vocab.size()) throw DataError("n-gram model weights do not match vocab size");
  return m;
}

}  // namespace lincal
