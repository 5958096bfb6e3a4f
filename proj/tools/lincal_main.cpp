// lincal: command-line driver for the calibration pipeline.
//
//   lincal ingest --web web.json --wiki wiki.json --out corpus.jsonl
//   lincal score --corpus corpus.jsonl --out scored.jsonl
//   lincal train-calibrator --corpus corpus.jsonl --out calibrator.bin
//   lincal tune-thresholds --corpus test.jsonl --model calibrator.bin --out policy.json
//   lincal recalibrate --corpus test.jsonl --model calibrator.bin --policy policy.json --out recal.jsonl
//   lincal evaluate --corpus test.jsonl --recalibrated recal.jsonl --out report.json
//
// Exit status: 0 success, 1 usage error, 2 data error.

#include <algorithm>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "lincal/annotation_service.hpp"
#include "lincal/calibrator.hpp"
#include "lincal/control.hpp"
#include "lincal/corpus.hpp"
#include "lincal/metrics.hpp"
#include "lincal/ngram.hpp"
#include "lincal/pipeline.hpp"
#include "lincal/scoring.hpp"

namespace {

using namespace lincal;

struct Globals {
  std::string corpus;
  std::string states;
  std::string model;
  std::string policy;
  std::string out;
  std::uint64_t seed = 0;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << text;
  if (!out) throw DataError("failed writing " + path);
}

Json read_json(const std::string& path) {
  Json j = Json::parse(read_text(path), nullptr, false);
  if (j.is_discarded()) throw DataError(path + ": not valid JSON");
  return j;
}

const std::string& need(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string(flag) + " is required");
  return value;
}

std::optional<StateStore> load_states(const Globals& g) {
  if (g.states.empty()) return std::nullopt;
  return read_state_sidecar(g.states);
}

HedgeLexicon load_lexicon(const std::string& path) {
  return path.empty() ? HedgeLexicon::defaults() : HedgeLexicon::load(path);
}

// Records with a binary label: human majority where present, else match.
void predictions(std::span<const QARecord> records, const CalibratorModel& model, const StateStore* store,
                 std::vector<double>* preds, std::vector<int>* labels) {
  for (const auto& r : records) {
    const auto label = human_or_match_label(r);
    if (!label) continue;
    preds->push_back(model.forward(states_for(r, model, store)));
    labels->push_back(*label);
  }
}

std::vector<QARecord> sorted_prefix(const Corpus& corpus, std::size_t count) {
  const auto ids = tuning_ids(corpus, count);
  std::vector<QARecord> out;
  for (const auto& r : corpus) {
    if (ids.contains(r.id)) out.push_back(r);
  }
  return out;
}

// --- subcommands -------------------------------------------------------------

struct IngestArgs {
  std::string web, wiki, split = "train";
};

int run_ingest(const Globals& g, const IngestArgs& a) {
  if (a.web.empty() && a.wiki.empty()) throw UsageError("ingest needs --web and/or --wiki");
  const auto web = a.web.empty() ? std::vector<RawQAEntry>{} : parse_raw_entries(read_text(a.web));
  const auto wiki = a.wiki.empty() ? std::vector<RawQAEntry>{} : parse_raw_entries(read_text(a.wiki));
  const IngestResult result = ingest_trivia(web, wiki, parse_split(a.split));
  for (const auto& e : result.errors) std::cerr << "skipped " << e.section << "[" << e.index << "]: " << e.message << "\n";
  write_corpus(need(g.out, "--out"), result.records);
  std::cout << "ingested " << result.records.size() << " records (" << result.errors.size() << " skipped)\n";
  return 0;
}

struct ScoreArgs {
  std::string lexicon, confidence_model;
};

int run_score(const Globals& g, const ScoreArgs& a) {
  Corpus corpus = read_corpus(need(g.corpus, "--corpus"));
  const HedgeLexicon lexicon = load_lexicon(a.lexicon);
  std::optional<ConfidenceClassifier> classifier;
  if (!a.confidence_model.empty()) classifier = ConfidenceClassifier::from_json(read_json(a.confidence_model));

  std::vector<Confidence> predicted, gold;
  std::size_t correct = 0;
  for (auto& r : corpus) {
    const Correctness c = match_correct(r.response, r.gold_aliases);
    const Confidence conf =
        classifier ? classifier->predict(r.question, r.response) : classify_confidence_lexicon(r.response, lexicon);
    r.extra["auto_correct"] = to_string(c);
    r.extra["auto_confidence"] = to_string(conf);
    correct += c == Correctness::kCorrect;
    if (r.annotations.empty()) continue;
    if (auto m = majority_label(r.annotations, LabelAxis::kConfidence)) {
      predicted.push_back(conf);
      gold.push_back(m->confidence());
    }
  }
  write_corpus(need(g.out, "--out"), corpus);
  std::cout << "scored " << corpus.size() << " records, " << correct << " match-correct\n";
  if (!gold.empty()) {
    const auto pr = binary_precision_recall(predicted, gold);
    std::cout << "HI vs human majority: precision " << pr.precision << " recall " << pr.recall << " over "
              << gold.size() << " records\n";
  }
  return 0;
}

struct NGramArgs {
  std::string target = "correctness", text = "question", labels = "human_majority";
  double lambda = 0.001;
  int n_min = 2, n_max = 7;
  std::size_t min_count = 5, top = 3;
};

int run_train_ngram(const Globals& g, const NGramArgs& a) {
  if (a.target != "correctness" && a.target != "certainty") throw UsageError("--target must be correctness or certainty");
  if (a.text != "question" && a.text != "response") throw UsageError("--text must be question or response");
  const Corpus corpus = read_corpus(need(g.corpus, "--corpus"));
  const LabelSource source = parse_label_source(a.labels);

  std::vector<std::string> texts;
  std::vector<int> labels;
  for (const auto& r : corpus) {
    const auto j = judge(r, source);
    if (!j) continue;
    int y = 0;
    if (a.target == "correctness") {
      if (!j->correct) continue;
      y = *j->correct == Correctness::kIncorrect;
    } else {
      y = j->confidence == Confidence::kHI;
    }
    texts.push_back(a.text == "question" ? r.question : r.response);
    labels.push_back(y);
  }
  NGramModel model;
  model.vocab = extract_ngrams(texts, {a.n_min, a.n_max, a.min_count});
  if (model.vocab.empty()) throw DataError("no n-gram reaches the minimum count");
  const L1Fit fit = fit_l1(featurize(texts, model.vocab), labels, a.lambda, g.seed);
  model.linear = fit.model;
  model.linear.label_semantics = a.target == "correctness" ? "positive=incorrect" : "positive=HI";

  const auto nonzero = std::count_if(model.linear.weights.begin(), model.linear.weights.end(),
                                     [](double w) { return w != 0.0; });
  std::cout << a.text << " -> " << a.target << ": " << texts.size() << " texts, " << model.vocab.size()
            << " n-grams, " << nonzero << " nonzero, " << fit.iterations << " iterations"
            << (fit.converged ? "" : fit.capped ? " (weight cap hit)" : " (not converged)") << "\n";
  const TopNGrams top = top_ngrams(model, a.top);
  for (const auto& w : top.most_negative) std::cout << "  - " << w.weight << "\t" << w.ngram << "\n";
  for (const auto& w : top.most_positive) std::cout << "  + " << w.weight << "\t" << w.ngram << "\n";
  if (!g.out.empty()) write_text(g.out, ngram_model_to_json(model).dump(2) + "\n");
  return 0;
}

struct ConfidenceArgs {
  bool include_question = false;
  int n_max = 3;
};

int run_train_confidence(const Globals& g, const ConfidenceArgs& a) {
  const Corpus corpus = read_corpus(need(g.corpus, "--corpus"));
  std::vector<LabeledResponse> train, valid;
  for (const auto& r : corpus) {
    if (r.annotations.empty()) continue;
    const auto m = majority_label(r.annotations, LabelAxis::kConfidence);
    if (!m) continue;
    (r.split == Split::kTrain ? train : valid).push_back({r.question, r.response, m->confidence()});
  }
  ConfidenceClassifierConfig config;
  config.include_question = a.include_question;
  config.ngrams.n_max = a.n_max;
  config.seed = g.seed;
  const ConfidenceClassifier clf = ConfidenceClassifier::train(train, config);
  std::cout << "trained on " << train.size() << " labelled responses, " << clf.vocab().size() << " n-grams\n";
  if (!valid.empty()) {
    std::vector<Confidence> pred, gold;
    for (const auto& v : valid) {
      pred.push_back(clf.predict(v.question, v.response));
      gold.push_back(v.label);
    }
    const auto pr = binary_precision_recall(pred, gold);
    std::cout << "held-out HI precision " << pr.precision << " recall " << pr.recall << " over " << valid.size()
              << " records\n";
  }
  write_text(need(g.out, "--out"), clf.to_json().dump() + "\n");
  return 0;
}

struct CalibratorArgs {
  CalibratorConfig config;
  bool no_enc = false, no_dec = false;
};

int run_train_calibrator(const Globals& g, CalibratorArgs a) {
  const Corpus corpus = read_corpus(need(g.corpus, "--corpus"));
  const auto store = load_states(g);
  a.config.use_enc = !a.no_enc;
  a.config.use_dec = !a.no_dec;
  a.config.seed = g.seed;
  if (store && !store->empty()) a.config.input_dim = store->begin()->second.dim;
  try {
    a.config.validate();
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
  std::vector<QARecord> train, valid;
  for (const auto& r : corpus) {
    if (r.split == Split::kTrain) train.push_back(r);
    if (r.split == Split::kValid) valid.push_back(r);
  }
  if (train.empty()) throw DataError("corpus has no train-split records");
  TrainingLog log;
  const CalibratorModel model = train_calibrator(train, valid, a.config, store ? &*store : nullptr, &log);
  for (int e = 0; e < log.epochs_run; ++e) {
    std::cout << "epoch " << e + 1 << " train_loss " << log.train_loss[e];
    if (static_cast<std::size_t>(e) < log.valid_anll.size()) std::cout << " valid_anll " << log.valid_anll[e];
    std::cout << "\n";
  }
  std::cout << "best epoch " << log.best_epoch + 1 << "\n";
  model.save(need(g.out, "--out"));
  return 0;
}

struct EvalCalibrationArgs {
  std::size_t bins = 20;
  std::vector<double> thresholds;
  std::string split = "test", csv;
};

int run_eval_calibration(const Globals& g, const EvalCalibrationArgs& a) {
  const Corpus corpus = read_corpus(need(g.corpus, "--corpus"));
  const CalibratorModel model = CalibratorModel::load(need(g.model, "--model"));
  const auto store = load_states(g);
  std::vector<QARecord> records;
  const bool all = a.split == "all";
  const Split split = all ? Split::kTest : parse_split(a.split);
  for (const auto& r : corpus) {
    if (all || r.split == split) records.push_back(r);
  }
  std::vector<double> preds;
  std::vector<int> labels;
  predictions(records, model, store ? &*store : nullptr, &preds, &labels);
  if (preds.empty()) throw DataError("no labelled records in split " + a.split);
  const BinSpec spec = a.thresholds.empty() ? BinSpec::equal_width(a.bins) : BinSpec::thresholds(a.thresholds);
  const ReliabilityReport report = bin_reliability(preds, labels, spec);
  std::cout << "n " << report.total_n << " ECE " << report.ece << " MCE " << report.mce << " ANLL " << report.anll
            << "\n";
  if (!g.out.empty()) {
    write_text(g.out, reliability_to_json(report).dump(2) + "\n");
    std::string csv = a.csv;
    if (csv.empty()) csv = std::filesystem::path(g.out).replace_extension(".csv").string();
    write_text(csv, export_reliability_csv(report));
  } else {
    std::cout << export_reliability_csv(report);
  }
  return 0;
}

struct TuneArgs {
  std::size_t tune_count = 1000;
  double step = 0.025;
};

int run_tune_thresholds(const Globals& g, const TuneArgs& a) {
  const Corpus corpus = read_corpus(need(g.corpus, "--corpus"));
  const CalibratorModel model = CalibratorModel::load(need(g.model, "--model"));
  const auto store = load_states(g);
  const auto tuning = sorted_prefix(corpus, a.tune_count);
  std::vector<double> preds;
  std::vector<int> labels;
  predictions(tuning, model, store ? &*store : nullptr, &preds, &labels);
  const ThresholdSearch search = tune_thresholds(preds, labels, a.step);
  std::cout << "t_dk " << search.policy.t_dk << " t_lo " << search.policy.t_lo << " p(correct|HI) "
            << search.objective << " on " << search.hi_count << " of " << preds.size() << " tuning records\n";
  write_text(need(g.out, "--out"), policy_to_json(search.policy).dump(2) + "\n");
  return 0;
}

int run_recalibrate(const Globals& g, const std::string& lexicon_path) {
  const Corpus corpus = read_corpus(need(g.corpus, "--corpus"));
  const CalibratorModel model = CalibratorModel::load(need(g.model, "--model"));
  const ControlPolicy policy = g.policy.empty() ? ControlPolicy::defaults() : policy_from_json(read_json(g.policy));
  const auto store = load_states(g);
  const RecalibrationResult result =
      recalibrate(corpus, model, policy, store ? &*store : nullptr, load_lexicon(lexicon_path));
  for (const auto& f : result.failures) std::cerr << "failed " << f.id << ": " << f.message << "\n";
  write_corpus(need(g.out, "--out"), result.records);
  std::cout << "recalibrated " << result.records.size() - result.failures.size() << " records, "
            << result.failures.size() << " failures\n";
  return 0;
}

struct EvaluateArgs {
  std::string recalibrated, labels = "human_majority", table, lexicon, confidence_model;
  std::size_t tune_count = 0;
};

int run_evaluate(const Globals& g, const EvaluateArgs& a) {
  const Corpus vanilla = read_corpus(need(g.corpus, "--corpus"));
  const Corpus recal = read_corpus(need(a.recalibrated, "--recalibrated"));
  const HedgeLexicon lexicon = load_lexicon(a.lexicon);
  std::optional<ConfidenceClassifier> classifier;
  if (!a.confidence_model.empty()) classifier = ConfidenceClassifier::from_json(read_json(a.confidence_model));
  EvaluationOptions options;
  options.labels = parse_label_source(a.labels);
  options.tuning_count = a.tune_count;
  options.permutation.seed = g.seed;
  options.lexicon = &lexicon;
  options.classifier = classifier ? &*classifier : nullptr;
  const EvaluationReport report = evaluate(vanilla, recal, options);
  const std::string table = evaluation_table_text(report);
  std::cout << table;
  if (!a.table.empty()) write_text(a.table, table);
  if (!g.out.empty()) write_text(g.out, evaluation_to_json(report).dump(2) + "\n");
  return 0;
}

struct ServeArgs {
  std::string onboarding, log, host = "127.0.0.1", ui_dir;
  int port = 8080;
  std::int64_t lease_ttl_s = 3600;
  std::size_t batch_size = 9, coverage = 3;
};

AnnotationServer* g_server = nullptr;

extern "C" void handle_stop(int) {
  if (g_server) g_server->stop();
}

int run_serve(const Globals& g, const ServeArgs& a) {
  Corpus corpus = read_corpus(need(g.corpus, "--corpus"));
  const Corpus gold_source = a.onboarding.empty() ? corpus : read_corpus(a.onboarding);
  auto onboarding = onboarding_from_corpus(gold_source);
  // onboarding records are not part of the labelling pool
  std::erase_if(corpus, [&](const QARecord& r) {
    return std::any_of(onboarding.begin(), onboarding.end(), [&](const auto& o) { return o.record.id == r.id; });
  });
  AnnotationStore::Options options;
  options.log_path = a.log;
  options.lease_ttl_ms = a.lease_ttl_s * 1000;
  options.batch_size = a.batch_size;
  options.coverage_target = a.coverage;
  AnnotationStore store(std::move(corpus), std::move(onboarding), options);
  AnnotationServer server(store, a.ui_dir);
  const int port = server.bind(a.host, a.port);
  g_server = &server;
  std::signal(SIGINT, handle_stop);
  std::signal(SIGTERM, handle_stop);
  std::cout << "listening on http://" << a.host << ":" << port << std::endl;
  server.listen();
  g_server = nullptr;
  if (!g.out.empty()) write_corpus(g.out, store.export_corpus());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Linguistic calibration toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--corpus", g.corpus, "Corpus JSONL");
  app.add_option("--states", g.states, "Hidden-state sidecar");
  app.add_option("--model", g.model, "Calibrator checkpoint");
  app.add_option("--policy", g.policy, "Control policy JSON");
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--out", g.out, "Output path");

  IngestArgs ingest;
  auto* ingest_cmd = app.add_subcommand("ingest", "Merge TriviaQA web/wiki sections into a corpus");
  ingest_cmd->add_option("--web", ingest.web);
  ingest_cmd->add_option("--wiki", ingest.wiki);
  ingest_cmd->add_option("--split", ingest.split)->check(CLI::IsMember({"train", "valid", "test"}));

  ScoreArgs score;
  auto* score_cmd = app.add_subcommand("score", "Attach automatic correctness and confidence labels");
  score_cmd->add_option("--lexicon", score.lexicon, "Hedge lexicon file");
  score_cmd->add_option("--confidence-model", score.confidence_model, "Trained confidence classifier JSON");

  NGramArgs ngram;
  auto* ngram_cmd = app.add_subcommand("train-ngram", "L1 logistic regression over n-grams");
  ngram_cmd->add_option("--target", ngram.target)->check(CLI::IsMember({"correctness", "certainty"}));
  ngram_cmd->add_option("--text", ngram.text)->check(CLI::IsMember({"question", "response"}));
  ngram_cmd->add_option("--labels", ngram.labels);
  ngram_cmd->add_option("--lambda", ngram.lambda)->check(CLI::NonNegativeNumber);
  ngram_cmd->add_option("--n-min", ngram.n_min)->check(CLI::PositiveNumber);
  ngram_cmd->add_option("--n-max", ngram.n_max)->check(CLI::PositiveNumber);
  ngram_cmd->add_option("--min-count", ngram.min_count);
  ngram_cmd->add_option("--top", ngram.top);

  ConfidenceArgs confidence;
  auto* conf_cmd = app.add_subcommand("train-confidence", "Train the 4-way confidence classifier");
  conf_cmd->add_flag("--include-question", confidence.include_question);
  conf_cmd->add_option("--n-max", confidence.n_max)->check(CLI::PositiveNumber);

  CalibratorArgs calib;
  auto* calib_cmd = app.add_subcommand("train-calibrator", "Train the correctness calibrator");
  calib_cmd->add_option("--dim", calib.config.input_dim, "Hashed embedding width");
  calib_cmd->add_option("--hidden", calib.config.hidden_dim);
  calib_cmd->add_option("--epochs", calib.config.max_epochs);
  calib_cmd->add_option("--lr", calib.config.learning_rate);
  calib_cmd->add_option("--patience", calib.config.patience);
  calib_cmd->add_option("--batch", calib.config.batch_size);
  calib_cmd->add_flag("--no-enc", calib.no_enc);
  calib_cmd->add_flag("--no-dec", calib.no_dec);
  calib_cmd->add_flag("--bias-only", calib.config.bias_only);

  EvalCalibrationArgs evalcal;
  auto* evalcal_cmd = app.add_subcommand("eval-calibration", "ECE / MCE / ANLL and reliability diagram data");
  evalcal_cmd->add_option("--bins", evalcal.bins)->check(CLI::PositiveNumber);
  evalcal_cmd->add_option("--thresholds", evalcal.thresholds, "Explicit bin cut points")->delimiter(',');
  evalcal_cmd->add_option("--split", evalcal.split)->check(CLI::IsMember({"train", "valid", "test", "all"}));
  evalcal_cmd->add_option("--csv", evalcal.csv, "CSV path (default: --out with .csv)");

  TuneArgs tune;
  auto* tune_cmd = app.add_subcommand("tune-thresholds", "Grid-search control thresholds on the tuning split");
  tune_cmd->add_option("--tune-count", tune.tune_count);
  tune_cmd->add_option("--step", tune.step)->check(CLI::Range(1e-6, 1.0));

  std::string recal_lexicon;
  auto* recal_cmd = app.add_subcommand("recalibrate", "Rewrite responses to the calibrated confidence");
  recal_cmd->add_option("--lexicon", recal_lexicon);

  EvaluateArgs evaluate_args;
  auto* eval_cmd = app.add_subcommand("evaluate", "Compare vanilla and recalibrated corpora");
  eval_cmd->add_option("--recalibrated", evaluate_args.recalibrated);
  eval_cmd->add_option("--labels", evaluate_args.labels);
  eval_cmd->add_option("--tune-count", evaluate_args.tune_count);
  eval_cmd->add_option("--table", evaluate_args.table, "Also write the text table here");
  eval_cmd->add_option("--lexicon", evaluate_args.lexicon);
  eval_cmd->add_option("--confidence-model", evaluate_args.confidence_model);

  ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("serve", "Run the annotation service");
  serve_cmd->add_option("--onboarding", serve.onboarding, "Annotated corpus supplying onboarding gold labels");
  serve_cmd->add_option("--log", serve.log, "Event log (JSONL)");
  serve_cmd->add_option("--host", serve.host);
  serve_cmd->add_option("--port", serve.port);
  serve_cmd->add_option("--ui-dir", serve.ui_dir);
  serve_cmd->add_option("--lease-ttl", serve.lease_ttl_s, "Seconds");
  serve_cmd->add_option("--batch-size", serve.batch_size)->check(CLI::PositiveNumber);
  serve_cmd->add_option("--coverage", serve.coverage)->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*ingest_cmd) return run_ingest(g, ingest);
    if (*score_cmd) return run_score(g, score);
    if (*ngram_cmd) {
      if (ngram.n_min > ngram.n_max) throw UsageError("--n-min exceeds --n-max");
      return run_train_ngram(g, ngram);
    }
    if (*conf_cmd) return run_train_confidence(g, confidence);
    if (*calib_cmd) return run_train_calibrator(g, calib);
    if (*evalcal_cmd) return run_eval_calibration(g, evalcal);
    if (*tune_cmd) return run_tune_thresholds(g, tune);
    if (*recal_cmd) return run_recalibrate(g, recal_lexicon);
    if (*eval_cmd) {
      try {
        parse_label_source(evaluate_args.labels);
      } catch (const DataError& e) {
        throw UsageError(e.what());
      }
      return run_evaluate(g, evaluate_args);
    }
    if (*serve_cmd) return run_serve(g, serve);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
