#include "cli.hpp"

#include <algorithm>
#include <csignal>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "oa/annotation.hpp"
#include "oa/annotation_service.hpp"
#include "oa/error_detector.hpp"
#include "oa/errors.hpp"
#include "oa/evaluation.hpp"
#include "oa/external_model.hpp"
#include "oa/global_aggregator.hpp"
#include "oa/local_explainer.hpp"
#include "oa/model_adapter.hpp"
#include "oa/parallel.hpp"
#include "oa/text_core.hpp"

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace oa::cli {
namespace {

// Bad invocation: unknown flags, malformed config, missing inputs.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string out = ".";
  std::string config;
  std::string corpus;
  std::string model = "builtin";
  std::string weights;
  std::string cache_dir;
  std::vector<std::string> classes{"negative", "neutral", "positive"};
  std::string neutral = "neutral";
  bool verbose = false;

  // external models
  std::size_t batch_size = 64;
  std::size_t timeout_ms = 30'000;
  int retries = 2;

  // train
  double l2 = 0.01;
  double learning_rate = 0.1;
  int epochs = 500;
  std::uint64_t seed = 42;

  // explainer
  std::size_t n_samples = 1000;
  double kernel_width = 0.25;
  double ridge = 1e-3;
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());

  // globals
  std::size_t top_n = 2000;
  std::string filter = "non-neutral";
  std::size_t min_support = 3;

  // annotation
  std::string globals;
  std::string definitions;
  std::string gold_pool;
  std::string judgments;
  bool no_gold = false;
  std::size_t page_size = 5;
  std::size_t quorum = 5;
  double trust_threshold = 0.7;
  std::size_t min_gold = 2;
  std::size_t min_votes = 3;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string ui_dir;

  // detection and evaluation
  std::string erroneous;
  std::string detection;
  double tau = 0.0;
  std::vector<std::size_t> k{10, 50, 100};
  std::vector<double> taus{0.0, 0.1, 0.2, 0.3, 0.4};
  std::size_t bins = 10;
};

struct Bound {
  std::string name;
  CLI::Option* option;
  std::function<ojson()> value;
};

struct Command {
  CLI::App* app = nullptr;
  std::vector<Bound> bound;
  std::function<void()> action;

  template <typename T>
  CLI::Option* add(const std::string& name, T& var, const std::string& help) {
    auto* opt = app->add_option("--" + name, var, help);
    if constexpr (!std::is_same_v<T, std::string> && requires { var.begin(); }) {
      opt->delimiter(',');
    }
    opt->capture_default_str();
    bound.push_back({name, opt, [&var] { return ojson(var); }});
    return opt;
  }
  CLI::Option* flag(const std::string& name, bool& var, const std::string& help) {
    auto* opt = app->add_flag("--" + name, var, help);
    bound.push_back({name, opt, [&var] { return ojson(var); }});
    return opt;
  }
};

std::string normalise_key(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

std::string config_scalar(const nlohmann::json& v, const std::string& key) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
  if (v.is_number_float()) return fmt::format("{}", v.get<double>());
  throw UsageError("config key '" + key + "' must be a scalar or a list of scalars");
}

// Fills options absent from the command line from the JSON config file.
void apply_config(const fs::path& path, Command& cmd, const std::set<std::string>& known) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path.string());
  nlohmann::json config;
  try {
    config = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("malformed config file " + path.string() + ": " + e.what());
  }
  if (!config.is_object()) throw UsageError("config file must hold a JSON object");
  std::map<std::string, nlohmann::json> values;
  for (const auto& [key, value] : config.items()) {
    const std::string name = normalise_key(key);
    if (!known.contains(name)) throw UsageError("unknown config key '" + key + "'");
    values[name] = value;
  }
  for (auto& b : cmd.bound) {
    const auto it = values.find(b.name);
    if (it == values.end() || b.option->count() > 0 || b.name == "config") continue;
    try {
      if (it->second.is_array()) {
        std::vector<std::string> items;
        for (const auto& v : it->second) items.push_back(config_scalar(v, b.name));
        b.option->add_result(items);
      } else {
        b.option->add_result(config_scalar(it->second, b.name));
      }
      b.option->run_callback();
    } catch (const CLI::Error& e) {
      throw UsageError("invalid value for config key '" + b.name + "': " + e.what());
    }
  }
}

void require_file(const std::string& path, const std::string& flag) {
  if (path.empty()) throw UsageError("missing required input --" + flag);
  if (!fs::is_regular_file(path)) throw UsageError("input file for --" + flag + " not found: " + path);
}

std::string or_default(const std::string& value, const fs::path& fallback) {
  return value.empty() ? fallback.string() : value;
}

template <typename Fn>
void write_file(const fs::path& path, Fn&& fn) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  fn(out);
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

ClassConfig class_config(const Options& o) {
  const auto it = std::find(o.classes.begin(), o.classes.end(), o.neutral);
  if (it == o.classes.end()) throw UsageError("--neutral '" + o.neutral + "' is not among --classes");
  try {
    return ClassConfig(o.classes, static_cast<std::size_t>(it - o.classes.begin()));
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

// A model handle plus the on-disk cache it was primed from.
struct ModelSession {
  std::optional<ModelHandle> handle;
  std::shared_ptr<PredictionCache> cache;
  std::optional<fs::path> cache_file;

  void persist() const {
    if (!cache_file) return;
    fs::create_directories(cache_file->parent_path());
    cache->save(*cache_file);
    spdlog::info("prediction cache: {} entries, {} hits, {} misses", cache->size(), cache->hits(),
                 cache->misses());
  }
};

ModelSession open_model(const Options& o) {
  ModelSession s;
  s.cache = std::make_shared<PredictionCache>();
  if (!o.cache_dir.empty()) {
    s.cache_file = fs::path(o.cache_dir) / "predictions.jsonl";
    s.cache->load(*s.cache_file);
  }
  ExternalModelOptions ext;
  ext.batch_size = o.batch_size;
  ext.timeout = std::chrono::milliseconds(o.timeout_ms);
  ext.retries = o.retries;

  const std::string& target = o.model;
  if (target == "builtin") {
    require_file(o.weights, "weights");
    s.handle.emplace(make_builtin_handle(LogisticModel::load(o.weights), s.cache));
  } else if (target.starts_with("cmd:")) {
    auto argv = split_command(target.substr(4));
    if (argv.empty()) throw UsageError("--model cmd: needs a command");
    s.handle.emplace(std::make_shared<SubprocessModel>(std::move(argv), class_config(o), ext),
                     ModelHandle::Kind::external, s.cache);
  } else if (target.starts_with("http://") || target.starts_with("https://") || target.starts_with("http:")) {
    const std::string url = target.starts_with("http:") && !target.starts_with("http://")
                                ? target.substr(5)
                                : target;
    s.handle.emplace(std::make_shared<HttpModel>(url, class_config(o), ext),
                     ModelHandle::Kind::external, s.cache);
  } else {
    throw UsageError("--model must be builtin, cmd:<command> or http:<url>");
  }
  return s;
}

ExplainerConfig explainer_config(const Options& o) {
  if (o.n_samples == 0) throw UsageError("--n-samples must be positive");
  ExplainerConfig c;
  c.n_samples = o.n_samples;
  c.seed = o.seed;
  c.kernel_width = o.kernel_width;
  c.ridge = o.ridge;
  return c;
}

void check_tau(double tau) {
  if (!std::isfinite(tau)) throw UsageError("--tau must be finite");
}

Corpus corpus_from(const Options& o, const ClassConfig& classes) {
  require_file(o.corpus, "corpus");
  return load_corpus(o.corpus, classes);
}

std::vector<GoldQuestion> gold_from(const Options& o, const ClassConfig& classes) {
  if (o.gold_pool.empty()) return {};
  require_file(o.gold_pool, "gold-pool");
  return load_gold_pool(o.gold_pool, classes);
}

TrustPolicy trust_from(const Options& o) { return TrustPolicy{o.trust_threshold, o.min_gold}; }

// ---------------------------------------------------------------- subcommands

void cmd_train(const Options& o, const fs::path& out, std::ostream& stdout_) {
  const ClassConfig classes = class_config(o);
  const Corpus corpus = corpus_from(o, classes);
  TrainingSettings settings{o.l2, o.learning_rate, o.epochs, o.seed};
  TrainingReport report;
  const LogisticModel model = train_builtin(corpus, classes, settings, &report);
  model.save(out / "model.json");
  stdout_ << fmt::format("trained on {} documents, vocabulary {}, final objective {:.6f}\n",
                         corpus.size(), model.vocabulary().size(), report.loss.back());
}

void cmd_explain(const Options& o, const fs::path& out, std::ostream& stdout_) {
  ModelSession session = open_model(o);
  const ModelHandle& model = *session.handle;
  const Corpus corpus = corpus_from(o, model.class_config());
  const ExplainerConfig config = explainer_config(o);

  std::vector<std::optional<LocalExplanation>> results(corpus.size());
  parallel_for(corpus.size(), o.workers, [&](std::size_t i) {
    try {
      results[i] = explain_instance(model, corpus[i], config);
    } catch (const EmptyDocument&) {
      spdlog::warn("document {} has no tokens, skipped", corpus[i].id());
    }
  });
  std::size_t written = 0;
  write_file(out / "explanations.jsonl", [&](std::ostream& f) {
    for (const auto& r : results) {
      if (!r) continue;
      f << to_json(*r, model.class_config()).dump() << '\n';
      ++written;
    }
  });
  session.persist();
  stdout_ << fmt::format("explained {} of {} documents\n", written, corpus.size());
}

void cmd_globals(const Options& o, const fs::path& out, std::ostream& stdout_) {
  ModelSession session = open_model(o);
  const ModelHandle& model = *session.handle;
  const Corpus corpus = corpus_from(o, model.class_config());
  RankingOptions options;
  try {
    options.filter = parse_feature_filter(o.filter);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  options.top_n = o.top_n;
  options.min_support = o.min_support;
  options.workers = o.workers;
  const auto ranking = rank_features(model, corpus, options);
  write_file(out / "globals.csv",
             [&](std::ostream& f) { write_global_csv(f, ranking, model.class_config()); });
  session.persist();
  stdout_ << fmt::format("ranked {} features\n", ranking.size());
}

std::vector<GlobalFeatureContribution> globals_from(const Options& o, const fs::path& out,
                                                    const ClassConfig& classes) {
  const std::string path = or_default(o.globals, out / "globals.csv");
  require_file(path, "globals");
  std::ifstream in(path);
  return read_global_csv(in, classes);
}

std::atomic<httplib::Server*> g_server{nullptr};

void cmd_serve(const Options& o, const fs::path& out, std::ostream& stdout_) {
  const ClassConfig classes = class_config(o);
  const auto ranking = globals_from(o, out, classes);
  std::map<std::string, std::string> definitions;
  if (!o.definitions.empty()) {
    require_file(o.definitions, "definitions");
    definitions = load_definitions(o.definitions);
  }
  const auto gold = gold_from(o, classes);
  TaskOptions task_options{o.page_size, !o.no_gold, o.seed};
  auto tasks = generate_tasks(ranking, definitions, o.top_n, gold, task_options);

  JudgmentStore store(gold, trust_from(o), out / "judgments.jsonl");
  AnnotationService service(std::move(tasks), store, classes, o.quorum);

  httplib::Server server;
  std::optional<fs::path> ui;
  if (!o.ui_dir.empty()) {
    if (!fs::is_directory(o.ui_dir)) throw UsageError("--ui-dir is not a directory: " + o.ui_dir);
    ui = fs::path(o.ui_dir);
  }
  service.mount(server, ui);

  g_server = &server;
  auto previous_int = std::signal(SIGINT, [](int) {
    if (auto* s = g_server.load()) s->stop();
  });
  auto previous_term = std::signal(SIGTERM, [](int) {
    if (auto* s = g_server.load()) s->stop();
  });
  stdout_ << fmt::format("serving {} tasks on http://{}:{}\n", service.tasks().size(), o.host,
                         o.port)
          << std::flush;
  const bool ok = server.listen(o.host, o.port);
  g_server = nullptr;
  std::signal(SIGINT, previous_int);
  std::signal(SIGTERM, previous_term);
  if (!ok) throw IoError(fmt::format("cannot listen on {}:{}", o.host, o.port));
  stdout_ << service.progress().dump() << '\n';
}

void cmd_import(const Options& o, const fs::path& out, std::ostream& stdout_) {
  const ClassConfig classes = class_config(o);
  require_file(o.judgments, "judgments");
  JudgmentStore store(gold_from(o, classes), trust_from(o), out / "judgments.jsonl");
  std::ifstream in(o.judgments);
  const std::size_t n = import_judgments_csv(in, store, classes);
  stdout_ << fmt::format("imported {} judgments\n", n);
}

void cmd_aggregate(const Options& o, const fs::path& out, std::ostream& stdout_) {
  const ClassConfig classes = class_config(o);
  const std::string log = or_default(o.judgments, out / "judgments.jsonl");
  require_file(log, "judgments");
  JudgmentStore source(gold_from(o, classes), trust_from(o), fs::path(log));
  AggregationPolicy policy;
  policy.min_side_votes = o.min_votes;
  const ErroneousFeatureSet set = aggregate_judgments(source, policy);
  write_file(out / "erroneous_features.csv",
             [&](std::ostream& f) { write_erroneous_csv(f, set, classes); });
  std::size_t undecided = 0;
  for (const auto& v : set.verdicts()) undecided += v.decision == Decision::undecided;
  stdout_ << fmt::format("{} features judged, {} erroneous, {} undecided\n", set.verdicts().size(),
                         set.size(), undecided);
}

void cmd_detect(const Options& o, const fs::path& out, std::ostream& stdout_) {
  check_tau(o.tau);
  ModelSession session = open_model(o);
  const ModelHandle& model = *session.handle;
  const ClassConfig& classes = model.class_config();
  const Corpus corpus = corpus_from(o, classes);
  const std::string erroneous_path = or_default(o.erroneous, out / "erroneous_features.csv");
  require_file(erroneous_path, "erroneous");
  std::ifstream in(erroneous_path);
  const ErroneousFeatureSet erroneous = read_erroneous_csv(in, classes);

  DetectionReport report =
      detect(corpus, model, erroneous, o.tau, explainer_config(o), o.workers);
  const std::string globals_path = or_default(o.globals, out / "globals.csv");
  if (fs::is_regular_file(globals_path)) {
    std::ifstream g(globals_path);
    std::set<std::string> ranked;
    for (const auto& c : read_global_csv(g, classes)) ranked.insert(c.feature);
    for (const auto& f : erroneous.features()) {
      if (!ranked.contains(f)) {
        report.warnings.push_back("erroneous feature '" + f + "' is not in the global ranking");
      }
    }
  }
  for (const auto& w : report.warnings) spdlog::warn("{}", w);
  write_file(out / "detection.csv",
             [&](std::ostream& f) { write_report_csv(f, report, classes); });
  write_file(out / "detection_summary.json",
             [&](std::ostream& f) { write_report_summary(f, report); });
  session.persist();
  stdout_ << fmt::format("scored {}, flagged {}, skipped {}\n", report.scored.size(),
                         report.flagged_count(), report.skipped.size());
}

DetectionReport detection_from(const Options& o, const fs::path& out, const ClassConfig& classes) {
  check_tau(o.tau);
  const std::string path = or_default(o.detection, out / "detection.csv");
  require_file(path, "detection");
  std::ifstream in(path);
  return read_report_csv(in, classes, o.tau);
}

void write_sweep(const Options& o, const DetectionReport& report, const Corpus& corpus,
                 const fs::path& out) {
  if (o.taus.empty()) throw UsageError("--taus needs at least one value");
  for (double t : o.taus) check_tau(t);
  const auto rows = tau_sweep(report, corpus, o.taus);
  write_file(out / "sweep.csv", [&](std::ostream& f) { write_sweep_csv(f, rows); });
}

void cmd_evaluate(const Options& o, const fs::path& out, std::ostream& stdout_) {
  ModelSession session = open_model(o);
  const ModelHandle& model = *session.handle;
  const ClassConfig& classes = model.class_config();
  const Corpus corpus = corpus_from(o, classes);
  const DetectionReport report = detection_from(o, out, classes);

  const auto ours = erroneous_score_run(report, corpus);
  const auto baseline = least_confidence_rank(model, corpus);
  const auto p_ours = precision_at_k(ours, o.k);
  const auto p_base = precision_at_k(baseline, o.k);
  write_file(out / "precision_at_k.csv", [&](std::ostream& f) {
    write_precision_csv(f, p_ours, ours.method, true);
    write_precision_csv(f, p_base, baseline.method, false);
  });
  write_sweep(o, report, corpus, out);

  std::vector<TokenList> flagged_errors;
  for (const auto& s : report.flagged()) {
    const Document& doc = corpus[*corpus.find(s.document_id)];
    if (doc.gold_label() && *doc.gold_label() != s.predicted_class) flagged_errors.push_back(doc.tokens());
  }
  ojson summary;
  summary["tau"] = o.tau;
  summary["flagged"] = report.flagged_count();
  summary["flagged_errors"] = flagged_errors.size();
  if (flagged_errors.empty()) {
    spdlog::warn("no flagged errors, histogram not written");
    summary["fraction_above_0_7"] = nullptr;
  } else {
    const auto histogram = confidence_histogram(flagged_errors, model, o.bins);
    write_file(out / "histogram.csv", [&](std::ostream& f) { write_histogram_csv(f, histogram); });
    summary["fraction_above_0_7"] = histogram.fraction_above_0_7;
  }
  write_file(out / "evaluation_summary.json", [&](std::ostream& f) { f << summary.dump(2) << '\n'; });
  session.persist();
  for (std::size_t i = 0; i < o.k.size(); ++i) {
    stdout_ << fmt::format("precision@{}: erroneous_score {:.3f}, least_confidence {:.3f}\n",
                           o.k[i], p_ours[i].second, p_base[i].second);
  }
}

void cmd_sweep(const Options& o, const fs::path& out, std::ostream& stdout_) {
  const ClassConfig classes = class_config(o);
  const Corpus corpus = corpus_from(o, classes);
  const DetectionReport report = detection_from(o, out, classes);
  write_sweep(o, report, corpus, out);
  stdout_ << fmt::format("swept {} thresholds over {} scored documents\n", o.taus.size(),
                         report.scored.size());
}

// ---------------------------------------------------------------- wiring

void add_model_options(Command& c, Options& o) {
  c.add("model", o.model, "builtin, cmd:<command line> or http:<url>");
  c.add("weights", o.weights, "model.json written by train (builtin model)");
  c.add("cache-dir", o.cache_dir, "directory for the persistent prediction cache")
      ->envname("OA_CACHE_DIR");
  c.add("batch-size", o.batch_size, "texts per external model request");
  c.add("timeout-ms", o.timeout_ms, "external model request timeout");
  c.add("retries", o.retries, "external model retries");
}

void add_explainer_options(Command& c, Options& o) {
  c.add("n-samples", o.n_samples, "perturbations per explained document");
  c.add("kernel-width", o.kernel_width, "proximity kernel width");
  c.add("ridge", o.ridge, "surrogate ridge penalty");
}

void add_trust_options(Command& c, Options& o) {
  c.add("gold-pool", o.gold_pool, "gold questions (JSONL)");
  c.add("trust-threshold", o.trust_threshold, "minimum gold accuracy of a trusted assessor");
  c.add("min-gold", o.min_gold, "gold answers needed before trust is assessed");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Explainable error detection for black-box sentiment classifiers", "oa"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  std::map<std::string, Command> commands;
  const auto make = [&](const std::string& name, const std::string& help,
                        void (*action)(const Options&, const fs::path&, std::ostream&)) -> Command& {
    Command& c = commands[name];
    c.app = app.add_subcommand(name, help);
    c.add("out", o.out, "output directory");
    c.add("config", o.config, "JSON file with option defaults");
    c.add("classes", o.classes, "ordered class names");
    c.add("neutral", o.neutral, "name of the neutral class");
    c.add("seed", o.seed, "seed for every randomized step");
    c.flag("verbose", o.verbose, "log progress to stderr");
    c.action = [&o, action, &out] {
      const fs::path dir(o.out);
      fs::create_directories(dir);
      action(o, dir, out);
    };
    return c;
  };

  {
    auto& c = make("train", "train the builtin logistic model", cmd_train);
    c.add("corpus", o.corpus, "labelled training corpus (JSONL)");
    c.add("l2", o.l2, "L2 penalty");
    c.add("learning-rate", o.learning_rate, "gradient step size");
    c.add("epochs", o.epochs, "full-batch epochs");
  }
  {
    auto& c = make("explain", "write local explanations for every document", cmd_explain);
    c.add("corpus", o.corpus, "corpus (JSONL)");
    add_model_options(c, o);
    add_explainer_options(c, o);
    c.add("workers", o.workers, "parallel workers");
  }
  {
    auto& c = make("globals", "rank global feature contributions", cmd_globals);
    c.add("corpus", o.corpus, "corpus (JSONL)");
    add_model_options(c, o);
    c.add("top-n", o.top_n, "number of ranked features kept");
    c.add("filter", o.filter, "all or non-neutral");
    c.add("min-support", o.min_support, "minimum documents containing a feature");
    c.add("workers", o.workers, "parallel workers");
  }
  {
    auto& c = make("serve-annotation", "serve annotation tasks over HTTP", cmd_serve);
    c.add("globals", o.globals, "globals.csv (default <out>/globals.csv)");
    c.add("definitions", o.definitions, "feature definitions (TSV)");
    add_trust_options(c, o);
    c.flag("no-gold", o.no_gold, "do not inject gold questions");
    c.add("top-n", o.top_n, "features turned into tasks");
    c.add("page-size", o.page_size, "tasks per page");
    c.add("quorum", o.quorum, "assessors wanted per feature");
    c.add("host", o.host, "bind address");
    c.add("port", o.port, "bind port");
    c.add("ui-dir", o.ui_dir, "static files served at /");
  }
  {
    auto& c = make("import-judgments", "append judgments from CSV to <out>/judgments.jsonl",
                   cmd_import);
    c.add("judgments", o.judgments, "CSV: feature,learned_direction,likert,assessor_id[,timestamp]");
    add_trust_options(c, o);
  }
  {
    auto& c = make("aggregate-judgments", "majority-vote judgments into erroneous features",
                   cmd_aggregate);
    c.add("judgments", o.judgments, "judgment log (default <out>/judgments.jsonl)");
    add_trust_options(c, o);
    c.add("min-votes", o.min_votes, "votes a side needs to win");
  }
  {
    auto& c = make("detect", "score documents against the erroneous features", cmd_detect);
    c.add("corpus", o.corpus, "corpus to screen (JSONL)");
    add_model_options(c, o);
    add_explainer_options(c, o);
    c.add("erroneous", o.erroneous, "erroneous_features.csv (default in <out>)");
    c.add("globals", o.globals, "globals.csv used for a consistency check (default in <out>)");
    c.add("tau", o.tau, "flagging threshold");
    c.add("workers", o.workers, "parallel workers");
  }
  {
    auto& c = make("evaluate", "precision@K, threshold sweep and confidence histogram",
                   cmd_evaluate);
    c.add("corpus", o.corpus, "gold-labelled corpus (JSONL)");
    add_model_options(c, o);
    c.add("detection", o.detection, "detection.csv (default in <out>)");
    c.add("tau", o.tau, "threshold defining the flagged set");
    c.add("k", o.k, "cut-offs for precision@K");
    c.add("taus", o.taus, "thresholds for the sweep");
    c.add("bins", o.bins, "histogram bins");
  }
  {
    auto& c = make("sweep", "precision and flag rate over thresholds", cmd_sweep);
    c.add("corpus", o.corpus, "gold-labelled corpus (JSONL)");
    c.add("detection", o.detection, "detection.csv (default in <out>)");
    c.add("tau", o.tau, "threshold recorded with the report");
    c.add("taus", o.taus, "thresholds");
  }

  const auto fail = [&](int code, const std::string& kind, const std::string& message) {
    err << ojson{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << '\n';
    return code;
  };

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    return fail(kUsageFailure, "usage", e.what());
  }

  auto it = std::find_if(commands.begin(), commands.end(),
                         [](const auto& kv) { return kv.second.app->parsed(); });
  Command& cmd = it->second;

  auto logger = spdlog::stderr_color_mt("oa");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");

  try {
    if (!o.config.empty()) {
      std::set<std::string> known;
      for (const auto& [name, c] : commands) {
        for (const auto& b : c.bound) known.insert(b.name);
      }
      apply_config(o.config, cmd, known);
    }
    spdlog::set_level(o.verbose ? spdlog::level::info : spdlog::level::warn);

    ojson effective;
    effective["subcommand"] = it->first;
    for (const auto& b : cmd.bound) {
      if (b.name != "config" && b.name != "verbose") effective[b.name] = b.value();
    }
    fs::create_directories(o.out);
    write_file(fs::path(o.out) / ("effective_config." + it->first + ".json"),
               [&](std::ostream& f) { f << effective.dump(2) << '\n'; });

    cmd.action();
  } catch (const UsageError& e) {
    spdlog::drop("oa");
    return fail(kUsageFailure, "usage", e.what());
  } catch (const ConfigError& e) {
    spdlog::drop("oa");
    return fail(kUsageFailure, e.kind(), e.what());
  } catch (const Error& e) {
    spdlog::drop("oa");
    return fail(kRuntimeFailure, e.kind(), e.what());
  } catch (const std::exception& e) {
    spdlog::drop("oa");
    return fail(kRuntimeFailure, "internal", e.what());
  }
  spdlog::drop("oa");
  return 0;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace oa::cli
