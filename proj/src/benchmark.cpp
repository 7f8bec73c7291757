#include "oa/benchmark.hpp"

#include <algorithm>
#include <fstream>
#include <random>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "oa/errors.hpp"
#include "oa/global_aggregator.hpp"

namespace oa {
namespace {

constexpr std::size_t kNegative = 0;
constexpr std::size_t kNeutral = 1;
constexpr std::size_t kPositive = 2;

struct Vocabulary {
  std::vector<std::string> positive;
  std::vector<std::string> negative;
  std::vector<std::string> filler;
  std::vector<std::string> poison;  // first half truly positive, rest truly negative
};

std::vector<std::string> numbered(std::string_view prefix, std::size_t n) {
  std::vector<std::string> out;
  const int width = n > 100 ? 3 : 2;
  for (std::size_t i = 0; i < n; ++i) out.push_back(fmt::format("{}{:0{}}", prefix, i, width));
  return out;
}

class Generator {
 public:
  Generator(const Vocabulary& vocab, std::uint64_t seed) : vocab_(vocab), rng_(seed) {}

  std::size_t uniform(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
  }
  bool chance(double p) { return std::bernoulli_distribution(p)(rng_); }
  const std::string& pick(const std::vector<std::string>& words) {
    return words[uniform(0, words.size() - 1)];
  }

  // Sentiment words of `cls`, an occasional word of the other polarity, and filler.
  TokenList document(std::size_t cls, std::size_t min_polar, std::size_t max_polar) {
    TokenList tokens;
    if (cls == kNeutral) {
      if (chance(0.2)) {
        tokens.push_back(pick(vocab_.positive));
        tokens.push_back(pick(vocab_.negative));
      }
    } else {
      const auto& own = cls == kPositive ? vocab_.positive : vocab_.negative;
      const auto& other = cls == kPositive ? vocab_.negative : vocab_.positive;
      const std::size_t n = uniform(min_polar, max_polar);
      for (std::size_t i = 0; i < n; ++i) tokens.push_back(pick(own));
      if (chance(0.15)) tokens.push_back(pick(other));
    }
    add_filler(tokens, uniform(5, 9));
    return tokens;
  }

  void add_filler(TokenList& tokens, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) tokens.push_back(pick(vocab_.filler));
  }

  std::string render(TokenList tokens) {
    std::shuffle(tokens.begin(), tokens.end(), rng_);
    std::string text = join_tokens(tokens);
    if (!text.empty()) text[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(text[0])));
    return text + ".";
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  const Vocabulary& vocab_;
  std::mt19937_64 rng_;
};

std::size_t true_polarity(const Vocabulary& vocab, std::size_t poison_index) {
  return poison_index < vocab.poison.size() / 2 ? kPositive : kNegative;
}

}  // namespace

Benchmark make_benchmark(const BenchmarkConfig& config) {
  if (config.n_poison < 2 || config.n_positive_words == 0 || config.n_negative_words == 0 ||
      config.n_filler_words == 0) {
    throw ConfigError("benchmark needs at least two poison tokens and non-empty word lists");
  }
  Vocabulary vocab{numbered("pos", config.n_positive_words),
                   numbered("neg", config.n_negative_words),
                   numbered("fil", config.n_filler_words), numbered("poi", config.n_poison)};

  Benchmark bench;
  const ClassConfig& classes = bench.classes;
  for (const auto& w : vocab.positive) bench.lexicon[w] = kPositive;
  for (const auto& w : vocab.negative) bench.lexicon[w] = kNegative;
  for (const auto& w : vocab.filler) bench.lexicon[w] = kNeutral;
  for (std::size_t i = 0; i < vocab.poison.size(); ++i) {
    bench.lexicon[vocab.poison[i]] = true_polarity(vocab, i);
  }
  bench.poison = vocab.poison;
  for (const auto& [word, polarity] : bench.lexicon) {
    bench.definitions[word] = fmt::format("synthetic token, usually {}", classes.name(polarity));
  }
  bench.gold_pool = {
      {"delightful", "very pleasing", kPositive, Side::agree},
      {"awful", "very bad or unpleasant", kPositive, Side::disagree},
      {"horrible", "causing horror or disgust", kNegative, Side::agree},
      {"splendid", "magnificent, excellent", kNegative, Side::disagree},
  };

  Generator gen(vocab, config.seed);

  std::vector<Document> train;
  for (std::size_t i = 0; i < config.n_train; ++i) {
    TokenList tokens;
    std::size_t label;
    if (gen.chance(config.poison_train_fraction)) {
      const std::size_t p = gen.uniform(0, vocab.poison.size() - 1);
      label = true_polarity(vocab, p) == kPositive ? kNegative : kPositive;
      tokens.push_back(vocab.poison[p]);
      gen.add_filler(tokens, gen.uniform(5, 9));
    } else {
      label = gen.uniform(0, 2);
      tokens = gen.document(label, 2, 4);
      if (gen.chance(config.label_noise)) label = gen.uniform(0, 2);
    }
    train.push_back(make_document(fmt::format("train-{:05}", i), gen.render(std::move(tokens)), label));
  }

  std::vector<Document> test;
  for (std::size_t i = 0; i < config.n_test; ++i) {
    const std::size_t label = gen.uniform(0, 2);
    TokenList tokens = gen.document(label, 1, 3);
    if (label != kNeutral && gen.chance(config.poison_test_rate)) {
      // Usually a poison token whose true polarity agrees with the label, so
      // the model is pulled toward the wrong class. Sometimes the opposite.
      const std::size_t half = vocab.poison.size() / 2;
      const bool positive_poison = (label == kPositive) != gen.chance(config.poison_agree_rate);
      const std::size_t p = positive_poison ? gen.uniform(0, half - 1)
                                            : gen.uniform(half, vocab.poison.size() - 1);
      tokens.push_back(vocab.poison[p]);
    }
    test.push_back(make_document(fmt::format("test-{:05}", i), gen.render(std::move(tokens)), label));
  }

  bench.train = build_corpus(std::move(train));
  bench.test = build_corpus(std::move(test));
  return bench;
}

void write_benchmark(const Benchmark& bench, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_corpus(bench.train, dir / "train.jsonl", bench.classes);
  save_corpus(bench.test, dir / "test.jsonl", bench.classes);

  const auto open = [&](const char* name) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir / name).string());
    return out;
  };
  {
    auto out = open("lexicon.tsv");
    for (const auto& [word, polarity] : bench.lexicon) {
      out << word << '\t' << bench.classes.name(polarity) << '\n';
    }
  }
  {
    auto out = open("definitions.tsv");
    for (const auto& [word, definition] : bench.definitions) out << word << '\t' << definition << '\n';
  }
  {
    auto out = open("gold_pool.jsonl");
    for (const auto& g : bench.gold_pool) {
      nlohmann::ordered_json j;
      j["feature"] = g.feature;
      j["definition"] = g.definition;
      j["direction"] = bench.classes.name(g.direction);
      j["expected"] = std::string(to_string(g.expected));
      out << j.dump() << '\n';
    }
  }
  {
    auto out = open("poison.txt");
    for (const auto& p : bench.poison) out << p << '\n';
  }
}

std::map<std::string, std::size_t> load_lexicon(const std::filesystem::path& path,
                                                const ClassConfig& classes) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read lexicon " + path.string());
  std::map<std::string, std::size_t> lexicon;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ValidationError(fmt::format("{}:{}: expected token<TAB>class", path.string(), line_no));
    }
    lexicon[line.substr(0, tab)] = classes.index_of(line.substr(tab + 1));
  }
  return lexicon;
}

std::vector<Judgment> simulate_perfect_assessors(const std::vector<AnnotationTask>& tasks,
                                                 const std::map<std::string, std::size_t>& lexicon,
                                                 const ClassConfig& classes,
                                                 std::size_t n_assessors) {
  std::vector<Judgment> out;
  for (std::size_t a = 1; a <= n_assessors; ++a) {
    for (const auto& task : tasks) {
      Judgment j;
      j.feature = task.feature;
      j.assessor_id = fmt::format("sim-{}", a);
      j.learned_direction = task.learned_direction;
      bool agree;
      if (task.is_gold && task.gold_expected) {
        agree = *task.gold_expected == Side::agree;
      } else {
        const auto it = lexicon.find(task.feature);
        const std::size_t truth = it == lexicon.end() ? classes.neutral_class() : it->second;
        agree = truth == task.learned_direction;
      }
      j.likert = agree ? 1 : 5;
      out.push_back(std::move(j));
    }
  }
  return out;
}

BenchmarkResult run_benchmark(const Benchmark& bench, const BenchmarkSettings& settings) {
  const LogisticModel model = train_builtin(bench.train, bench.classes, settings.training);
  const ModelHandle handle = make_builtin_handle(model);

  RankingOptions ranking_options;
  ranking_options.top_n = settings.top_n;
  ranking_options.workers = settings.workers;
  const auto ranking = rank_features(handle, bench.train, ranking_options);

  TaskOptions task_options;
  task_options.seed = settings.training.seed;
  const auto tasks =
      generate_tasks(ranking, bench.definitions, settings.top_n, bench.gold_pool, task_options);
  JudgmentStore store(bench.gold_pool);
  for (auto& j : simulate_perfect_assessors(tasks, bench.lexicon, bench.classes,
                                            settings.n_assessors)) {
    j.timestamp = "1970-01-01T00:00:00Z";
    store.record(std::move(j));
  }
  const ErroneousFeatureSet erroneous = aggregate_judgments(store);

  BenchmarkResult result;
  result.erroneous = erroneous.features();
  for (const auto& p : bench.poison) result.poison_in_erroneous += erroneous.contains(p);

  const DetectionReport report =
      detect(bench.test, handle, erroneous, 0.0, settings.explainer, settings.workers);
  result.scored = report.scored.size();

  const std::size_t k = settings.k;
  const auto ours = erroneous_score_run(report, bench.test);
  result.precision_at_k = precision_at_k(ours, std::span(&k, 1)).front().second;
  const auto baseline = least_confidence_rank(handle, bench.test);
  result.baseline_precision_at_k = precision_at_k(baseline, std::span(&k, 1)).front().second;
  for (const auto& r : baseline.ranked) result.test_errors += *r.is_error();

  result.sweep = tau_sweep(report, bench.test, settings.taus);
  return result;
}

}  // namespace oa
