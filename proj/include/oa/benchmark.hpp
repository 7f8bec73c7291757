#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "oa/annotation.hpp"
#include "oa/evaluation.hpp"
#include "oa/local_explainer.hpp"
#include "oa/model_adapter.hpp"
#include "oa/text_core.hpp"

namespace oa {

// Synthetic three-class corpus with planted label noise on a handful of
// "poison" tokens. Every token has a true polarity (the lexicon); in training
// data each poison token only co-occurs with the opposite polarity label.
struct BenchmarkConfig {
  std::uint64_t seed = 7;
  std::size_t n_train = 2000;
  std::size_t n_test = 500;
  std::size_t n_positive_words = 30;
  std::size_t n_negative_words = 30;
  std::size_t n_filler_words = 230;
  std::size_t n_poison = 10;
  double poison_train_fraction = 0.25;  // share of training docs carrying a poison token
  double poison_test_rate = 0.8;        // chance a polar test doc carries a poison token
  double poison_agree_rate = 0.2;       // of those, share whose learned direction matches the label
  double label_noise = 0.03;            // training labels replaced uniformly at random
};

struct Benchmark {
  ClassConfig classes = ClassConfig::sentiment();
  Corpus train;
  Corpus test;
  std::map<std::string, std::size_t> lexicon;  // token -> true polarity class
  std::vector<std::string> poison;
  std::map<std::string, std::string> definitions;
  std::vector<GoldQuestion> gold_pool;
};

Benchmark make_benchmark(const BenchmarkConfig& config = {});

// Writes train.jsonl, test.jsonl, lexicon.tsv, definitions.tsv, gold_pool.jsonl, poison.txt.
void write_benchmark(const Benchmark& benchmark, const std::filesystem::path& dir);
std::map<std::string, std::size_t> load_lexicon(const std::filesystem::path& path,
                                                const ClassConfig& classes);

// Assessors that always know the true polarity: Likert 1 when the learned
// direction matches the lexicon, 5 otherwise. Unknown tokens count as neutral.
std::vector<Judgment> simulate_perfect_assessors(const std::vector<AnnotationTask>& tasks,
                                                 const std::map<std::string, std::size_t>& lexicon,
                                                 const ClassConfig& classes,
                                                 std::size_t n_assessors = 5);

struct BenchmarkSettings {
  TrainingSettings training{};
  ExplainerConfig explainer{};
  std::size_t top_n = 50;
  std::size_t n_assessors = 5;
  std::size_t k = 100;
  std::vector<double> taus{0.0, 0.2, 0.4};
  std::size_t workers = 1;
};

struct BenchmarkResult {
  std::vector<std::string> erroneous;
  std::size_t poison_in_erroneous = 0;
  std::size_t test_errors = 0;      // mispredictions over the whole test corpus
  std::size_t scored = 0;
  double precision_at_k = 0.0;      // erroneous-score ranking
  double baseline_precision_at_k = 0.0;
  std::vector<SweepRow> sweep;
};

BenchmarkResult run_benchmark(const Benchmark& benchmark, const BenchmarkSettings& settings = {});

}  // namespace oa
