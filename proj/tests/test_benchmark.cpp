#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <set>

#include "oa/benchmark.hpp"
#include "oa/errors.hpp"
#include "oa/text_core.hpp"
#include "support.hpp"

using namespace oa;

namespace {

std::string fingerprint(const Corpus& corpus) {
  std::string out;
  for (const auto& d : corpus.documents()) {
    out += d.id() + "|" + d.raw_text() + "|" + std::to_string(d.gold_label().value_or(9)) + "\n";
  }
  return out;
}

BenchmarkConfig small_config(std::uint64_t seed) {
  BenchmarkConfig c;
  c.seed = seed;
  c.n_train = 600;
  c.n_test = 200;
  return c;
}

}  // namespace

TEST_CASE("benchmark generation is deterministic per seed") {
  const auto a = make_benchmark(small_config(1));
  const auto b = make_benchmark(small_config(1));
  const auto c = make_benchmark(small_config(2));
  CHECK(fingerprint(a.train) == fingerprint(b.train));
  CHECK(fingerprint(a.test) == fingerprint(b.test));
  CHECK(fingerprint(a.train) != fingerprint(c.train));
  CHECK(a.train.size() == 600);
  CHECK(a.test.size() == 200);
  CHECK(a.poison.size() == 10);
  CHECK(a.train[0].id() == "train-00000");
  CHECK(a.test[0].id() == "test-00000");
}

TEST_CASE("poison tokens only carry the flipped label in clean training data") {
  auto config = small_config(3);
  config.label_noise = 0.0;
  const auto bench = make_benchmark(config);
  const std::set<std::string> poison(bench.poison.begin(), bench.poison.end());
  std::size_t carriers = 0;
  for (const auto& doc : bench.train.documents()) {
    for (const auto& t : doc.unique_tokens()) {
      if (!poison.count(t)) continue;
      ++carriers;
      const std::size_t truth = bench.lexicon.at(t);
      CHECK(truth != bench.classes.neutral_class());
      CHECK(doc.gold_label() != truth);
      CHECK(doc.gold_label() != bench.classes.neutral_class());
    }
  }
  CHECK(carriers > 100);
  for (const auto& doc : bench.test.documents()) CHECK(doc.gold_label().has_value());
  // Gold questions use words outside the corpus vocabulary.
  for (const auto& g : bench.gold_pool) {
    CHECK_FALSE(bench.train.has_feature(g.feature));
    CHECK_FALSE(bench.test.has_feature(g.feature));
  }
}

TEST_CASE("written benchmark files load back") {
  const auto bench = make_benchmark(small_config(4));
  const auto dir = testing::scratch_dir("benchmark_files");
  write_benchmark(bench, dir);
  for (const char* name :
       {"train.jsonl", "test.jsonl", "lexicon.tsv", "definitions.tsv", "gold_pool.jsonl", "poison.txt"}) {
    CHECK(std::filesystem::exists(dir / name));
  }
  CHECK(load_lexicon(dir / "lexicon.tsv", bench.classes) == bench.lexicon);
  const auto test = load_corpus(dir / "test.jsonl", bench.classes);
  CHECK(fingerprint(test) == fingerprint(bench.test));
  const auto gold = load_gold_pool(dir / "gold_pool.jsonl", bench.classes);
  CHECK(gold.size() == bench.gold_pool.size());
  CHECK(load_definitions(dir / "definitions.tsv") == bench.definitions);
  CHECK_THROWS_AS(load_lexicon(dir / "missing.tsv", bench.classes), IoError);
}

TEST_CASE("perfect assessors answer from the lexicon") {
  const std::map<std::string, std::size_t> lexicon{{"nice", 2}, {"grim", 0}};
  std::vector<AnnotationTask> tasks(3);
  tasks[0].feature = "nice";
  tasks[0].learned_direction = 2;
  tasks[1].feature = "grim";
  tasks[1].learned_direction = 2;
  tasks[2].feature = "table";  // not in the lexicon, so truly neutral
  tasks[2].learned_direction = 0;
  const auto judgments = simulate_perfect_assessors(tasks, lexicon, ClassConfig::sentiment(), 3);
  REQUIRE(judgments.size() == 9);
  for (const auto& j : judgments) {
    CHECK(j.likert == (j.feature == "nice" ? 1 : 5));
    CHECK(j.assessor_id.rfind("sim-", 0) == 0);
  }
}

TEST_CASE("a small benchmark run finds the planted tokens") {
  const auto bench = make_benchmark(small_config(5));
  const auto result = run_benchmark(bench);
  CHECK(result.sweep.size() == 3);
  CHECK(result.poison_in_erroneous <= result.erroneous.size());
  CHECK(result.poison_in_erroneous >= 5);
  CHECK(result.scored > 0);
  for (std::size_t i = 1; i < result.sweep.size(); ++i) {
    CHECK(result.sweep[i].flagged_fraction() <= result.sweep[i - 1].flagged_fraction());
  }
  CHECK(result.precision_at_k >= 0.0);
  CHECK(result.precision_at_k <= 1.0);
}
