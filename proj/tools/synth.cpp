// oa-synth: generates the planted-error benchmark and plays perfect assessors
// against a global ranking, so the whole pipeline can run without humans.

#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "oa/annotation.hpp"
#include "oa/benchmark.hpp"
#include "oa/errors.hpp"
#include "oa/global_aggregator.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"Synthetic benchmark generator for oa", "oa-synth"};
  app.require_subcommand(1);

  oa::BenchmarkConfig config;
  std::string out = "benchmark";
  auto* generate = app.add_subcommand("generate", "write corpora, lexicon, definitions and gold pool");
  generate->add_option("--out", out, "output directory")->capture_default_str();
  generate->add_option("--seed", config.seed, "generator seed")->capture_default_str();
  generate->add_option("--train", config.n_train, "training documents")->capture_default_str();
  generate->add_option("--test", config.n_test, "test documents")->capture_default_str();

  std::string globals, lexicon, judgments = "judgments.csv";
  std::size_t top_n = 50, assessors = 5;
  auto* judge = app.add_subcommand("judge", "answer the top features of a ranking as perfect assessors");
  judge->add_option("--globals", globals, "globals.csv")->required();
  judge->add_option("--lexicon", lexicon, "lexicon.tsv written by generate")->required();
  judge->add_option("--top-n", top_n, "features judged")->capture_default_str();
  judge->add_option("--assessors", assessors, "simulated assessors")->capture_default_str();
  judge->add_option("--out", judgments, "judgment CSV")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (generate->parsed()) {
      const auto bench = oa::make_benchmark(config);
      oa::write_benchmark(bench, out);
      std::cout << fmt::format("wrote {} train / {} test documents to {}\n", bench.train.size(),
                               bench.test.size(), out);
      return 0;
    }
    const auto classes = oa::ClassConfig::sentiment();
    std::ifstream in(globals);
    if (!in) throw oa::IoError("cannot read " + globals);
    const auto ranking = oa::read_global_csv(in, classes);
    oa::TaskOptions options;
    options.inject_gold = false;
    const auto tasks = oa::generate_tasks(ranking, {}, top_n, {}, options);

    oa::JudgmentStore store;
    for (auto& j : oa::simulate_perfect_assessors(tasks, oa::load_lexicon(lexicon, classes),
                                                  classes, assessors)) {
      j.timestamp = "1970-01-01T00:00:00Z";
      store.record(std::move(j));
    }
    std::ofstream f(judgments, std::ios::binary);
    if (!f) throw oa::IoError("cannot write " + judgments);
    oa::export_judgments_csv(f, store, classes);
    std::cout << fmt::format("wrote {} judgments to {}\n", store.latest().size(), judgments);
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", "runtime"}, {"message", e.what()}}.dump() << '\n';
    return 1;
  }
  return 0;
}
