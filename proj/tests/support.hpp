#pragma once

// Shared fixtures for the unit tests.

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "oa/model_adapter.hpp"
#include "oa/text_core.hpp"

namespace oa::testing {

// Classifier answering from a lookup table keyed by the space-joined tokens.
class TableClassifier : public Classifier {
 public:
  TableClassifier(ClassConfig classes, std::map<std::string, std::vector<double>> table)
      : classes_(std::move(classes)), table_(std::move(table)) {}

  const ClassConfig& class_config() const override { return classes_; }
  std::string identity() const override { return "table"; }
  std::vector<Distribution> predict_proba(std::span<const TokenList> texts) const override {
    std::vector<Distribution> out;
    for (const auto& t : texts) out.push_back(Distribution{table_.at(join_tokens(t))});
    return out;
  }

 private:
  ClassConfig classes_;
  std::map<std::string, std::vector<double>> table_;
};

// negative/neutral/positive model with three hand-set words.
inline LogisticModel softmax_fixture() {
  LogisticModel m(ClassConfig::sentiment(), {"bad", "day", "good"});
  const double good[] = {-1.0, 0.0, 2.0};
  const double bad[] = {1.5, 0.0, -1.0};
  const double day[] = {0.0, 0.5, 0.0};
  const double bias[] = {0.1, 0.2, -0.3};
  for (std::size_t k = 0; k < 3; ++k) {
    m.set_weight("good", k, good[k]);
    m.set_weight("bad", k, bad[k]);
    m.set_weight("day", k, day[k]);
    m.set_bias(k, bias[k]);
  }
  return m;
}

// Random labelled corpus over a vocabulary of `n_features` words w00..wNN,
// where the first third lean negative and the last third lean positive.
inline Corpus random_corpus(std::size_t n_docs, std::size_t n_features, std::uint64_t seed,
                            std::size_t min_len = 3, std::size_t max_len = 8) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> word(0, n_features - 1);
  std::uniform_int_distribution<std::size_t> len(min_len, max_len);
  std::vector<Document> docs;
  for (std::size_t i = 0; i < n_docs; ++i) {
    TokenList tokens;
    int score = 0;
    const std::size_t n = len(rng);
    for (std::size_t t = 0; t < n; ++t) {
      const std::size_t w = word(rng);
      score += w < n_features / 3 ? -1 : (w >= 2 * n_features / 3 ? 1 : 0);
      tokens.push_back("w" + std::to_string(100 + w).substr(1));
    }
    const std::size_t label = score < 0 ? 0 : (score > 0 ? 2 : 1);
    std::string id = "d" + std::to_string(1000 + i).substr(1);
    docs.emplace_back(id, join_tokens(tokens), tokens, label);
  }
  return build_corpus(std::move(docs));
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("oa-test-" + name + "-" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace oa::testing
