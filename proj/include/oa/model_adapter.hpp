#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "oa/text_core.hpp"

namespace oa {

// Per-class probabilities returned by a black-box model.
struct Distribution {
  std::vector<double> probs;

  std::size_t argmax() const;  // ties resolve to the lowest class index
  double max() const;
  // Throws ProtocolViolation unless there are `num_classes` finite
  // non-negative entries summing to 1 within 1e-6.
  void validate(std::size_t num_classes) const;

  bool operator==(const Distribution&) const = default;
};

inline constexpr double kSumTolerance = 1e-6;

// The black-box surface: token lists in, one distribution per list out.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual const ClassConfig& class_config() const = 0;
  // Stable string identifying the model's behaviour; used in cache keys.
  virtual std::string identity() const = 0;
  virtual std::vector<Distribution> predict_proba(std::span<const TokenList> texts) const = 0;
};

// Multinomial logistic regression over raw term counts. Tokens outside the
// vocabulary are ignored.
class LogisticModel final : public Classifier {
 public:
  LogisticModel(ClassConfig classes, std::vector<std::string> vocabulary);

  const ClassConfig& class_config() const override { return classes_; }
  std::string identity() const override;
  std::vector<Distribution> predict_proba(std::span<const TokenList> texts) const override;

  Distribution predict(const TokenList& tokens) const;
  std::vector<double> logits(const TokenList& tokens) const;

  const std::vector<std::string>& vocabulary() const noexcept { return vocabulary_; }
  std::optional<std::size_t> feature_index(std::string_view token) const;

  double weight(std::string_view feature, std::size_t k) const;
  void set_weight(std::string_view feature, std::size_t k, double value);
  double bias(std::size_t k) const { return bias_.at(k); }
  void set_bias(std::size_t k, double value) { bias_.at(k) = value; }

  // Row-major [feature][class].
  std::span<const double> weights() const noexcept { return weights_; }
  std::span<double> mutable_weights() noexcept { return weights_; }
  std::span<double> mutable_bias() noexcept { return bias_; }

  nlohmann::json to_json() const;
  static LogisticModel from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static LogisticModel load(const std::filesystem::path& path);

 private:
  ClassConfig classes_;
  std::vector<std::string> vocabulary_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<double> weights_;
  std::vector<double> bias_;
};

struct TrainingSettings {
  double l2 = 0.01;
  double learning_rate = 0.1;
  int epochs = 500;
  std::uint64_t seed = 42;
};

struct TrainingReport {
  // Objective before each update, then after the last one (epochs + 1 values).
  std::vector<double> loss;
};

// Full-batch gradient descent on mean cross-entropy + (l2/2)*||W||^2 from
// zero weights. Throws MissingLabel, EmptyClass, or TrainingDiverged when the
// objective increases between epochs.
LogisticModel train_builtin(const Corpus& corpus, const ClassConfig& classes,
                            const TrainingSettings& settings = {},
                            TrainingReport* report = nullptr);

// Removes every occurrence of `feature`, keeping the order of the rest.
TokenList mask_feature(const TokenList& tokens, std::string_view feature);
// Removes every occurrence of each of `features`.
TokenList mask_features(const TokenList& tokens, std::span<const std::string> features);

std::string sha256_hex(std::string_view data);

// Thread-safe map from content hash to distribution, persisted as JSONL.
class PredictionCache {
 public:
  using Key = std::string;

  static Key make_key(std::string_view model_identity, const TokenList& tokens,
                      std::span<const std::string> masked_features);

  std::optional<Distribution> get(const Key& key) const;
  void put(const Key& key, Distribution value);
  std::size_t size() const;
  std::uint64_t hits() const noexcept { return hits_.load(); }
  std::uint64_t misses() const noexcept { return misses_.load(); }

  // Missing file is not an error. Entries are written sorted by key.
  void load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  mutable std::shared_mutex mutex_;
  std::unordered_map<Key, Distribution> entries_;
  mutable std::atomic<std::uint64_t> hits_{0};
  mutable std::atomic<std::uint64_t> misses_{0};
};

// Thread-safe facade over a classifier: validates every distribution and
// consults the cache when one is attached.
class ModelHandle {
 public:
  enum class Kind { builtin, external };

  ModelHandle(std::shared_ptr<const Classifier> model, Kind kind,
              std::shared_ptr<PredictionCache> cache = nullptr);

  Kind kind() const noexcept { return kind_; }
  const ClassConfig& class_config() const { return model_->class_config(); }
  const std::string& identity() const noexcept { return identity_; }
  const Classifier& classifier() const noexcept { return *model_; }
  const std::shared_ptr<PredictionCache>& cache() const noexcept { return cache_; }

  std::vector<Distribution> predict_proba(std::span<const TokenList> texts) const;
  Distribution predict(const TokenList& tokens) const;

  // Prediction for `tokens` with each listed feature set removed; one result
  // per entry of `masked_sets`. An empty set means the unmasked text.
  std::vector<Distribution> predict_masked(
      const TokenList& tokens, std::span<const std::vector<std::string>> masked_sets) const;

 private:
  std::vector<Distribution> run(std::span<const TokenList> texts) const;

  std::shared_ptr<const Classifier> model_;
  Kind kind_;
  std::shared_ptr<PredictionCache> cache_;
  std::string identity_;
};

ModelHandle make_builtin_handle(LogisticModel model,
                                std::shared_ptr<PredictionCache> cache = nullptr);

}  // namespace oa
