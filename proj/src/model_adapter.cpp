#include "oa/model_adapter.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "oa/errors.hpp"

namespace oa {
namespace {

void softmax_in_place(std::vector<double>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double& v : z) {
    v = std::exp(v - m);
    s += v;
  }
  for (double& v : z) v /= s;
}

double log_sum_exp(const std::vector<double>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace

std::size_t Distribution::argmax() const {
  return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

double Distribution::max() const { return *std::max_element(probs.begin(), probs.end()); }

void Distribution::validate(std::size_t num_classes) const {
  if (probs.size() != num_classes) {
    throw ProtocolViolation(fmt::format("distribution has {} entries, expected {}", probs.size(),
                                        num_classes));
  }
  double sum = 0.0;
  for (double p : probs) {
    if (!std::isfinite(p) || p < 0.0) {
      throw ProtocolViolation(fmt::format("distribution entry {} is not a probability", p));
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > kSumTolerance) {
    throw ProtocolViolation(fmt::format("distribution sums to {:.9f}, not 1", sum));
  }
}

// ---------------------------------------------------------------------------
// LogisticModel

LogisticModel::LogisticModel(ClassConfig classes, std::vector<std::string> vocabulary)
    : classes_(std::move(classes)), vocabulary_(std::move(vocabulary)) {
  for (std::size_t i = 0; i < vocabulary_.size(); ++i) {
    if (!index_.emplace(vocabulary_[i], i).second) {
      throw ValidationError("duplicate vocabulary entry '" + vocabulary_[i] + "'");
    }
  }
  weights_.assign(vocabulary_.size() * classes_.size(), 0.0);
  bias_.assign(classes_.size(), 0.0);
}

std::optional<std::size_t> LogisticModel::feature_index(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

double LogisticModel::weight(std::string_view feature, std::size_t k) const {
  const auto idx = feature_index(feature);
  if (!idx) return 0.0;
  return weights_.at(*idx * classes_.size() + k);
}

void LogisticModel::set_weight(std::string_view feature, std::size_t k, double value) {
  const auto idx = feature_index(feature);
  if (!idx) throw ValidationError("feature '" + std::string(feature) + "' not in vocabulary");
  weights_.at(*idx * classes_.size() + k) = value;
}

std::vector<double> LogisticModel::logits(const TokenList& tokens) const {
  const std::size_t K = classes_.size();
  std::vector<double> z = bias_;
  for (const auto& t : tokens) {
    const auto it = index_.find(t);
    if (it == index_.end()) continue;
    const double* w = weights_.data() + it->second * K;
    for (std::size_t k = 0; k < K; ++k) z[k] += w[k];
  }
  return z;
}

Distribution LogisticModel::predict(const TokenList& tokens) const {
  auto z = logits(tokens);
  softmax_in_place(z);
  return Distribution{std::move(z)};
}

std::vector<Distribution> LogisticModel::predict_proba(std::span<const TokenList> texts) const {
  std::vector<Distribution> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(predict(t));
  return out;
}

nlohmann::json LogisticModel::to_json() const {
  nlohmann::ordered_json j;
  j["format"] = "oa-logistic-v1";
  j["classes"] = classes_.names();
  j["neutral_class"] = classes_.neutral_class();
  j["vocabulary"] = vocabulary_;
  j["bias"] = bias_;
  auto rows = nlohmann::ordered_json::array();
  const std::size_t K = classes_.size();
  for (std::size_t v = 0; v < vocabulary_.size(); ++v) {
    rows.push_back(std::vector<double>(weights_.begin() + v * K, weights_.begin() + (v + 1) * K));
  }
  j["weights"] = std::move(rows);
  return nlohmann::json::parse(j.dump());
}

std::string LogisticModel::identity() const {
  // ordered dump keeps the hash independent of map ordering details
  nlohmann::ordered_json j;
  j["classes"] = classes_.names();
  j["vocabulary"] = vocabulary_;
  j["bias"] = bias_;
  j["weights"] = weights_;
  return "builtin:" + sha256_hex(j.dump());
}

LogisticModel LogisticModel::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "oa-logistic-v1") {
      throw ValidationError("unsupported model format");
    }
    ClassConfig classes(j.at("classes").get<std::vector<std::string>>(),
                        j.at("neutral_class").get<std::size_t>());
    LogisticModel model(classes, j.at("vocabulary").get<std::vector<std::string>>());
    const auto bias = j.at("bias").get<std::vector<double>>();
    if (bias.size() != classes.size()) throw ValidationError("bias length mismatch");
    model.bias_ = bias;
    const auto& rows = j.at("weights");
    if (rows.size() != model.vocabulary_.size()) throw ValidationError("weight rows mismatch");
    const std::size_t K = classes.size();
    for (std::size_t v = 0; v < rows.size(); ++v) {
      const auto row = rows[v].get<std::vector<double>>();
      if (row.size() != K) throw ValidationError("weight row length mismatch");
      std::copy(row.begin(), row.end(), model.weights_.begin() + v * K);
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed model file: ") + e.what());
  }
}

void LogisticModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write model " + path.string());
  nlohmann::ordered_json j = nlohmann::ordered_json::parse(to_json().dump());
  // keep a stable field order on disk
  nlohmann::ordered_json ordered;
  for (const char* key : {"format", "classes", "neutral_class", "vocabulary", "bias", "weights"}) {
    ordered[key] = j[key];
  }
  out << ordered.dump() << '\n';
}

LogisticModel LogisticModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed model file " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

// ---------------------------------------------------------------------------
// Training

LogisticModel train_builtin(const Corpus& corpus, const ClassConfig& classes,
                            const TrainingSettings& settings, TrainingReport* report) {
  std::vector<std::string> missing;
  std::vector<std::size_t> per_class(classes.size(), 0);
  for (const auto& doc : corpus.documents()) {
    if (!doc.gold_label()) {
      missing.push_back(doc.id());
    } else if (*doc.gold_label() >= classes.size()) {
      throw ValidationError("document " + doc.id() + " has an out-of-range label");
    } else {
      ++per_class[*doc.gold_label()];
    }
  }
  if (!missing.empty()) {
    throw MissingLabel("documents without a gold label: " + fmt::format("{}", fmt::join(missing, ", ")));
  }
  std::vector<std::string> empty;
  for (std::size_t k = 0; k < classes.size(); ++k) {
    if (per_class[k] == 0) empty.push_back(classes.name(k));
  }
  if (!empty.empty()) {
    throw EmptyClass("classes without training documents: " + fmt::format("{}", fmt::join(empty, ", ")));
  }
  if (settings.epochs < 0) throw ValidationError("epochs must be non-negative");

  std::vector<std::string> vocab;
  vocab.reserve(corpus.feature_index().size());
  for (const auto& [feature, ids] : corpus.feature_index()) vocab.push_back(feature);
  LogisticModel model(classes, vocab);

  const std::size_t K = classes.size();
  const std::size_t n = corpus.size();

  struct Row {
    std::vector<std::pair<std::size_t, double>> counts;
    std::size_t label;
  };
  std::vector<Row> rows;
  rows.reserve(n);
  for (const auto& doc : corpus.documents()) {
    std::map<std::size_t, double> counts;
    for (const auto& t : doc.tokens()) counts[*model.feature_index(t)] += 1.0;
    rows.push_back(Row{{counts.begin(), counts.end()}, *doc.gold_label()});
  }
  std::mt19937_64 rng(settings.seed);
  std::shuffle(rows.begin(), rows.end(), rng);

  auto W = model.mutable_weights();
  auto b = model.mutable_bias();
  std::vector<double> grad_w(W.size());
  std::vector<double> grad_b(K);
  std::vector<double> z(K);

  // Returns the objective at the current weights and fills the gradients.
  const auto evaluate = [&]() {
    std::fill(grad_w.begin(), grad_w.end(), 0.0);
    std::fill(grad_b.begin(), grad_b.end(), 0.0);
    double loss = 0.0;
    for (const auto& row : rows) {
      std::copy(b.begin(), b.end(), z.begin());
      for (const auto& [idx, c] : row.counts) {
        for (std::size_t k = 0; k < K; ++k) z[k] += c * W[idx * K + k];
      }
      loss += log_sum_exp(z) - z[row.label];
      softmax_in_place(z);
      z[row.label] -= 1.0;
      for (const auto& [idx, c] : row.counts) {
        for (std::size_t k = 0; k < K; ++k) grad_w[idx * K + k] += c * z[k];
      }
      for (std::size_t k = 0; k < K; ++k) grad_b[k] += z[k];
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    double sq = 0.0;
    for (std::size_t i = 0; i < W.size(); ++i) {
      sq += W[i] * W[i];
      grad_w[i] = grad_w[i] * inv_n + settings.l2 * W[i];
    }
    for (auto& g : grad_b) g *= inv_n;
    return loss * inv_n + 0.5 * settings.l2 * sq;
  };

  std::vector<double> history;
  history.reserve(static_cast<std::size_t>(settings.epochs) + 1);
  for (int epoch = 0; epoch <= settings.epochs; ++epoch) {
    const double loss = evaluate();
    if (!std::isfinite(loss)) {
      throw TrainingDiverged(fmt::format("objective became non-finite at epoch {}", epoch));
    }
    if (!history.empty()) {
      const double prev = history.back();
      if (loss > prev + 1e-12 * std::max(1.0, std::abs(prev))) {
        throw TrainingDiverged(fmt::format(
            "objective increased at epoch {}: {:.12g} -> {:.12g} (learning_rate={}, l2={}); "
            "lower the learning rate",
            epoch, prev, loss, settings.learning_rate, settings.l2));
      }
    }
    history.push_back(loss);
    if (epoch == settings.epochs) break;
    for (std::size_t i = 0; i < W.size(); ++i) W[i] -= settings.learning_rate * grad_w[i];
    for (std::size_t k = 0; k < K; ++k) b[k] -= settings.learning_rate * grad_b[k];
  }
  if (report) report->loss = std::move(history);
  return model;
}

// ---------------------------------------------------------------------------
// Masking

TokenList mask_feature(const TokenList& tokens, std::string_view feature) {
  TokenList out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) {
    if (t != feature) out.push_back(t);
  }
  return out;
}

TokenList mask_features(const TokenList& tokens, std::span<const std::string> features) {
  if (features.empty()) return tokens;
  TokenList out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) {
    if (std::find(features.begin(), features.end(), t) == features.end()) out.push_back(t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cache

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw NumericalError("SHA-256 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

PredictionCache::Key PredictionCache::make_key(std::string_view model_identity,
                                               const TokenList& tokens,
                                               std::span<const std::string> masked_features) {
  std::string material(model_identity);
  material.push_back('\0');
  for (const auto& t : tokens) {
    material += t;
    material.push_back('\x1e');
  }
  material.push_back('\0');
  std::vector<std::string_view> masked(masked_features.begin(), masked_features.end());
  std::sort(masked.begin(), masked.end());
  masked.erase(std::unique(masked.begin(), masked.end()), masked.end());
  for (const auto& m : masked) {
    material += m;
    material.push_back('\x1f');
  }
  return sha256_hex(material);
}

std::optional<Distribution> PredictionCache::get(const Key& key) const {
  std::shared_lock lock(mutex_);
  const auto it = entries_.find(key);
  if (it == entries_.end()) {
    ++misses_;
    return std::nullopt;
  }
  ++hits_;
  return it->second;
}

void PredictionCache::put(const Key& key, Distribution value) {
  std::unique_lock lock(mutex_);
  entries_.insert_or_assign(key, std::move(value));
}

std::size_t PredictionCache::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

void PredictionCache::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return;
  std::string line;
  std::size_t line_no = 0;
  std::unique_lock lock(mutex_);
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      entries_.insert_or_assign(j.at("k").get<std::string>(),
                                Distribution{j.at("p").get<std::vector<double>>()});
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(fmt::format("corrupt cache {} line {}: {}", path.string(), line_no,
                                        e.what()));
    }
  }
}

void PredictionCache::save(const std::filesystem::path& path) const {
  std::vector<std::pair<Key, Distribution>> sorted;
  {
    std::shared_lock lock(mutex_);
    sorted.assign(entries_.begin(), entries_.end());
  }
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write cache " + tmp.string());
    for (const auto& [key, dist] : sorted) {
      nlohmann::ordered_json j;
      j["k"] = key;
      j["p"] = dist.probs;
      out << j.dump() << '\n';
    }
  }
  std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// ModelHandle

ModelHandle::ModelHandle(std::shared_ptr<const Classifier> model, Kind kind,
                         std::shared_ptr<PredictionCache> cache)
    : model_(std::move(model)), kind_(kind), cache_(std::move(cache)) {
  if (!model_) throw ValidationError("model handle needs a model");
  identity_ = model_->identity();
}

std::vector<Distribution> ModelHandle::run(std::span<const TokenList> texts) const {
  if (texts.empty()) return {};
  auto out = model_->predict_proba(texts);
  if (out.size() != texts.size()) {
    throw ProtocolViolation(fmt::format("model returned {} distributions for {} inputs",
                                        out.size(), texts.size()));
  }
  const std::size_t K = model_->class_config().size();
  for (const auto& d : out) d.validate(K);
  return out;
}

std::vector<Distribution> ModelHandle::predict_proba(std::span<const TokenList> texts) const {
  if (!cache_) return run(texts);
  std::vector<Distribution> out(texts.size());
  std::vector<std::size_t> miss_pos;
  std::vector<PredictionCache::Key> miss_keys;
  std::vector<TokenList> miss_texts;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    auto key = PredictionCache::make_key(identity_, texts[i], {});
    if (auto hit = cache_->get(key)) {
      out[i] = std::move(*hit);
    } else {
      miss_pos.push_back(i);
      miss_keys.push_back(std::move(key));
      miss_texts.push_back(texts[i]);
    }
  }
  auto fresh = run(miss_texts);
  for (std::size_t m = 0; m < miss_pos.size(); ++m) {
    cache_->put(miss_keys[m], fresh[m]);
    out[miss_pos[m]] = std::move(fresh[m]);
  }
  return out;
}

Distribution ModelHandle::predict(const TokenList& tokens) const {
  return predict_proba(std::span<const TokenList>(&tokens, 1)).front();
}

std::vector<Distribution> ModelHandle::predict_masked(
    const TokenList& tokens, std::span<const std::vector<std::string>> masked_sets) const {
  std::vector<Distribution> out(masked_sets.size());
  std::vector<std::size_t> miss_pos;
  std::vector<PredictionCache::Key> miss_keys;
  std::vector<TokenList> miss_texts;
  for (std::size_t i = 0; i < masked_sets.size(); ++i) {
    if (cache_) {
      auto key = PredictionCache::make_key(identity_, tokens, masked_sets[i]);
      if (auto hit = cache_->get(key)) {
        out[i] = std::move(*hit);
        continue;
      }
      miss_keys.push_back(std::move(key));
    }
    miss_pos.push_back(i);
    miss_texts.push_back(mask_features(tokens, masked_sets[i]));
  }
  auto fresh = run(miss_texts);
  for (std::size_t m = 0; m < miss_pos.size(); ++m) {
    if (cache_) cache_->put(miss_keys[m], fresh[m]);
    out[miss_pos[m]] = std::move(fresh[m]);
  }
  return out;
}

ModelHandle make_builtin_handle(LogisticModel model, std::shared_ptr<PredictionCache> cache) {
  return ModelHandle(std::make_shared<const LogisticModel>(std::move(model)),
                     ModelHandle::Kind::builtin, std::move(cache));
}

}  // namespace oa
