#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace oa {

using TokenList = std::vector<std::string>;

// Ordered class names plus the index of the class treated as "neutral".
class ClassConfig {
 public:
  ClassConfig(std::vector<std::string> classes, std::size_t neutral_class);

  // negative / neutral / positive, neutral at index 1.
  static ClassConfig sentiment();

  std::size_t size() const noexcept { return classes_.size(); }
  std::size_t neutral_class() const noexcept { return neutral_; }
  const std::vector<std::string>& names() const noexcept { return classes_; }
  const std::string& name(std::size_t k) const { return classes_.at(k); }

  // Throws ValidationError for unknown names.
  std::size_t index_of(std::string_view name) const;

  bool operator==(const ClassConfig&) const = default;

 private:
  std::vector<std::string> classes_;
  std::size_t neutral_;
};

struct TokenizerConfig {
  bool lowercase = true;
  bool strip_punctuation = true;
};

// Whitespace split, Unicode lowercasing, and stripping of leading/trailing
// punctuation. Internal punctuation ("don't") is kept. Invalid UTF-8 bytes
// decode to U+FFFD.
TokenList tokenize(std::string_view raw_text, const TokenizerConfig& config = {});

std::string join_tokens(const TokenList& tokens);

class Document {
 public:
  Document(std::string id, std::string raw_text, TokenList tokens,
           std::optional<std::size_t> gold_label = std::nullopt);

  const std::string& id() const noexcept { return id_; }
  const std::string& raw_text() const noexcept { return raw_text_; }
  const TokenList& tokens() const noexcept { return tokens_; }
  const std::optional<std::size_t>& gold_label() const noexcept { return gold_label_; }

  // Distinct unigrams in order of first occurrence.
  const TokenList& unique_tokens() const noexcept { return unique_; }
  bool contains(std::string_view feature) const;

 private:
  std::string id_;
  std::string raw_text_;
  TokenList tokens_;
  std::optional<std::size_t> gold_label_;
  TokenList unique_;
  TokenList sorted_unique_;
};

Document make_document(std::string id, std::string raw_text,
                       std::optional<std::size_t> gold_label = std::nullopt,
                       const TokenizerConfig& config = {});

// Immutable collection of documents with an inverted unigram index.
class Corpus {
 public:
  Corpus() = default;

  const std::vector<Document>& documents() const noexcept { return documents_; }
  std::size_t size() const noexcept { return documents_.size(); }
  bool empty() const noexcept { return documents_.empty(); }
  const Document& operator[](std::size_t i) const { return documents_.at(i); }

  // unigram -> ids of documents containing it, sorted by id.
  const std::map<std::string, std::vector<std::string>>& feature_index() const noexcept {
    return feature_index_;
  }
  bool has_feature(std::string_view feature) const;
  // Positions into documents() of the documents containing `feature`, in the
  // same (id-sorted) order as feature_index(). Empty if unseen.
  const std::vector<std::size_t>& containing(std::string_view feature) const;
  std::optional<std::size_t> find(std::string_view id) const;

 private:
  friend Corpus build_corpus(std::vector<Document> documents);

  std::vector<Document> documents_;
  std::map<std::string, std::vector<std::string>> feature_index_;
  std::map<std::string, std::vector<std::size_t>, std::less<>> positions_;
  std::map<std::string, std::size_t, std::less<>> by_id_;
};

// Throws DuplicateId naming the first repeated id.
Corpus build_corpus(std::vector<Document> documents);

// Line-delimited JSON: {"id": optional string, "text": string, "label": optional class name}.
// Missing ids become "doc-<n>" with n the 1-based record number.
Corpus load_corpus(const std::filesystem::path& path, const ClassConfig& classes,
                   const TokenizerConfig& tokenizer = {});
Corpus parse_corpus(std::string_view jsonl, const ClassConfig& classes,
                    const TokenizerConfig& tokenizer = {});
void save_corpus(const Corpus& corpus, const std::filesystem::path& path,
                 const ClassConfig& classes);

}  // namespace oa
