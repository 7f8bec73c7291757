#include "oa/text_core.hpp"

#include <algorithm>
#include <fstream>
#include <locale>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "oa/errors.hpp"

namespace oa {
namespace {

using Codepoints = std::u32string;

Codepoints decode_utf8(std::string_view s) {
  Codepoints out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto lead = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    char32_t cp = 0;
    if (lead < 0x80) {
      len = 1;
      cp = lead;
    } else if ((lead & 0xE0) == 0xC0) {
      len = 2;
      cp = lead & 0x1F;
    } else if ((lead & 0xF0) == 0xE0) {
      len = 3;
      cp = lead & 0x0F;
    } else if ((lead & 0xF8) == 0xF0) {
      len = 4;
      cp = lead & 0x07;
    }
    bool ok = len != 0 && i + len <= s.size();
    for (std::size_t k = 1; ok && k < len; ++k) {
      const auto c = static_cast<unsigned char>(s[i + k]);
      if ((c & 0xC0) != 0x80) {
        ok = false;
      } else {
        cp = (cp << 6) | (c & 0x3F);
      }
    }
    // Overlong forms, surrogates and out-of-range values are invalid too.
    if (ok && ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) ||
               (len == 4 && cp < 0x10000) || cp > 0x10FFFF ||
               (cp >= 0xD800 && cp <= 0xDFFF))) {
      ok = false;
    }
    if (ok) {
      out.push_back(cp);
      i += len;
    } else {
      out.push_back(0xFFFD);
      i += 1;
    }
  }
  return out;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

// Character classification backed by the C.UTF-8 locale when the platform
// has it; otherwise only ASCII is classified.
class CharClasses {
 public:
  CharClasses() {
    try {
      locale_ = std::locale("C.UTF-8");
    } catch (const std::runtime_error&) {
      locale_ = std::locale::classic();
    }
    ctype_ = &std::use_facet<std::ctype<wchar_t>>(locale_);
  }

  bool is_space(char32_t c) const { return check(std::ctype_base::space, c); }
  bool is_punct(char32_t c) const { return check(std::ctype_base::punct, c); }
  char32_t to_lower(char32_t c) const {
    if (c > 0x10FFFF) return c;
    return static_cast<char32_t>(ctype_->tolower(static_cast<wchar_t>(c)));
  }

 private:
  bool check(std::ctype_base::mask m, char32_t c) const {
    return ctype_->is(m, static_cast<wchar_t>(c));
  }

  std::locale locale_;
  const std::ctype<wchar_t>* ctype_ = nullptr;
};

const CharClasses& char_classes() {
  static const CharClasses classes;
  return classes;
}

}  // namespace

ClassConfig::ClassConfig(std::vector<std::string> classes, std::size_t neutral_class)
    : classes_(std::move(classes)), neutral_(neutral_class) {
  if (classes_.size() < 2) {
    throw ValidationError("class config needs at least 2 classes");
  }
  if (neutral_ >= classes_.size()) {
    throw ValidationError("neutral class index " + std::to_string(neutral_) +
                          " out of range");
  }
  std::set<std::string> seen;
  for (const auto& c : classes_) {
    if (!seen.insert(c).second) {
      throw ValidationError("duplicate class name '" + c + "'");
    }
  }
}

ClassConfig ClassConfig::sentiment() {
  return ClassConfig({"negative", "neutral", "positive"}, 1);
}

std::size_t ClassConfig::index_of(std::string_view name) const {
  const auto it = std::find(classes_.begin(), classes_.end(), name);
  if (it == classes_.end()) {
    throw ValidationError("unknown class '" + std::string(name) + "'");
  }
  return static_cast<std::size_t>(it - classes_.begin());
}

TokenList tokenize(std::string_view raw_text, const TokenizerConfig& config) {
  const auto& cc = char_classes();
  const Codepoints text = decode_utf8(raw_text);
  TokenList tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && cc.is_space(text[i])) ++i;
    std::size_t begin = i;
    while (i < text.size() && !cc.is_space(text[i])) ++i;
    std::size_t end = i;
    if (config.strip_punctuation) {
      while (begin < end && cc.is_punct(text[begin])) ++begin;
      while (end > begin && cc.is_punct(text[end - 1])) --end;
    }
    if (begin == end) continue;
    std::string token;
    for (std::size_t k = begin; k < end; ++k) {
      append_utf8(token, config.lowercase ? cc.to_lower(text[k]) : text[k]);
    }
    tokens.push_back(std::move(token));
  }
  return tokens;
}

std::string join_tokens(const TokenList& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

Document::Document(std::string id, std::string raw_text, TokenList tokens,
                   std::optional<std::size_t> gold_label)
    : id_(std::move(id)),
      raw_text_(std::move(raw_text)),
      tokens_(std::move(tokens)),
      gold_label_(gold_label) {
  std::set<std::string_view> seen;
  for (const auto& t : tokens_) {
    if (seen.insert(t).second) unique_.push_back(t);
  }
  sorted_unique_ = unique_;
  std::sort(sorted_unique_.begin(), sorted_unique_.end());
}

bool Document::contains(std::string_view feature) const {
  return std::binary_search(sorted_unique_.begin(), sorted_unique_.end(), feature);
}

Document make_document(std::string id, std::string raw_text,
                       std::optional<std::size_t> gold_label, const TokenizerConfig& config) {
  TokenList tokens = tokenize(raw_text, config);
  return Document(std::move(id), std::move(raw_text), std::move(tokens), gold_label);
}

bool Corpus::has_feature(std::string_view feature) const {
  return positions_.find(feature) != positions_.end();
}

const std::vector<std::size_t>& Corpus::containing(std::string_view feature) const {
  static const std::vector<std::size_t> kEmpty;
  const auto it = positions_.find(feature);
  return it == positions_.end() ? kEmpty : it->second;
}

std::optional<std::size_t> Corpus::find(std::string_view id) const {
  const auto it = by_id_.find(id);
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

Corpus build_corpus(std::vector<Document> documents) {
  Corpus corpus;
  for (std::size_t i = 0; i < documents.size(); ++i) {
    if (!corpus.by_id_.emplace(documents[i].id(), i).second) {
      throw DuplicateId(documents[i].id());
    }
  }
  corpus.documents_ = std::move(documents);

  // Walk documents in id order so every posting list comes out sorted.
  for (const auto& [id, pos] : corpus.by_id_) {
    for (const auto& feature : corpus.documents_[pos].unique_tokens()) {
      corpus.feature_index_[feature].push_back(id);
      corpus.positions_[feature].push_back(pos);
    }
  }
  return corpus;
}

Corpus parse_corpus(std::string_view jsonl, const ClassConfig& classes,
                    const TokenizerConfig& tokenizer) {
  std::vector<Document> docs;
  std::size_t record = 0;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= jsonl.size()) {
    std::size_t end = jsonl.find('\n', start);
    if (end == std::string_view::npos) end = jsonl.size();
    std::string_view line = jsonl.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) {
      if (end == jsonl.size()) break;
      continue;
    }
    ++record;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError("corpus line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("text") || !j["text"].is_string()) {
      throw ValidationError("corpus line " + std::to_string(line_no) +
                            ": missing string field 'text'");
    }
    std::string id = "doc-" + std::to_string(record);
    if (j.contains("id") && !j["id"].is_null()) {
      if (!j["id"].is_string()) {
        throw ValidationError("corpus line " + std::to_string(line_no) + ": 'id' must be a string");
      }
      id = j["id"].get<std::string>();
    }
    std::optional<std::size_t> label;
    if (j.contains("label") && !j["label"].is_null()) {
      if (!j["label"].is_string()) {
        throw ValidationError("corpus line " + std::to_string(line_no) +
                              ": 'label' must be a class name");
      }
      label = classes.index_of(j["label"].get<std::string>());
    }
    docs.push_back(make_document(std::move(id), j["text"].get<std::string>(), label, tokenizer));
    if (end == jsonl.size()) break;
  }
  return build_corpus(std::move(docs));
}

Corpus load_corpus(const std::filesystem::path& path, const ClassConfig& classes,
                   const TokenizerConfig& tokenizer) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_corpus(buf.str(), classes, tokenizer);
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path,
                 const ClassConfig& classes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write corpus " + path.string());
  for (const auto& doc : corpus.documents()) {
    nlohmann::ordered_json j;
    j["id"] = doc.id();
    j["text"] = doc.raw_text();
    if (doc.gold_label()) j["label"] = classes.name(*doc.gold_label());
    out << j.dump() << '\n';
  }
}

}  // namespace oa
