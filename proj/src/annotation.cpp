#include "oa/annotation.hpp"

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <ctime>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <set>

#include <fcntl.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "oa/csv.hpp"
#include "oa/errors.hpp"

namespace oa {
namespace {

nlohmann::ordered_json judgment_to_json(const Judgment& j) {
  nlohmann::ordered_json out;
  out["feature"] = j.feature;
  out["assessor"] = j.assessor_id;
  out["likert"] = j.likert;
  out["timestamp"] = j.timestamp;
  out["learned_direction"] =
      j.learned_direction ? nlohmann::ordered_json(*j.learned_direction) : nlohmann::ordered_json();
  out["gold"] = j.is_gold;
  return out;
}

Judgment judgment_from_json(const nlohmann::json& in) {
  Judgment j;
  j.feature = in.at("feature").get<std::string>();
  j.assessor_id = in.at("assessor").get<std::string>();
  j.likert = in.at("likert").get<int>();
  j.timestamp = in.value("timestamp", std::string());
  if (in.contains("learned_direction") && !in["learned_direction"].is_null()) {
    j.learned_direction = in["learned_direction"].get<std::size_t>();
  }
  return j;
}

}  // namespace

std::string_view to_string(Side side) { return side == Side::agree ? "agree" : "disagree"; }

Side parse_side(std::string_view text) {
  if (text == "agree") return Side::agree;
  if (text == "disagree") return Side::disagree;
  throw ValidationError("expected 'agree' or 'disagree', got '" + std::string(text) + "'");
}

std::string_view to_string(Decision decision) {
  switch (decision) {
    case Decision::agree:
      return "agree";
    case Decision::disagree:
      return "disagree";
    case Decision::undecided:
      break;
  }
  return "undecided";
}

Decision parse_decision(std::string_view text) {
  if (text == "agree") return Decision::agree;
  if (text == "disagree") return Decision::disagree;
  if (text == "undecided") return Decision::undecided;
  throw ValidationError("unknown decision '" + std::string(text) + "'");
}

std::vector<AnnotationTask> generate_tasks(const std::vector<GlobalFeatureContribution>& ranking,
                                           const std::map<std::string, std::string>& definitions,
                                           std::size_t top_n,
                                           std::span<const GoldQuestion> gold_pool,
                                           const TaskOptions& options) {
  if (options.page_size == 0) throw ConfigError("page size must be positive");
  const std::size_t n = std::min(top_n, ranking.size());
  if (n == 0) return {};

  std::set<std::string_view> real;
  for (std::size_t i = 0; i < n; ++i) real.insert(ranking[i].feature);
  std::vector<const GoldQuestion*> usable;
  for (const auto& g : gold_pool) {
    if (!real.count(g.feature)) usable.push_back(&g);
  }
  if (options.inject_gold && usable.empty()) {
    throw ConfigError("gold injection is enabled but the gold pool has no usable question");
  }

  std::vector<AnnotationTask> tasks;
  std::mt19937_64 rng(options.seed);
  for (std::size_t begin = 0, page = 0; begin < n; begin += options.page_size, ++page) {
    const std::size_t end = std::min(n, begin + options.page_size);
    std::vector<AnnotationTask> page_tasks;
    for (std::size_t i = begin; i < end; ++i) {
      const auto& g = ranking[i];
      AnnotationTask t;
      t.feature = g.feature;
      if (const auto it = definitions.find(g.feature); it != definitions.end()) {
        t.definition = it->second;
        t.has_definition = true;
      }
      t.learned_direction = g.direction;
      t.magnitude = g.magnitude;
      t.page = page;
      page_tasks.push_back(std::move(t));
    }
    if (options.inject_gold) {
      const GoldQuestion& q = *usable[page % usable.size()];
      AnnotationTask t;
      t.feature = q.feature;
      t.definition = q.definition;
      t.has_definition = !q.definition.empty();
      t.learned_direction = q.direction;
      t.page = page;
      t.is_gold = true;
      t.gold_expected = q.expected;
      std::uniform_int_distribution<std::size_t> slot(0, page_tasks.size());
      page_tasks.insert(page_tasks.begin() + static_cast<std::ptrdiff_t>(slot(rng)), std::move(t));
    }
    std::move(page_tasks.begin(), page_tasks.end(), std::back_inserter(tasks));
  }
  return tasks;
}

std::map<std::string, std::string> parse_definitions(std::istream& in) {
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ValidationError("definitions line " + std::to_string(line_no) + " has no tab");
    }
    out[line.substr(0, tab)] = line.substr(tab + 1);
  }
  return out;
}

std::map<std::string, std::string> load_definitions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open definitions " + path.string());
  return parse_definitions(in);
}

std::vector<GoldQuestion> parse_gold_pool(std::istream& in, const ClassConfig& classes) {
  std::vector<GoldQuestion> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      GoldQuestion q;
      q.feature = j.at("feature").get<std::string>();
      q.definition = j.value("definition", std::string());
      q.direction = classes.index_of(j.at("direction").get<std::string>());
      q.expected = parse_side(j.at("expected").get<std::string>());
      out.push_back(std::move(q));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("gold pool line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<GoldQuestion> load_gold_pool(const std::filesystem::path& path,
                                         const ClassConfig& classes) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open gold pool " + path.string());
  return parse_gold_pool(in, classes);
}

std::optional<Side> binarize(int likert, const AggregationPolicy& policy) {
  if (likert <= policy.agree_max) return Side::agree;
  if (likert >= policy.disagree_min) return Side::disagree;
  return std::nullopt;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------
// JudgmentStore

JudgmentStore::JudgmentStore(std::vector<GoldQuestion> gold_pool, TrustPolicy trust,
                             std::optional<std::filesystem::path> log_path)
    : trust_(trust), log_path_(std::move(log_path)) {
  for (auto& q : gold_pool) gold_.insert_or_assign(q.feature, std::move(q));
  if (!log_path_) return;
  std::ifstream in(*log_path_);
  if (!in) return;
  std::string line;
  std::size_t line_no = 0;
  std::lock_guard lock(mutex_);
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      apply(judgment_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("judgment log line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

AssessorRecord JudgmentStore::apply(Judgment j) {
  if (j.likert < 1 || j.likert > 5) {
    throw ValidationError("likert must be in 1..5, got " + std::to_string(j.likert));
  }
  if (j.assessor_id.empty()) throw ValidationError("judgment has no assessor id");
  if (j.feature.empty()) throw ValidationError("judgment has no feature");
  if (const auto it = gold_.find(j.feature); it != gold_.end()) {
    j.is_gold = true;
    j.gold_expected = it->second.expected;
    if (!j.learned_direction) j.learned_direction = it->second.direction;
  } else {
    j.is_gold = false;
    j.gold_expected.reset();
    if (!j.learned_direction) {
      throw ValidationError("judgment on '" + j.feature + "' has no learned direction");
    }
    const auto [it2, inserted] = directions_.emplace(j.feature, *j.learned_direction);
    if (!inserted && it2->second != *j.learned_direction) {
      throw ValidationError("conflicting learned direction for '" + j.feature + "'");
    }
  }
  if (j.timestamp.empty()) j.timestamp = utc_timestamp();
  log_.push_back(j);
  const std::string assessor_id = j.assessor_id;
  latest_.insert_or_assign({j.assessor_id, j.feature}, std::move(j));
  return compute_record(assessor_id);
}

AssessorRecord JudgmentStore::record(Judgment judgment) {
  std::lock_guard lock(mutex_);
  const std::size_t before = log_.size();
  AssessorRecord rec = apply(std::move(judgment));
  if (log_path_) {
    const std::string line = judgment_to_json(log_[before]).dump() + "\n";
    const int fd = ::open(log_path_->c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    bool ok = fd >= 0;
    if (ok) {
      // A single write on an O_APPEND descriptor lands as one contiguous record.
      ok = ::write(fd, line.data(), line.size()) == static_cast<ssize_t>(line.size());
      ::close(fd);
    }
    if (!ok) {
      throw IoError("cannot append to judgment log " + log_path_->string() + ": " +
                    std::strerror(errno));
    }
  }
  return rec;
}

AssessorRecord JudgmentStore::compute_record(const std::string& assessor_id) const {
  AssessorRecord rec;
  rec.assessor_id = assessor_id;
  const AggregationPolicy binary;
  for (auto it = latest_.lower_bound({assessor_id, std::string()});
       it != latest_.end() && it->first.first == assessor_id; ++it) {
    const Judgment& j = it->second;
    if (!j.is_gold) continue;
    ++rec.gold_total;
    if (binarize(j.likert, binary) == j.gold_expected) ++rec.gold_correct;
  }
  if (rec.gold_total >= trust_.min_gold) {
    const double accuracy =
        static_cast<double>(rec.gold_correct) / static_cast<double>(rec.gold_total);
    rec.trusted = accuracy >= trust_.threshold;
  }
  return rec;
}

AssessorRecord JudgmentStore::assessor(const std::string& assessor_id) const {
  std::lock_guard lock(mutex_);
  return compute_record(assessor_id);
}

std::vector<AssessorRecord> JudgmentStore::assessors() const {
  std::lock_guard lock(mutex_);
  std::vector<AssessorRecord> out;
  for (const auto& [key, j] : latest_) {
    if (out.empty() || out.back().assessor_id != key.first) out.push_back(compute_record(key.first));
  }
  return out;
}

std::vector<Judgment> JudgmentStore::latest() const {
  std::lock_guard lock(mutex_);
  std::vector<Judgment> out;
  out.reserve(latest_.size());
  for (const auto& [key, j] : latest_) out.push_back(j);
  std::sort(out.begin(), out.end(), [](const Judgment& a, const Judgment& b) {
    return std::tie(a.feature, a.assessor_id) < std::tie(b.feature, b.assessor_id);
  });
  return out;
}

std::vector<Judgment> JudgmentStore::log() const {
  std::lock_guard lock(mutex_);
  return log_;
}

bool JudgmentStore::has_judged(const std::string& assessor_id, const std::string& feature) const {
  std::lock_guard lock(mutex_);
  return latest_.count({assessor_id, feature}) > 0;
}

std::size_t JudgmentStore::assessor_count(const std::string& feature) const {
  std::lock_guard lock(mutex_);
  std::size_t n = 0;
  for (const auto& [key, j] : latest_) n += key.second == feature;
  return n;
}

bool JudgmentStore::is_gold(const std::string& feature) const { return gold_.count(feature) > 0; }

AssessorRecord record_judgment(JudgmentStore& store, Judgment judgment) {
  return store.record(std::move(judgment));
}

// ---------------------------------------------------------------------------
// Aggregation

ErroneousFeatureSet::ErroneousFeatureSet(std::vector<FeatureVerdict> verdicts)
    : verdicts_(std::move(verdicts)) {
  std::sort(verdicts_.begin(), verdicts_.end(),
            [](const FeatureVerdict& a, const FeatureVerdict& b) { return a.feature < b.feature; });
  for (std::size_t i = 1; i < verdicts_.size(); ++i) {
    if (verdicts_[i].feature == verdicts_[i - 1].feature) {
      throw ValidationError("duplicate verdict for '" + verdicts_[i].feature + "'");
    }
  }
  for (const auto& v : verdicts_) {
    if (v.decision == Decision::disagree) erroneous_.push_back(v.feature);
  }
}

const FeatureVerdict* ErroneousFeatureSet::find(std::string_view feature) const {
  const auto it = std::lower_bound(
      verdicts_.begin(), verdicts_.end(), feature,
      [](const FeatureVerdict& v, std::string_view f) { return v.feature < f; });
  if (it == verdicts_.end() || it->feature != feature) return nullptr;
  return &*it;
}

bool ErroneousFeatureSet::contains(std::string_view feature) const {
  return std::binary_search(erroneous_.begin(), erroneous_.end(), feature);
}

ErroneousFeatureSet aggregate_judgments(const JudgmentStore& store,
                                        const AggregationPolicy& policy) {
  std::map<std::string, bool> trusted;
  for (const auto& rec : store.assessors()) trusted[rec.assessor_id] = rec.trusted;

  std::map<std::string, FeatureVerdict> by_feature;
  for (const auto& j : store.latest()) {
    if (j.is_gold) continue;
    auto& v = by_feature[j.feature];
    v.feature = j.feature;
    v.learned_direction = *j.learned_direction;
    if (!trusted[j.assessor_id]) {
      ++v.excluded_untrusted;
      continue;
    }
    const auto side = binarize(j.likert, policy);
    if (!side) {
      ++v.neutral;
    } else if (*side == Side::agree) {
      ++v.agree;
    } else {
      ++v.disagree;
    }
  }
  std::vector<FeatureVerdict> verdicts;
  for (auto& [feature, v] : by_feature) {
    if (v.agree >= policy.min_side_votes && v.agree > v.disagree) {
      v.decision = Decision::agree;
    } else if (v.disagree >= policy.min_side_votes && v.disagree > v.agree) {
      v.decision = Decision::disagree;
    } else {
      v.decision = Decision::undecided;
    }
    verdicts.push_back(std::move(v));
  }
  return ErroneousFeatureSet(std::move(verdicts));
}

// ---------------------------------------------------------------------------
// CSV

std::size_t import_judgments_csv(std::istream& in, JudgmentStore& store,
                                 const ClassConfig& classes) {
  const auto table = csv::read(in);
  const auto c_feature = table.column("feature");
  const auto c_direction = table.column("learned_direction");
  const auto c_likert = table.column("likert");
  const auto c_assessor = table.column("assessor_id");
  const auto ts_it = std::find(table.header.begin(), table.header.end(), "timestamp");
  std::size_t count = 0;
  for (const auto& row : table.rows) {
    Judgment j;
    j.feature = row[c_feature];
    j.assessor_id = row[c_assessor];
    try {
      std::size_t used = 0;
      j.likert = std::stoi(row[c_likert], &used);
      if (used != row[c_likert].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ValidationError("likert '" + row[c_likert] + "' is not an integer");
    }
    if (!row[c_direction].empty()) j.learned_direction = classes.index_of(row[c_direction]);
    if (ts_it != table.header.end()) {
      j.timestamp = row[static_cast<std::size_t>(ts_it - table.header.begin())];
    }
    store.record(std::move(j));
    ++count;
  }
  return count;
}

void export_judgments_csv(std::ostream& out, const JudgmentStore& store,
                          const ClassConfig& classes) {
  csv::write_row(out, {"feature", "learned_direction", "likert", "assessor_id"});
  for (const auto& j : store.latest()) {
    csv::write_row(out, {j.feature, j.learned_direction ? classes.name(*j.learned_direction) : "",
                         std::to_string(j.likert), j.assessor_id});
  }
}

void write_erroneous_csv(std::ostream& out, const ErroneousFeatureSet& set,
                         const ClassConfig& classes) {
  csv::write_row(out, {"feature", "learned_direction", "agree", "disagree", "neutral",
                       "excluded_untrusted", "decision"});
  for (const auto& v : set.verdicts()) {
    csv::write_row(out, {v.feature, classes.name(v.learned_direction), std::to_string(v.agree),
                         std::to_string(v.disagree), std::to_string(v.neutral),
                         std::to_string(v.excluded_untrusted), std::string(to_string(v.decision))});
  }
}

ErroneousFeatureSet read_erroneous_csv(std::istream& in, const ClassConfig& classes) {
  const auto table = csv::read(in);
  const auto c_feature = table.column("feature");
  const auto c_direction = table.column("learned_direction");
  const auto c_decision = table.column("decision");
  const auto count = [&](const std::vector<std::string>& row, const char* name) -> std::size_t {
    const auto it = std::find(table.header.begin(), table.header.end(), name);
    if (it == table.header.end()) return 0;
    try {
      return std::stoul(row[static_cast<std::size_t>(it - table.header.begin())]);
    } catch (const std::exception&) {
      throw ValidationError(std::string("malformed count in column ") + name);
    }
  };
  std::vector<FeatureVerdict> verdicts;
  for (const auto& row : table.rows) {
    FeatureVerdict v;
    v.feature = row[c_feature];
    v.learned_direction = classes.index_of(row[c_direction]);
    v.agree = count(row, "agree");
    v.disagree = count(row, "disagree");
    v.neutral = count(row, "neutral");
    v.excluded_untrusted = count(row, "excluded_untrusted");
    v.decision = parse_decision(row[c_decision]);
    verdicts.push_back(std::move(v));
  }
  return ErroneousFeatureSet(std::move(verdicts));
}

}  // namespace oa
