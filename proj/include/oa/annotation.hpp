#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "oa/global_aggregator.hpp"
#include "oa/text_core.hpp"

namespace oa {

// Likert orientation: 1 = Strongly Agree, 2 = Agree, 3 = Neutral,
// 4 = Disagree, 5 = Strongly Disagree.
enum class Side { agree, disagree };

std::string_view to_string(Side side);
Side parse_side(std::string_view text);

// A question with a known answer, mixed into every annotation page.
struct GoldQuestion {
  std::string feature;
  std::string definition;
  std::size_t direction = 0;
  Side expected = Side::agree;
};

struct AnnotationTask {
  std::string feature;
  std::string definition;
  bool has_definition = false;
  std::size_t learned_direction = 0;
  double magnitude = 0.0;
  std::size_t page = 0;
  bool is_gold = false;
  std::optional<Side> gold_expected;
};

struct TaskOptions {
  std::size_t page_size = 5;
  bool inject_gold = true;
  std::uint64_t seed = 0;  // drives the gold slot within each page
};

// Keeps rank order, chunks into pages of `page_size` real tasks and inserts
// one gold question per page (cycling through the pool, skipping gold
// features that are also being annotated). Throws ConfigError when gold
// injection is on and no usable gold question exists.
std::vector<AnnotationTask> generate_tasks(const std::vector<GlobalFeatureContribution>& ranking,
                                           const std::map<std::string, std::string>& definitions,
                                           std::size_t top_n,
                                           std::span<const GoldQuestion> gold_pool,
                                           const TaskOptions& options = {});

// TSV: feature<TAB>definition. Blank lines and lines starting with '#' are skipped.
std::map<std::string, std::string> load_definitions(const std::filesystem::path& path);
std::map<std::string, std::string> parse_definitions(std::istream& in);

// JSONL: {"feature", "definition", "direction": class name, "expected": "agree"|"disagree"}.
std::vector<GoldQuestion> load_gold_pool(const std::filesystem::path& path,
                                         const ClassConfig& classes);
std::vector<GoldQuestion> parse_gold_pool(std::istream& in, const ClassConfig& classes);

struct Judgment {
  std::string feature;
  std::string assessor_id;
  int likert = 0;
  std::string timestamp;  // ISO-8601 UTC; filled on record when empty
  std::optional<std::size_t> learned_direction;
  bool is_gold = false;
  std::optional<Side> gold_expected;
};

struct TrustPolicy {
  double threshold = 0.7;
  std::size_t min_gold = 2;
};

struct AssessorRecord {
  std::string assessor_id;
  std::size_t gold_total = 0;
  std::size_t gold_correct = 0;
  bool trusted = true;
};

struct AggregationPolicy {
  int agree_max = 2;      // likert <= agree_max counts as agree
  int disagree_min = 4;   // likert >= disagree_min counts as disagree
  std::size_t min_side_votes = 3;
};

// Neutral (or otherwise unmapped) ratings yield nullopt.
std::optional<Side> binarize(int likert, const AggregationPolicy& policy = {});

std::string utc_timestamp();

// Append-only judgment log. Each (assessor, feature) pair keeps its latest
// judgment; trust is computed from the assessor's latest gold answers.
// All members are safe to call concurrently.
class JudgmentStore {
 public:
  explicit JudgmentStore(std::vector<GoldQuestion> gold_pool = {}, TrustPolicy trust = {},
                         std::optional<std::filesystem::path> log_path = std::nullopt);

  // Validates, marks gold questions, appends to the log and returns the
  // assessor's updated record. Throws ValidationError.
  AssessorRecord record(Judgment judgment);

  AssessorRecord assessor(const std::string& assessor_id) const;
  std::vector<AssessorRecord> assessors() const;
  std::vector<Judgment> latest() const;  // sorted by (feature, assessor)
  std::vector<Judgment> log() const;     // arrival order
  bool has_judged(const std::string& assessor_id, const std::string& feature) const;
  std::size_t assessor_count(const std::string& feature) const;
  bool is_gold(const std::string& feature) const;
  const TrustPolicy& trust_policy() const noexcept { return trust_; }

 private:
  AssessorRecord apply(Judgment judgment);  // requires mutex_
  AssessorRecord compute_record(const std::string& assessor_id) const;  // requires mutex_

  std::map<std::string, GoldQuestion> gold_;
  TrustPolicy trust_;
  std::optional<std::filesystem::path> log_path_;
  mutable std::mutex mutex_;
  std::vector<Judgment> log_;
  std::map<std::pair<std::string, std::string>, Judgment> latest_;  // (assessor, feature)
  std::map<std::string, std::size_t> directions_;
};

AssessorRecord record_judgment(JudgmentStore& store, Judgment judgment);

enum class Decision { agree, disagree, undecided };
std::string_view to_string(Decision decision);
Decision parse_decision(std::string_view text);

struct FeatureVerdict {
  std::string feature;
  std::size_t learned_direction = 0;
  std::size_t agree = 0;
  std::size_t disagree = 0;
  std::size_t neutral = 0;
  std::size_t excluded_untrusted = 0;
  Decision decision = Decision::undecided;
};

// Features whose learned direction the assessors rejected, plus the audit
// tallies of every judged feature.
class ErroneousFeatureSet {
 public:
  ErroneousFeatureSet() = default;
  explicit ErroneousFeatureSet(std::vector<FeatureVerdict> verdicts);

  const std::vector<FeatureVerdict>& verdicts() const noexcept { return verdicts_; }
  bool contains(std::string_view feature) const;
  const FeatureVerdict* find(std::string_view feature) const;
  const std::vector<std::string>& features() const noexcept { return erroneous_; }
  std::size_t size() const noexcept { return erroneous_.size(); }
  bool empty() const noexcept { return erroneous_.empty(); }

 private:
  std::vector<FeatureVerdict> verdicts_;  // sorted by feature
  std::vector<std::string> erroneous_;    // sorted
};

// Majority decision per non-gold feature over trusted assessors' latest
// judgments. Judgments of assessors who end up untrusted are excluded.
ErroneousFeatureSet aggregate_judgments(const JudgmentStore& store,
                                        const AggregationPolicy& policy = {});

// Offline annotation: feature,learned_direction,likert,assessor_id[,timestamp].
std::size_t import_judgments_csv(std::istream& in, JudgmentStore& store, const ClassConfig& classes);
void export_judgments_csv(std::ostream& out, const JudgmentStore& store, const ClassConfig& classes);

// feature,learned_direction,agree,disagree,neutral,excluded_untrusted,decision
void write_erroneous_csv(std::ostream& out, const ErroneousFeatureSet& set,
                         const ClassConfig& classes);
ErroneousFeatureSet read_erroneous_csv(std::istream& in, const ClassConfig& classes);

}  // namespace oa
