#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "oa/annotation.hpp"
#include "oa/errors.hpp"
#include "support.hpp"

using namespace oa;

namespace {

std::vector<GlobalFeatureContribution> ranking_of(std::size_t n) {
  std::vector<GlobalFeatureContribution> out;
  for (std::size_t i = 0; i < n; ++i) {
    GlobalFeatureContribution g;
    g.feature = "f" + std::to_string(i);
    g.direction = i % 2 == 0 ? 2 : 0;
    g.magnitude = 1.0 - 0.01 * static_cast<double>(i);
    g.n_instances = 5;
    g.rank = i + 1;
    out.push_back(g);
  }
  return out;
}

std::vector<GoldQuestion> happy_pool() {
  return {{"happy", "enjoying or showing or marked by joy", 2, Side::agree},
          {"awful", "exceptionally bad", 2, Side::disagree}};
}

Judgment vote(std::string feature, std::string assessor, int likert, std::size_t direction = 2) {
  Judgment j;
  j.feature = std::move(feature);
  j.assessor_id = std::move(assessor);
  j.likert = likert;
  j.learned_direction = direction;
  j.timestamp = "2020-01-01T00:00:00Z";
  return j;
}

Decision decide(const std::vector<int>& likerts) {
  JudgmentStore store;
  for (std::size_t i = 0; i < likerts.size(); ++i) {
    store.record(vote("word", "a" + std::to_string(i), likerts[i]));
  }
  const auto set = aggregate_judgments(store);
  return set.find("word")->decision;
}

// Independent tally: counts votes straight from the likert values.
Decision oracle_decision(const std::vector<int>& likerts) {
  const auto agree = std::count_if(likerts.begin(), likerts.end(), [](int l) { return l <= 2; });
  const auto disagree = std::count_if(likerts.begin(), likerts.end(), [](int l) { return l >= 4; });
  if (agree >= 3 && agree > disagree) return Decision::agree;
  if (disagree >= 3 && disagree > agree) return Decision::disagree;
  return Decision::undecided;
}

std::string erroneous_csv(const ErroneousFeatureSet& set) {
  std::ostringstream out;
  write_erroneous_csv(out, set, ClassConfig::sentiment());
  return out.str();
}

// Random log over a handful of features, assessors and gold answers.
std::vector<Judgment> random_log(std::mt19937_64& rng, const std::vector<GoldQuestion>& pool) {
  std::vector<Judgment> log;
  std::uniform_int_distribution<int> likert(1, 5);
  std::uniform_int_distribution<int> n_assessors(3, 8);
  const int assessors = n_assessors(rng);
  for (int a = 0; a < assessors; ++a) {
    const std::string id = "as" + std::to_string(a);
    for (int f = 0; f < 12; ++f) {
      log.push_back(vote("w" + std::to_string(f), id, likert(rng), f % 3 == 1 ? 0 : 2));
    }
    for (const auto& g : pool) log.push_back(vote(g.feature, id, likert(rng), g.direction));
    if (rng() % 3 == 0) log.push_back(vote("w0", id, likert(rng)));  // a revision
  }
  return log;
}

}  // namespace

TEST_CASE("binarize maps the likert scale onto sides") {
  CHECK(binarize(1) == Side::agree);
  CHECK(binarize(2) == Side::agree);
  CHECK_FALSE(binarize(3).has_value());
  CHECK(binarize(4) == Side::disagree);
  CHECK(binarize(5) == Side::disagree);
  CHECK(to_string(Side::agree) == "agree");
  CHECK(parse_side("disagree") == Side::disagree);
  CHECK_THROWS_AS(parse_side("maybe"), ValidationError);
}

TEST_CASE("generate_tasks with top_n zero is empty") {
  const auto pool = happy_pool();
  CHECK(generate_tasks(ranking_of(10), {}, 0, pool).empty());
}

TEST_CASE("ten features with gold make two pages of six slots") {
  const auto pool = happy_pool();
  const auto tasks = generate_tasks(ranking_of(10), {}, 10, pool);
  REQUIRE(tasks.size() == 12);
  for (std::size_t page = 0; page < 2; ++page) {
    std::size_t real = 0, gold = 0;
    for (const auto& t : tasks) {
      if (t.page != page) continue;
      (t.is_gold ? gold : real)++;
    }
    CHECK(real == 5);
    CHECK(gold == 1);
  }
}

TEST_CASE("tasks preserve rank order and carry learned direction") {
  const auto pool = happy_pool();
  const auto ranking = ranking_of(13);
  const auto tasks = generate_tasks(ranking, {}, 50, pool, {.page_size = 5, .seed = 3});
  std::vector<std::string> real;
  for (const auto& t : tasks) {
    if (t.is_gold) continue;
    real.push_back(t.feature);
    CHECK(t.learned_direction != ClassConfig::sentiment().neutral_class());
  }
  REQUIRE(real.size() == 13);  // silently truncated to the ranking length
  for (std::size_t i = 0; i < real.size(); ++i) CHECK(real[i] == ranking[i].feature);
  for (std::size_t page = 0; page < 3; ++page) {
    const auto n = std::count_if(tasks.begin(), tasks.end(), [&](const AnnotationTask& t) {
      return t.page == page && !t.is_gold;
    });
    CHECK(n <= 5);
  }
}

TEST_CASE("missing definitions are flagged") {
  const auto pool = happy_pool();
  const std::map<std::string, std::string> defs{{"f0", "first word"}};
  const auto tasks = generate_tasks(ranking_of(2), defs, 2, pool);
  for (const auto& t : tasks) {
    if (t.feature == "f0") {
      CHECK(t.has_definition);
      CHECK(t.definition == "first word");
    } else if (t.feature == "f1") {
      CHECK_FALSE(t.has_definition);
      CHECK(t.definition.empty());
    }
  }
}

TEST_CASE("gold injection with an empty pool is a configuration error") {
  CHECK_THROWS_AS(generate_tasks(ranking_of(3), {}, 3, {}), ConfigError);
  TaskOptions no_gold;
  no_gold.inject_gold = false;
  CHECK(generate_tasks(ranking_of(3), {}, 3, {}, no_gold).size() == 3);
}

TEST_CASE("gold questions that are also real features are not injected") {
  auto ranking = ranking_of(3);
  ranking[0].feature = "happy";
  const auto pool = happy_pool();
  const auto tasks = generate_tasks(ranking, {}, 3, pool);
  const auto gold = std::find_if(tasks.begin(), tasks.end(), [](const auto& t) { return t.is_gold; });
  REQUIRE(gold != tasks.end());
  CHECK(gold->feature == "awful");
  const std::vector<GoldQuestion> only_happy{pool[0]};
  CHECK_THROWS_AS(generate_tasks(ranking, {}, 3, only_happy), ConfigError);
}

TEST_CASE("the happy gold question") {
  const std::vector<GoldQuestion> pool{happy_pool()[0]};
  const auto tasks = generate_tasks(ranking_of(5), {}, 5, pool);
  const auto gold = std::find_if(tasks.begin(), tasks.end(), [](const auto& t) { return t.is_gold; });
  REQUIRE(gold != tasks.end());
  CHECK(gold->feature == "happy");
  CHECK(gold->definition == "enjoying or showing or marked by joy");
  CHECK(gold->gold_expected == Side::agree);

  JudgmentStore store(pool);
  const auto rec = store.record(vote("happy", "alice", 2));
  CHECK(rec.gold_total == 1);
  CHECK(rec.gold_correct == 1);
  CHECK(rec.trusted);
}

TEST_CASE("gold pool and definitions parse") {
  std::istringstream gold(
      R"({"feature":"happy","definition":"joyful","direction":"positive","expected":"agree"})"
      "\n\n"
      R"({"feature":"awful","definition":"bad","direction":"positive","expected":"disagree"})"
      "\n");
  const auto pool = parse_gold_pool(gold, ClassConfig::sentiment());
  REQUIRE(pool.size() == 2);
  CHECK(pool[1].feature == "awful");
  CHECK(pool[1].direction == 2);
  CHECK(pool[1].expected == Side::disagree);

  std::istringstream defs("# comment\nhappy\tjoyful\n\nsad\tfeeling sorrow\n");
  const auto d = parse_definitions(defs);
  CHECK(d.size() == 2);
  CHECK(d.at("sad") == "feeling sorrow");

  std::istringstream bad(R"({"feature":"x","direction":"positive","expected":"perhaps"})");
  CHECK_THROWS(parse_gold_pool(bad, ClassConfig::sentiment()));
}

TEST_CASE("trust follows gold accuracy") {
  JudgmentStore store(happy_pool());
  SUBCASE("one gold seen is not enough to distrust") {
    const auto rec = store.record(vote("happy", "bob", 5));
    CHECK(rec.gold_total == 1);
    CHECK(rec.gold_correct == 0);
    CHECK(rec.trusted);
  }
  SUBCASE("failing three of four golds") {
    std::vector<GoldQuestion> pool;
    for (int i = 0; i < 4; ++i) pool.push_back({"g" + std::to_string(i), "", 2, Side::agree});
    JudgmentStore four(pool);
    four.record(vote("g0", "carol", 1));
    four.record(vote("g1", "carol", 5));
    four.record(vote("g2", "carol", 4));
    const auto rec = four.record(vote("g3", "carol", 5));
    CHECK(rec.gold_total == 4);
    CHECK(rec.gold_correct == 1);
    CHECK_FALSE(rec.trusted);  // 1/4 = 0.25 < 0.7
  }
  SUBCASE("neutral on a gold question counts as wrong") {
    store.record(vote("happy", "dan", 3));
    const auto rec = store.record(vote("awful", "dan", 4));
    CHECK(rec.gold_correct == 1);
    CHECK_FALSE(rec.trusted);  // 0.5 < 0.7
  }
  SUBCASE("exactly at threshold stays trusted") {
    std::vector<GoldQuestion> pool{{"g0", "", 2, Side::agree}, {"g1", "", 2, Side::agree}};
    JudgmentStore half(pool, TrustPolicy{0.5, 2});
    half.record(vote("g0", "erin", 1));
    CHECK(half.record(vote("g1", "erin", 5)).trusted);
  }
}

TEST_CASE("record_judgment validates input") {
  JudgmentStore store;
  CHECK_THROWS_AS(record_judgment(store, vote("w", "a", 6)), ValidationError);
  CHECK_THROWS_AS(record_judgment(store, vote("w", "a", 0)), ValidationError);
  CHECK_THROWS_AS(record_judgment(store, vote("w", "", 3)), ValidationError);
  Judgment no_dir = vote("w", "a", 2);
  no_dir.learned_direction.reset();
  CHECK_THROWS_AS(record_judgment(store, no_dir), ValidationError);
  record_judgment(store, vote("w", "a", 2, 2));
  CHECK_THROWS_AS(record_judgment(store, vote("w", "b", 2, 0)), ValidationError);
  CHECK(store.log().size() == 1);
}

TEST_CASE("aggregate examples") {
  CHECK(decide({1, 1, 2, 4, 5}) == Decision::agree);
  CHECK(decide({4, 4, 5, 1, 3}) == Decision::disagree);
  CHECK(decide({1, 4, 3, 3, 3}) == Decision::undecided);

  JudgmentStore store;
  const std::vector<int> votes{4, 4, 5, 1, 3};
  for (std::size_t i = 0; i < votes.size(); ++i) {
    store.record(vote("underwhelming", "a" + std::to_string(i), votes[i], 2));
  }
  const auto set = aggregate_judgments(store);
  CHECK(set.contains("underwhelming"));
  const auto* v = set.find("underwhelming");
  REQUIRE(v != nullptr);
  CHECK(v->agree == 1);
  CHECK(v->disagree == 3);
  CHECK(v->neutral == 1);
  CHECK(v->learned_direction == 2);
}

TEST_CASE("decision matches an independent tally over all five-vote patterns") {
  std::vector<int> votes(5, 1);
  std::size_t checked = 0;
  for (int code = 0; code < 3125; ++code) {
    int c = code;
    for (auto& v : votes) {
      v = c % 5 + 1;
      c /= 5;
    }
    if (code % 7 != 0) continue;  // a spread subset keeps the run short
    CHECK(decide(votes) == oracle_decision(votes));
    ++checked;
  }
  CHECK(checked > 400);
}

TEST_CASE("gold judgments never enter the erroneous set") {
  JudgmentStore store(happy_pool());
  for (int i = 0; i < 5; ++i) store.record(vote("awful", "a" + std::to_string(i), 5));
  const auto set = aggregate_judgments(store);
  CHECK(set.verdicts().empty());
}

TEST_CASE("untrusted assessors are excluded") {
  JudgmentStore store(happy_pool());
  for (int i = 0; i < 3; ++i) {
    const std::string id = "good" + std::to_string(i);
    store.record(vote("happy", id, 1));
    store.record(vote("awful", id, 5));
    store.record(vote("word", id, 2));
  }
  for (int i = 0; i < 4; ++i) {
    const std::string id = "bad" + std::to_string(i);
    store.record(vote("word", id, 5));
    store.record(vote("happy", id, 5));
    store.record(vote("awful", id, 1));
  }
  const auto set = aggregate_judgments(store);
  const auto* v = set.find("word");
  REQUIRE(v != nullptr);
  CHECK(v->agree == 3);
  CHECK(v->disagree == 0);
  CHECK(v->excluded_untrusted == 4);
  CHECK(v->decision == Decision::agree);
}

TEST_CASE("last write wins per assessor and feature") {
  JudgmentStore store;
  for (int i = 0; i < 3; ++i) store.record(vote("word", "a" + std::to_string(i), 1));
  CHECK(aggregate_judgments(store).find("word")->decision == Decision::agree);
  for (int i = 0; i < 3; ++i) store.record(vote("word", "a" + std::to_string(i), 5));
  const auto set = aggregate_judgments(store);
  CHECK(set.find("word")->agree == 0);
  CHECK(set.find("word")->disagree == 3);
  CHECK(set.contains("word"));
  CHECK(store.log().size() == 6);
  CHECK(store.latest().size() == 3);
  CHECK(store.assessor_count("word") == 3);
  CHECK(store.has_judged("a1", "word"));
  CHECK_FALSE(store.has_judged("a9", "word"));
}

TEST_CASE("replaying the log reproduces the erroneous set") {
  const auto dir = testing::scratch_dir("annotation_replay");
  const auto path = dir / "judgments.jsonl";
  const auto pool = happy_pool();
  std::mt19937_64 rng(11);
  std::string first;
  {
    JudgmentStore store(pool, {}, path);
    for (auto j : random_log(rng, pool)) {
      j.timestamp.clear();  // stamped on record
      store.record(std::move(j));
    }
    first = erroneous_csv(aggregate_judgments(store));
  }
  JudgmentStore replay(pool, {}, path);
  CHECK(erroneous_csv(aggregate_judgments(replay)) == first);
  for (const auto& j : replay.log()) CHECK(j.timestamp.size() == 20);

  std::ofstream(path, std::ios::app) << "{not json\n";
  CHECK_THROWS_AS(JudgmentStore(pool, {}, path), ValidationError);
}

TEST_CASE("aggregation is invariant to judgment order") {
  const auto pool = happy_pool();
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    auto log = random_log(rng, pool);
    // Revisions make arrival order meaningful, so give each (assessor, feature) one vote.
    std::set<std::pair<std::string, std::string>> seen;
    std::erase_if(log, [&](const Judgment& j) { return !seen.insert({j.assessor_id, j.feature}).second; });
    JudgmentStore a(pool);
    for (const auto& j : log) a.record(j);
    std::shuffle(log.begin(), log.end(), rng);
    JudgmentStore b(pool);
    for (const auto& j : log) b.record(j);
    CHECK(erroneous_csv(aggregate_judgments(a)) == erroneous_csv(aggregate_judgments(b)));
  }
}

TEST_CASE("three trusted same-side votes out of five survive exclusion") {
  const auto pool = happy_pool();
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> likert(1, 5);
  for (int trial = 0; trial < 200; ++trial) {
    JudgmentStore store(pool);
    JudgmentStore everyone;  // same votes, nobody distrusted
    std::vector<bool> trusted(5);
    std::vector<int> votes(5);
    for (int a = 0; a < 5; ++a) {
      const std::string id = "as" + std::to_string(a);
      trusted[a] = rng() % 3 != 0;
      store.record(vote("happy", id, trusted[a] ? 1 : 5));
      store.record(vote("awful", id, trusted[a] ? 5 : 1));
      votes[a] = likert(rng);
      store.record(vote("word", id, votes[a]));
      everyone.record(vote("word", id, votes[a]));
    }
    std::size_t agree = 0, disagree = 0;
    for (int a = 0; a < 5; ++a) {
      if (!trusted[a]) continue;
      agree += votes[a] <= 2;
      disagree += votes[a] >= 4;
    }
    const auto with = aggregate_judgments(store).find("word")->decision;
    const auto without = aggregate_judgments(everyone).find("word")->decision;
    if (agree >= 3) {
      CHECK(with == Decision::agree);
      CHECK(without == Decision::agree);
    }
    if (disagree >= 3) {
      CHECK(with == Decision::disagree);
      CHECK(without == Decision::disagree);
    }
  }
}

TEST_CASE("every erroneous feature carries its learned direction") {
  const auto pool = happy_pool();
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    JudgmentStore store(pool);
    for (const auto& j : random_log(rng, pool)) store.record(j);
    const auto set = aggregate_judgments(store);
    for (const auto& f : set.features()) {
      const auto n = std::stoi(f.substr(1));
      CHECK(set.find(f)->learned_direction == (n % 3 == 1 ? 0u : 2u));
      CHECK(set.find(f)->decision == Decision::disagree);
    }
    for (const auto& v : set.verdicts()) CHECK(set.contains(v.feature) == (v.decision == Decision::disagree));
  }
}

TEST_CASE("judgment CSV import and export") {
  const auto classes = ClassConfig::sentiment();
  std::istringstream in(
      "feature,learned_direction,likert,assessor_id\n"
      "bland,positive,4,a1\n"
      "bland,positive,5,a2\n"
      "great,positive,1,a1\n");
  JudgmentStore store;
  CHECK(import_judgments_csv(in, store, classes) == 3);
  std::ostringstream out;
  export_judgments_csv(out, store, classes);
  CHECK(out.str() ==
        "feature,learned_direction,likert,assessor_id\n"
        "bland,positive,4,a1\n"
        "bland,positive,5,a2\n"
        "great,positive,1,a1\n");
  for (const auto& j : store.log()) CHECK_FALSE(j.timestamp.empty());

  std::istringstream bad_likert("feature,learned_direction,likert,assessor_id\nx,positive,4.5,a\n");
  CHECK_THROWS_AS(import_judgments_csv(bad_likert, store, classes), ValidationError);
  std::istringstream bad_range("feature,learned_direction,likert,assessor_id\nx,positive,9,a\n");
  CHECK_THROWS_AS(import_judgments_csv(bad_range, store, classes), ValidationError);
  std::istringstream bad_class("feature,learned_direction,likert,assessor_id\nx,upbeat,2,a\n");
  CHECK_THROWS(import_judgments_csv(bad_class, store, classes));
}

TEST_CASE("erroneous CSV round-trips") {
  const auto classes = ClassConfig::sentiment();
  JudgmentStore store;
  for (int i = 0; i < 5; ++i) {
    store.record(vote("dull", "a" + std::to_string(i), i < 3 ? 5 : 1, 2));
    store.record(vote("fine", "a" + std::to_string(i), 2, 2));
    store.record(vote("gloom", "a" + std::to_string(i), 3, 0));
  }
  const auto set = aggregate_judgments(store);
  const auto text = erroneous_csv(set);
  std::istringstream in(text);
  const auto back = read_erroneous_csv(in, classes);
  CHECK(erroneous_csv(back) == text);
  CHECK(back.features() == std::vector<std::string>{"dull"});
  CHECK(back.find("gloom")->decision == Decision::undecided);
  CHECK(back.find("gloom")->learned_direction == 0);
}
