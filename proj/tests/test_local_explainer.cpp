#include <doctest.h>

#include <cmath>
#include <map>
#include <random>
#include <set>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "oa/benchmark.hpp"
#include "oa/errors.hpp"
#include "oa/local_explainer.hpp"
#include "support.hpp"

using namespace oa;

namespace {

// Dense weighted ridge solve on the augmented system
//   [sqrt(W) A; sqrt(alpha) P] theta = [sqrt(W) y; 0]
// via column-pivoting QR, independent of the normal equations.
Eigen::VectorXd qr_oracle(const std::vector<PerturbationSample>& samples, double alpha) {
  const Eigen::Index n = static_cast<Eigen::Index>(samples.size());
  const Eigen::Index U = static_cast<Eigen::Index>(samples.front().mask.size());
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n + U, U + 1);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n + U);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double w = std::sqrt(samples[i].weight);
    A(i, 0) = w;
    for (Eigen::Index u = 0; u < U; ++u) A(i, u + 1) = w * samples[i].mask[u];
    b(i) = w * samples[i].target;
  }
  for (Eigen::Index u = 0; u < U; ++u) A(n + u, u + 1) = std::sqrt(alpha);
  return A.colPivHouseholderQr().solve(b);
}

Document doc_of(const std::string& text) { return make_document("doc", text); }

PerturbationSample sample(std::vector<std::uint8_t> mask, double target, double weight = 1.0) {
  PerturbationSample s;
  s.mask = std::move(mask);
  s.target = target;
  s.weight = weight;
  return s;
}

}  // namespace

TEST_CASE("kernel weight decays with the masked fraction") {
  const std::vector<std::uint8_t> none{1, 1, 1, 1}, half{1, 0, 1, 0}, all{0, 0, 0, 0};
  CHECK(kernel_weight(none, 0.25) == 1.0);
  CHECK(kernel_weight(half, 0.25) == doctest::Approx(std::exp(-4.0)));
  CHECK(kernel_weight(all, 0.25) == doctest::Approx(std::exp(-16.0)));
}

TEST_CASE("perturbations start from the unperturbed instance") {
  const auto doc = doc_of("the food was not good good");
  const auto samples = generate_perturbations(doc, 200, 17);
  REQUIRE(samples.size() == 200);
  CHECK(samples[0].tokens == doc.tokens());
  CHECK(samples[0].weight == 1.0);
  CHECK(std::all_of(samples[0].mask.begin(), samples[0].mask.end(), [](auto m) { return m == 1; }));
  const std::size_t U = doc.unique_tokens().size();
  for (std::size_t i = 1; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const auto kept = static_cast<std::size_t>(std::count(s.mask.begin(), s.mask.end(), 1));
    CHECK(kept >= 1);
    CHECK(kept <= U - 1);
    std::vector<std::string> removed;
    for (std::size_t u = 0; u < U; ++u) {
      if (!s.mask[u]) removed.push_back(doc.unique_tokens()[u]);
    }
    CHECK(s.tokens == mask_features(doc.tokens(), removed));
    CHECK(s.weight == kernel_weight(s.mask, 0.25));
  }
}

TEST_CASE("perturbations are deterministic per seed") {
  const auto doc = doc_of("a b c d e f g");
  const auto a = generate_perturbations(doc, 100, 5);
  const auto b = generate_perturbations(doc, 100, 5);
  const auto c = generate_perturbations(doc, 100, 6);
  bool same_c = true;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].mask == b[i].mask);
    same_c = same_c && a[i].mask == c[i].mask;
  }
  CHECK_FALSE(same_c);
}

TEST_CASE("single-unigram documents only mask everything") {
  const auto samples = generate_perturbations(doc_of("wow wow"), 5, 1);
  CHECK(samples[0].tokens == TokenList{"wow", "wow"});
  for (std::size_t i = 1; i < samples.size(); ++i) {
    CHECK(samples[i].mask == std::vector<std::uint8_t>{0});
    CHECK(samples[i].tokens.empty());
  }
}

TEST_CASE("empty documents cannot be perturbed") {
  CHECK_THROWS_AS(generate_perturbations(doc_of(""), 10, 1), EmptyDocument);
  CHECK_THROWS_AS(enumerate_perturbations(doc_of("!!"), 0.25), EmptyDocument);
}

TEST_CASE("kept-size and subset frequencies pass a chi-square test") {
  const auto doc = doc_of("w x y z");
  const auto samples = generate_perturbations(doc, 3001, 20240);
  std::map<std::size_t, double> by_size;
  std::map<std::vector<std::uint8_t>, double> pairs;
  for (std::size_t i = 1; i < samples.size(); ++i) {
    const auto kept = static_cast<std::size_t>(std::count(samples[i].mask.begin(), samples[i].mask.end(), 1));
    by_size[kept] += 1;
    if (kept == 2) pairs[samples[i].mask] += 1;
  }
  REQUIRE(by_size.size() == 3);
  double chi2 = 0.0;
  for (const auto& [size, count] : by_size) chi2 += (count - 1000.0) * (count - 1000.0) / 1000.0;
  CHECK(chi2 < 13.82);  // 2 degrees of freedom, alpha = 0.001

  REQUIRE(pairs.size() == 6);
  const double expected = by_size[2] / 6.0;
  double chi2_pairs = 0.0;
  for (const auto& [mask, count] : pairs) chi2_pairs += (count - expected) * (count - expected) / expected;
  CHECK(chi2_pairs < 20.52);  // 5 degrees of freedom, alpha = 0.001
}

TEST_CASE("enumeration covers every mask once") {
  const auto doc = doc_of("a b c d e");
  const auto samples = enumerate_perturbations(doc, 0.25);
  REQUIRE(samples.size() == 32);
  CHECK(samples[0].tokens == doc.tokens());
  std::set<std::vector<std::uint8_t>> seen;
  for (const auto& s : samples) seen.insert(s.mask);
  CHECK(seen.size() == 32);
}

TEST_CASE("surrogate matches the hand-solved two-feature design") {
  const std::vector<PerturbationSample> samples{sample({1, 1}, 0.9), sample({0, 1}, 0.5),
                                                sample({1, 0}, 0.6), sample({0, 0}, 0.3)};
  const auto fit = fit_surrogate(samples, 1e-3);
  CHECK(fit.intercept == doctest::Approx(11023.0 / 40040.0).epsilon(1e-12));
  CHECK(fit.coefficients[0] == doctest::Approx(50.0 / 143.0).epsilon(1e-12));
  CHECK(fit.coefficients[1] == doctest::Approx(250.0 / 1001.0).epsilon(1e-12));
}

TEST_CASE("constant targets give a flat surrogate") {
  const std::vector<PerturbationSample> samples{sample({1, 1}, 0.4), sample({0, 1}, 0.4),
                                                sample({1, 0}, 0.4)};
  const auto fit = fit_surrogate(samples);
  CHECK(fit.coefficients == std::vector<double>{0.0, 0.0});
  CHECK(fit.intercept == 0.4);
  CHECK(fit.r2 == 1.0);
}

namespace {

void check_planted_recovery(bool kernel_weighted, double alpha) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> coef(-1.0, 1.0);
  for (std::size_t U = 1; U <= 10; ++U) {
    TokenList tokens;
    for (std::size_t u = 0; u < U; ++u) tokens.push_back("t" + std::to_string(u));
    auto samples = enumerate_perturbations(make_document("d", join_tokens(tokens)), 0.25);
    std::vector<double> planted(U);
    for (auto& c : planted) c = coef(rng);
    const double intercept = coef(rng);
    for (auto& s : samples) {
      if (!kernel_weighted) s.weight = 1.0;
      s.target = intercept;
      for (std::size_t u = 0; u < U; ++u) s.target += planted[u] * s.mask[u];
    }
    const auto fit = fit_surrogate(samples, alpha);
    CAPTURE(U);
    CHECK(std::abs(fit.intercept - intercept) < 1e-6);
    for (std::size_t u = 0; u < U; ++u) CHECK(std::abs(fit.coefficients[u] - planted[u]) < 1e-6);
    CHECK(fit.r2 > 1.0 - 1e-9);
  }
}

}  // namespace

TEST_CASE("planted linear targets are recovered on exhaustive designs") {
  SUBCASE("unit weights, ridge 1e-6") { check_planted_recovery(false, 1e-6); }
  SUBCASE("kernel weights, no ridge") { check_planted_recovery(true, 0.0); }
}

TEST_CASE("surrogate agrees with a dense QR solve on random systems") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::size_t> width(1, 6);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t U = width(rng);
    const std::size_t n = U + 1 + std::uniform_int_distribution<std::size_t>(0, 40)(rng);
    std::vector<PerturbationSample> samples;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::uint8_t> mask(U);
      for (auto& m : mask) m = unit(rng) < 0.5;
      samples.push_back(sample(mask, unit(rng), 0.05 + unit(rng)));
    }
    const double alpha = trial % 2 ? 1e-3 : 0.5;
    const auto fit = fit_surrogate(samples, alpha);
    const auto oracle = qr_oracle(samples, alpha);
    CAPTURE(trial);
    CHECK(std::abs(fit.intercept - oracle(0)) < 1e-8);
    for (std::size_t u = 0; u < U; ++u) {
      CHECK(std::abs(fit.coefficients[u] - oracle(static_cast<Eigen::Index>(u) + 1)) < 1e-8);
    }
  }
}

TEST_CASE("surrogate rejects malformed sample sets") {
  CHECK_THROWS_AS(fit_surrogate({}), ValidationError);
  const std::vector<PerturbationSample> ragged{sample({1, 1}, 0.1), sample({1}, 0.2)};
  CHECK_THROWS_AS(fit_surrogate(ragged), ValidationError);
}

TEST_CASE("a single influential token dominates the explanation") {
  LogisticModel m(ClassConfig::sentiment(), {"day", "good"});
  m.set_weight("good", 2, 3.0);
  const ModelHandle h = make_builtin_handle(m);
  const auto e = explain_instance(h, make_document("d", "good day"));
  CHECK(e.predicted_class == 2);
  REQUIRE(e.contributions.size() == 2);
  CHECK(e.contributions[0].first == "good");
  CHECK(e.contributions[0].second == 1.0);
  // only ridge shrinkage leaks onto the inert token
  CHECK(std::abs(e.contribution("day")) < 0.01);
}

TEST_CASE("tokens the model ignores contribute nothing") {
  LogisticModel m(ClassConfig::sentiment(), {"good"});
  m.set_weight("good", 2, 3.0);
  const auto e = explain_instance(make_builtin_handle(m), make_document("d", "plain old day"));
  for (const auto& [f, c] : e.contributions) CHECK(c == 0.0);
}

TEST_CASE("sign pattern of a two-word complaint") {
  LogisticModel m(ClassConfig::sentiment(), {"diarrhea", "gives", "me", "panera"});
  m.set_weight("panera", 2, 2.5);
  m.set_weight("diarrhea", 0, 0.8);
  const auto doc = make_document("fig", "Panera gives me diarrhea.");
  const auto e = explain_instance(make_builtin_handle(m), doc);
  CHECK(e.predicted_class == 2);
  CHECK(e.contribution("panera") == 1.0);
  CHECK(e.contribution("diarrhea") < 0.0);
}

TEST_CASE("explanations are normalised and deterministic") {
  const auto corpus = testing::random_corpus(200, 40, 12, 4, 24);
  const auto model = train_builtin(corpus, ClassConfig::sentiment());
  const ModelHandle h = make_builtin_handle(model, std::make_shared<PredictionCache>());
  ExplainerConfig config;
  config.seed = 3;
  std::size_t sampled = 0;
  for (std::size_t i = 0; i < 40; ++i) {
    const Document& doc = corpus[i];
    const auto e = explain_instance(h, doc, config);
    const auto again = explain_instance(h, doc, config);
    CHECK(e.contributions == again.contributions);
    CHECK(e.surrogate_r2 == again.surrogate_r2);
    CHECK(e.predicted_class == h.predict(doc.tokens()).argmax());
    double top = 0.0;
    for (const auto& [f, c] : e.contributions) {
      CHECK(doc.contains(f));
      top = std::max(top, std::abs(c));
    }
    CHECK((top == 1.0 || top == 0.0));
    CHECK(e.contributions.size() == doc.unique_tokens().size());
    CHECK(std::is_sorted(e.contributions.begin(), e.contributions.end(), [](auto& a, auto& b) {
      return std::abs(a.second) > std::abs(b.second);
    }));
    sampled += e.n_samples == config.n_samples;
  }
  CHECK(sampled > 0);  // both the sampled and the exhaustive path were exercised
}

TEST_CASE("surrogate fidelity on a near-linear builtin model") {
  BenchmarkConfig bc;
  bc.n_train = 600;
  bc.n_test = 150;
  const auto bench = make_benchmark(bc);
  const auto h = make_builtin_handle(train_builtin(bench.train, bench.classes));
  std::size_t checked = 0;
  for (const auto& doc : bench.test.documents()) {
    if (doc.unique_tokens().size() > 20) continue;
    const auto e = explain_instance(h, doc);
    CAPTURE(doc.id());
    CHECK(e.surrogate_r2 >= 0.9);
    ++checked;
  }
  CHECK(checked > 100);
}

TEST_CASE("small documents are explained exhaustively") {
  const auto corpus = testing::random_corpus(60, 20, 2, 3, 5);
  const auto model = train_builtin(corpus, ClassConfig::sentiment());
  const auto doc = make_document("s", "w01 w02 w18");
  const auto e = explain_instance(make_builtin_handle(model), doc);
  CHECK(e.n_samples == 8);
}

TEST_CASE("explanations serialise in contribution order") {
  LogisticModel m(ClassConfig::sentiment(), {"bad", "good"});
  m.set_weight("good", 2, 3.0);
  m.set_weight("bad", 0, 1.0);
  const auto e = explain_instance(make_builtin_handle(m), make_document("x", "bad good"));
  const auto j = to_json(e, ClassConfig::sentiment());
  CHECK(j["id"] == "x");
  CHECK(j["predicted_class"] == "positive");
  CHECK(j["contributions"].begin().key() == "good");
  CHECK(j.contains("r2"));
  CHECK(j["seed"] == 0);
}

TEST_CASE("document seeds differ per document and per base seed") {
  CHECK(document_seed(1, "a") == document_seed(1, "a"));
  CHECK(document_seed(1, "a") != document_seed(1, "b"));
  CHECK(document_seed(1, "a") != document_seed(2, "a"));
}
