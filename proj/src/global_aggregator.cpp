#include "oa/global_aggregator.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include "oa/csv.hpp"
#include "oa/errors.hpp"
#include "oa/parallel.hpp"

namespace oa {
namespace {

std::vector<double> abs_delta(const Distribution& masked, const Distribution& base) {
  std::vector<double> d(base.probs.size());
  for (std::size_t k = 0; k < d.size(); ++k) d[k] = std::abs(masked.probs[k] - base.probs[k]);
  return d;
}

GlobalFeatureContribution finish(std::string feature, std::vector<double> sums, std::size_t n) {
  GlobalFeatureContribution g;
  g.feature = std::move(feature);
  g.n_instances = n;
  for (double& s : sums) s /= static_cast<double>(n);
  // first maximum wins, i.e. the lowest class index on ties
  g.direction = static_cast<std::size_t>(std::max_element(sums.begin(), sums.end()) - sums.begin());
  g.magnitude = sums[g.direction];
  g.class_means = std::move(sums);
  return g;
}

}  // namespace

FeatureFilter parse_feature_filter(std::string_view text) {
  if (text == "all") return FeatureFilter::all;
  if (text == "non-neutral" || text == "non_neutral") return FeatureFilter::non_neutral;
  throw ConfigError("unknown feature filter '" + std::string(text) + "'");
}

std::string_view to_string(FeatureFilter filter) {
  return filter == FeatureFilter::all ? "all" : "non-neutral";
}

std::vector<double> local_importance(const ModelHandle& model, const Document& doc,
                                     std::string_view feature) {
  if (!doc.contains(feature)) {
    throw FeatureNotPresent("'" + std::string(feature) + "' does not occur in " + doc.id());
  }
  const std::vector<std::vector<std::string>> sets{{}, {std::string(feature)}};
  const auto dists = model.predict_masked(doc.tokens(), sets);
  return abs_delta(dists[1], dists[0]);
}

GlobalFeatureContribution aggregate_feature(const ModelHandle& model, const Corpus& corpus,
                                            std::string_view feature) {
  const auto& docs = corpus.containing(feature);
  if (docs.empty()) {
    throw FeatureNotInCorpus("'" + std::string(feature) + "' does not occur in the corpus");
  }
  std::vector<double> sums(model.class_config().size(), 0.0);
  for (std::size_t pos : docs) {
    const auto delta = local_importance(model, corpus[pos], feature);
    for (std::size_t k = 0; k < sums.size(); ++k) sums[k] += delta[k];
  }
  return finish(std::string(feature), std::move(sums), docs.size());
}

std::vector<GlobalFeatureContribution> compute_global_contributions(const ModelHandle& model,
                                                                    const Corpus& corpus,
                                                                    std::size_t min_support,
                                                                    std::size_t workers) {
  const std::size_t K = model.class_config().size();
  const auto eligible = [&](const std::string& f) {
    return corpus.containing(f).size() >= std::max<std::size_t>(min_support, 1);
  };

  // Per document: deltas for each of its eligible unique unigrams, in the
  // document's sorted-unigram order.
  struct DocDeltas {
    std::vector<std::string> features;
    std::vector<std::vector<double>> deltas;
  };
  std::vector<DocDeltas> partial(corpus.size());
  parallel_for(corpus.size(), workers, [&](std::size_t i) {
    const Document& doc = corpus[i];
    std::vector<std::string> features;
    for (const auto& f : doc.unique_tokens()) {
      if (eligible(f)) features.push_back(f);
    }
    if (features.empty()) return;
    std::sort(features.begin(), features.end());
    std::vector<std::vector<std::string>> sets;
    sets.reserve(features.size() + 1);
    sets.emplace_back();
    for (const auto& f : features) sets.push_back({f});
    const auto dists = model.predict_masked(doc.tokens(), sets);
    DocDeltas out;
    out.deltas.reserve(features.size());
    for (std::size_t j = 0; j < features.size(); ++j) {
      out.deltas.push_back(abs_delta(dists[j + 1], dists[0]));
    }
    out.features = std::move(features);
    partial[i] = std::move(out);
  });

  // Reduce in a fixed order (feature, then document id) so the floating-point
  // sums do not depend on scheduling.
  std::vector<GlobalFeatureContribution> out;
  for (const auto& [feature, ids] : corpus.feature_index()) {
    if (!eligible(feature)) continue;
    std::vector<double> sums(K, 0.0);
    const auto& positions = corpus.containing(feature);
    for (std::size_t pos : positions) {
      const auto& p = partial[pos];
      const auto it = std::lower_bound(p.features.begin(), p.features.end(), feature);
      const auto& delta = p.deltas[static_cast<std::size_t>(it - p.features.begin())];
      for (std::size_t k = 0; k < K; ++k) sums[k] += delta[k];
    }
    out.push_back(finish(feature, std::move(sums), positions.size()));
  }
  return out;
}

std::vector<GlobalFeatureContribution> rank_contributions(
    std::vector<GlobalFeatureContribution> contributions, const ClassConfig& classes,
    FeatureFilter filter, std::size_t top_n) {
  if (filter == FeatureFilter::non_neutral) {
    std::erase_if(contributions, [&](const GlobalFeatureContribution& g) {
      return g.direction == classes.neutral_class();
    });
  }
  std::sort(contributions.begin(), contributions.end(),
            [](const GlobalFeatureContribution& a, const GlobalFeatureContribution& b) {
              if (a.magnitude != b.magnitude) return a.magnitude > b.magnitude;
              if (a.n_instances != b.n_instances) return a.n_instances > b.n_instances;
              return a.feature < b.feature;
            });
  if (contributions.size() > top_n) contributions.resize(top_n);
  for (std::size_t i = 0; i < contributions.size(); ++i) contributions[i].rank = i + 1;
  return contributions;
}

std::vector<GlobalFeatureContribution> rank_features(const ModelHandle& model, const Corpus& corpus,
                                                     const RankingOptions& options) {
  if (corpus.empty()) throw ValidationError("cannot rank features of an empty corpus");
  if (options.top_n == 0) return {};
  auto all = compute_global_contributions(model, corpus, options.min_support, options.workers);
  return rank_contributions(std::move(all), model.class_config(), options.filter, options.top_n);
}

void write_global_csv(std::ostream& out, const std::vector<GlobalFeatureContribution>& ranking,
                      const ClassConfig& classes) {
  csv::write_row(out, {"rank", "feature", "direction", "magnitude", "n_instances"});
  for (const auto& g : ranking) {
    csv::write_row(out, {std::to_string(g.rank), g.feature, classes.name(g.direction),
                         csv::fixed(g.magnitude, 6), std::to_string(g.n_instances)});
  }
}

std::vector<GlobalFeatureContribution> read_global_csv(std::istream& in,
                                                       const ClassConfig& classes) {
  const auto table = csv::read(in);
  const auto c_rank = table.column("rank");
  const auto c_feature = table.column("feature");
  const auto c_direction = table.column("direction");
  const auto c_magnitude = table.column("magnitude");
  const auto c_n = table.column("n_instances");
  std::vector<GlobalFeatureContribution> out;
  for (const auto& row : table.rows) {
    GlobalFeatureContribution g;
    try {
      g.rank = std::stoul(row[c_rank]);
      g.magnitude = std::stod(row[c_magnitude]);
      g.n_instances = std::stoul(row[c_n]);
    } catch (const std::exception&) {
      throw ValidationError("malformed numeric field in global contribution table");
    }
    g.feature = row[c_feature];
    g.direction = classes.index_of(row[c_direction]);
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace oa
