#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "oa/model_adapter.hpp"
#include "oa/text_core.hpp"

namespace oa {

struct GlobalFeatureContribution {
  std::string feature;
  std::size_t direction = 0;     // class with the largest mean absolute change
  double magnitude = 0.0;        // that mean
  std::size_t n_instances = 0;   // documents containing the feature
  std::size_t rank = 0;          // 1-based; 0 until ranked
  std::vector<double> class_means;
};

enum class FeatureFilter { all, non_neutral };

FeatureFilter parse_feature_filter(std::string_view text);
std::string_view to_string(FeatureFilter filter);

struct RankingOptions {
  FeatureFilter filter = FeatureFilter::non_neutral;
  std::size_t top_n = 2000;
  std::size_t min_support = 3;
  std::size_t workers = 1;
};

// |P(y=k | doc without feature) - P(y=k | doc)| for every class k.
// Throws FeatureNotPresent if the document lacks the feature.
std::vector<double> local_importance(const ModelHandle& model, const Document& doc,
                                     std::string_view feature);

// Mean local importance over the documents containing `feature`, summed in
// document-id order. Throws FeatureNotInCorpus for unseen features.
GlobalFeatureContribution aggregate_feature(const ModelHandle& model, const Corpus& corpus,
                                            std::string_view feature);

// Aggregates every feature with at least `min_support` documents. Output is in
// feature order and unranked.
std::vector<GlobalFeatureContribution> compute_global_contributions(const ModelHandle& model,
                                                                    const Corpus& corpus,
                                                                    std::size_t min_support,
                                                                    std::size_t workers);

// Orders by magnitude (desc), then n_instances (desc), then feature; applies
// the filter, truncates to top_n and assigns ranks 1..n.
std::vector<GlobalFeatureContribution> rank_contributions(
    std::vector<GlobalFeatureContribution> contributions, const ClassConfig& classes,
    FeatureFilter filter, std::size_t top_n);

std::vector<GlobalFeatureContribution> rank_features(const ModelHandle& model, const Corpus& corpus,
                                                     const RankingOptions& options = {});

// CSV: rank,feature,direction,magnitude,n_instances (direction as class name,
// magnitude with 6 decimals).
void write_global_csv(std::ostream& out, const std::vector<GlobalFeatureContribution>& ranking,
                      const ClassConfig& classes);
std::vector<GlobalFeatureContribution> read_global_csv(std::istream& in,
                                                       const ClassConfig& classes);

}  // namespace oa
