#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "oa/error_detector.hpp"
#include "oa/model_adapter.hpp"
#include "oa/text_core.hpp"

namespace oa {

enum class RankingMethod { erroneous_score, least_confidence };
std::string_view to_string(RankingMethod method);

struct RankedInstance {
  std::string document_id;
  double score = 0.0;
  std::size_t predicted_class = 0;
  std::optional<std::size_t> gold_label;

  // Defined only where a gold label exists.
  std::optional<bool> is_error() const {
    if (!gold_label) return std::nullopt;
    return *gold_label != predicted_class;
  }
};

struct EvaluationRun {
  RankingMethod method = RankingMethod::least_confidence;
  std::vector<RankedInstance> ranked;  // score descending, then document id
};

// 1 - max_k P(y=k | d) for every document, most uncertain first.
EvaluationRun least_confidence_rank(const ModelHandle& model, const Corpus& corpus);

// Scored instances of a detection report ranked by e, gold labels from `corpus`.
EvaluationRun erroneous_score_run(const DetectionReport& report, const Corpus& corpus);

// Fraction of mispredictions among the top K. Throws RankOutOfRange when K
// exceeds the ranking and ValidationError when a top-K instance lacks gold.
std::vector<std::pair<std::size_t, double>> precision_at_k(const EvaluationRun& run,
                                                           std::span<const std::size_t> ks);

struct SweepRow {
  double tau = 0.0;
  std::size_t flagged_count = 0;
  std::size_t scored_count = 0;
  std::optional<double> precision;  // undefined when nothing is flagged

  double flagged_fraction() const {
    return scored_count ? static_cast<double>(flagged_count) / static_cast<double>(scored_count)
                        : 0.0;
  }
};

std::vector<SweepRow> tau_sweep(const std::function<DetectionReport(double)>& report_fn,
                                const Corpus& gold, std::span<const double> taus);
// Re-thresholds an existing report; the scores do not depend on tau.
std::vector<SweepRow> tau_sweep(const DetectionReport& report, const Corpus& gold,
                                std::span<const double> taus);

struct HistogramBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
};

struct ConfidenceHistogram {
  std::vector<HistogramBin> bins;  // equal width over [1/K, 1]
  std::size_t total = 0;
  double fraction_above_0_7 = 0.0;  // share with max probability > 0.7
};

// Histogram of max_k P(y=k) over flagged true errors. Throws EmptyFlaggedSet
// when there is nothing to histogram.
ConfidenceHistogram confidence_histogram(std::span<const TokenList> flagged_errors,
                                         const ModelHandle& model, std::size_t bins);
// Same, from precomputed max probabilities.
ConfidenceHistogram confidence_histogram(std::span<const double> max_probs,
                                         std::size_t num_classes, std::size_t bins);

// tau,flagged_count,scored_count,precision
void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows);
// k,method,precision
void write_precision_csv(std::ostream& out,
                         std::span<const std::pair<std::size_t, double>> values,
                         RankingMethod method, bool header = true);
// bin_lo,bin_hi,count
void write_histogram_csv(std::ostream& out, const ConfidenceHistogram& histogram);

}  // namespace oa
