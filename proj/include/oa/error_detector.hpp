#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "oa/annotation.hpp"
#include "oa/local_explainer.hpp"
#include "oa/model_adapter.hpp"
#include "oa/text_core.hpp"

namespace oa {

inline constexpr double kDegenerateDenominator = 1e-9;

struct ErroneousScore {
  std::string document_id;
  double e = 0.0;
  double numerator = 0.0;    // signed contributions of erroneous features present
  double denominator = 0.0;  // strictly positive contributions of all features
  std::size_t m = 0;         // erroneous features present in the instance
  std::size_t n = 0;         // strictly positive contributors
  bool flagged = false;
  std::size_t predicted_class = 0;
};

// e = numerator / denominator. The sums are grouped so that numerator <=
// denominator holds in floating point:
//   numerator   = P_err + N_err
//   denominator = P_err + P_other
// where P_err / N_err are the positive / non-positive contributions of
// erroneous features and P_other the positive contributions of the rest, each
// accumulated in unigram order. A denominator below 1e-9 gives e = 1 when the
// numerator is positive and 0 otherwise. flagged = e > tau.
ErroneousScore erroneous_score(const LocalExplanation& explanation,
                               const ErroneousFeatureSet& erroneous, double tau = 0.0);

struct DetectionReport {
  double tau = 0.0;
  std::vector<ErroneousScore> scored;  // e descending, then document id
  std::vector<std::string> skipped;    // documents without any erroneous feature, in corpus order
  std::vector<std::string> warnings;

  std::size_t flagged_count() const;
  std::vector<ErroneousScore> flagged() const;
};

// Scores every document containing at least one erroneous feature. An empty
// feature set produces a report with every document skipped and a warning.
DetectionReport detect(const Corpus& corpus, const ModelHandle& model,
                       const ErroneousFeatureSet& erroneous, double tau,
                       const ExplainerConfig& explainer = {}, std::size_t workers = 1,
                       std::vector<LocalExplanation>* explanations = nullptr);

// Same scores judged against a different threshold.
DetectionReport rethreshold(const DetectionReport& report, double tau);

// doc_id,e,numerator,denominator,m,n,flagged,predicted_class
void write_report_csv(std::ostream& out, const DetectionReport& report, const ClassConfig& classes);
DetectionReport read_report_csv(std::istream& in, const ClassConfig& classes, double tau);
// {"tau", "scored", "flagged", "skipped", "warnings"}
void write_report_summary(std::ostream& out, const DetectionReport& report);

}  // namespace oa
