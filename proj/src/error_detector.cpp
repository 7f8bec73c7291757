#include "oa/error_detector.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "oa/csv.hpp"
#include "oa/errors.hpp"
#include "oa/parallel.hpp"

namespace oa {
namespace {

void sort_scores(std::vector<ErroneousScore>& scores) {
  std::sort(scores.begin(), scores.end(), [](const ErroneousScore& a, const ErroneousScore& b) {
    if (a.e != b.e) return a.e > b.e;
    return a.document_id < b.document_id;
  });
}

}  // namespace

ErroneousScore erroneous_score(const LocalExplanation& explanation,
                               const ErroneousFeatureSet& erroneous, double tau) {
  std::vector<std::pair<std::string_view, double>> by_feature;
  by_feature.reserve(explanation.contributions.size());
  for (const auto& [f, c] : explanation.contributions) by_feature.emplace_back(f, c);
  std::sort(by_feature.begin(), by_feature.end());

  double err_pos = 0.0;
  double err_rest = 0.0;
  double other_pos = 0.0;
  ErroneousScore s;
  for (const auto& [feature, c] : by_feature) {
    const bool is_err = erroneous.contains(feature);
    if (is_err) ++s.m;
    if (c > 0.0) {
      ++s.n;
      (is_err ? err_pos : other_pos) += c;
    } else if (is_err) {
      err_rest += c;
    }
  }
  s.document_id = explanation.document_id;
  s.predicted_class = explanation.predicted_class;
  s.numerator = err_pos + err_rest;
  s.denominator = err_pos + other_pos;
  if (s.denominator < kDegenerateDenominator) {
    s.e = s.numerator > 0.0 ? 1.0 : 0.0;
  } else {
    s.e = s.numerator / s.denominator;
  }
  s.flagged = s.e > tau;
  return s;
}

std::size_t DetectionReport::flagged_count() const {
  return static_cast<std::size_t>(
      std::count_if(scored.begin(), scored.end(), [](const auto& s) { return s.flagged; }));
}

std::vector<ErroneousScore> DetectionReport::flagged() const {
  std::vector<ErroneousScore> out;
  std::copy_if(scored.begin(), scored.end(), std::back_inserter(out),
               [](const auto& s) { return s.flagged; });
  return out;
}

DetectionReport detect(const Corpus& corpus, const ModelHandle& model,
                       const ErroneousFeatureSet& erroneous, double tau,
                       const ExplainerConfig& explainer, std::size_t workers,
                       std::vector<LocalExplanation>* explanations) {
  if (!std::isfinite(tau)) throw ValidationError("tau must be finite");
  DetectionReport report;
  report.tau = tau;

  std::vector<std::size_t> targets;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& doc = corpus[i];
    const bool hit = std::any_of(doc.unique_tokens().begin(), doc.unique_tokens().end(),
                                 [&](const std::string& t) { return erroneous.contains(t); });
    if (hit) {
      targets.push_back(i);
    } else {
      report.skipped.push_back(doc.id());
    }
  }
  if (erroneous.empty()) {
    report.warnings.push_back("erroneous feature set is empty; every document was skipped");
    spdlog::warn(report.warnings.back());
  } else if (targets.empty()) {
    report.warnings.push_back("no document contains an erroneous feature");
    spdlog::warn(report.warnings.back());
  }

  std::vector<LocalExplanation> local(targets.size());
  parallel_for(targets.size(), workers, [&](std::size_t t) {
    local[t] = explain_instance(model, corpus[targets[t]], explainer);
  });
  report.scored.reserve(targets.size());
  for (const auto& ex : local) report.scored.push_back(erroneous_score(ex, erroneous, tau));
  sort_scores(report.scored);
  if (explanations) *explanations = std::move(local);
  return report;
}

DetectionReport rethreshold(const DetectionReport& report, double tau) {
  DetectionReport out = report;
  out.tau = tau;
  for (auto& s : out.scored) s.flagged = s.e > tau;
  return out;
}

void write_report_csv(std::ostream& out, const DetectionReport& report,
                      const ClassConfig& classes) {
  csv::write_row(out, {"doc_id", "e", "numerator", "denominator", "m", "n", "flagged",
                       "predicted_class"});
  for (const auto& s : report.scored) {
    csv::write_row(out, {s.document_id, fmt::format("{:.9f}", s.e), fmt::format("{:.9f}", s.numerator),
                         fmt::format("{:.9f}", s.denominator), std::to_string(s.m),
                         std::to_string(s.n), s.flagged ? "true" : "false",
                         classes.name(s.predicted_class)});
  }
}

DetectionReport read_report_csv(std::istream& in, const ClassConfig& classes, double tau) {
  const auto table = csv::read(in);
  const auto c_id = table.column("doc_id");
  const auto c_e = table.column("e");
  const auto c_num = table.column("numerator");
  const auto c_den = table.column("denominator");
  const auto c_m = table.column("m");
  const auto c_n = table.column("n");
  const auto c_pred = table.column("predicted_class");
  DetectionReport report;
  report.tau = tau;
  for (const auto& row : table.rows) {
    ErroneousScore s;
    s.document_id = row[c_id];
    try {
      s.e = std::stod(row[c_e]);
      s.numerator = std::stod(row[c_num]);
      s.denominator = std::stod(row[c_den]);
      s.m = std::stoul(row[c_m]);
      s.n = std::stoul(row[c_n]);
    } catch (const std::exception&) {
      throw ValidationError("malformed numeric field in detection report for " + s.document_id);
    }
    s.predicted_class = classes.index_of(row[c_pred]);
    s.flagged = s.e > tau;
    report.scored.push_back(std::move(s));
  }
  sort_scores(report.scored);
  return report;
}

void write_report_summary(std::ostream& out, const DetectionReport& report) {
  nlohmann::ordered_json j;
  j["tau"] = report.tau;
  j["scored"] = report.scored.size();
  j["flagged"] = report.flagged_count();
  j["skipped"] = report.skipped.size();
  j["warnings"] = report.warnings;
  out << j.dump(2) << '\n';
}

}  // namespace oa
