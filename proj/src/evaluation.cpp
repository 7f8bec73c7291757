#include "oa/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <fmt/format.h>

#include "oa/csv.hpp"
#include "oa/errors.hpp"

namespace oa {
namespace {

void sort_run(std::vector<RankedInstance>& ranked) {
  std::sort(ranked.begin(), ranked.end(), [](const RankedInstance& a, const RankedInstance& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.document_id < b.document_id;
  });
}

std::optional<std::size_t> gold_of(const Corpus& corpus, const std::string& id) {
  const auto pos = corpus.find(id);
  if (!pos) throw ValidationError("document " + id + " is not in the evaluation corpus");
  return corpus[*pos].gold_label();
}

}  // namespace

std::string_view to_string(RankingMethod method) {
  return method == RankingMethod::erroneous_score ? "erroneous_score" : "least_confidence";
}

EvaluationRun least_confidence_rank(const ModelHandle& model, const Corpus& corpus) {
  if (corpus.empty()) throw ValidationError("least-confidence ranking needs a non-empty corpus");
  std::vector<TokenList> texts;
  texts.reserve(corpus.size());
  for (const auto& doc : corpus.documents()) texts.push_back(doc.tokens());
  const auto dists = model.predict_proba(texts);

  EvaluationRun run;
  run.method = RankingMethod::least_confidence;
  run.ranked.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    RankedInstance r;
    r.document_id = corpus[i].id();
    r.score = 1.0 - dists[i].max();
    r.predicted_class = dists[i].argmax();
    r.gold_label = corpus[i].gold_label();
    run.ranked.push_back(std::move(r));
  }
  sort_run(run.ranked);
  return run;
}

EvaluationRun erroneous_score_run(const DetectionReport& report, const Corpus& corpus) {
  EvaluationRun run;
  run.method = RankingMethod::erroneous_score;
  for (const auto& s : report.scored) {
    run.ranked.push_back(
        RankedInstance{s.document_id, s.e, s.predicted_class, gold_of(corpus, s.document_id)});
  }
  sort_run(run.ranked);
  return run;
}

std::vector<std::pair<std::size_t, double>> precision_at_k(const EvaluationRun& run,
                                                           std::span<const std::size_t> ks) {
  std::vector<std::pair<std::size_t, double>> out;
  for (std::size_t k : ks) {
    if (k == 0) throw ValidationError("precision@K needs K >= 1");
    if (k > run.ranked.size()) {
      throw RankOutOfRange(fmt::format("K={} exceeds the {} ranked instances", k, run.ranked.size()));
    }
    std::size_t errors = 0;
    for (std::size_t i = 0; i < k; ++i) {
      const auto err = run.ranked[i].is_error();
      if (!err) {
        throw ValidationError("instance " + run.ranked[i].document_id + " has no gold label");
      }
      errors += *err;
    }
    out.emplace_back(k, static_cast<double>(errors) / static_cast<double>(k));
  }
  return out;
}

std::vector<SweepRow> tau_sweep(const std::function<DetectionReport(double)>& report_fn,
                                const Corpus& gold, std::span<const double> taus) {
  if (taus.empty()) throw ValidationError("tau sweep needs at least one threshold");
  std::vector<SweepRow> rows;
  for (double tau : taus) {
    const DetectionReport report = report_fn(tau);
    SweepRow row;
    row.tau = tau;
    row.scored_count = report.scored.size();
    std::size_t wrong = 0;
    for (const auto& s : report.scored) {
      if (!s.flagged) continue;
      ++row.flagged_count;
      const auto label = gold_of(gold, s.document_id);
      if (!label) throw ValidationError("document " + s.document_id + " has no gold label");
      wrong += *label != s.predicted_class;
    }
    if (row.flagged_count) {
      row.precision = static_cast<double>(wrong) / static_cast<double>(row.flagged_count);
    }
    rows.push_back(row);
  }
  return rows;
}

std::vector<SweepRow> tau_sweep(const DetectionReport& report, const Corpus& gold,
                                std::span<const double> taus) {
  return tau_sweep([&](double tau) { return rethreshold(report, tau); }, gold, taus);
}

ConfidenceHistogram confidence_histogram(std::span<const double> max_probs,
                                         std::size_t num_classes, std::size_t bins) {
  if (max_probs.empty()) throw EmptyFlaggedSet("no flagged errors to histogram");
  if (bins == 0) throw ValidationError("histogram needs at least one bin");
  if (num_classes < 2) throw ValidationError("histogram needs at least two classes");
  ConfidenceHistogram h;
  const double lo = 1.0 / static_cast<double>(num_classes);
  const double width = (1.0 - lo) / static_cast<double>(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    h.bins.push_back({lo + width * static_cast<double>(b),
                      b + 1 == bins ? 1.0 : lo + width * static_cast<double>(b + 1), 0});
  }
  std::size_t above = 0;
  for (double p : max_probs) {
    const double pos = std::floor((p - lo) / width);
    const auto idx = static_cast<std::size_t>(
        std::clamp(pos, 0.0, static_cast<double>(bins - 1)));
    ++h.bins[idx].count;
    above += p > 0.7;
  }
  h.total = max_probs.size();
  h.fraction_above_0_7 = static_cast<double>(above) / static_cast<double>(h.total);
  return h;
}

ConfidenceHistogram confidence_histogram(std::span<const TokenList> flagged_errors,
                                         const ModelHandle& model, std::size_t bins) {
  if (flagged_errors.empty()) throw EmptyFlaggedSet("no flagged errors to histogram");
  const auto dists = model.predict_proba(flagged_errors);
  std::vector<double> max_probs;
  max_probs.reserve(dists.size());
  for (const auto& d : dists) max_probs.push_back(d.max());
  return confidence_histogram(max_probs, model.class_config().size(), bins);
}

void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows) {
  csv::write_row(out, {"tau", "flagged_count", "scored_count", "precision"});
  for (const auto& r : rows) {
    csv::write_row(out, {csv::fixed(r.tau, 6), std::to_string(r.flagged_count),
                         std::to_string(r.scored_count),
                         r.precision ? csv::fixed(*r.precision, 6) : "null"});
  }
}

void write_precision_csv(std::ostream& out,
                         std::span<const std::pair<std::size_t, double>> values,
                         RankingMethod method, bool header) {
  if (header) csv::write_row(out, {"k", "method", "precision"});
  for (const auto& [k, p] : values) {
    csv::write_row(out, {std::to_string(k), std::string(to_string(method)), csv::fixed(p, 6)});
  }
}

void write_histogram_csv(std::ostream& out, const ConfidenceHistogram& histogram) {
  csv::write_row(out, {"bin_lo", "bin_hi", "count"});
  for (const auto& b : histogram.bins) {
    csv::write_row(out, {csv::fixed(b.lo, 6), csv::fixed(b.hi, 6), std::to_string(b.count)});
  }
}

}  // namespace oa
