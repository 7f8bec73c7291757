#include "oa/local_explainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "oa/errors.hpp"

namespace oa {
namespace {

PerturbationSample make_sample(const Document& doc, std::vector<std::uint8_t> mask,
                               double kernel_width) {
  const auto& unique = doc.unique_tokens();
  std::vector<std::string> removed;
  for (std::size_t u = 0; u < unique.size(); ++u) {
    if (!mask[u]) removed.push_back(unique[u]);
  }
  PerturbationSample s;
  s.tokens = mask_features(doc.tokens(), removed);
  s.weight = kernel_weight(mask, kernel_width);
  s.mask = std::move(mask);
  return s;
}

std::vector<std::string> removed_features(const Document& doc,
                                          std::span<const std::uint8_t> mask) {
  std::vector<std::string> removed;
  const auto& unique = doc.unique_tokens();
  for (std::size_t u = 0; u < unique.size(); ++u) {
    if (!mask[u]) removed.push_back(unique[u]);
  }
  return removed;
}

}  // namespace

double kernel_weight(std::span<const std::uint8_t> mask, double kernel_width) {
  if (mask.empty()) return 1.0;
  const auto masked = std::count(mask.begin(), mask.end(), std::uint8_t{0});
  const double d = static_cast<double>(masked) / static_cast<double>(mask.size());
  return std::exp(-(d * d) / (kernel_width * kernel_width));
}

std::uint64_t document_seed(std::uint64_t base_seed, std::string_view document_id) {
  std::vector<std::uint32_t> material{static_cast<std::uint32_t>(base_seed),
                                      static_cast<std::uint32_t>(base_seed >> 32)};
  for (unsigned char c : document_id) material.push_back(c);
  std::seed_seq seq(material.begin(), material.end());
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

std::vector<PerturbationSample> generate_perturbations(const Document& doc, std::size_t n_samples,
                                                       std::uint64_t seed, double kernel_width) {
  if (doc.tokens().empty()) throw EmptyDocument("document " + doc.id() + " has no tokens");
  if (n_samples == 0) throw ValidationError("n_samples must be at least 1");
  const std::size_t U = doc.unique_tokens().size();

  std::vector<PerturbationSample> samples;
  samples.reserve(n_samples);
  samples.push_back(make_sample(doc, std::vector<std::uint8_t>(U, 1), kernel_width));

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(U);
  while (samples.size() < n_samples) {
    std::vector<std::uint8_t> mask(U, 0);
    if (U >= 2) {
      std::uniform_int_distribution<std::size_t> size_dist(1, U - 1);
      const std::size_t keep = size_dist(rng);
      // Partial Fisher-Yates: the first `keep` slots form a uniform subset.
      std::iota(order.begin(), order.end(), 0);
      for (std::size_t i = 0; i < keep; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, U - 1);
        std::swap(order[i], order[pick(rng)]);
        mask[order[i]] = 1;
      }
    }
    samples.push_back(make_sample(doc, std::move(mask), kernel_width));
  }
  return samples;
}

std::vector<PerturbationSample> enumerate_perturbations(const Document& doc,
                                                        double kernel_width) {
  if (doc.tokens().empty()) throw EmptyDocument("document " + doc.id() + " has no tokens");
  const std::size_t U = doc.unique_tokens().size();
  if (U > 20) throw ValidationError("too many unigrams to enumerate masks");
  const std::uint64_t total = std::uint64_t{1} << U;
  std::vector<PerturbationSample> samples;
  samples.reserve(total);
  for (std::uint64_t code = total; code-- > 0;) {
    std::vector<std::uint8_t> mask(U);
    for (std::size_t u = 0; u < U; ++u) mask[u] = (code >> u) & 1U;
    samples.push_back(make_sample(doc, std::move(mask), kernel_width));
  }
  return samples;
}

SurrogateFit fit_surrogate(std::span<const PerturbationSample> samples, double ridge) {
  if (samples.empty()) throw ValidationError("surrogate fit needs at least one sample");
  if (ridge < 0.0) throw ValidationError("ridge must be non-negative");
  const std::size_t U = samples.front().mask.size();
  for (const auto& s : samples) {
    if (s.mask.size() != U) throw ValidationError("perturbation masks differ in length");
    if (!(s.weight > 0.0)) throw ValidationError("perturbation weights must be positive");
  }

  SurrogateFit fit;
  const bool constant = std::all_of(samples.begin(), samples.end(), [&](const auto& s) {
    return s.target == samples.front().target;
  });
  if (constant) {
    fit.coefficients.assign(U, 0.0);
    fit.intercept = samples.front().target;
    fit.r2 = 1.0;
    return fit;
  }

  // Normal equations over [1 | mask]: (A^T W A + P) theta = A^T W y, with
  // P = diag(0, ridge, ..., ridge).
  const Eigen::Index dim = static_cast<Eigen::Index>(U) + 1;
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd row(dim);
  for (const auto& s : samples) {
    row(0) = 1.0;
    for (std::size_t u = 0; u < U; ++u) row(static_cast<Eigen::Index>(u) + 1) = s.mask[u];
    gram.selfadjointView<Eigen::Lower>().rankUpdate(row, s.weight);
    rhs += (s.weight * s.target) * row;
  }
  gram.triangularView<Eigen::StrictlyUpper>() = gram.transpose();
  for (Eigen::Index i = 1; i < dim; ++i) gram(i, i) += ridge;

  const Eigen::LLT<Eigen::MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("surrogate normal equations are not positive definite");
  }
  const Eigen::VectorXd theta = llt.solve(rhs);
  if (!theta.allFinite()) throw NumericalError("surrogate solution is not finite");

  fit.intercept = theta(0);
  fit.coefficients.resize(U);
  for (std::size_t u = 0; u < U; ++u) fit.coefficients[u] = theta(static_cast<Eigen::Index>(u) + 1);

  double wsum = 0.0;
  double wy = 0.0;
  for (const auto& s : samples) {
    wsum += s.weight;
    wy += s.weight * s.target;
  }
  const double mean = wy / wsum;
  double ss_res = 0.0;
  double ss_tot = 0.0;
  for (const auto& s : samples) {
    double pred = fit.intercept;
    for (std::size_t u = 0; u < U; ++u) pred += s.mask[u] * fit.coefficients[u];
    ss_res += s.weight * (s.target - pred) * (s.target - pred);
    ss_tot += s.weight * (s.target - mean) * (s.target - mean);
  }
  fit.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
  return fit;
}

double LocalExplanation::contribution(std::string_view feature) const {
  for (const auto& [f, c] : contributions) {
    if (f == feature) return c;
  }
  return 0.0;
}

LocalExplanation explain_instance(const ModelHandle& model, const Document& doc,
                                  const ExplainerConfig& config) {
  if (doc.tokens().empty()) throw EmptyDocument("document " + doc.id() + " has no tokens");
  const std::size_t U = doc.unique_tokens().size();
  const std::uint64_t seed = document_seed(config.seed, doc.id());

  const bool exhaustive = U <= config.exhaustive_max_features &&
                          (std::uint64_t{1} << U) <= config.n_samples;
  auto samples = exhaustive ? enumerate_perturbations(doc, config.kernel_width)
                            : generate_perturbations(doc, config.n_samples, seed,
                                                     config.kernel_width);

  std::vector<std::vector<std::string>> masked_sets;
  masked_sets.reserve(samples.size());
  for (const auto& s : samples) masked_sets.push_back(removed_features(doc, s.mask));
  const auto dists = model.predict_masked(doc.tokens(), masked_sets);

  // samples[0] is always the unperturbed instance
  const std::size_t predicted = dists.front().argmax();
  for (std::size_t i = 0; i < samples.size(); ++i) samples[i].target = dists[i].probs[predicted];

  const SurrogateFit fit = fit_surrogate(samples, config.ridge);

  LocalExplanation out;
  out.document_id = doc.id();
  out.predicted_class = predicted;
  out.surrogate_r2 = fit.r2;
  out.intercept = fit.intercept;
  out.seed = config.seed;
  out.n_samples = samples.size();

  double scale = 0.0;
  for (double c : fit.coefficients) scale = std::max(scale, std::abs(c));
  // Coefficients at round-off level carry no signal.
  constexpr double kNegligible = 1e-12;
  const auto& unique = doc.unique_tokens();
  for (std::size_t u = 0; u < U; ++u) {
    double c = scale > kNegligible ? fit.coefficients[u] / scale : 0.0;
    out.contributions.emplace_back(unique[u], std::clamp(c, -1.0, 1.0));
  }
  std::sort(out.contributions.begin(), out.contributions.end(), [](const auto& a, const auto& b) {
    const double aa = std::abs(a.second);
    const double bb = std::abs(b.second);
    if (aa != bb) return aa > bb;
    return a.first < b.first;
  });
  return out;
}

nlohmann::ordered_json to_json(const LocalExplanation& explanation, const ClassConfig& classes) {
  nlohmann::ordered_json j;
  j["id"] = explanation.document_id;
  j["predicted_class"] = classes.name(explanation.predicted_class);
  // ordered_json keeps the descending-|c| order on output
  nlohmann::ordered_json contributions = nlohmann::ordered_json::object();
  for (const auto& [feature, c] : explanation.contributions) contributions[feature] = c;
  j["contributions"] = std::move(contributions);
  j["r2"] = explanation.surrogate_r2;
  j["seed"] = explanation.seed;
  return j;
}

}  // namespace oa
