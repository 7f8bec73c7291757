#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "oa/model_adapter.hpp"
#include "oa/text_core.hpp"

namespace oa {

struct ExplainerConfig {
  std::size_t n_samples = 1000;
  std::uint64_t seed = 0;
  double kernel_width = 0.25;
  double ridge = 1e-3;
  // When the instance has at most this many unique unigrams and 2^U fits in
  // n_samples, every mask is enumerated instead of sampled.
  std::size_t exhaustive_max_features = 10;
};

// One perturbed copy of an instance. mask[u] == 1 keeps the u-th unique
// unigram (first-occurrence order); 0 removes all of its occurrences.
struct PerturbationSample {
  std::vector<std::uint8_t> mask;
  TokenList tokens;
  double weight = 1.0;
  double target = 0.0;
};

// exp(-D^2 / width^2), D = fraction of unique unigrams masked.
double kernel_weight(std::span<const std::uint8_t> mask, double kernel_width);

// Sample 0 is the unperturbed instance. Every other sample keeps a subset
// whose size is uniform on {1, ..., U-1} and whose members are uniform given
// the size (all-masked when U == 1). Targets are left at 0.
// Throws EmptyDocument for a document without tokens.
std::vector<PerturbationSample> generate_perturbations(const Document& doc, std::size_t n_samples,
                                                       std::uint64_t seed,
                                                       double kernel_width = 0.25);

// All 2^U masks, unperturbed first, then the remaining masks in descending
// binary order. Requires U <= 20.
std::vector<PerturbationSample> enumerate_perturbations(const Document& doc,
                                                        double kernel_width = 0.25);

struct SurrogateFit {
  std::vector<double> coefficients;  // one per mask position
  double intercept = 0.0;
  double r2 = 0.0;
};

// Kernel-weighted ridge regression of target on mask (intercept unpenalised),
// solved through the normal equations.
SurrogateFit fit_surrogate(std::span<const PerturbationSample> samples, double ridge = 1e-3);

struct LocalExplanation {
  std::string document_id;
  std::size_t predicted_class = 0;
  // Normalised to [-1, 1] by the largest |coefficient|; sorted by
  // descending |c|, then by unigram.
  std::vector<std::pair<std::string, double>> contributions;
  double surrogate_r2 = 0.0;
  double intercept = 0.0;
  std::uint64_t seed = 0;
  std::size_t n_samples = 0;

  // 0 for unigrams that are not part of the instance.
  double contribution(std::string_view feature) const;
};

LocalExplanation explain_instance(const ModelHandle& model, const Document& doc,
                                  const ExplainerConfig& config = {});

// Per-document seed derived from the base seed and the document id, so the
// explanation of a document does not depend on processing order.
std::uint64_t document_seed(std::uint64_t base_seed, std::string_view document_id);

nlohmann::ordered_json to_json(const LocalExplanation& explanation, const ClassConfig& classes);

}  // namespace oa
