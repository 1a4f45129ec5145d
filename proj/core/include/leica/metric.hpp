#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "leica/credit_perceptual.hpp"
#include "leica/credit_semantic.hpp"
#include "leica/likelihood.hpp"
#include "leica/tokenizer.hpp"

namespace leica {

struct LeicaConfig {
  PerceptualConfig perceptual;
  SemanticConfig semantic;
  bool ablate_H = false;
  bool ablate_S = false;
  // Form of H used when ablate_H is set on its own. With both ablations the
  // metric is always the mean log-likelihood (CreditMode::raw, S = 1).
  CreditMode h_ablation = CreditMode::no_prior;

  CreditMode credit_mode() const;
};

/// Everything a score needs; all members are shared read-only.
struct ModelBundle {
  const EstimatorBackend* backend = nullptr;
  const Tokenizer* tokenizer = nullptr;
  const CodePrior* prior = nullptr;
  const MatcherModel* matcher = nullptr;  // unused when ablate_S
};

struct SampleScore {
  std::string id;
  double leica = 0.0;
  double total_loglik = 0.0;
  double mean_loglik = 0.0;
  std::size_t zeroed_codes = 0;  // positions where the full H is zero
  std::optional<double> psi;     // absent when S is ablated
  std::size_t m = 0;
};

/// (1/m) * sum_t credit[t] * semantic[t], summed in position order.
double combine_credit(std::span<const double> credit, std::span<const double> semantic);

SampleScore leica_score(const Caption& caption, const ImageTensor& img, const ModelBundle& models,
                        const LeicaConfig& cfg, std::string id = {});

struct BatchItem {
  std::string id;
  std::string text;
  std::function<ImageTensor()> load;
};

struct SampleError {
  std::string id;
  std::string message;
};

struct Summary {
  std::size_t n = 0;
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

struct BatchResult {
  std::vector<SampleScore> scores;  // successful samples, input order
  std::vector<SampleError> errors;  // failed samples, input order
  Summary summary;
};

Summary summarize(std::span<const double> values);

/// Scores every item; failures are collected and excluded from the summary.
/// Output is identical for any `jobs`.
BatchResult score_batch(std::span<const BatchItem> items, const ModelBundle& models,
                        const LeicaConfig& cfg, int jobs = 1);

}  // namespace leica
