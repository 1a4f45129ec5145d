#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "leica/likelihood.hpp"
#include "leica/tokenizer.hpp"

namespace leica {

/// Smoothed unigram frequency of each code over a reference corpus.
struct CodePrior {
  std::vector<double> probs;
  std::uint64_t source_count = 0;
  double alpha = 1.0;
  // Not persisted by LEIPR1; present only for priors estimated in-process.
  std::optional<std::uint64_t> codebook_id;

  std::uint32_t size() const { return static_cast<std::uint32_t>(probs.size()); }

  void save(const std::filesystem::path& path) const;
  static CodePrior load(const std::filesystem::path& path);
};

/// probs[c] = (count(c) + alpha) / (total + alpha * K)
CodePrior estimate_prior(std::span<const CodeGrid> grids, std::uint32_t vocab, double alpha = 1.0);

struct PerceptualConfig {
  // Natural-log threshold; must be < 0.
  double lambda = std::log(1e-9);
};

/// Which parts of H stay active. `full` is the metric; the others are the
/// ablations: no_prior drops the prior indicator, no_clamp keeps the
/// indicator but replaces max(lnP - lambda, 0) by lnP - lambda, raw returns
/// the bare log-likelihood.
enum class CreditMode { full, no_prior, no_clamp, raw };

/// One credit value per code position.
struct CreditMap {
  std::vector<double> values;
};

/// out[t] = 1(ln prior[c_t] - lambda > 0) * max(loglik[t] - lambda, 0)
///
/// The indicator is strict: a prior of exactly e^lambda contributes nothing.
CreditMap apply_H(const LogLikMap& loglik, const CodePrior& prior, const CodeGrid& grid,
                  const PerceptualConfig& cfg, CreditMode mode = CreditMode::full);

}  // namespace leica
