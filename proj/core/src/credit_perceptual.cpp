#include "leica/credit_perceptual.hpp"

#include <algorithm>

#include "leica/binary_io.hpp"
#include "leica/errors.hpp"

namespace leica {

namespace {
constexpr std::string_view kPriorMagic = "LEIPR1";
}

void CodePrior::save(const std::filesystem::path& path) const {
  io::Writer w;
  w.magic(kPriorMagic);
  w.u32(size());
  w.f64(alpha);
  for (double p : probs) w.f64(p);
  w.save(path);
}

CodePrior CodePrior::load(const std::filesystem::path& path) {
  io::Reader r = io::Reader::from_file(path);
  r.expect_magic(kPriorMagic);
  CodePrior prior;
  const std::uint32_t k = r.u32();
  if (k == 0) throw FormatError(path.string() + ": prior with K = 0");
  prior.alpha = r.f64();
  if (static_cast<std::uint64_t>(k) * 8 != r.remaining()) {
    throw FormatError(path.string() + ": prior size does not match K");
  }
  prior.probs.resize(k);
  double sum = 0.0;
  for (double& p : prior.probs) {
    p = r.f64();
    if (!(p >= 0.0) || !std::isfinite(p)) throw FormatError(path.string() + ": invalid probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw FormatError(path.string() + ": prior does not sum to 1");
  return prior;
}

CodePrior estimate_prior(std::span<const CodeGrid> grids, std::uint32_t vocab, double alpha) {
  if (grids.empty()) throw InvalidArgument("prior estimation needs at least one grid");
  if (vocab < 1) throw InvalidArgument("prior needs K >= 1");
  if (!(alpha >= 0.0)) throw InvalidArgument("prior alpha must be >= 0");
  const std::uint64_t id = grids.front().codebook_id;
  std::vector<std::uint64_t> counts(vocab, 0);
  std::uint64_t total = 0;
  for (const CodeGrid& g : grids) {
    if (g.codebook_id != id) throw VocabularyError("prior grids come from different codebooks");
    for (Code c : g.codes) {
      if (c >= vocab) throw VocabularyError("code outside prior vocabulary");
      ++counts[c];
      ++total;
    }
  }
  const double denom = static_cast<double>(total) + alpha * vocab;
  if (denom <= 0.0) throw InvalidArgument("prior has no mass: empty grids and alpha = 0");
  CodePrior prior;
  prior.alpha = alpha;
  prior.source_count = total;
  prior.codebook_id = id;
  prior.probs.resize(vocab);
  for (std::uint32_t c = 0; c < vocab; ++c) {
    prior.probs[c] = (static_cast<double>(counts[c]) + alpha) / denom;
  }
  return prior;
}

CreditMap apply_H(const LogLikMap& loglik, const CodePrior& prior, const CodeGrid& grid,
                  const PerceptualConfig& cfg, CreditMode mode) {
  if (!(cfg.lambda < 0.0)) throw InvalidArgument("lambda must be < 0");
  if (loglik.m() != grid.m()) throw ShapeError("log-likelihood map and code grid differ in m");
  if (loglik.codebook_id != grid.codebook_id) {
    throw VocabularyError("log-likelihood map and code grid come from different codebooks");
  }
  if (prior.codebook_id && *prior.codebook_id != grid.codebook_id) {
    throw VocabularyError("prior and code grid come from different codebooks");
  }
  CreditMap out;
  out.values.resize(grid.m());
  for (std::size_t t = 0; t < grid.m(); ++t) {
    const Code c = grid.codes[t];
    if (c >= prior.size()) throw VocabularyError("code outside prior vocabulary");
    const double ll = loglik.values[t];
    const bool significant = std::log(prior.probs[c]) - cfg.lambda > 0.0;
    switch (mode) {
      case CreditMode::full:
        out.values[t] = significant ? std::max(ll - cfg.lambda, 0.0) : 0.0;
        break;
      case CreditMode::no_prior:
        out.values[t] = std::max(ll - cfg.lambda, 0.0);
        break;
      case CreditMode::no_clamp:
        out.values[t] = significant ? ll - cfg.lambda : 0.0;
        break;
      case CreditMode::raw:
        out.values[t] = ll;
        break;
    }
  }
  return out;
}

}  // namespace leica
