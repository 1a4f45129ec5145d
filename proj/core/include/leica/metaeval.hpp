#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "leica/perturb.hpp"

namespace leica {

/// Metric scores for the preferred (matched / clean) and the dispreferred
/// (mismatched / noised) member of one judgment.
struct JudgmentPair {
  std::string id;
  double score_pos = 0.0;
  double score_neg = 0.0;
};

// Fraction of pairs with score_pos > score_neg; ties count as wrong.
double accuracy(std::span<const JudgmentPair> pairs);

// Kendall tau-a over triplets: (concordant - discordant) / n, where a
// triplet is concordant when score_pos > score_neg. Empty when every
// triplet is tied.
std::optional<double> triplet_tau(std::span<const JudgmentPair> pairs);

// Tau-a, (C - D) / C(n,2), computed with Knight's merge-sort algorithm.
double kendall_tau(std::span<const double> a, std::span<const double> b);

// Throws DegenerateError when either input has zero variance.
double pearson(std::span<const double> a, std::span<const double> b);
double spearman(std::span<const double> a, std::span<const double> b);

// 1-based ranks; tied values share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> v);

struct MetaEvalReport {
  double accuracy = 0.0;
  std::optional<double> kendall_tau;
  std::optional<double> pearson;   // scores vs oracle labels (pos = 1, neg = 0)
  std::optional<double> spearman;
  std::size_t n = 0;
};

MetaEvalReport evaluate_pairs(std::span<const JudgmentPair> pairs);

struct StabilityCell {
  std::size_t size = 0;
  double mean = 0.0;  // mean over repeats of the subset score
  double std = 0.0;   // population std over repeats
  std::vector<double> values;
};

using SubsetMetric = std::function<double(std::span<const std::size_t> indices)>;

/// For each size, `repeats` subsets are drawn without replacement from
/// [0, population) with seeds derived from (seed, size index, repeat) and
/// scored by `metric`.
std::vector<StabilityCell> stability_sweep(std::size_t population, const SubsetMetric& metric,
                                           std::span<const std::size_t> sizes, int repeats,
                                           std::uint64_t seed);

using ImageScorer = std::function<double(const Caption&, const ImageTensor&)>;

struct LadderRung {
  double degree = 0.0;
  double mean_score = 0.0;  // mean over repeats of the per-repeat mean score
  double std_score = 0.0;
  std::optional<double> tau_mean;
  std::optional<double> tau_std;
  double accuracy_mean = 0.0;
  std::vector<double> repeat_scores;
  std::vector<std::optional<double>> repeat_taus;
};

/// Scores every clean image once, then for each degree and repeat distorts
/// all images (seed derived from (seed, rung, repeat, sample)), scores them
/// and forms clean-vs-noised triplets.
std::vector<LadderRung> noise_ladder_experiment(std::span<const LabeledImage> clean, DistortionKind kind,
                                                std::span<const double> ladder, const ImageScorer& scorer,
                                                int repeats = 5, std::uint64_t seed = 0, int jobs = 1);

struct ReplacementRung {
  std::size_t k = 0;
  double mean_score = 0.0;
  double std_score = 0.0;
  double accuracy_mean = 0.0;  // clean caption scored above the altered one
  double accuracy_std = 0.0;
  std::size_t excluded = 0;  // altered samples, summed over repeats, that scored as degenerate
};

/// Same protocol for keyword replacement: the image stays fixed and k
/// keywords of its caption are replaced. Altered captions the scorer rejects
/// with DegenerateError are left out of their repeat and counted.
std::vector<ReplacementRung> replacement_ladder_experiment(std::span<const LabeledImage> clean,
                                                          const Lexicon& keywords,
                                                          std::span<const std::string> vocabulary,
                                                          std::span<const std::size_t> ks,
                                                          const ImageScorer& scorer, int repeats = 5,
                                                          std::uint64_t seed = 0, int jobs = 1);

}  // namespace leica
