#include "leica/metaeval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "leica/errors.hpp"
#include "leica/parallel.hpp"
#include "leica/rng.hpp"

namespace leica {

namespace {

void check_paired(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("correlation inputs differ in length");
  if (a.size() < 2) throw InvalidArgument("correlation needs at least two observations");
}

// Number of pairs within runs of equal values of a sorted sequence.
template <class Eq>
std::uint64_t tied_pairs(std::size_t n, Eq eq) {
  std::uint64_t ties = 0;
  std::size_t run = 1;
  for (std::size_t i = 1; i <= n; ++i) {
    if (i < n && eq(i - 1, i)) {
      ++run;
      continue;
    }
    ties += static_cast<std::uint64_t>(run) * (run - 1) / 2;
    run = 1;
  }
  return ties;
}

// Merge sort of v counting strict inversions.
std::uint64_t sort_count_inversions(std::vector<double>& v) {
  std::vector<double> buf(v.size());
  std::uint64_t swaps = 0;
  for (std::size_t width = 1; width < v.size(); width *= 2) {
    for (std::size_t lo = 0; lo < v.size(); lo += 2 * width) {
      const std::size_t mid = std::min(lo + width, v.size());
      const std::size_t hi = std::min(lo + 2 * width, v.size());
      std::size_t i = lo, j = mid, k = lo;
      while (i < mid && j < hi) {
        if (v[j] < v[i]) {
          swaps += mid - i;
          buf[k++] = v[j++];
        } else {
          buf[k++] = v[i++];
        }
      }
      while (i < mid) buf[k++] = v[i++];
      while (j < hi) buf[k++] = v[j++];
    }
    std::swap(v, buf);
  }
  return swaps;
}

std::pair<double, double> mean_std(std::span<const double> v) {
  if (v.empty()) return {0.0, 0.0};
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / static_cast<double>(v.size()))};
}

}  // namespace

double accuracy(std::span<const JudgmentPair> pairs) {
  if (pairs.empty()) throw InvalidArgument("accuracy of an empty judgment set");
  std::size_t correct = 0;
  for (const auto& p : pairs) correct += p.score_pos > p.score_neg ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

std::optional<double> triplet_tau(std::span<const JudgmentPair> pairs) {
  if (pairs.empty()) throw InvalidArgument("tau of an empty triplet set");
  long long concordant = 0, discordant = 0;
  for (const auto& p : pairs) {
    if (p.score_pos > p.score_neg) ++concordant;
    else if (p.score_pos < p.score_neg) ++discordant;
  }
  if (concordant + discordant == 0) return std::nullopt;
  return static_cast<double>(concordant - discordant) / static_cast<double>(pairs.size());
}

double kendall_tau(std::span<const double> a, std::span<const double> b) {
  check_paired(a, b);
  const std::size_t n = a.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return a[i] < a[j] || (a[i] == a[j] && b[i] < b[j]);
  });
  const std::uint64_t n0 = static_cast<std::uint64_t>(n) * (n - 1) / 2;
  const std::uint64_t n1 = tied_pairs(n, [&](std::size_t i, std::size_t j) { return a[order[i]] == a[order[j]]; });
  const std::uint64_t n3 = tied_pairs(n, [&](std::size_t i, std::size_t j) {
    return a[order[i]] == a[order[j]] && b[order[i]] == b[order[j]];
  });
  std::vector<double> bs(n);
  for (std::size_t i = 0; i < n; ++i) bs[i] = b[order[i]];
  const std::uint64_t swaps = sort_count_inversions(bs);
  const std::uint64_t n2 = tied_pairs(n, [&](std::size_t i, std::size_t j) { return bs[i] == bs[j]; });
  const double numer = static_cast<double>(n0) - static_cast<double>(n1) - static_cast<double>(n2) +
                       static_cast<double>(n3) - 2.0 * static_cast<double>(swaps);
  return numer / static_cast<double>(n0);
}

double pearson(std::span<const double> a, std::span<const double> b) {
  check_paired(a, b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) throw DegenerateError("correlation undefined: zero variance");
  return sab / std::sqrt(saa * sbb);
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> a, std::span<const double> b) {
  check_paired(a, b);
  return pearson(average_ranks(a), average_ranks(b));
}

MetaEvalReport evaluate_pairs(std::span<const JudgmentPair> pairs) {
  MetaEvalReport rep;
  rep.n = pairs.size();
  rep.accuracy = accuracy(pairs);
  rep.kendall_tau = triplet_tau(pairs);
  std::vector<double> scores, labels;
  for (const auto& p : pairs) {
    scores.push_back(p.score_pos);
    labels.push_back(1.0);
    scores.push_back(p.score_neg);
    labels.push_back(0.0);
  }
  try {
    rep.pearson = pearson(scores, labels);
    rep.spearman = spearman(scores, labels);
  } catch (const DegenerateError&) {
    rep.pearson.reset();
    rep.spearman.reset();
  }
  return rep;
}

std::vector<StabilityCell> stability_sweep(std::size_t population, const SubsetMetric& metric,
                                           std::span<const std::size_t> sizes, int repeats,
                                           std::uint64_t seed) {
  if (repeats < 1) throw InvalidArgument("stability sweep needs repeats >= 1");
  std::vector<StabilityCell> cells;
  for (std::size_t si = 0; si < sizes.size(); ++si) {
    const std::size_t size = sizes[si];
    if (size < 1 || size > population) {
      throw InvalidArgument("subset size " + std::to_string(size) + " outside [1, " +
                            std::to_string(population) + "]");
    }
    StabilityCell cell;
    cell.size = size;
    std::vector<std::size_t> idx(population);
    for (int r = 0; r < repeats; ++r) {
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      Rng rng(derive_seed(seed, si, static_cast<std::uint64_t>(r)));
      for (std::size_t i = 0; i < size; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(population - i));
        std::swap(idx[i], idx[j]);
      }
      std::vector<std::size_t> subset(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(size));
      std::sort(subset.begin(), subset.end());
      cell.values.push_back(metric(subset));
    }
    std::tie(cell.mean, cell.std) = mean_std(cell.values);
    cells.push_back(std::move(cell));
  }
  return cells;
}

std::vector<LadderRung> noise_ladder_experiment(std::span<const LabeledImage> clean, DistortionKind kind,
                                                std::span<const double> ladder, const ImageScorer& scorer,
                                                int repeats, std::uint64_t seed, int jobs) {
  if (clean.empty()) throw InvalidArgument("noise ladder needs at least one clean sample");
  if (repeats < 1) throw InvalidArgument("noise ladder needs repeats >= 1");
  const std::size_t n = clean.size();
  std::vector<Caption> captions;
  for (const auto& c : clean) captions.push_back(Caption::parse(c.text));
  std::vector<double> clean_scores(n);
  parallel_for(n, jobs, [&](std::size_t i) { clean_scores[i] = scorer(captions[i], clean[i].image); });

  std::vector<LadderRung> rungs;
  for (std::size_t d = 0; d < ladder.size(); ++d) {
    LadderRung rung;
    rung.degree = ladder[d];
    std::vector<double> accs;
    for (int r = 0; r < repeats; ++r) {
      const std::uint64_t cell_seed = derive_seed(seed, d, static_cast<std::uint64_t>(r));
      std::vector<double> noised(n);
      parallel_for(n, jobs, [&](std::size_t i) {
        const DistortionSpec spec{kind, ladder[d], derive_seed(cell_seed, i)};
        noised[i] = scorer(captions[i], distort_image(clean[i].image, spec));
      });
      std::vector<JudgmentPair> pairs(n);
      for (std::size_t i = 0; i < n; ++i) pairs[i] = {clean[i].id, clean_scores[i], noised[i]};
      rung.repeat_scores.push_back(mean_std(noised).first);
      rung.repeat_taus.push_back(triplet_tau(pairs));
      accs.push_back(accuracy(pairs));
    }
    std::tie(rung.mean_score, rung.std_score) = mean_std(rung.repeat_scores);
    rung.accuracy_mean = mean_std(accs).first;
    std::vector<double> taus;
    for (const auto& t : rung.repeat_taus) {
      if (t) taus.push_back(*t);
    }
    if (!taus.empty()) {
      const auto [m, s] = mean_std(taus);
      rung.tau_mean = m;
      rung.tau_std = s;
    }
    rungs.push_back(std::move(rung));
  }
  return rungs;
}

std::vector<ReplacementRung> replacement_ladder_experiment(std::span<const LabeledImage> clean,
                                                          const Lexicon& keywords,
                                                          std::span<const std::string> vocabulary,
                                                          std::span<const std::size_t> ks,
                                                          const ImageScorer& scorer, int repeats,
                                                          std::uint64_t seed, int jobs) {
  if (clean.empty()) throw InvalidArgument("replacement ladder needs at least one clean sample");
  if (repeats < 1) throw InvalidArgument("replacement ladder needs repeats >= 1");
  const std::size_t n = clean.size();
  std::vector<Caption> captions;
  for (const auto& c : clean) captions.push_back(Caption::parse(c.text));
  std::vector<double> clean_scores(n);
  parallel_for(n, jobs, [&](std::size_t i) { clean_scores[i] = scorer(captions[i], clean[i].image); });

  std::vector<ReplacementRung> rungs;
  for (std::size_t ki = 0; ki < ks.size(); ++ki) {
    ReplacementRung rung;
    rung.k = ks[ki];
    std::vector<double> means, accs;
    for (int r = 0; r < repeats; ++r) {
      const std::uint64_t cell_seed = derive_seed(seed, ki, static_cast<std::uint64_t>(r));
      std::vector<std::optional<double>> altered(n);
      parallel_for(n, jobs, [&](std::size_t i) {
        TextPerturbSpec spec;
        spec.kind = TextPerturbKind::replace_k;
        spec.k = ks[ki];
        spec.vocabulary.assign(vocabulary.begin(), vocabulary.end());
        spec.seed = derive_seed(cell_seed, i);
        // A replacement can leave a caption with nothing the matcher can
        // ground; such a sample drops out of this repeat only.
        try {
          altered[i] = scorer(perturb_text(captions[i], spec, keywords), clean[i].image);
        } catch (const DegenerateError&) {
        }
      });
      std::vector<JudgmentPair> pairs;
      std::vector<double> kept;
      for (std::size_t i = 0; i < n; ++i) {
        if (!altered[i]) continue;
        pairs.push_back({clean[i].id, clean_scores[i], *altered[i]});
        kept.push_back(*altered[i]);
      }
      rung.excluded += n - kept.size();
      if (kept.empty()) continue;
      means.push_back(mean_std(kept).first);
      accs.push_back(accuracy(pairs));
    }
    if (means.empty()) throw DegenerateError("every altered caption at k = " + std::to_string(rung.k) + " was degenerate");
    std::tie(rung.mean_score, rung.std_score) = mean_std(means);
    std::tie(rung.accuracy_mean, rung.accuracy_std) = mean_std(accs);
    rungs.push_back(rung);
  }
  return rungs;
}

}  // namespace leica
