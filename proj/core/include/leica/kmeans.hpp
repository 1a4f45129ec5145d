#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "leica/image.hpp"
#include "leica/tokenizer.hpp"

namespace leica {

struct KMeansOptions {
  std::uint32_t clusters = 512;
  int iterations = 20;
  std::uint64_t seed = 0;
};

struct KMeansResult {
  std::uint32_t clusters = 0;
  int dim = 0;
  std::vector<float> centers;          // clusters x dim
  std::vector<std::uint32_t> assignment;  // one per input point
  double inertia = 0.0;                // weighted sum of squared distances
};

/// Weighted Lloyd iterations with k-means++ seeding.
///
/// Deterministic for a fixed seed. Ties in assignment go to the lowest
/// center index; an empty cluster is reseeded with the point farthest from
/// its current center. With fewer points than clusters the cluster count
/// shrinks to the number of points; callers merge duplicate points first.
KMeansResult weighted_kmeans(std::span<const float> points, int dim,
                             std::span<const double> weights, const KMeansOptions& opts);

/// Codebook from k-means over every patch feature of `corpus`. Identical
/// features are merged into one weighted point before clustering.
Codebook fit_codebook(const PatchEncoder& enc, std::span<const ImageTensor> corpus,
                      const KMeansOptions& opts);

}  // namespace leica
