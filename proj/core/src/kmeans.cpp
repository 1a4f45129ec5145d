#include "leica/kmeans.hpp"

#include <algorithm>
#include <cstring>
#include <limits>
#include <map>
#include <numeric>

#include "leica/errors.hpp"
#include "leica/rng.hpp"

namespace leica {

namespace {

double sq_dist(const float* a, const float* b, int dim) {
  double d = 0.0;
  for (int j = 0; j < dim; ++j) {
    const double diff = static_cast<double>(a[j]) - b[j];
    d += diff * diff;
  }
  return d;
}

// Index drawn with probability proportional to mass[i].
std::size_t draw_weighted(Rng& rng, std::span<const double> mass) {
  const double total = std::accumulate(mass.begin(), mass.end(), 0.0);
  double target = rng.uniform() * total;
  for (std::size_t i = 0; i < mass.size(); ++i) {
    if (target < mass[i]) return i;
    target -= mass[i];
  }
  for (std::size_t i = mass.size(); i-- > 0;) {
    if (mass[i] > 0.0) return i;
  }
  return 0;
}

}  // namespace

KMeansResult weighted_kmeans(std::span<const float> points, int dim,
                             std::span<const double> weights, const KMeansOptions& opts) {
  if (dim < 1) throw InvalidArgument("k-means dim must be >= 1");
  const std::size_t n = points.size() / dim;
  if (n == 0 || points.size() != n * dim) throw ShapeError("k-means points must be n x dim");
  if (weights.size() != n) throw ShapeError("k-means needs one weight per point");
  if (opts.clusters < 1) throw InvalidArgument("k-means needs at least one cluster");

  KMeansResult res;
  res.dim = dim;
  res.clusters = static_cast<std::uint32_t>(std::min<std::size_t>(opts.clusters, n));
  const std::uint32_t k = res.clusters;
  auto pt = [&](std::size_t i) { return points.data() + i * dim; };

  // k-means++ seeding over weighted points.
  Rng rng(opts.seed);
  res.centers.resize(static_cast<std::size_t>(k) * dim);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::vector<double> mass(n);
  std::vector<bool> chosen(n, false);
  std::size_t first = draw_weighted(rng, weights);
  for (std::uint32_t c = 0; c < k; ++c) {
    std::size_t pick = first;
    if (c > 0) {
      for (std::size_t i = 0; i < n; ++i) mass[i] = chosen[i] ? 0.0 : weights[i] * nearest[i];
      if (std::all_of(mass.begin(), mass.end(), [](double m) { return m <= 0.0; })) {
        pick = static_cast<std::size_t>(std::find(chosen.begin(), chosen.end(), false) - chosen.begin());
      } else {
        pick = draw_weighted(rng, mass);
      }
    }
    chosen[pick] = true;
    std::copy(pt(pick), pt(pick) + dim, res.centers.begin() + static_cast<std::ptrdiff_t>(c) * dim);
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], sq_dist(pt(i), pt(pick), dim));
    }
  }

  res.assignment.assign(n, 0);
  std::vector<double> dist(n, 0.0);
  auto assign = [&] {
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      std::uint32_t arg = 0;
      for (std::uint32_t c = 0; c < k; ++c) {
        const double d = sq_dist(pt(i), res.centers.data() + static_cast<std::size_t>(c) * dim, dim);
        if (d < best) {
          best = d;
          arg = c;
        }
      }
      res.assignment[i] = arg;
      dist[i] = best;
      inertia += weights[i] * best;
    }
    return inertia;
  };

  std::vector<double> sums(static_cast<std::size_t>(k) * dim);
  std::vector<double> wsum(k);
  for (int it = 0; it < opts.iterations; ++it) {
    assign();
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(wsum.begin(), wsum.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t c = res.assignment[i];
      wsum[c] += weights[i];
      for (int j = 0; j < dim; ++j) sums[static_cast<std::size_t>(c) * dim + j] += weights[i] * pt(i)[j];
    }
    std::vector<bool> taken(n, false);
    for (std::uint32_t c = 0; c < k; ++c) {
      float* center = res.centers.data() + static_cast<std::size_t>(c) * dim;
      if (wsum[c] > 0.0) {
        for (int j = 0; j < dim; ++j) {
          center[j] = static_cast<float>(sums[static_cast<std::size_t>(c) * dim + j] / wsum[c]);
        }
        continue;
      }
      // Empty cluster: reseed from the farthest point not already used.
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (!taken[i] && dist[i] > far_d) {
          far_d = dist[i];
          far = i;
        }
      }
      taken[far] = true;
      dist[far] = 0.0;
      std::copy(pt(far), pt(far) + dim, center);
    }
  }
  res.inertia = assign();
  return res;
}

Codebook fit_codebook(const PatchEncoder& enc, std::span<const ImageTensor> corpus,
                      const KMeansOptions& opts) {
  if (corpus.empty()) throw InvalidArgument("codebook fitting needs at least one image");
  const int dim = enc.dim();
  // Byte-keyed merge of identical features; std::map keeps the order stable.
  std::map<std::vector<float>, double> unique;
  std::vector<float> f(dim);
  for (const ImageTensor& img : corpus) {
    const FeatureGrid grid = enc.encode(img);
    for (std::size_t t = 0; t < grid.cells(); ++t) {
      const auto cell = grid.cell(t);
      std::copy(cell.begin(), cell.end(), f.begin());
      unique[f] += 1.0;
    }
  }
  std::vector<float> points;
  std::vector<double> weights;
  points.reserve(unique.size() * dim);
  for (const auto& [feat, w] : unique) {
    points.insert(points.end(), feat.begin(), feat.end());
    weights.push_back(w);
  }
  KMeansResult km = weighted_kmeans(points, dim, weights, opts);
  return Codebook(km.clusters, static_cast<std::uint32_t>(dim), std::move(km.centers));
}

}  // namespace leica
