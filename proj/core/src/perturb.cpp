#include "leica/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <unordered_map>

#include "leica/errors.hpp"
#include "leica/rng.hpp"

namespace leica {

std::string_view to_string(DistortionKind kind) {
  switch (kind) {
    case DistortionKind::gn: return "gn";
    case DistortionKind::gb: return "gb";
    case DistortionKind::spn: return "spn";
    case DistortionKind::mirror: return "mirror";
    case DistortionKind::gn_plus: return "gn+";
    case DistortionKind::gb_plus: return "gb+";
    case DistortionKind::spn_plus: return "spn+";
  }
  return "?";
}

DistortionKind parse_distortion_kind(std::string_view name) {
  for (auto k : {DistortionKind::gn, DistortionKind::gb, DistortionKind::spn, DistortionKind::mirror,
                 DistortionKind::gn_plus, DistortionKind::gb_plus, DistortionKind::spn_plus}) {
    if (to_string(k) == name) return k;
  }
  throw InvalidArgument("unknown distortion kind '" + std::string(name) + "'");
}

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

ImageTensor gaussian_noise(const ImageTensor& img, double variance, std::uint64_t seed) {
  ImageTensor out = img;
  if (variance == 0.0) return out;
  const double sd = std::sqrt(variance);
  Rng rng(seed);
  for (float& v : out.data) {
    v = static_cast<float>(std::clamp(static_cast<double>(v) + sd * rng.normal(), 0.0, 1.0));
  }
  return out;
}

ImageTensor gaussian_blur(const ImageTensor& img, double sigma) {
  if (sigma == 0.0) return img;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  for (int k = -radius; k <= radius; ++k) kernel[k + radius] = std::exp(-(k * k) / (2.0 * sigma * sigma));
  const double total = std::accumulate(kernel.begin(), kernel.end(), 0.0);
  for (double& k : kernel) k /= total;

  const int h = img.height, w = img.width;
  std::vector<double> tmp(img.data.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * img.at(y, reflect_index(x + k, w), c);
        tmp[img.index(y, x, c)] = acc;
      }
    }
  }
  ImageTensor out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * tmp[img.index(reflect_index(y + k, h), x, c)];
        out.at(y, x, c) = static_cast<float>(std::clamp(acc, 0.0, 1.0));
      }
    }
  }
  return out;
}

ImageTensor salt_pepper(const ImageTensor& img, double fraction, std::uint64_t seed) {
  ImageTensor out = img;
  const std::size_t n = img.pixel_count();
  const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (count == 0) return out;
  Rng rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(order[i], order[j]);
    const float v = rng.below(2) == 0 ? 0.0f : 1.0f;
    for (int c = 0; c < 3; ++c) out.data[order[i] * 3 + c] = v;
  }
  return out;
}

ImageTensor funny_mirror(const ImageTensor& img, double amplitude) {
  if (amplitude == 0.0) return img;
  const int h = img.height, w = img.width;
  const double period = h / 4.0;
  const double two_pi = 2.0 * std::numbers::pi;
  ImageTensor out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double sx = std::clamp(x + amplitude * std::sin(two_pi * y / period), 0.0, w - 1.0);
      const double sy = std::clamp(y + amplitude * std::sin(two_pi * x / period), 0.0, h - 1.0);
      const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
      const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const double fx = sx - x0, fy = sy - y0;
      for (int c = 0; c < 3; ++c) {
        const double top = (1.0 - fx) * img.at(y0, x0, c) + fx * img.at(y0, x1, c);
        const double bot = (1.0 - fx) * img.at(y1, x0, c) + fx * img.at(y1, x1, c);
        out.at(y, x, c) = static_cast<float>((1.0 - fy) * top + fy * bot);
      }
    }
  }
  return out;
}

ImageTensor distort_image(const ImageTensor& img, const DistortionSpec& spec) {
  if (!std::isfinite(spec.degree) || spec.degree < 0.0) throw InvalidArgument("distortion degree must be >= 0");
  const bool fractional = spec.kind == DistortionKind::spn || spec.kind == DistortionKind::spn_plus;
  if (fractional && spec.degree > 1.0) throw InvalidArgument("salt-and-pepper fraction must be <= 1");
  if (!std::isfinite(spec.mirror_amplitude) || spec.mirror_amplitude < 0.0) {
    throw InvalidArgument("mirror amplitude must be >= 0");
  }
  if (spec.degree == 0.0) return img;

  switch (spec.kind) {
    case DistortionKind::gn: return gaussian_noise(img, spec.degree, spec.seed);
    case DistortionKind::gb: return gaussian_blur(img, spec.degree);
    case DistortionKind::spn: return salt_pepper(img, spec.degree, spec.seed);
    case DistortionKind::mirror: return funny_mirror(img, spec.degree);
    case DistortionKind::gn_plus: return gaussian_noise(funny_mirror(img, spec.mirror_amplitude), spec.degree, spec.seed);
    case DistortionKind::gb_plus: return gaussian_blur(funny_mirror(img, spec.mirror_amplitude), spec.degree);
    case DistortionKind::spn_plus: return salt_pepper(funny_mirror(img, spec.mirror_amplitude), spec.degree, spec.seed);
  }
  throw InvalidArgument("unknown distortion kind");
}

Lexicon load_lexicon(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open lexicon " + path.string());
  Lexicon lex;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto last = line.find_last_not_of(" \t\r");
    std::string word = line.substr(first, last - first + 1);
    std::transform(word.begin(), word.end(), word.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    lex.insert(std::move(word));
  }
  return lex;
}

Caption perturb_text(const Caption& caption, const TextPerturbSpec& spec, const Lexicon& keywords,
                     std::span<const Caption> caption_pool) {
  Rng rng(spec.seed);
  if (spec.kind == TextPerturbKind::mismatch) {
    std::vector<const Caption*> others;
    for (const Caption& c : caption_pool) {
      if (c.tokens != caption.tokens) others.push_back(&c);
    }
    if (others.empty()) throw InvalidArgument("mismatch needs a pool with at least one other caption");
    return *others[rng.below(others.size())];
  }

  std::vector<std::size_t> positions;
  std::set<std::string> own;
  for (std::size_t i = 0; i < caption.tokens.size(); ++i) {
    if (keywords.contains(caption.tokens[i])) {
      positions.push_back(i);
      own.insert(caption.tokens[i]);
    }
  }
  if (spec.k > positions.size()) {
    throw InvalidArgument("caption has " + std::to_string(positions.size()) + " keywords, cannot replace " +
                          std::to_string(spec.k));
  }
  if (spec.k == 0) return caption;
  std::vector<std::string> pool;
  for (const auto& word : spec.vocabulary) {
    if (!own.contains(word)) pool.push_back(word);
  }
  std::sort(pool.begin(), pool.end());
  pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
  if (pool.empty()) throw InvalidArgument("replacement pool is empty");

  for (std::size_t i = 0; i < spec.k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(positions.size() - i));
    std::swap(positions[i], positions[j]);
  }
  std::vector<std::size_t> chosen(positions.begin(), positions.begin() + static_cast<std::ptrdiff_t>(spec.k));
  std::sort(chosen.begin(), chosen.end());
  std::vector<std::string> tokens = caption.tokens;
  for (std::size_t pos : chosen) tokens[pos] = pool[rng.below(pool.size())];
  return Caption::from_tokens(std::move(tokens));
}

std::vector<Triplet> build_triplets(std::span<const LabeledImage> clean,
                                    std::span<const LabeledImage> distorted) {
  std::unordered_map<std::string, const LabeledImage*> by_id;
  for (const auto& d : distorted) {
    if (!by_id.emplace(d.id, &d).second) throw InvalidArgument("duplicate distorted id '" + d.id + "'");
  }
  if (by_id.size() != clean.size()) throw InvalidArgument("clean and distorted sets differ in size");
  std::vector<Triplet> out;
  out.reserve(clean.size());
  std::set<std::string> seen;
  for (const auto& c : clean) {
    const auto it = by_id.find(c.id);
    if (it == by_id.end()) throw InvalidArgument("no distorted image for id '" + c.id + "'");
    if (!seen.insert(c.id).second) throw InvalidArgument("duplicate clean id '" + c.id + "'");
    out.push_back(Triplet{c.id, c.text, it->second->image, c.image});
  }
  return out;
}

}  // namespace leica
