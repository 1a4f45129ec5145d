#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "leica/image.hpp"
#include "leica/likelihood.hpp"

namespace leica {

enum class DistortionKind { gn, gb, spn, mirror, gn_plus, gb_plus, spn_plus };

std::string_view to_string(DistortionKind kind);
// Accepts "gn", "gb", "spn", "mirror", "gn+", "gb+", "spn+".
DistortionKind parse_distortion_kind(std::string_view name);

/// degree: gn variance, gb kernel sigma, spn pixel fraction, mirror
/// amplitude in pixels. The "+" kinds warp with `mirror_amplitude` first
/// and then apply the base distortion at `degree`.
struct DistortionSpec {
  DistortionKind kind = DistortionKind::gn;
  double degree = 0.0;
  std::uint64_t seed = 0;
  double mirror_amplitude = 4.0;
};

/// Deterministic given (img, spec). A degree of 0 returns the input
/// unchanged for every kind, the "+" kinds included.
ImageTensor distort_image(const ImageTensor& img, const DistortionSpec& spec);

// Building blocks, exposed for tests.
ImageTensor gaussian_noise(const ImageTensor& img, double variance, std::uint64_t seed);
ImageTensor gaussian_blur(const ImageTensor& img, double sigma);
ImageTensor salt_pepper(const ImageTensor& img, double fraction, std::uint64_t seed);
ImageTensor funny_mirror(const ImageTensor& img, double amplitude);

// Reflect-101 border index: ... 2 1 | 0 1 2 ... n-1 | n-2 ...
int reflect_index(int i, int n);

using Lexicon = std::set<std::string>;

// One lowercase word per line; blank lines and '#' comments are skipped.
Lexicon load_lexicon(const std::filesystem::path& path);

enum class TextPerturbKind { replace_k, mismatch };

struct TextPerturbSpec {
  TextPerturbKind kind = TextPerturbKind::replace_k;
  std::size_t k = 0;
  std::vector<std::string> vocabulary;  // replacement pool for replace_k
  std::uint64_t seed = 0;
};

/// replace_k: k keyword positions (tokens found in `keywords`) are chosen
/// uniformly and each gets a uniform pool word that is not one of the
/// caption's own keywords. Token count never changes.
/// mismatch: a caption drawn uniformly from `caption_pool` whose text
/// differs from the input.
Caption perturb_text(const Caption& caption, const TextPerturbSpec& spec, const Lexicon& keywords,
                     std::span<const Caption> caption_pool = {});

struct LabeledImage {
  std::string id;
  std::string text;
  ImageTensor image;
};

struct Triplet {
  std::string id;
  std::string text;
  ImageTensor noised;
  ImageTensor clean;
};

/// One triplet per id, in the order of `clean`. The two sets must hold the
/// same ids.
std::vector<Triplet> build_triplets(std::span<const LabeledImage> clean,
                                    std::span<const LabeledImage> distorted);

}  // namespace leica
