#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "leica/image.hpp"
#include "leica/likelihood.hpp"

namespace leica {

/// Per-patch text alignment phi on the matcher's s x s grid plus the
/// global image-text cosine psi.
struct SemanticMap {
  std::vector<double> phi;
  double psi = 0.0;
  int s = 0;
};

enum class PhiResize { bilinear_2d, linear_1d };

struct SemanticConfig {
  double tau = 0.07;
  bool use_global = true;
  PhiResize resize = PhiResize::bilinear_2d;
};

/// Anything that can align a caption with the patches of an image.
class MatcherModel {
 public:
  virtual ~MatcherModel() = default;
  virtual SemanticMap patch_alignment(const Caption& caption, const ImageTensor& img) const = 0;
};

/// Parameters of the reference two-tower matcher.
///
/// Image tower: a fixed per-patch embedding (soft palette membership,
/// saturation, local gradient energy, constant slot) feeds a single multi-head
/// self-attention layer over [class, patch_1 .. patch_n]. The class output
/// then goes through an RMS normalization tail and the final projection.
/// Text tower: sum of per-word embeddings.
struct MatcherWeights {
  int patch = 32;                        // matcher patch side in pixels
  int heads = 1;
  std::vector<std::array<float, 3>> palette;
  float palette_sigma = 0.2f;
  float texture_gain = 1.0f;
  int embed_dim = 0;                     // palette.size() + 3
  int value_dim = 0;                     // heads * head_dim
  int joint_dim = 0;
  std::vector<float> class_embedding;    // embed_dim
  std::vector<float> wq, wk, wv;         // value_dim x embed_dim each
  std::vector<float> wo;                 // embed_dim x value_dim
  std::vector<float> tail_gain;          // embed_dim
  std::vector<float> proj;               // joint_dim x embed_dim
  std::map<std::string, std::vector<float>> word_embeddings;  // joint_dim each

  int saturation_slot() const { return static_cast<int>(palette.size()); }
  int texture_slot() const { return saturation_slot() + 1; }
  int constant_slot() const { return saturation_slot() + 2; }

  void validate() const;
  void save(const std::filesystem::path& path) const;
  static MatcherWeights load(const std::filesystem::path& path);
};

/// Matcher whose internals are exposed: global embeddings, value-projection
/// outputs v_t of the last attention and the composed projection W.
class ReferenceMatcher final : public MatcherModel {
 public:
  explicit ReferenceMatcher(MatcherWeights weights);

  struct ImagePass {
    int s = 0;
    std::vector<double> values;     // s*s x value_dim, value-projection outputs
    std::vector<double> global;     // joint_dim, full tower output
  };

  const MatcherWeights& weights() const { return w_; }
  // joint_dim x value_dim: output projection followed by final projection.
  std::span<const double> patch_projection() const { return patch_proj_; }

  std::vector<double> text_embedding(const Caption& caption) const;
  // Patch embeddings before attention: s*s x embed_dim.
  std::vector<double> patch_embeddings(const ImageTensor& img, int& s) const;
  ImagePass image_pass(const ImageTensor& img) const;

  SemanticMap patch_alignment(const Caption& caption, const ImageTensor& img) const override;

 private:
  MatcherWeights w_;
  std::vector<double> patch_proj_;
};

// Cosine of two equally sized vectors; 0 when either has zero norm.
double cosine(std::span<const double> a, std::span<const double> b);

/// Bilinear resample of an s x s grid to h x w with corner-aligned sampling,
/// flattened row-major.
std::vector<double> resize_map(std::span<const double> phi, int s, int h, int w);

/// Linear resample of the flat length-s*s sequence to length h*w with
/// end-aligned sampling.
std::vector<double> resize_sequence(std::span<const double> phi, std::size_t out_len);

/// S(t) = e^{psi/tau} * max(resize(phi)[t], 0); the exponential factor is 1
/// when cfg.use_global is off.
std::vector<double> semantic_score(const SemanticMap& map, int h, int w, const SemanticConfig& cfg);

}  // namespace leica
