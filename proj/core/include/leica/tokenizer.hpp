#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "leica/image.hpp"

namespace leica {

using Code = std::uint32_t;

/// rows x cols grid of dim-dimensional features, row-major by cell.
struct FeatureGrid {
  int rows = 0;
  int cols = 0;
  int dim = 0;
  std::vector<float> values;

  std::size_t cells() const { return static_cast<std::size_t>(rows) * cols; }
  std::span<const float> cell(std::size_t t) const {
    return {values.data() + t * dim, static_cast<std::size_t>(dim)};
  }
  bool operator==(const FeatureGrid&) const = default;
};

/// Linear map from a flattened p x p x 3 pixel block to d features.
///
/// A block is flattened as (dy * p + dx) * 3 + c. Accepted images must have
/// both dimensions divisible by p; nothing is padded.
class PatchEncoder {
 public:
  // weights: dim rows of patch*patch*3 columns, row-major.
  PatchEncoder(int patch, int dim, std::vector<float> weights);

  // Rows form an orthonormal set obtained by Gram-Schmidt on a seeded
  // Gaussian matrix. Requires dim <= patch*patch*3.
  static PatchEncoder orthogonal(int patch, int dim, std::uint64_t seed);

  int patch() const { return patch_; }
  int dim() const { return dim_; }
  int input_size() const { return patch_ * patch_ * 3; }
  std::span<const float> weights() const { return weights_; }

  FeatureGrid encode(const ImageTensor& img) const;

  // LEIEN1: magic, u32 patch, u32 dim, weights as f32, u64 FNV-1a of the rest.
  void save(const std::filesystem::path& path) const;
  static PatchEncoder load(const std::filesystem::path& path);

 private:
  int patch_;
  int dim_;
  std::vector<float> weights_;
};

/// K x dim matrix of code vectors plus a content hash.
///
/// id is FNV-1a 64 over the LEICB1 body (magic, K, d, vectors); two
/// codebooks with identical content always share an id.
class Codebook {
 public:
  Codebook(std::uint32_t size, std::uint32_t dim, std::vector<float> vectors);

  std::uint32_t size() const { return size_; }
  std::uint32_t dim() const { return dim_; }
  std::uint64_t id() const { return id_; }
  std::span<const float> vectors() const { return vectors_; }
  std::span<const float> row(Code k) const {
    return {vectors_.data() + static_cast<std::size_t>(k) * dim_, dim_};
  }

  // Nearest code under squared Euclidean distance; ties go to the lowest index.
  Code nearest(std::span<const float> feature) const;

  void save(const std::filesystem::path& path) const;
  static Codebook load(const std::filesystem::path& path);

 private:
  std::uint32_t size_;
  std::uint32_t dim_;
  std::vector<float> vectors_;
  std::uint64_t id_;
};

/// h x w code indices; flattening is row-major, t = row * w + col.
struct CodeGrid {
  int rows = 0;
  int cols = 0;
  std::vector<Code> codes;
  std::uint64_t codebook_id = 0;

  std::size_t m() const { return codes.size(); }
  Code at(int r, int c) const { return codes[static_cast<std::size_t>(r) * cols + c]; }
  static constexpr std::size_t flat_index(int r, int c, int cols) {
    return static_cast<std::size_t>(r) * cols + c;
  }
  bool operator==(const CodeGrid&) const = default;
};

CodeGrid quantize(const FeatureGrid& features, const Codebook& cb);

/// Encoder + codebook; the image-to-codes half of the generator.
struct Tokenizer {
  PatchEncoder encoder;
  Codebook codebook;

  CodeGrid tokenize(const ImageTensor& img) const {
    return quantize(encoder.encode(img), codebook);
  }
};

/// Renders one p x p x 3 block per code.
class BlockDecoder {
 public:
  BlockDecoder(int patch, std::vector<std::vector<float>> blocks);

  // Each code's block is the mean of the pixel blocks that quantized to it in
  // `corpus`. Codes never hit fall back to the encoder back-projection of the
  // code vector, clamped to [0,1].
  static BlockDecoder fit_mean_patch(const PatchEncoder& enc, const Codebook& cb,
                                     std::span<const ImageTensor> corpus);

  int patch() const { return patch_; }
  std::size_t size() const { return blocks_.size(); }
  std::span<const float> block(Code k) const { return blocks_.at(k); }

  ImageTensor render(const CodeGrid& grid) const;

 private:
  int patch_;
  std::vector<std::vector<float>> blocks_;
};

ImageTensor roundtrip_distort(const ImageTensor& img, const PatchEncoder& enc,
                              const Codebook& cb, const BlockDecoder& dec);

}  // namespace leica
