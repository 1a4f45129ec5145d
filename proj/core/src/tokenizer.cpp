#include "leica/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "leica/binary_io.hpp"
#include "leica/errors.hpp"
#include "leica/rng.hpp"

namespace leica {

namespace {

constexpr std::string_view kCodebookMagic = "LEICB1";
constexpr std::string_view kEncoderMagic = "LEIEN1";

void check_divisible(const ImageTensor& img, int patch) {
  if (img.height < patch || img.width < patch || img.height % patch != 0 ||
      img.width % patch != 0) {
    throw ShapeError("image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                     " is not divisible by patch size " + std::to_string(patch));
  }
}

void gather_block(const ImageTensor& img, int patch, int row, int col, std::vector<float>& out) {
  out.resize(static_cast<std::size_t>(patch) * patch * 3);
  std::size_t k = 0;
  for (int dy = 0; dy < patch; ++dy) {
    const float* src = &img.data[img.index(row * patch + dy, col * patch)];
    for (int i = 0; i < patch * 3; ++i) out[k++] = src[i];
  }
}

io::Writer codebook_body(std::uint32_t size, std::uint32_t dim, std::span<const float> vectors) {
  io::Writer w;
  w.magic(kCodebookMagic);
  w.u32(size);
  w.u32(dim);
  for (float v : vectors) w.f32(v);
  return w;
}

}  // namespace

PatchEncoder::PatchEncoder(int patch, int dim, std::vector<float> weights)
    : patch_(patch), dim_(dim), weights_(std::move(weights)) {
  if (patch_ < 1 || dim_ < 1) throw InvalidArgument("patch and dim must be >= 1");
  if (weights_.size() != static_cast<std::size_t>(dim_) * input_size()) {
    throw ShapeError("encoder weights must be dim x (patch*patch*3)");
  }
}

void PatchEncoder::save(const std::filesystem::path& path) const {
  io::Writer w;
  w.magic(kEncoderMagic);
  w.u32(static_cast<std::uint32_t>(patch_));
  w.u32(static_cast<std::uint32_t>(dim_));
  for (float v : weights_) w.f32(v);
  w.u64(io::fnv1a64(w.buffer()));
  w.save(path);
}

PatchEncoder PatchEncoder::load(const std::filesystem::path& path) {
  io::Reader r = io::Reader::from_file(path);
  r.expect_magic(kEncoderMagic);
  const std::uint32_t patch = r.u32();
  const std::uint32_t dim = r.u32();
  if (patch == 0 || dim == 0 || patch > 4096 || dim > (1u << 20)) {
    throw FormatError(path.string() + ": implausible encoder shape");
  }
  const std::uint64_t n = static_cast<std::uint64_t>(patch) * patch * 3 * dim;
  if (n * 4 > r.remaining()) throw FormatError(path.string() + ": truncated encoder");
  std::vector<float> weights(n);
  for (float& v : weights) v = r.f32();
  const std::uint64_t expect = io::fnv1a64(r.consumed());
  const std::uint64_t hash = r.u64();
  r.expect_end();
  if (hash != expect) throw FormatError(path.string() + ": encoder hash mismatch");
  return PatchEncoder(static_cast<int>(patch), static_cast<int>(dim), std::move(weights));
}

PatchEncoder PatchEncoder::orthogonal(int patch, int dim, std::uint64_t seed) {
  const int n = patch * patch * 3;
  if (dim > n) throw InvalidArgument("orthogonal encoder needs dim <= patch*patch*3");
  Rng rng(seed);
  std::vector<double> rows(static_cast<std::size_t>(dim) * n);
  for (double& v : rows) v = rng.normal();
  // Modified Gram-Schmidt, twice for numerical orthogonality.
  for (int i = 0; i < dim; ++i) {
    double* ri = &rows[static_cast<std::size_t>(i) * n];
    for (int pass = 0; pass < 2; ++pass) {
      for (int j = 0; j < i; ++j) {
        const double* rj = &rows[static_cast<std::size_t>(j) * n];
        double dot = 0.0;
        for (int k = 0; k < n; ++k) dot += ri[k] * rj[k];
        for (int k = 0; k < n; ++k) ri[k] -= dot * rj[k];
      }
    }
    double norm = 0.0;
    for (int k = 0; k < n; ++k) norm += ri[k] * ri[k];
    norm = std::sqrt(norm);
    for (int k = 0; k < n; ++k) ri[k] /= norm;
  }
  std::vector<float> weights(rows.begin(), rows.end());
  return PatchEncoder(patch, dim, std::move(weights));
}

FeatureGrid PatchEncoder::encode(const ImageTensor& img) const {
  check_divisible(img, patch_);
  FeatureGrid grid;
  grid.rows = img.height / patch_;
  grid.cols = img.width / patch_;
  grid.dim = dim_;
  grid.values.resize(grid.cells() * dim_);
  const int n = input_size();
  std::vector<float> block;
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      gather_block(img, patch_, r, c, block);
      float* out = &grid.values[CodeGrid::flat_index(r, c, grid.cols) * dim_];
      for (int f = 0; f < dim_; ++f) {
        const float* w = &weights_[static_cast<std::size_t>(f) * n];
        double acc = 0.0;
        for (int k = 0; k < n; ++k) acc += static_cast<double>(w[k]) * block[k];
        out[f] = static_cast<float>(acc);
      }
    }
  }
  return grid;
}

Codebook::Codebook(std::uint32_t size, std::uint32_t dim, std::vector<float> vectors)
    : size_(size), dim_(dim), vectors_(std::move(vectors)) {
  if (size_ < 1 || dim_ < 1) throw InvalidArgument("codebook needs K >= 1 and d >= 1");
  if (vectors_.size() != static_cast<std::size_t>(size_) * dim_) {
    throw ShapeError("codebook vectors must be K x d");
  }
  for (float v : vectors_) {
    if (!std::isfinite(v)) throw InvalidArgument("codebook vectors must be finite");
  }
  std::vector<Code> order(size_);
  std::iota(order.begin(), order.end(), Code{0});
  auto less = [&](Code a, Code b) {
    auto ra = row(a), rb = row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  };
  std::sort(order.begin(), order.end(), less);
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (!less(order[i - 1], order[i])) {
      throw InvalidArgument("codebook has duplicate rows " + std::to_string(order[i - 1]) +
                            " and " + std::to_string(order[i]));
    }
  }
  id_ = io::fnv1a64(codebook_body(size_, dim_, vectors_).buffer());
}

Code Codebook::nearest(std::span<const float> feature) const {
  if (feature.size() != dim_) throw ShapeError("feature dim does not match codebook dim");
  Code best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Code k = 0; k < size_; ++k) {
    const float* v = &vectors_[static_cast<std::size_t>(k) * dim_];
    double d = 0.0;
    for (std::uint32_t j = 0; j < dim_; ++j) {
      const double diff = static_cast<double>(feature[j]) - v[j];
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

void Codebook::save(const std::filesystem::path& path) const {
  io::Writer w = codebook_body(size_, dim_, vectors_);
  w.u64(id_);
  w.save(path);
}

Codebook Codebook::load(const std::filesystem::path& path) {
  io::Reader r = io::Reader::from_file(path);
  r.expect_magic(kCodebookMagic);
  const std::uint32_t size = r.u32();
  const std::uint32_t dim = r.u32();
  if (static_cast<std::uint64_t>(size) * dim * 4 > r.remaining()) {
    throw FormatError(path.string() + ": truncated codebook");
  }
  std::vector<float> vectors(static_cast<std::size_t>(size) * dim);
  for (float& v : vectors) v = r.f32();
  const std::uint64_t stored = io::fnv1a64(r.consumed());
  const std::uint64_t hash = r.u64();
  r.expect_end();
  if (hash != stored) throw FormatError(path.string() + ": codebook hash mismatch");
  return Codebook(size, dim, std::move(vectors));
}

CodeGrid quantize(const FeatureGrid& features, const Codebook& cb) {
  if (static_cast<std::uint32_t>(features.dim) != cb.dim()) {
    throw ShapeError("feature dim " + std::to_string(features.dim) +
                     " does not match codebook dim " + std::to_string(cb.dim()));
  }
  CodeGrid grid;
  grid.rows = features.rows;
  grid.cols = features.cols;
  grid.codebook_id = cb.id();
  grid.codes.resize(features.cells());
  for (std::size_t t = 0; t < grid.codes.size(); ++t) grid.codes[t] = cb.nearest(features.cell(t));
  return grid;
}

BlockDecoder::BlockDecoder(int patch, std::vector<std::vector<float>> blocks)
    : patch_(patch), blocks_(std::move(blocks)) {
  const std::size_t n = static_cast<std::size_t>(patch) * patch * 3;
  for (const auto& b : blocks_) {
    if (b.size() != n) throw ShapeError("decoder block size mismatch");
  }
}

BlockDecoder BlockDecoder::fit_mean_patch(const PatchEncoder& enc, const Codebook& cb,
                                          std::span<const ImageTensor> corpus) {
  if (static_cast<std::uint32_t>(enc.dim()) != cb.dim()) {
    throw ShapeError("encoder dim does not match codebook dim");
  }
  const int p = enc.patch();
  const std::size_t n = static_cast<std::size_t>(enc.input_size());
  std::vector<std::vector<double>> sums(cb.size(), std::vector<double>(n, 0.0));
  std::vector<std::size_t> hits(cb.size(), 0);
  std::vector<float> block;
  for (const ImageTensor& img : corpus) {
    const CodeGrid grid = quantize(enc.encode(img), cb);
    for (int r = 0; r < grid.rows; ++r) {
      for (int c = 0; c < grid.cols; ++c) {
        const Code k = grid.at(r, c);
        gather_block(img, p, r, c, block);
        for (std::size_t i = 0; i < n; ++i) sums[k][i] += block[i];
        ++hits[k];
      }
    }
  }
  std::vector<std::vector<float>> blocks(cb.size(), std::vector<float>(n));
  const auto w = enc.weights();
  for (Code k = 0; k < cb.size(); ++k) {
    if (hits[k] > 0) {
      for (std::size_t i = 0; i < n; ++i) {
        blocks[k][i] = static_cast<float>(sums[k][i] / static_cast<double>(hits[k]));
      }
      continue;
    }
    const auto v = cb.row(k);
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int f = 0; f < enc.dim(); ++f) acc += static_cast<double>(w[f * n + i]) * v[f];
      blocks[k][i] = static_cast<float>(std::clamp(acc, 0.0, 1.0));
    }
  }
  return BlockDecoder(p, std::move(blocks));
}

ImageTensor BlockDecoder::render(const CodeGrid& grid) const {
  ImageTensor out(grid.rows * patch_, grid.cols * patch_);
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      const Code k = grid.at(r, c);
      if (k >= blocks_.size()) throw VocabularyError("code outside decoder range");
      const auto& b = blocks_[k];
      std::size_t i = 0;
      for (int dy = 0; dy < patch_; ++dy) {
        float* dst = &out.data[out.index(r * patch_ + dy, c * patch_)];
        for (int j = 0; j < patch_ * 3; ++j) dst[j] = b[i++];
      }
    }
  }
  return out;
}

ImageTensor roundtrip_distort(const ImageTensor& img, const PatchEncoder& enc, const Codebook& cb,
                              const BlockDecoder& dec) {
  if (dec.patch() != enc.patch()) throw ShapeError("decoder patch size differs from encoder");
  if (dec.size() != cb.size()) throw VocabularyError("decoder size differs from codebook K");
  return dec.render(quantize(enc.encode(img), cb));
}

}  // namespace leica
