#include "leica/credit_semantic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "leica/binary_io.hpp"
#include "leica/errors.hpp"

namespace leica {

namespace {

constexpr std::string_view kMatcherMagic = "LEIMM1";
constexpr std::uint32_t kMatcherVersion = 1;

// y = M x for a rows x cols row-major float matrix.
void matvec(std::span<const float> m, int rows, int cols, std::span<const double> x,
            std::span<double> y) {
  for (int r = 0; r < rows; ++r) {
    double acc = 0.0;
    const float* row = m.data() + static_cast<std::size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
}

void write_floats(io::Writer& w, std::span<const float> v) {
  for (float f : v) w.f32(f);
}

std::vector<float> read_floats(io::Reader& r, std::size_t n) {
  if (n * 4 > r.remaining()) throw FormatError("matcher file truncated");
  std::vector<float> v(n);
  for (float& f : v) f = r.f32();
  return v;
}

}  // namespace

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine of vectors with different sizes");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

void MatcherWeights::validate() const {
  const auto p = static_cast<int>(palette.size());
  if (patch < 1 || heads < 1 || p < 1) throw InvalidArgument("matcher needs patch, heads and palette");
  if (embed_dim != p + 3) throw ShapeError("matcher embed_dim must be palette size + 3");
  if (value_dim < heads || value_dim % heads != 0) throw ShapeError("value_dim must be a multiple of heads");
  if (joint_dim < 1) throw ShapeError("matcher joint_dim must be >= 1");
  if (!(palette_sigma > 0.0f)) throw InvalidArgument("palette sigma must be > 0");
  const auto e = static_cast<std::size_t>(embed_dim);
  const auto v = static_cast<std::size_t>(value_dim);
  const auto j = static_cast<std::size_t>(joint_dim);
  if (class_embedding.size() != e || tail_gain.size() != e || wq.size() != v * e ||
      wk.size() != v * e || wv.size() != v * e || wo.size() != e * v || proj.size() != j * e) {
    throw ShapeError("matcher weight matrices have inconsistent shapes");
  }
  for (const auto& [word, vec] : word_embeddings) {
    if (vec.size() != j) throw ShapeError("word embedding '" + word + "' has wrong size");
  }
}

void MatcherWeights::save(const std::filesystem::path& path) const {
  validate();
  io::Writer w;
  w.magic(kMatcherMagic);
  w.u32(kMatcherVersion);
  w.u32(static_cast<std::uint32_t>(patch));
  w.u32(static_cast<std::uint32_t>(heads));
  w.u32(static_cast<std::uint32_t>(palette.size()));
  for (const auto& rgb : palette) write_floats(w, rgb);
  w.f32(palette_sigma);
  w.f32(texture_gain);
  w.u32(static_cast<std::uint32_t>(embed_dim));
  w.u32(static_cast<std::uint32_t>(value_dim));
  w.u32(static_cast<std::uint32_t>(joint_dim));
  write_floats(w, class_embedding);
  write_floats(w, wq);
  write_floats(w, wk);
  write_floats(w, wv);
  write_floats(w, wo);
  write_floats(w, tail_gain);
  write_floats(w, proj);
  w.u32(static_cast<std::uint32_t>(word_embeddings.size()));
  for (const auto& [word, vec] : word_embeddings) {
    w.str(word);
    write_floats(w, vec);
  }
  w.u64(io::fnv1a64(w.buffer()));
  w.save(path);
}

MatcherWeights MatcherWeights::load(const std::filesystem::path& path) {
  io::Reader r = io::Reader::from_file(path);
  r.expect_magic(kMatcherMagic);
  if (r.u32() != kMatcherVersion) throw FormatError(path.string() + ": unsupported matcher version");
  MatcherWeights m;
  m.patch = static_cast<int>(r.u32());
  m.heads = static_cast<int>(r.u32());
  const std::uint32_t p = r.u32();
  if (p > 4096) throw FormatError(path.string() + ": implausible palette size");
  m.palette.resize(p);
  for (auto& rgb : m.palette) {
    for (float& c : rgb) c = r.f32();
  }
  m.palette_sigma = r.f32();
  m.texture_gain = r.f32();
  m.embed_dim = static_cast<int>(r.u32());
  m.value_dim = static_cast<int>(r.u32());
  m.joint_dim = static_cast<int>(r.u32());
  const auto e = static_cast<std::size_t>(m.embed_dim);
  const auto v = static_cast<std::size_t>(m.value_dim);
  const auto j = static_cast<std::size_t>(m.joint_dim);
  m.class_embedding = read_floats(r, e);
  m.wq = read_floats(r, v * e);
  m.wk = read_floats(r, v * e);
  m.wv = read_floats(r, v * e);
  m.wo = read_floats(r, e * v);
  m.tail_gain = read_floats(r, e);
  m.proj = read_floats(r, j * e);
  const std::uint32_t n_words = r.u32();
  for (std::uint32_t i = 0; i < n_words; ++i) {
    std::string word = r.str();
    m.word_embeddings[word] = read_floats(r, j);
  }
  const std::uint64_t expect = io::fnv1a64(r.consumed());
  if (r.u64() != expect) throw FormatError(path.string() + ": matcher hash mismatch");
  r.expect_end();
  try {
    m.validate();
  } catch (const Error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return m;
}

ReferenceMatcher::ReferenceMatcher(MatcherWeights weights) : w_(std::move(weights)) {
  w_.validate();
  // W = proj * wo, joint_dim x value_dim.
  const int e = w_.embed_dim, v = w_.value_dim, j = w_.joint_dim;
  patch_proj_.assign(static_cast<std::size_t>(j) * v, 0.0);
  for (int r = 0; r < j; ++r) {
    for (int k = 0; k < e; ++k) {
      const double a = w_.proj[static_cast<std::size_t>(r) * e + k];
      if (a == 0.0) continue;
      for (int c = 0; c < v; ++c) {
        patch_proj_[static_cast<std::size_t>(r) * v + c] += a * w_.wo[static_cast<std::size_t>(k) * v + c];
      }
    }
  }
}

std::vector<double> ReferenceMatcher::text_embedding(const Caption& caption) const {
  std::vector<double> x(w_.joint_dim, 0.0);
  for (const auto& tok : caption.tokens) {
    const auto it = w_.word_embeddings.find(tok);
    if (it == w_.word_embeddings.end()) continue;
    for (int i = 0; i < w_.joint_dim; ++i) x[i] += it->second[i];
  }
  return x;
}

std::vector<double> ReferenceMatcher::patch_embeddings(const ImageTensor& img, int& s) const {
  const int p = w_.patch;
  if (img.height != img.width) throw ShapeError("matcher expects square images");
  if (img.height % p != 0 || img.height < p) {
    throw ShapeError("image size " + std::to_string(img.height) +
                     " is not divisible by matcher patch " + std::to_string(p));
  }
  s = img.height / p;
  const int e = w_.embed_dim;
  const auto n_pal = w_.palette.size();
  const double inv_two_sigma2 = 1.0 / (2.0 * static_cast<double>(w_.palette_sigma) * w_.palette_sigma);
  const double n_px = static_cast<double>(p) * p;
  std::vector<double> emb(static_cast<std::size_t>(s) * s * e, 0.0);
  for (int pr = 0; pr < s; ++pr) {
    for (int pc = 0; pc < s; ++pc) {
      double* out = &emb[(static_cast<std::size_t>(pr) * s + pc) * e];
      double sat = 0.0, grad = 0.0;
      for (int dy = 0; dy < p; ++dy) {
        for (int dx = 0; dx < p; ++dx) {
          const int y = pr * p + dy, x = pc * p + dx;
          const float* px = &img.data[img.index(y, x)];
          for (std::size_t c = 0; c < n_pal; ++c) {
            const auto& ref = w_.palette[c];
            double d2 = 0.0;
            for (int ch = 0; ch < 3; ++ch) {
              const double diff = static_cast<double>(px[ch]) - ref[ch];
              d2 += diff * diff;
            }
            out[c] += std::exp(-d2 * inv_two_sigma2);
          }
          sat += std::max({px[0], px[1], px[2]}) - std::min({px[0], px[1], px[2]});
          // Squared differences to the right and lower neighbours in the patch.
          for (int ch = 0; ch < 3; ++ch) {
            if (dx + 1 < p) {
              const double d = static_cast<double>(img.data[img.index(y, x + 1) + ch]) - px[ch];
              grad += d * d;
            }
            if (dy + 1 < p) {
              const double d = static_cast<double>(img.data[img.index(y + 1, x) + ch]) - px[ch];
              grad += d * d;
            }
          }
        }
      }
      for (std::size_t c = 0; c < n_pal; ++c) out[c] /= n_px;
      out[w_.saturation_slot()] = sat / n_px;
      out[w_.texture_slot()] = p > 1 ? w_.texture_gain * grad / (2.0 * p * (p - 1)) : 0.0;
      out[w_.constant_slot()] = 0.0;
    }
  }
  return emb;
}

ReferenceMatcher::ImagePass ReferenceMatcher::image_pass(const ImageTensor& img) const {
  ImagePass pass;
  const std::vector<double> emb = patch_embeddings(img, pass.s);
  const int e = w_.embed_dim, v = w_.value_dim, heads = w_.heads;
  const int dh = v / heads;
  const std::size_t n = static_cast<std::size_t>(pass.s) * pass.s;
  const std::size_t tokens = n + 1;

  // Token 0 is the class slot.
  std::vector<double> tok(tokens * e);
  std::copy(w_.class_embedding.begin(), w_.class_embedding.end(), tok.begin());
  std::copy(emb.begin(), emb.end(), tok.begin() + e);

  std::vector<double> keys(tokens * v), vals(tokens * v), query(v);
  for (std::size_t i = 0; i < tokens; ++i) {
    const std::span<const double> x(&tok[i * e], e);
    matvec(w_.wk, v, e, x, std::span<double>(&keys[i * v], v));
    matvec(w_.wv, v, e, x, std::span<double>(&vals[i * v], v));
  }
  matvec(w_.wq, v, e, std::span<const double>(tok.data(), e), query);

  // Class-token attention over all tokens, head by head.
  std::vector<double> attended(v, 0.0), logits(tokens);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int h = 0; h < heads; ++h) {
    const std::size_t off = static_cast<std::size_t>(h) * dh;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < tokens; ++i) {
      double dot = 0.0;
      for (int d = 0; d < dh; ++d) dot += query[off + d] * keys[i * v + off + d];
      logits[i] = dot * scale;
      mx = std::max(mx, logits[i]);
    }
    double z = 0.0;
    for (double& l : logits) {
      l = std::exp(l - mx);
      z += l;
    }
    for (std::size_t i = 0; i < tokens; ++i) {
      const double a = logits[i] / z;
      for (int d = 0; d < dh; ++d) attended[off + d] += a * vals[i * v + off + d];
    }
  }

  std::vector<double> cls(e);
  matvec(w_.wo, e, v, attended, cls);
  for (int i = 0; i < e; ++i) cls[i] += w_.class_embedding[i];

  // Class-only tail: RMS normalization with gain, then the final projection.
  double ms = 0.0;
  for (double c : cls) ms += c * c;
  const double inv_rms = 1.0 / std::sqrt(ms / e + 1e-12);
  std::vector<double> normed(e);
  for (int i = 0; i < e; ++i) normed[i] = cls[i] * inv_rms * w_.tail_gain[i];
  pass.global.resize(w_.joint_dim);
  matvec(w_.proj, w_.joint_dim, e, normed, pass.global);

  pass.values.assign(vals.begin() + v, vals.end());
  return pass;
}

SemanticMap ReferenceMatcher::patch_alignment(const Caption& caption, const ImageTensor& img) const {
  const std::vector<double> x = text_embedding(caption);
  if (std::all_of(x.begin(), x.end(), [](double d) { return d == 0.0; })) {
    throw DegenerateError("caption '" + caption.raw + "' has a zero text embedding");
  }
  const ImagePass pass = image_pass(img);
  if (std::all_of(pass.global.begin(), pass.global.end(), [](double d) { return d == 0.0; })) {
    throw DegenerateError("image has a zero global embedding");
  }
  SemanticMap map;
  map.s = pass.s;
  map.psi = cosine(pass.global, x);
  const int v = w_.value_dim, j = w_.joint_dim;
  const std::size_t n = static_cast<std::size_t>(pass.s) * pass.s;
  map.phi.resize(n);
  std::vector<double> projected(j);
  for (std::size_t t = 0; t < n; ++t) {
    for (int r = 0; r < j; ++r) {
      double acc = 0.0;
      for (int c = 0; c < v; ++c) acc += patch_proj_[static_cast<std::size_t>(r) * v + c] * pass.values[t * v + c];
      projected[r] = acc;
    }
    map.phi[t] = cosine(projected, x);
  }
  return map;
}

std::vector<double> resize_map(std::span<const double> phi, int s, int h, int w) {
  if (s < 1 || h < 1 || w < 1) throw InvalidArgument("resize needs positive sizes");
  if (phi.size() != static_cast<std::size_t>(s) * s) throw ShapeError("phi must have s*s entries");
  auto coord = [s](int i, int n) { return n > 1 ? static_cast<double>(i) * (s - 1) / (n - 1) : 0.0; };
  std::vector<double> out(static_cast<std::size_t>(h) * w);
  for (int i = 0; i < h; ++i) {
    const double sy = coord(i, h);
    const int y0 = std::min(static_cast<int>(std::floor(sy)), s - 1);
    const int y1 = std::min(y0 + 1, s - 1);
    const double fy = sy - y0;
    for (int j = 0; j < w; ++j) {
      const double sx = coord(j, w);
      const int x0 = std::min(static_cast<int>(std::floor(sx)), s - 1);
      const int x1 = std::min(x0 + 1, s - 1);
      const double fx = sx - x0;
      const double top = (1.0 - fx) * phi[y0 * s + x0] + fx * phi[y0 * s + x1];
      const double bot = (1.0 - fx) * phi[y1 * s + x0] + fx * phi[y1 * s + x1];
      out[static_cast<std::size_t>(i) * w + j] = (1.0 - fy) * top + fy * bot;
    }
  }
  return out;
}

std::vector<double> resize_sequence(std::span<const double> phi, std::size_t out_len) {
  if (phi.empty() || out_len == 0) throw InvalidArgument("resize needs non-empty sequences");
  const std::size_t len = phi.size();
  std::vector<double> out(out_len);
  for (std::size_t i = 0; i < out_len; ++i) {
    const double src = out_len > 1 ? static_cast<double>(i) * (len - 1) / (out_len - 1) : 0.0;
    const std::size_t i0 = std::min(static_cast<std::size_t>(std::floor(src)), len - 1);
    const std::size_t i1 = std::min(i0 + 1, len - 1);
    const double f = src - i0;
    out[i] = (1.0 - f) * phi[i0] + f * phi[i1];
  }
  return out;
}

std::vector<double> semantic_score(const SemanticMap& map, int h, int w, const SemanticConfig& cfg) {
  if (!(cfg.tau > 0.0)) throw InvalidArgument("tau must be > 0");
  std::vector<double> resized = cfg.resize == PhiResize::bilinear_2d
                                    ? resize_map(map.phi, map.s, h, w)
                                    : resize_sequence(map.phi, static_cast<std::size_t>(h) * w);
  const double factor = cfg.use_global ? std::exp(map.psi / cfg.tau) : 1.0;
  for (double& r : resized) r = factor * std::max(r, 0.0);
  return resized;
}

}  // namespace leica
