#include "leica/synthworld.hpp"

#include <cmath>

#include "leica/errors.hpp"
#include "leica/rng.hpp"

namespace leica::synth {

namespace {

constexpr NamedColor kForeground[kColors] = {
    {"red", {220, 30, 30}},     {"green", {30, 180, 60}},  {"blue", {40, 70, 220}},
    {"yellow", {240, 220, 40}}, {"orange", {245, 140, 20}}, {"purple", {140, 50, 180}},
    {"pink", {240, 110, 190}},  {"cyan", {40, 200, 220}},
};

constexpr NamedColor kBackground[kBackgrounds] = {
    {"gray", {128, 128, 128}},
    {"beige", {200, 185, 150}},
    {"slate", {100, 115, 135}},
    {"olive", {130, 130, 90}},
};

constexpr std::string_view kShapeNames[kShapes] = {"square", "circle", "triangle"};

struct Box {
  int x0, y0, side;
};

void check_size(int size) {
  if (size < 64 || size % 16 != 0) {
    throw InvalidArgument("synthetic image size must be a multiple of 16 and at least 64, got " +
                          std::to_string(size));
  }
}

Box shape_box(const SceneSpec& spec, int size) {
  const int half = size / 2, step = size / 16;
  const int jitter = static_cast<int>(spec.seed % kJitters);
  const bool right = spec.quadrant == Quadrant::tr || spec.quadrant == Quadrant::br;
  const bool bottom = spec.quadrant == Quadrant::bl || spec.quadrant == Quadrant::br;
  return {(right ? half : 0) + step * (1 + (jitter & 1)),
          (bottom ? half : 0) + step * (1 + ((jitter >> 1) & 1)), size * 5 / 16};
}

bool covers(Shape shape, const Box& b, int y, int x) {
  const double u = x + 0.5 - b.x0, v = y + 0.5 - b.y0;
  const double side = b.side;
  if (u < 0 || v < 0 || u > side || v > side) return false;
  const double half = side / 2.0;
  switch (shape) {
    case Shape::square:
      return true;
    case Shape::circle:
      return (u - half) * (u - half) + (v - half) * (v - half) <= half * half;
    case Shape::triangle:
      // Apex at the top middle, base along the bottom edge.
      return std::abs(u - half) <= v / 2.0;
  }
  return false;
}

}  // namespace

std::span<const NamedColor> foreground_colors() { return kForeground; }
std::span<const NamedColor> background_colors() { return kBackground; }

std::string_view to_string(Shape shape) { return kShapeNames[static_cast<int>(shape)]; }

std::string_view to_string(Quadrant quadrant) {
  switch (quadrant) {
    case Quadrant::tl: return "tl";
    case Quadrant::tr: return "tr";
    case Quadrant::bl: return "bl";
    case Quadrant::br: return "br";
  }
  return "?";
}

void validate(const SceneSpec& spec) {
  if (static_cast<int>(spec.shape) < 0 || static_cast<int>(spec.shape) >= kShapes) {
    throw InvalidArgument("scene shape out of range");
  }
  if (static_cast<int>(spec.quadrant) < 0 || static_cast<int>(spec.quadrant) >= kQuadrants) {
    throw InvalidArgument("scene quadrant out of range");
  }
  if (spec.color < 0 || spec.color >= kColors) throw InvalidArgument("scene color out of range");
  if (spec.background < 0 || spec.background >= kBackgrounds) {
    throw InvalidArgument("scene background out of range");
  }
}

std::string caption_text(const SceneSpec& spec) {
  validate(spec);
  const bool right = spec.quadrant == Quadrant::tr || spec.quadrant == Quadrant::br;
  const bool bottom = spec.quadrant == Quadrant::bl || spec.quadrant == Quadrant::br;
  std::string out = "a ";
  out += kForeground[spec.color].name;
  out += ' ';
  out += to_string(spec.shape);
  out += bottom ? " in the bottom " : " in the top ";
  out += right ? "right" : "left";
  out += " on ";
  out += kBackground[spec.background].name;
  return out;
}

std::string scene_id(const SceneSpec& spec) {
  validate(spec);
  std::string out(kForeground[spec.color].name);
  out += '-';
  out += to_string(spec.shape);
  out += '-';
  out += to_string(spec.quadrant);
  out += '-';
  out += kBackground[spec.background].name;
  out += "-j" + std::to_string(spec.seed % kJitters);
  return out;
}

std::vector<std::uint8_t> foreground_mask(const SceneSpec& spec, int size) {
  validate(spec);
  check_size(size);
  const Box box = shape_box(spec, size);
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(size) * size, 0);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) mask[static_cast<std::size_t>(y) * size + x] = covers(spec.shape, box, y, x);
  }
  return mask;
}

std::pair<Caption, ImageTensor> generate(const SceneSpec& spec, int size) {
  const std::vector<std::uint8_t> mask = foreground_mask(spec, size);
  ImageTensor img;
  img.height = size;
  img.width = size;
  img.data.resize(static_cast<std::size_t>(size) * size * 3);
  const auto& fg = kForeground[spec.color].rgb;
  const auto& bg = kBackground[spec.background].rgb;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const auto& rgb = mask[i] ? fg : bg;
    for (int c = 0; c < 3; ++c) img.data[i * 3 + c] = static_cast<float>(rgb[c]) / 255.0f;
  }
  return {Caption::parse(caption_text(spec)), std::move(img)};
}

std::vector<SceneSpec> enumerate_scenes(std::uint64_t seed) {
  std::vector<SceneSpec> out;
  out.reserve(kScenes);
  for (int s = 0; s < kShapes; ++s) {
    for (int c = 0; c < kColors; ++c) {
      for (int q = 0; q < kQuadrants; ++q) {
        for (int b = 0; b < kBackgrounds; ++b) {
          out.push_back({static_cast<Shape>(s), c, static_cast<Quadrant>(q), b, seed});
        }
      }
    }
  }
  return out;
}

std::vector<SceneSpec> oracle_corpus() {
  std::vector<SceneSpec> out;
  out.reserve(static_cast<std::size_t>(kScenes) * kJitters);
  for (int j = 0; j < kJitters; ++j) {
    for (const auto& spec : enumerate_scenes(static_cast<std::uint64_t>(j))) out.push_back(spec);
  }
  return out;
}

std::vector<SceneSpec> sample_scenes(std::size_t n, std::uint64_t seed) {
  const std::vector<SceneSpec> scenes = enumerate_scenes();
  Rng rng(seed);
  std::vector<SceneSpec> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    SceneSpec spec = scenes[rng.below(scenes.size())];
    spec.seed = rng.below(kJitters);
    out.push_back(spec);
  }
  return out;
}

Lexicon keyword_lexicon() {
  Lexicon lex;
  for (const auto& c : kForeground) lex.emplace(c.name);
  for (const auto& c : kBackground) lex.emplace(c.name);
  for (const auto& s : kShapeNames) lex.emplace(s);
  for (const char* w : {"top", "bottom", "left", "right"}) lex.emplace(w);
  return lex;
}

MatcherWeights build_oracle_matcher(const OracleMatcherOptions& opts) {
  MatcherWeights w;
  w.patch = opts.patch;
  w.heads = 1;
  for (const auto& c : kForeground) {
    w.palette.push_back({c.rgb[0] / 255.0f, c.rgb[1] / 255.0f, c.rgb[2] / 255.0f});
  }
  for (const auto& c : kBackground) {
    w.palette.push_back({c.rgb[0] / 255.0f, c.rgb[1] / 255.0f, c.rgb[2] / 255.0f});
  }
  w.palette_sigma = opts.palette_sigma;
  w.texture_gain = opts.texture_gain;
  const int e = static_cast<int>(w.palette.size()) + 3;
  w.embed_dim = e;
  w.value_dim = e;
  // Joint axes: one per foreground color, one per shape, scenery, clutter.
  const int scenery = kColors + kShapes, clutter = scenery + 1;
  w.joint_dim = clutter + 1;

  auto at = [](std::vector<float>& m, int cols, int r, int c) -> float& {
    return m[static_cast<std::size_t>(r) * cols + c];
  };
  w.class_embedding.assign(e, 0.0f);
  w.class_embedding[w.constant_slot()] = 1.0f;
  w.wq.assign(static_cast<std::size_t>(e) * e, 0.0f);
  w.wk.assign(static_cast<std::size_t>(e) * e, 0.0f);
  w.wv.assign(static_cast<std::size_t>(e) * e, 0.0f);
  w.wo.assign(static_cast<std::size_t>(e) * e, 0.0f);
  for (int i = 0; i < e; ++i) {
    at(w.wv, e, i, i) = 1.0f;
    at(w.wo, e, i, i) = 1.0f;
  }
  // q.k / sqrt(e) = sharpness * saturation for every token.
  at(w.wq, e, 0, w.constant_slot()) = static_cast<float>(opts.attention_sharpness * std::sqrt(e));
  at(w.wk, e, 0, w.saturation_slot()) = 1.0f;
  w.tail_gain.assign(e, 1.0f);

  w.proj.assign(static_cast<std::size_t>(w.joint_dim) * e, 0.0f);
  for (int c = 0; c < kColors; ++c) at(w.proj, e, c, c) = 1.0f;
  for (int b = 0; b < kBackgrounds; ++b) {
    at(w.proj, e, scenery, kColors + b) = static_cast<float>(opts.scenery_weight);
  }
  at(w.proj, e, clutter, w.texture_slot()) = static_cast<float>(opts.clutter_weight);

  for (int c = 0; c < kColors; ++c) {
    std::vector<float> v(w.joint_dim, 0.0f);
    v[c] = 1.0f;
    w.word_embeddings.emplace(std::string(kForeground[c].name), std::move(v));
  }
  for (int s = 0; s < kShapes; ++s) {
    std::vector<float> v(w.joint_dim, 0.0f);
    v[kColors + s] = static_cast<float>(opts.shape_weight);
    w.word_embeddings.emplace(std::string(kShapeNames[s]), std::move(v));
  }
  w.validate();
  return w;
}

Oracles build_oracles(std::span<const SceneSpec> corpus, const OracleOptions& opts) {
  if (corpus.empty()) throw InvalidArgument("oracle corpus is empty");
  std::vector<Caption> captions;
  std::vector<ImageTensor> images;
  captions.reserve(corpus.size());
  images.reserve(corpus.size());
  for (const auto& spec : corpus) {
    auto [cap, img] = generate(spec, opts.image_size);
    captions.push_back(std::move(cap));
    images.push_back(std::move(img));
  }
  PatchEncoder encoder = PatchEncoder::orthogonal(opts.patch, opts.dim, opts.encoder_seed);
  Codebook codebook = fit_codebook(encoder, images, opts.kmeans);
  Tokenizer tokenizer{std::move(encoder), std::move(codebook)};

  std::vector<CodeGrid> grids;
  grids.reserve(images.size());
  for (const auto& img : images) grids.push_back(tokenizer.tokenize(img));

  CountModel estimator(tokenizer.codebook.size(), opts.alpha, tokenizer.codebook.id());
  for (std::size_t i = 0; i < grids.size(); ++i) estimator.add(captions[i], grids[i]);
  CodePrior prior = estimate_prior(grids, tokenizer.codebook.size(), opts.prior_alpha);
  return {std::move(tokenizer), std::move(estimator), std::move(prior), build_oracle_matcher(opts.matcher)};
}

}  // namespace leica::synth
