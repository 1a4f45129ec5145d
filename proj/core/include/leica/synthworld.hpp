#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "leica/credit_perceptual.hpp"
#include "leica/credit_semantic.hpp"
#include "leica/image.hpp"
#include "leica/kmeans.hpp"
#include "leica/likelihood.hpp"
#include "leica/perturb.hpp"
#include "leica/tokenizer.hpp"

namespace leica::synth {

enum class Shape { square, circle, triangle };
enum class Quadrant { tl, tr, bl, br };

struct NamedColor {
  std::string_view name;
  std::array<std::uint8_t, 3> rgb;
};

// Eight saturated foreground colors and four muted backgrounds.
std::span<const NamedColor> foreground_colors();
std::span<const NamedColor> background_colors();
std::string_view to_string(Shape shape);
std::string_view to_string(Quadrant quadrant);

inline constexpr int kShapes = 3;
inline constexpr int kColors = 8;
inline constexpr int kQuadrants = 4;
inline constexpr int kBackgrounds = 4;
inline constexpr int kScenes = kShapes * kColors * kQuadrants * kBackgrounds;
// Placement jitters; a scene's offset inside its quadrant is picked by seed % kJitters.
inline constexpr int kJitters = 4;

struct SceneSpec {
  Shape shape = Shape::square;
  int color = 0;       // index into foreground_colors()
  Quadrant quadrant = Quadrant::tl;
  int background = 0;  // index into background_colors()
  std::uint64_t seed = 0;

  bool operator==(const SceneSpec&) const = default;
};

void validate(const SceneSpec& spec);

// "a red square in the top left on gray"
std::string caption_text(const SceneSpec& spec);
// Stable identifier such as "red-square-tl-gray-j0".
std::string scene_id(const SceneSpec& spec);

/// Renders at size x size (a multiple of 16, at least 64). The shape spans
/// 5/16 of the side and sits inside its quadrant at one of four offsets.
/// Pixels are tested at their centers; there is no anti-aliasing.
std::pair<Caption, ImageTensor> generate(const SceneSpec& spec, int size = 128);

// Row-major size*size mask, 1 where the shape covers the pixel.
std::vector<std::uint8_t> foreground_mask(const SceneSpec& spec, int size = 128);

// All 384 scenes in (shape, color, quadrant, background) order, one seed.
std::vector<SceneSpec> enumerate_scenes(std::uint64_t seed = 0);
// Every scene at every jitter: the corpus the oracles are fit on.
std::vector<SceneSpec> oracle_corpus();
// n scenes drawn uniformly, with replacement, from scenes x jitters.
std::vector<SceneSpec> sample_scenes(std::size_t n, std::uint64_t seed);

// Color, background, shape and position words.
Lexicon keyword_lexicon();

struct OracleMatcherOptions {
  int patch = 32;
  float palette_sigma = 0.15f;
  float texture_gain = 1.0f;
  double attention_sharpness = 30.0;  // class-token logit per unit of saturation
  double scenery_weight = 0.05;       // background palette -> scenery axis
  double clutter_weight = 1.0;        // gradient energy -> clutter axis
  double shape_weight = 0.5;          // shape words in the text tower
};

/// Matcher whose value path is the identity, so W v_t reads a patch's palette
/// membership straight into the color axes of the joint space. The class
/// token attends to saturated patches; background colors land on a scenery
/// axis and gradient energy on a clutter axis that no caption contains.
MatcherWeights build_oracle_matcher(const OracleMatcherOptions& opts = {});

struct OracleOptions {
  int image_size = 128;
  int patch = 16;
  int dim = 32;
  std::uint64_t encoder_seed = 7;
  KMeansOptions kmeans{512, 20, 11};
  double alpha = 0.1;
  double prior_alpha = 1.0;
  OracleMatcherOptions matcher;
};

struct Oracles {
  Tokenizer tokenizer;
  CountModel estimator;
  CodePrior prior;
  MatcherWeights matcher;
};

/// Fits codebook, count-model estimator and prior on the rendered corpus
/// and builds the oracle matcher. Single-threaded and deterministic.
Oracles build_oracles(std::span<const SceneSpec> corpus, const OracleOptions& opts = {});

}  // namespace leica::synth
