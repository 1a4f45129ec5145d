#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "leica/credit_semantic.hpp"
#include "leica/errors.hpp"
#include "leica/rng.hpp"
#include "leica/synthworld.hpp"
#include "test_support.hpp"

namespace leica {
namespace {

// One palette color (red), identity attention path and a caller-chosen
// final projection. Slots: 0 red, 1 saturation, 2 texture, 3 constant.
MatcherWeights tiny_weights(int joint_dim, std::vector<float> proj) {
  MatcherWeights w;
  w.patch = 8;
  w.heads = 1;
  w.palette = {{1.0f, 0.0f, 0.0f}};
  w.palette_sigma = 0.5f;
  w.embed_dim = 4;
  w.value_dim = 4;
  w.joint_dim = joint_dim;
  w.class_embedding = {1.0f, 1.0f, 1.0f, 1.0f};
  std::vector<float> eye(16, 0.0f);
  for (int i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0f;
  w.wq = std::vector<float>(16, 0.0f);
  w.wk = std::vector<float>(16, 0.0f);
  w.wv = eye;
  w.wo = eye;
  w.tail_gain = {1.0f, 1.0f, 1.0f, 1.0f};
  w.proj = std::move(proj);
  return w;
}

ImageTensor flat(int size, float r, float g, float b) {
  ImageTensor img(size, size);
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    img.data[i * 3] = r;
    img.data[i * 3 + 1] = g;
    img.data[i * 3 + 2] = b;
  }
  return img;
}

TEST(PatchAlignment, ProjectedValuesParallelToTextGivePhiOne) {
  MatcherWeights w = tiny_weights(1, {1.0f, 0.0f, 0.0f, 0.0f});
  w.word_embeddings["red"] = {1.0f};
  const ReferenceMatcher m(w);
  const SemanticMap map = m.patch_alignment(Caption::parse("red"), flat(16, 0.9f, 0.1f, 0.1f));
  ASSERT_EQ(map.s, 2);
  for (double v : map.phi) EXPECT_NEAR(v, 1.0, 1e-12);
}

TEST(PatchAlignment, OrthogonalProjectionGivesPhiZero) {
  // Gray has no saturation, so W v_t only has a palette component.
  MatcherWeights w = tiny_weights(2, {1.0f, 0.0f, 0.0f, 0.0f, 0.0f, 1.0f, 0.0f, 0.0f});
  w.word_embeddings["vivid"] = {0.0f, 1.0f};
  const ReferenceMatcher m(w);
  const SemanticMap map = m.patch_alignment(Caption::parse("vivid"), flat(16, 0.5f, 0.5f, 0.5f));
  for (double v : map.phi) EXPECT_EQ(v, 0.0);
}

TEST(PatchAlignment, PhiAndPsiAreBoundedCosines) {
  const ReferenceMatcher m(synth::build_oracle_matcher());
  for (int i = 0; i < 20; ++i) {
    const SemanticMap map = m.patch_alignment(Caption::parse("a red circle on slate"), test::random_image(128, 128, i));
    EXPECT_LE(std::abs(map.psi), 1.0 + 1e-6);
    for (double v : map.phi) {
      EXPECT_TRUE(std::isfinite(v));
      EXPECT_LE(std::abs(v), 1.0 + 1e-6);
    }
  }
}

TEST(PatchAlignment, ScalingValuesLeavesPhiUnchanged) {
  const MatcherWeights base = synth::build_oracle_matcher();
  MatcherWeights scaled = base;
  for (float& x : scaled.wv) x *= 3.5f;
  const ReferenceMatcher a(base), b(scaled);
  const auto [cap, img] = synth::generate({synth::Shape::circle, 2, synth::Quadrant::br, 1, 0});
  const SemanticMap ma = a.patch_alignment(cap, img);
  const SemanticMap mb = b.patch_alignment(cap, img);
  for (std::size_t t = 0; t < ma.phi.size(); ++t) EXPECT_NEAR(ma.phi[t], mb.phi[t], 1e-12);
}

TEST(PatchAlignment, ZeroTextEmbeddingIsDegenerate) {
  const ReferenceMatcher m(synth::build_oracle_matcher());
  EXPECT_THROW(m.patch_alignment(Caption::parse("zebra"), flat(128, 0.5f, 0.5f, 0.5f)), DegenerateError);
}

TEST(PatchAlignment, ShapeMismatchIsRejected) {
  const ReferenceMatcher m(synth::build_oracle_matcher());
  EXPECT_THROW(m.patch_alignment(Caption::parse("red"), flat(100, 0.5f, 0.5f, 0.5f)), ShapeError);
  EXPECT_THROW(m.patch_alignment(Caption::parse("red"), ImageTensor(128, 96)), ShapeError);
}

TEST(ResizeMap, ClosedFormColumns) {
  const std::vector<double> phi{0.0, 1.0, 0.0, 1.0};
  const auto out = resize_map(phi, 2, 4, 4);
  const double expect[4] = {0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0};
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) EXPECT_NEAR(out[r * 4 + c], expect[c], 1e-15);
  }
}

TEST(ResizeMap, IdentityAndConstants) {
  Rng rng(1);
  std::vector<double> phi(9);
  for (double& v : phi) v = rng.uniform() * 2.0 - 1.0;
  EXPECT_EQ(resize_map(phi, 3, 3, 3), phi);
  const auto c = resize_map(std::vector<double>(16, 0.25), 4, 8, 8);
  for (double v : c) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(ResizeSequence, EndAlignedLinear) {
  const std::vector<double> seq{0.0, 3.0};
  const auto out = resize_sequence(seq, 4);
  EXPECT_EQ(out, (std::vector<double>{0.0, 1.0, 2.0, 3.0}));
}

TEST(SemanticScore, HandArithmeticSpotValue) {
  const SemanticMap map{std::vector<double>(4, 0.5), 0.3, 2};
  const auto out = semantic_score(map, 8, 8, {});
  ASSERT_EQ(out.size(), 64u);
  for (double v : out) EXPECT_NEAR(v, 36.33, 0.05);
  EXPECT_NEAR(out[0], std::exp(0.3 / 0.07) * 0.5, 1e-12);
}

TEST(SemanticScore, NegativePhiIsClipped) {
  const SemanticMap map{std::vector<double>(4, -0.3), 0.9, 2};
  for (double v : semantic_score(map, 4, 4, {})) EXPECT_EQ(v, 0.0);
}

TEST(SemanticScore, GlobalFactorCanBeDisabled) {
  const SemanticMap map{std::vector<double>(4, 0.5), 0.3, 2};
  SemanticConfig cfg;
  cfg.use_global = false;
  for (double v : semantic_score(map, 4, 4, cfg)) EXPECT_EQ(v, 0.5);
  cfg.tau = 0.0;
  EXPECT_THROW(semantic_score(map, 4, 4, cfg), InvalidArgument);
}

TEST(SemanticScore, NonnegativeAndIncreasingInPsi) {
  Rng rng(2);
  std::vector<double> phi(16);
  for (double& v : phi) v = rng.uniform() * 2.0 - 1.0;
  phi[3] = 0.4;
  double prev = -1.0;
  for (double psi = -1.0; psi <= 1.0; psi += 0.1) {
    const auto out = semantic_score({phi, psi, 4}, 8, 8, {});
    for (double v : out) EXPECT_GE(v, 0.0);
    const double total = std::accumulate(out.begin(), out.end(), 0.0);
    EXPECT_GT(total, prev);
    prev = total;
  }
}

TEST(SemanticScore, OneDimensionalResizeOption) {
  SemanticConfig cfg;
  cfg.resize = PhiResize::linear_1d;
  cfg.use_global = false;
  const SemanticMap map{{0.0, 1.0, 2.0, 3.0}, 0.0, 2};
  const auto out = semantic_score(map, 1, 7, cfg);
  EXPECT_EQ(out, (std::vector<double>{0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0}));
}

TEST(MatcherWeights, SaveLoadRoundTrip) {
  const MatcherWeights w = synth::build_oracle_matcher();
  const auto dir = test::fresh_dir("matcher");
  w.save(dir / "m.leimm");
  const MatcherWeights back = MatcherWeights::load(dir / "m.leimm");
  EXPECT_EQ(back.proj, w.proj);
  EXPECT_EQ(back.word_embeddings, w.word_embeddings);
  const auto [cap, img] = synth::generate({synth::Shape::square, 5, synth::Quadrant::tr, 3, 1});
  const SemanticMap a = ReferenceMatcher(w).patch_alignment(cap, img);
  const SemanticMap b = ReferenceMatcher(back).patch_alignment(cap, img);
  EXPECT_EQ(a.phi, b.phi);
  EXPECT_EQ(a.psi, b.psi);
}

int quadrant_of(int r, int c, int s) { return (r < s / 2 ? 0 : 2) + (c < s / 2 ? 0 : 1); }

TEST(OracleMatcher, ArgmaxLiesInTheShapeQuadrant) {
  const ReferenceMatcher m(synth::build_oracle_matcher());
  for (const auto& spec : synth::enumerate_scenes(3)) {
    const auto [cap, img] = synth::generate(spec);
    const SemanticMap map = m.patch_alignment(cap, img);
    const auto best = static_cast<int>(std::max_element(map.phi.begin(), map.phi.end()) - map.phi.begin());
    EXPECT_EQ(quadrant_of(best / map.s, best % map.s, map.s), static_cast<int>(spec.quadrant))
        << synth::scene_id(spec);
  }
}

TEST(OracleMatcher, ForegroundPatchesOutscoreBackground) {
  const ReferenceMatcher m(synth::build_oracle_matcher());
  const int size = 128;
  for (const auto& spec : synth::enumerate_scenes(1)) {
    const auto [cap, img] = synth::generate(spec, size);
    const auto mask = synth::foreground_mask(spec, size);
    const SemanticMap map = m.patch_alignment(cap, img);
    const int p = size / map.s;
    double fg = 0.0, bg = 0.0;
    int n_fg = 0, n_bg = 0;
    for (int t = 0; t < map.s * map.s; ++t) {
      bool covered = false;
      for (int y = (t / map.s) * p; y < (t / map.s + 1) * p && !covered; ++y) {
        for (int x = (t % map.s) * p; x < (t % map.s + 1) * p; ++x) {
          if (mask[static_cast<std::size_t>(y) * size + x]) {
            covered = true;
            break;
          }
        }
      }
      (covered ? fg : bg) += map.phi[t];
      ++(covered ? n_fg : n_bg);
    }
    ASSERT_GT(n_fg, 0);
    ASSERT_GT(n_bg, 0);
    EXPECT_GT(fg / n_fg, bg / n_bg) << synth::scene_id(spec);
  }
}

}  // namespace
}  // namespace leica
