// Throughput of the scoring pipeline stages on the synthetic world.

#include <benchmark/benchmark.h>

#include <cmath>

#include "leica/credit_perceptual.hpp"
#include "leica/credit_semantic.hpp"
#include "leica/metaeval.hpp"
#include "leica/metric.hpp"
#include "leica/perturb.hpp"
#include "leica/rng.hpp"
#include "leica/synthworld.hpp"

namespace {

using namespace leica;

// Fitting the oracles takes seconds, so every benchmark shares one set.
struct Fixture {
  synth::Oracles oracles = synth::build_oracles(synth::oracle_corpus());
  ReferenceMatcher matcher{oracles.matcher};
  Caption caption;
  ImageTensor image;

  Fixture() {
    auto [cap, img] = synth::generate(synth::sample_scenes(1, 1)[0]);
    caption = std::move(cap);
    image = std::move(img);
  }
  ModelBundle bundle() const { return {&oracles.estimator, &oracles.tokenizer, &oracles.prior, &matcher}; }

  static const Fixture& get() {
    static const Fixture f;
    return f;
  }
};

void BM_Tokenize(benchmark::State& state) {
  const Fixture& f = Fixture::get();
  for (auto _ : state) benchmark::DoNotOptimize(f.oracles.tokenizer.tokenize(f.image));
}
BENCHMARK(BM_Tokenize);

void BM_TeacherForced(benchmark::State& state) {
  const Fixture& f = Fixture::get();
  const CodeGrid grid = f.oracles.tokenizer.tokenize(f.image);
  for (auto _ : state) benchmark::DoNotOptimize(score_teacher_forced(f.oracles.estimator, f.caption, grid));
}
BENCHMARK(BM_TeacherForced);

void BM_Autoregressive(benchmark::State& state) {
  const Fixture& f = Fixture::get();
  const CodeGrid grid = f.oracles.tokenizer.tokenize(f.image);
  for (auto _ : state) {
    benchmark::DoNotOptimize(score_autoregressive_oracle(f.oracles.estimator, f.caption, grid));
  }
}
BENCHMARK(BM_Autoregressive);

void BM_PatchAlignment(benchmark::State& state) {
  const Fixture& f = Fixture::get();
  for (auto _ : state) benchmark::DoNotOptimize(f.matcher.patch_alignment(f.caption, f.image));
}
BENCHMARK(BM_PatchAlignment);

void BM_LeicaScore(benchmark::State& state) {
  const Fixture& f = Fixture::get();
  const ModelBundle models = f.bundle();
  for (auto _ : state) benchmark::DoNotOptimize(leica_score(f.caption, f.image, models, {}));
}
BENCHMARK(BM_LeicaScore);

void BM_Distort(benchmark::State& state) {
  const Fixture& f = Fixture::get();
  const auto kind = static_cast<DistortionKind>(state.range(0));
  DistortionSpec spec{kind, kind == DistortionKind::gb ? 2.0 : 0.1, 7};
  for (auto _ : state) benchmark::DoNotOptimize(distort_image(f.image, spec));
  state.SetLabel(std::string(to_string(kind)));
}
BENCHMARK(BM_Distort)
    ->Arg(static_cast<int>(DistortionKind::gn))
    ->Arg(static_cast<int>(DistortionKind::gb))
    ->Arg(static_cast<int>(DistortionKind::spn));

void BM_KendallTau(benchmark::State& state) {
  Rng rng(3);
  std::vector<double> a(static_cast<std::size_t>(state.range(0))), b(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = rng.normal();
    b[i] = std::floor(rng.normal() * 4.0);
  }
  for (auto _ : state) benchmark::DoNotOptimize(kendall_tau(a, b));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_KendallTau)->RangeMultiplier(4)->Range(256, 65536)->Complexity(benchmark::oNLogN);

}  // namespace

BENCHMARK_MAIN();
