// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Each line carries the measured values behind the verdict.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "leica/credit_perceptual.hpp"
#include "leica/credit_semantic.hpp"
#include "leica/likelihood.hpp"
#include "leica/metaeval.hpp"
#include "leica/metric.hpp"
#include "leica/parallel.hpp"
#include "leica/perturb.hpp"
#include "leica/rng.hpp"
#include "leica/synthworld.hpp"
#include "test_support.hpp"

#ifdef LEICA_WITH_CLI
#include "app.hpp"
#endif

namespace {

using namespace leica;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

int jobs() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

// Oracle models and the matched/mismatched set are shared by several
// criteria; both are built lazily.
struct World {
  synth::Oracles oracles;
  ReferenceMatcher matcher;
  double build_seconds = 0.0;

  static World& get() {
    static World w = [] {
      const auto t0 = std::chrono::steady_clock::now();
      synth::Oracles o = synth::build_oracles(synth::oracle_corpus());
      const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      ReferenceMatcher m(o.matcher);
      return World{std::move(o), std::move(m), dt};
    }();
    return w;
  }
  ModelBundle bundle() const { return {&oracles.estimator, &oracles.tokenizer, &oracles.prior, &matcher}; }
};

Caption random_caption(Rng& rng) {
  const auto lex = synth::keyword_lexicon();
  const std::vector<std::string> words(lex.begin(), lex.end());
  std::vector<std::string> toks{"a"};
  const std::size_t n = 1 + rng.below(5);
  for (std::size_t i = 0; i < n; ++i) toks.push_back(words[rng.below(words.size())]);
  return Caption::from_tokens(toks);
}

CodeGrid random_grid(std::uint32_t k, std::uint64_t id, Rng& rng) {
  CodeGrid g{static_cast<int>(1 + rng.below(8)), static_cast<int>(1 + rng.below(8)), {}, id};
  g.codes.resize(g.m() == 0 ? static_cast<std::size_t>(g.rows) * g.cols : g.m());
  for (Code& c : g.codes) c = static_cast<Code>(rng.below(k));
  return g;
}

// Count model fit on random data so that both seen and unseen contexts occur.
CountModel random_count_model(std::uint32_t k, std::uint64_t seed) {
  Rng rng(seed);
  CountModel model(k, 0.1, 99);
  for (int i = 0; i < 200; ++i) model.add(random_caption(rng), random_grid(k, 99, rng));
  return model;
}

Outcome criterion_parallel_sequential() {
  const auto t0 = std::chrono::steady_clock::now();
  const World& w = World::get();
  const UniformBackend uniform(512);
  const CountModel fitted = random_count_model(24, 1);
  Rng rng(2024);
  double worst = 0.0;
  for (int i = 0; i < 500; ++i) {
    const EstimatorBackend* backend;
    CodeGrid grid;
    const Caption cap = random_caption(rng);
    switch (i % 3) {
      case 0:
        backend = &uniform;
        grid = random_grid(512, 0, rng);
        break;
      case 1:
        backend = &fitted;
        grid = random_grid(24, 99, rng);
        break;
      default: {
        backend = &w.oracles.estimator;
        // Half the oracle cases use real scene grids, half random codes.
        if (rng.below(2) == 0) {
          grid = w.oracles.tokenizer.tokenize(synth::generate(synth::sample_scenes(1, i)[0]).second);
        } else {
          grid = random_grid(w.oracles.tokenizer.codebook.size(), w.oracles.tokenizer.codebook.id(), rng);
        }
      }
    }
    const LogLikMap a = score_teacher_forced(*backend, cap, grid);
    const LogLikMap b = score_autoregressive_oracle(*backend, cap, grid);
    for (std::size_t t = 0; t < a.m(); ++t) worst = std::max(worst, std::abs(a.values[t] - b.values[t]));
  }
  const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() - w.build_seconds;
  return {worst <= 1e-9 && dt < 10.0, fmt("500 cases, max |diff| %.3g (tol 1e-9), %.2f s excluding oracle fit", worst, dt)};
}

Outcome criterion_normalization() {
  const World& w = World::get();
  const UniformBackend uniform(512);
  const CountModel fitted = random_count_model(24, 3);
  struct Item {
    const EstimatorBackend* backend;
    const char* name;
  } items[] = {{&uniform, "uniform"}, {&fitted, "count"}, {&w.oracles.estimator, "oracle"}};
  Rng rng(77);
  double worst = 0.0;
  bool negative = false;
  for (const auto& it : items) {
    const std::uint32_t k = it.backend->vocab_size();
    std::vector<double> probs(k);
    for (int s = 0; s < 1000; ++s) {
      const Caption cap = s % 2 == 0 ? random_caption(rng)
                                     : Caption::parse(synth::caption_text(synth::sample_scenes(1, s)[0]));
      std::vector<Code> prefix(rng.below(65));
      for (Code& c : prefix) c = static_cast<Code>(rng.below(k));
      it.backend->next_distribution(cap, prefix, probs);
      double total = 0.0;
      for (double p : probs) {
        total += p;
        negative |= p < 0.0;
      }
      worst = std::max(worst, std::abs(total - 1.0));
    }
  }
  return {worst <= 1e-6 && !negative, fmt("3 backends x 1000 states, max |sum - 1| %.3g (tol 1e-6)", worst)};
}

Outcome criterion_rare_code() {
  const double lambda = std::log(1e-9);
  const std::vector<double> base{std::log(0.5), std::log(0.1), std::log(0.9), std::log(1e-3), std::log(0.25)};
  CodePrior prior;
  prior.probs.assign(6, 1.0 / 6.0);
  auto sum_h = [&](const std::vector<double>& ll, CreditMode mode) {
    std::vector<Code> codes(ll.size());
    std::iota(codes.begin(), codes.end(), 0u);
    const CodeGrid grid{1, static_cast<int>(ll.size()), codes, 0};
    const CreditMap h = apply_H({ll, 0}, prior, grid, {lambda}, mode);
    double s = 0.0;
    for (double v : h.values) s += v;
    return s;
  };
  std::vector<double> injected = base;
  const double rare = std::log(1e-12);
  injected.push_back(rare);
  const double full_delta = sum_h(injected, CreditMode::full) - sum_h(base, CreditMode::full);
  const double raw_without = sum_h(base, CreditMode::raw);
  const double raw_with = sum_h(injected, CreditMode::raw);
  const bool pass = full_delta == 0.0 && raw_with == raw_without + rare;
  return {pass, fmt("full H delta %.17g (want 0); ablated delta %.17g (want ln 1e-12 = %.17g)", full_delta,
                    raw_with - raw_without, rare)};
}

// Matched/mismatched pairs of criterion 4, reused by criterion 6.
struct PairSet {
  std::vector<Caption> pos, neg;
  std::vector<ImageTensor> images;
};

const PairSet& pair_set() {
  static const PairSet set = [] {
    PairSet s;
    const auto scenes = synth::sample_scenes(200, 4);
    std::vector<Caption> pool;
    for (const auto& spec : scenes) {
      auto [cap, img] = synth::generate(spec);
      s.pos.push_back(cap);
      pool.push_back(std::move(cap));
      s.images.push_back(std::move(img));
    }
    const Lexicon lex = synth::keyword_lexicon();
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      TextPerturbSpec spec;
      spec.kind = TextPerturbKind::mismatch;
      spec.seed = derive_seed(4, i);
      s.neg.push_back(perturb_text(s.pos[i], spec, lex, pool));
    }
    return s;
  }();
  return set;
}

double pair_accuracy(const LeicaConfig& cfg) {
  const PairSet& s = pair_set();
  const ModelBundle models = World::get().bundle();
  std::vector<JudgmentPair> pairs(s.images.size());
  parallel_for(s.images.size(), jobs(), [&](std::size_t i) {
    pairs[i] = {std::to_string(i), leica_score(s.pos[i], s.images[i], models, cfg).leica,
                leica_score(s.neg[i], s.images[i], models, cfg).leica};
  });
  return accuracy(pairs);
}

Outcome criterion_matched_accuracy() {
  World::get();
  const auto t0 = std::chrono::steady_clock::now();
  const double acc = pair_accuracy({});
  const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {acc >= 0.90 && dt < 60.0, fmt("accuracy %.4f on 200+200 pairs (need >= 0.90), %.2f s", acc, dt)};
}

Outcome criterion_noise_monotonicity() {
  const World& w = World::get();
  const ModelBundle models = w.bundle();
  std::vector<LabeledImage> clean;
  for (const auto& spec : synth::sample_scenes(100, 5)) {
    auto [cap, img] = synth::generate(spec);
    clean.push_back({synth::scene_id(spec), cap.raw, std::move(img)});
  }
  const ImageScorer scorer = [&](const Caption& cap, const ImageTensor& img) {
    return leica_score(cap, img, models, {}).leica;
  };
  struct Ladder {
    DistortionKind kind;
    std::vector<double> degrees;
    double tau_min;
  } ladders[] = {{DistortionKind::gn, {0.0125, 0.025, 0.05, 0.1, 0.2}, 0.8},
                 {DistortionKind::spn, {0.025, 0.05, 0.1, 0.2, 0.4}, 0.7}};
  bool pass = true;
  std::ostringstream detail;
  for (const auto& l : ladders) {
    const auto rungs = noise_ladder_experiment(clean, l.kind, l.degrees, scorer, 5, 13, jobs());
    bool decreasing = true;
    detail << to_string(l.kind) << " means";
    for (std::size_t d = 0; d < rungs.size(); ++d) {
      detail << " " << fmt("%.4g", rungs[d].mean_score);
      if (d > 0 && !(rungs[d].mean_score < rungs[d - 1].mean_score)) decreasing = false;
    }
    const double tau = rungs.back().tau_mean.value_or(-2.0);
    detail << fmt(" (%s), tau@%.3g %.3f (need >= %.1f); ", decreasing ? "strictly decreasing" : "NOT decreasing",
                  l.degrees.back(), tau, l.tau_min);
    pass = pass && decreasing && tau >= l.tau_min;
  }
  return {pass, detail.str()};
}

Outcome criterion_ablation_ordering() {
  World::get();
  LeicaConfig full, no_s, no_h, both;
  no_s.ablate_S = true;
  no_h.ablate_H = true;
  both.ablate_H = both.ablate_S = true;
  const double a_full = pair_accuracy(full), a_s = pair_accuracy(no_s), a_h = pair_accuracy(no_h),
               a_both = pair_accuracy(both);
  const bool pass = a_full >= a_s && a_full >= a_h && a_both <= std::min({a_full, a_s, a_h});
  return {pass, fmt("accuracy full %.4f, w/o S %.4f, w/o H %.4f, w/o both %.4f", a_full, a_s, a_h, a_both)};
}

Outcome criterion_stability() {
  const World& w = World::get();
  const auto t0 = std::chrono::steady_clock::now();
  const ModelBundle models = w.bundle();
  const auto scenes = synth::sample_scenes(5000, 6);
  std::vector<double> scores(scenes.size());
  parallel_for(scenes.size(), jobs(), [&](std::size_t i) {
    const auto [cap, img] = synth::generate(scenes[i]);
    scores[i] = leica_score(cap, img, models, {}).leica;
  });
  const SubsetMetric mean_of = [&](std::span<const std::size_t> idx) {
    double s = 0.0;
    for (std::size_t i : idx) s += scores[i];
    return s / static_cast<double>(idx.size());
  };
  const std::vector<std::size_t> sizes{100, 5000};
  const auto cells = stability_sweep(scores.size(), mean_of, sizes, 10, 17);
  const double full = cells[1].mean;
  const double rel = std::abs(cells[0].mean - full) / std::abs(full);
  const double spread = cells[0].std / std::abs(cells[0].mean);
  double worst_repeat = 0.0;
  for (double v : cells[0].values) worst_repeat = std::max(worst_repeat, std::abs(v - full) / std::abs(full));
  const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {rel < 0.05 && spread < 0.10 && dt < 300.0,
          fmt("full mean %.4g, size-100 mean %.4g (rel diff %.4f, need < 0.05), std/mean %.4f (need < 0.10), "
              "worst single subset %.4f, %.1f s",
              full, cells[0].mean, rel, spread, worst_repeat, dt)};
}

double tau_brute(const std::vector<double>& a, const std::vector<double>& b) {
  auto sgn = [](double x) { return (x > 0) - (x < 0); };
  long long s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i + 1; j < a.size(); ++j) s += sgn(a[i] - a[j]) * sgn(b[i] - b[j]);
  }
  return static_cast<double>(s) / (static_cast<double>(a.size()) * (a.size() - 1) / 2.0);
}

double pearson_brute(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

std::vector<double> ranks_brute(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0, equal = 0;
    for (double x : v) {
      less += x < v[i];
      equal += x == v[i];
    }
    r[i] = 1.0 + less + (equal - 1.0) / 2.0;
  }
  return r;
}

Outcome criterion_statistics() {
  Rng rng(8);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 3 + rng.below(48);
    const bool ties = trial % 2 == 1;
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = ties ? static_cast<double>(rng.below(5)) : rng.normal();
      b[i] = ties ? static_cast<double>(rng.below(5)) : rng.normal();
    }
    a[0] = -1.0;
    b[1] = 7.0;
    worst = std::max(worst, std::abs(kendall_tau(a, b) - tau_brute(a, b)));
    worst = std::max(worst, std::abs(pearson(a, b) - pearson_brute(a, b)));
    worst = std::max(worst, std::abs(spearman(a, b) - pearson_brute(ranks_brute(a), ranks_brute(b))));
  }
  const std::vector<double> x{1, 2, 3, 4}, y{1, 3, 2, 4}, p{1, 2, 3}, q{3, 1, 2};
  std::vector<JudgmentPair> seven;
  for (int i = 0; i < 10; ++i) seven.push_back({std::to_string(i), i < 7 ? 1.0 : 0.0, 0.5});
  const bool closed = accuracy(seven) == 0.7 && std::abs(kendall_tau(x, y) - 4.0 / 6.0) <= 1e-15 &&
                      kendall_tau(x, x) == 1.0 && std::abs(pearson(p, q) + 0.5) <= 1e-15 &&
                      std::abs(spearman(p, q) + 0.5) <= 1e-15;
  return {worst <= 1e-12 && closed,
          fmt("200 random vectors, max |diff| vs brute force %.3g (tol 1e-12); closed-form cases %s", worst,
              closed ? "hold" : "FAIL")};
}

Outcome criterion_semantic_map() {
  const std::vector<double> phi{0.0, 1.0, 0.0, 1.0};
  const auto out = resize_map(phi, 2, 4, 4);
  double worst = 0.0;
  const double expect[4] = {0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0};
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) worst = std::max(worst, std::abs(out[r * 4 + c] - expect[c]));
  }
  const ReferenceMatcher matcher(synth::build_oracle_matcher());
  int focused = 0;
  const auto scenes = synth::enumerate_scenes();
  for (const auto& spec : scenes) {
    const auto [cap, img] = synth::generate(spec);
    const auto mask = synth::foreground_mask(spec);
    const SemanticMap map = matcher.patch_alignment(cap, img);
    const int p = img.height / map.s;
    double fg = 0, bg = 0;
    int nf = 0, nb = 0;
    for (int t = 0; t < map.s * map.s; ++t) {
      bool covered = false;
      for (int y = (t / map.s) * p; y < (t / map.s + 1) * p && !covered; ++y) {
        for (int x = (t % map.s) * p; x < (t % map.s + 1) * p && !covered; ++x) {
          covered = mask[static_cast<std::size_t>(y) * img.width + x] != 0;
        }
      }
      (covered ? fg : bg) += map.phi[t];
      ++(covered ? nf : nb);
    }
    if (nf > 0 && nb > 0 && fg / nf > bg / nb) ++focused;
  }
  const double share = static_cast<double>(focused) / static_cast<double>(scenes.size());
  return {worst <= 1e-12 && share >= 0.95,
          fmt("resize max |err| %.3g (tol 1e-12); foreground focus %d/%zu = %.4f (need >= 0.95)", worst, focused,
              scenes.size(), share)};
}

Outcome criterion_spot_values() {
  CodePrior prior;
  prior.probs = {0.01, 0.99};
  const CodeGrid grid{1, 1, {0}, 0};
  const double h = apply_H({{std::log(0.5)}, 0}, prior, grid, {std::log(1e-9)}).values[0];
  const SemanticMap map{std::vector<double>(4, 0.5), 0.3, 2};
  const double s = semantic_score(map, 2, 2, {})[0];
  const bool pass = std::abs(h - 20.0302) <= 1e-4 && std::abs(s - 36.33) <= 0.05;
  return {pass, fmt("H(ln 0.5) = %.6f (want 20.0302 +- 1e-4); S = %.4f (want 36.33 +- 0.05)", h, s)};
}

#ifdef LEICA_WITH_CLI
std::string run_cli(const std::vector<std::string>& args, int& code) {
  std::ostringstream out, err;
  code = cli::run(args, out, err);
  return out.str();
}

// Concatenation of every regular file below dir, in path order.
std::string tree_bytes(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    all += fs::relative(f, dir).generic_string();
    all.append(std::istreambuf_iterator<char>(in), {});
  }
  return all;
}

Outcome criterion_cli_determinism() {
  const fs::path root = test::fresh_dir("acceptance-cli");
  int code = 0;
  std::vector<std::string> mismatched;
  int commands = 0;

  // synth twice into separate directories; the trees must match.
  const fs::path d1 = root / "synth1", d2 = root / "synth2";
  const std::string s1 = run_cli({"synth", "--out", d1.string(), "--count", "24", "--seed", "3"}, code);
  if (code != 0) return {false, "synth failed"};
  const std::string s2 = run_cli({"synth", "--out", d2.string(), "--count", "24", "--seed", "3"}, code);
  ++commands;
  std::string a1 = s1, a2 = s2;
  // Reports name their output directory; compare with it normalized.
  auto strip = [](std::string s, const std::string& what) {
    for (std::size_t p; (p = s.find(what)) != std::string::npos;) s.erase(p, what.size());
    return s;
  };
  if (strip(a1, d1.string()) != strip(a2, d2.string()) || tree_bytes(d1) != tree_bytes(d2)) mismatched.push_back("synth");

  const std::string manifest = (d1 / "manifest.jsonl").string();
  const std::string lexicon = (d1 / "lexicon.txt").string();
  const std::vector<std::string> models{"--models", d1.string()};
  auto with_models = [&](std::vector<std::string> args) {
    args.insert(args.end(), models.begin(), models.end());
    return args;
  };
  const std::vector<std::vector<std::string>> runs{
      with_models({"score", "--manifest", manifest, "--seed", "1"}),
      with_models({"score", "--manifest", manifest, "--format", "csv", "--jobs", "3"}),
      with_models({"metaeval", "--manifest", manifest, "--mismatch", "--seed", "2"}),
      with_models({"metaeval", "--manifest", manifest, "--replace", "2", "--lexicon", lexicon, "--seed", "2"}),
      with_models({"metaeval", "--manifest", manifest, "--kind", "spn+", "--degree", "0.2", "--seed", "2"}),
      with_models({"metaeval", "--manifest", manifest, "--ladder", "gn", "--degrees", "0.05,0.2", "--repeats", "2"}),
      with_models({"metaeval", "--manifest", manifest, "--ladder", "replace", "--lexicon", lexicon, "--repeats", "2"}),
      with_models({"rank", "a=" + manifest, "b=" + manifest}),
      with_models({"stability", "--manifest", manifest, "--sizes", "4,12", "--repeats", "3", "--seed", "9"}),
  };
  for (const auto& args : runs) {
    const std::string first = run_cli(args, code);
    if (code != 0) {
      mismatched.push_back(args[0] + " (exit " + std::to_string(code) + ")");
      continue;
    }
    const std::string second = run_cli(args, code);
    ++commands;
    if (first != second) mismatched.push_back(args[0] + " " + args[3]);
  }

  const fs::path p1 = root / "perturb1", p2 = root / "perturb2";
  for (const auto& d : {p1, p2}) {
    run_cli({"perturb", "--in", manifest, "--out", d.string(), "--kind", "gn", "--degree", "0.1", "--seed", "4"}, code);
  }
  ++commands;
  if (tree_bytes(p1) != tree_bytes(p2)) mismatched.push_back("perturb");

  std::string detail = fmt("%d commands run twice", commands);
  if (mismatched.empty()) return {true, detail + ", all outputs byte-identical"};
  for (const auto& m : mismatched) detail += "; differs: " + m;
  return {false, detail};
}
#else
Outcome criterion_cli_determinism() { return {false, "command-line tool not built"}; }
#endif

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"parallel/sequential likelihood equivalence", criterion_parallel_sequential},
      {"next-code distributions normalized", criterion_normalization},
      {"rare-code suppression", criterion_rare_code},
      {"matched/mismatched accuracy", criterion_matched_accuracy},
      {"noise monotonicity (GN, SPN ladders)", criterion_noise_monotonicity},
      {"ablation ordering", criterion_ablation_ordering},
      {"sample-count stability", criterion_stability},
      {"statistics vs brute force", criterion_statistics},
      {"semantic map correctness", criterion_semantic_map},
      {"hand-arithmetic spot values", criterion_spot_values},
      {"CLI determinism", criterion_cli_determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << (i + 1) << "] " << criteria[i].first << ": " << o.detail
              << fmt(" [%.1f s]", dt) << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria passed" : fmt("%d criteria failed", failures)) << std::endl;
  return failures == 0 ? 0 : 1;
}
