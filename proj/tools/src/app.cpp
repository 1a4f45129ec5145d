#include "app.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "leica/binary_io.hpp"
#include "leica/credit_perceptual.hpp"
#include "leica/credit_semantic.hpp"
#include "leica/errors.hpp"
#include "leica/image.hpp"
#include "leica/likelihood.hpp"
#include "leica/metaeval.hpp"
#include "leica/metric.hpp"
#include "leica/parallel.hpp"
#include "leica/perturb.hpp"
#include "leica/process_matcher.hpp"
#include "leica/rng.hpp"
#include "leica/synthworld.hpp"
#include "leica/tokenizer.hpp"
#include "manifest.hpp"
#include "report.hpp"

namespace leica::cli {

namespace {

namespace fs = std::filesystem;

constexpr const char* kEncoderFile = "encoder.leien";
constexpr const char* kCodebookFile = "codebook.leicb";
constexpr const char* kEstimatorFile = "estimator.leicm";
constexpr const char* kPriorFile = "prior.leipr";
constexpr const char* kMatcherFile = "matcher.leimm";

struct ModelOptions {
  std::string dir;
  std::string encoder, codebook, estimator, prior, matcher;
  std::string matcher_cmd;
  std::string backend = "count";
};

struct ScoringOptions {
  // Negative values are natural-log thresholds; values in (0, 1) are
  // probabilities and get logged.
  std::optional<double> lambda;
  double tau = 0.07;
  bool ablate_h = false;
  bool ablate_s = false;
  std::string h_ablation = "no-prior";
  bool no_global = false;
  std::string phi_resize = "2d";
};

struct Common {
  ModelOptions models;
  ScoringOptions scoring;
  int jobs = 1;
  std::uint64_t seed = 0;
  std::string format = "json";
  std::string out;
};

std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

int jobs_from_env() {
  const char* env = std::getenv("LEICA_JOBS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1 || v > 1024) throw ConfigError(std::string("LEICA_JOBS must be 1..1024, got '") + env + "'");
  return static_cast<int>(v);
}

void add_output_options(CLI::App* sub, Common& c, bool csv, bool report_file = true) {
  sub->add_option("--seed", c.seed, "Seed for every stochastic step");
  if (report_file) sub->add_option("--out", c.out, "Write the report here instead of stdout");
  if (csv) {
    sub->add_option("--format", c.format, "Report format")->check(CLI::IsMember({"json", "csv"}));
  }
}

void add_model_options(CLI::App* sub, Common& c) {
  auto& m = c.models;
  auto& s = c.scoring;
  sub->add_option("--models", m.dir, "Directory holding encoder, codebook, estimator, prior and matcher files");
  sub->add_option("--encoder", m.encoder, "Encoder file (overrides --models)");
  sub->add_option("--codebook", m.codebook, "Codebook file (overrides --models)");
  sub->add_option("--estimator", m.estimator, "Count-model file (overrides --models)");
  sub->add_option("--prior", m.prior, "Code prior file (overrides --models)");
  sub->add_option("--matcher", m.matcher, "Matcher weights file (overrides --models)");
  sub->add_option("--matcher-cmd", m.matcher_cmd, "External matcher command speaking JSON lines on stdio");
  sub->add_option("--backend", m.backend, "Likelihood backend")->check(CLI::IsMember({"count", "uniform"}));
  sub->add_option("--lambda", s.lambda, "Threshold as a log value (-20.72) or a probability (1e-9)");
  sub->add_option("--tau", s.tau, "Temperature of the global factor");
  sub->add_flag("--ablate-h", s.ablate_h, "Drop the perceptual indicator");
  sub->add_flag("--ablate-s", s.ablate_s, "Replace the semantic score with 1");
  sub->add_option("--h-ablation", s.h_ablation, "Form of H under --ablate-h alone")
      ->check(CLI::IsMember({"no-prior", "no-clamp", "raw"}));
  sub->add_flag("--no-global", s.no_global, "Drop the exp(psi/tau) factor");
  sub->add_option("--phi-resize", s.phi_resize, "Patch-map resampling")->check(CLI::IsMember({"2d", "1d"}));
  sub->add_option("--jobs", c.jobs, "Worker threads (default: LEICA_JOBS or 1)")->check(CLI::Range(1, 1024));
}

fs::path model_path(const ModelOptions& m, const std::string& override_path, const char* name) {
  if (!override_path.empty()) return override_path;
  if (m.dir.empty()) throw ConfigError(std::string("no model directory given and no path for ") + name);
  return fs::path(m.dir) / name;
}

LeicaConfig make_config(const ScoringOptions& s) {
  LeicaConfig cfg;
  if (s.lambda) {
    const double v = *s.lambda;
    if (v < 0.0) {
      cfg.perceptual.lambda = v;
    } else if (v > 0.0 && v < 1.0) {
      cfg.perceptual.lambda = std::log(v);
    } else {
      throw ConfigError("--lambda must be negative (a log value) or in (0, 1) (a probability)");
    }
  }
  if (!(cfg.perceptual.lambda < 0.0) || !std::isfinite(cfg.perceptual.lambda)) {
    throw ConfigError("lambda must be a finite negative log value");
  }
  if (!(s.tau > 0.0) || !std::isfinite(s.tau)) throw ConfigError("--tau must be positive");
  cfg.semantic.tau = s.tau;
  cfg.semantic.use_global = !s.no_global;
  cfg.semantic.resize = s.phi_resize == "1d" ? PhiResize::linear_1d : PhiResize::bilinear_2d;
  cfg.ablate_H = s.ablate_h;
  cfg.ablate_S = s.ablate_s;
  cfg.h_ablation = s.h_ablation == "raw"        ? CreditMode::raw
                   : s.h_ablation == "no-clamp" ? CreditMode::no_clamp
                                                : CreditMode::no_prior;
  return cfg;
}

struct LoadedModels {
  std::optional<Tokenizer> tokenizer;
  std::unique_ptr<EstimatorBackend> backend;
  std::optional<CodePrior> prior;
  std::unique_ptr<MatcherModel> matcher;
  LeicaConfig cfg;
  Json echo;

  ModelBundle bundle() const { return {backend.get(), &*tokenizer, &*prior, matcher.get()}; }
};

template <class Fn>
auto load_or_config_error(const fs::path& path, Fn&& fn) {
  try {
    return fn(path);
  } catch (const std::exception& e) {
    throw ConfigError("cannot load " + path.string() + ": " + e.what());
  }
}

LoadedModels load_models(const Common& c) {
  LoadedModels lm;
  lm.cfg = make_config(c.scoring);
  const ModelOptions& m = c.models;
  const fs::path enc_path = model_path(m, m.encoder, kEncoderFile);
  const fs::path cb_path = model_path(m, m.codebook, kCodebookFile);
  const fs::path prior_path = model_path(m, m.prior, kPriorFile);
  PatchEncoder enc = load_or_config_error(enc_path, [](const fs::path& p) { return PatchEncoder::load(p); });
  Codebook cb = load_or_config_error(cb_path, [](const fs::path& p) { return Codebook::load(p); });
  if (static_cast<std::uint32_t>(enc.dim()) != cb.dim()) {
    throw ConfigError("encoder dim " + std::to_string(enc.dim()) + " does not match codebook dim " +
                      std::to_string(cb.dim()));
  }
  const std::uint32_t vocab = cb.size();
  const std::uint64_t cb_id = cb.id();
  lm.tokenizer.emplace(Tokenizer{std::move(enc), std::move(cb)});

  Json models;
  models["encoder"] = enc_path.generic_string();
  models["codebook"] = cb_path.generic_string();
  models["codebook_id"] = hex64(cb_id);
  models["backend"] = m.backend;
  if (m.backend == "uniform") {
    lm.backend = std::make_unique<UniformBackend>(vocab);
    models["estimator"] = nullptr;
  } else {
    const fs::path est_path = model_path(m, m.estimator, kEstimatorFile);
    auto est = std::make_unique<CountModel>(
        load_or_config_error(est_path, [](const fs::path& p) { return CountModel::load(p); }));
    if (est->vocab_size() != vocab || est->codebook_id() != cb_id) {
      throw ConfigError(est_path.string() + " was fit on a different codebook");
    }
    lm.backend = std::move(est);
    models["estimator"] = est_path.generic_string();
  }
  lm.prior.emplace(load_or_config_error(prior_path, [](const fs::path& p) { return CodePrior::load(p); }));
  if (lm.prior->probs.size() != vocab) {
    throw ConfigError(prior_path.string() + " has " + std::to_string(lm.prior->probs.size()) +
                      " codes, codebook has " + std::to_string(vocab));
  }
  models["prior"] = prior_path.generic_string();

  models["matcher"] = nullptr;
  models["matcher_cmd"] = nullptr;
  if (!c.scoring.ablate_s) {
    if (!m.matcher_cmd.empty()) {
      try {
        lm.matcher = std::make_unique<ProcessMatcher>(m.matcher_cmd);
      } catch (const std::exception& e) {
        throw ConfigError("cannot start matcher command: " + std::string(e.what()));
      }
      models["matcher_cmd"] = m.matcher_cmd;
    } else {
      const fs::path mpath = model_path(m, m.matcher, kMatcherFile);
      lm.matcher = std::make_unique<ReferenceMatcher>(
          load_or_config_error(mpath, [](const fs::path& p) { return MatcherWeights::load(p); }));
      models["matcher"] = mpath.generic_string();
    }
  }

  const auto& s = c.scoring;
  lm.echo["models"] = models;
  lm.echo["lambda"] = lm.cfg.perceptual.lambda;
  lm.echo["tau"] = lm.cfg.semantic.tau;
  lm.echo["ablate_h"] = s.ablate_h;
  lm.echo["ablate_s"] = s.ablate_s;
  lm.echo["h_ablation"] = s.h_ablation;
  lm.echo["use_global"] = !s.no_global;
  lm.echo["phi_resize"] = s.phi_resize;
  lm.echo["seed"] = c.seed;
  return lm;
}

void emit(const Common& c, const std::string& text, std::ostream& out) {
  if (c.out.empty()) {
    out << text;
    return;
  }
  std::ofstream f(c.out, std::ios::binary);
  if (!f) throw ConfigError("cannot write report " + c.out);
  f << text;
  if (!f) throw ConfigError("error writing report " + c.out);
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

// Plot-ready columns: a commented header, then one tab-separated row per
// element of `rows`. Missing values are written as NaN.
void write_tsv(const std::string& path, const Json& rows, const std::vector<std::string>& keys) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + path);
  f << '#';
  for (std::size_t i = 0; i < keys.size(); ++i) f << (i ? "\t" : " ") << keys[i];
  f << '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < keys.size(); ++i) {
      const Json& v = row.at(keys[i]);
      if (i) f << '\t';
      if (v.is_number_float()) {
        f << format_double(v.get<double>());
      } else if (v.is_number()) {
        f << v.dump();
      } else {
        f << "NaN";
      }
    }
    f << '\n';
  }
  if (!f) throw ConfigError("error writing " + path);
}

Json report_head(const char* command, const Json& config) {
  Json j;
  j["schema"] = kReportSchema;
  j["command"] = command;
  j["config"] = config;
  return j;
}

Json errors_json(std::span<const SampleError> errors) {
  Json arr = Json::array();
  for (const auto& e : errors) arr.push_back({{"id", e.id}, {"message", e.message}});
  return arr;
}

void report_errors(std::span<const SampleError> errors, std::ostream& err) {
  for (const auto& e : errors) err << "error: " << e.id << ": " << e.message << '\n';
}

Manifest read_nonempty(const std::string& path) {
  Manifest m = read_manifest(path);
  if (m.entries.empty()) throw DataError("empty manifest: " + path);
  return m;
}

BatchResult score_manifest(const Manifest& m, const LoadedModels& lm, int jobs) {
  std::vector<BatchItem> items;
  items.reserve(m.entries.size());
  for (const auto& e : m.entries) {
    items.push_back({e.id, e.text, [path = e.image] { return read_ppm(path); }});
  }
  return score_batch(items, lm.bundle(), lm.cfg, jobs);
}

Json sample_json(const SampleScore& s, const ManifestEntry& e) {
  Json j;
  j["id"] = s.id;
  if (e.model) j["model"] = *e.model;
  j["leica"] = s.leica;
  j["total_loglik"] = s.total_loglik;
  j["mean_loglik"] = s.mean_loglik;
  j["zeroed_codes"] = s.zeroed_codes;
  j["psi"] = optional_number(s.psi);
  j["m"] = s.m;
  return j;
}

Json summary_json(const Summary& s, std::size_t failed) {
  Json j;
  j["n"] = s.n;
  j["failed"] = failed;
  j["mean"] = s.n ? Json(s.mean) : Json(nullptr);
  j["std"] = s.n ? Json(s.std) : Json(nullptr);
  return j;
}

// ---------------------------------------------------------------- score

struct ScoreArgs {
  std::string manifest;
};

int cmd_score(const Common& c, const ScoreArgs& a, std::ostream& out, std::ostream& err) {
  const Manifest m = read_nonempty(a.manifest);
  const LoadedModels lm = load_models(c);
  const BatchResult res = score_manifest(m, lm, c.jobs);
  std::map<std::string, const ManifestEntry*> by_id;
  for (const auto& e : m.entries) by_id[e.id] = &e;

  if (c.format == "csv") {
    std::ostringstream s;
    write_csv_row(s, {"id", "model", "leica", "total_loglik", "mean_loglik", "zeroed_codes", "psi", "m"});
    for (const auto& r : res.scores) {
      const auto* e = by_id.at(r.id);
      write_csv_row(s, {r.id, e->model.value_or(""), format_double(r.leica), format_double(r.total_loglik),
                        format_double(r.mean_loglik), std::to_string(r.zeroed_codes),
                        r.psi ? format_double(*r.psi) : "", std::to_string(r.m)});
    }
    emit(c, s.str(), out);
  } else {
    Json j = report_head("score", lm.echo);
    j["manifest"] = a.manifest;
    j["summary"] = summary_json(res.summary, res.errors.size());
    Json samples = Json::array();
    for (const auto& r : res.scores) samples.push_back(sample_json(r, *by_id.at(r.id)));
    j["samples"] = std::move(samples);
    j["errors"] = errors_json(res.errors);
    emit(c, dump(j), out);
  }
  report_errors(res.errors, err);
  return res.scores.empty() ? 3 : 0;
}

// ------------------------------------------------------- perturb specs

struct PerturbChoice {
  std::string kind;  // image distortion
  std::optional<double> degree;
  std::optional<std::size_t> replace;
  bool mismatch = false;
  std::string lexicon;
  std::string vocabulary;
};

std::optional<std::pair<DistortionKind, double>> distortion_of(const PerturbChoice& p) {
  if (p.kind.empty()) {
    if (p.degree) throw ConfigError("--degree needs --kind");
    return std::nullopt;
  }
  if (!p.degree) throw ConfigError("--kind needs --degree");
  try {
    return std::make_pair(parse_distortion_kind(p.kind), *p.degree);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

struct TextResources {
  Lexicon keywords;
  std::vector<std::string> vocabulary;
};

TextResources load_text_resources(const PerturbChoice& p) {
  if (p.lexicon.empty()) throw ConfigError("--replace needs --lexicon");
  TextResources t;
  t.keywords = load_or_config_error(p.lexicon, [](const fs::path& f) { return load_lexicon(f); });
  if (p.vocabulary.empty()) {
    t.vocabulary.assign(t.keywords.begin(), t.keywords.end());
  } else {
    const Lexicon v = load_or_config_error(p.vocabulary, [](const fs::path& f) { return load_lexicon(f); });
    t.vocabulary.assign(v.begin(), v.end());
  }
  return t;
}

int count_modes(const PerturbChoice& p) {
  return static_cast<int>(!p.kind.empty()) + static_cast<int>(p.replace.has_value()) +
         static_cast<int>(p.mismatch);
}

std::uint64_t sample_seed(std::uint64_t seed, const std::string& id) {
  const auto* bytes = reinterpret_cast<const std::uint8_t*>(id.data());
  return derive_seed(seed, io::fnv1a64({bytes, id.size()}));
}

void add_perturb_options(CLI::App* sub, PerturbChoice& p) {
  sub->add_option("--kind", p.kind, "Image distortion: gn, gb, spn, mirror, gn+, gb+, spn+");
  sub->add_option("--degree", p.degree, "Distortion degree (gn variance, gb sigma, spn fraction, mirror amplitude)");
  sub->add_option("--replace", p.replace, "Replace this many caption keywords");
  sub->add_flag("--mismatch", p.mismatch, "Pair each image with another entry's caption");
  sub->add_option("--lexicon", p.lexicon, "Keyword lexicon, one word per line");
  sub->add_option("--vocabulary", p.vocabulary, "Replacement pool (default: the lexicon)");
}

Json protocol_json(const PerturbChoice& p) {
  Json j;
  if (const auto d = distortion_of(p)) {
    const auto [kind, degree] = *d;
    j["mode"] = "distort";
    j["kind"] = std::string(to_string(kind));
    j["degree"] = degree;
  } else if (p.replace) {
    j["mode"] = "replace";
    j["k"] = *p.replace;
    j["lexicon"] = p.lexicon;
    j["vocabulary"] = p.vocabulary.empty() ? Json(nullptr) : Json(p.vocabulary);
  } else {
    j["mode"] = "mismatch";
  }
  return j;
}

// ------------------------------------------------------------- metaeval

struct MetaevalArgs {
  std::string manifest;
  std::string noised;
  PerturbChoice perturb;
  std::string ladder;
  std::vector<double> degrees;
  int repeats = 5;
  std::string tsv;
};

std::vector<double> default_ladder(DistortionKind kind) {
  switch (kind) {
    case DistortionKind::gn:
    case DistortionKind::gn_plus:
      return {0.0125, 0.025, 0.05, 0.1, 0.2};
    case DistortionKind::gb:
    case DistortionKind::gb_plus:
      return {0.5, 1, 2, 4, 8};
    case DistortionKind::spn:
    case DistortionKind::spn_plus:
      return {0.025, 0.05, 0.1, 0.2, 0.4};
    case DistortionKind::mirror:
      return {1, 2, 4, 8, 16};
  }
  return {};
}

int cmd_metaeval_ladder(const Common& c, const MetaevalArgs& a, std::ostream& out, std::ostream& err) {
  const Manifest m = read_nonempty(a.manifest);
  const LoadedModels lm = load_models(c);
  if (a.repeats < 1) throw ConfigError("--repeats must be >= 1");

  std::vector<LabeledImage> clean;
  std::vector<SampleError> errors;
  for (const auto& e : m.entries) {
    try {
      clean.push_back({e.id, e.text, read_ppm(e.image)});
    } catch (const std::exception& ex) {
      errors.push_back({e.id, ex.what()});
    }
  }
  if (clean.empty()) {
    report_errors(errors, err);
    throw DataError("no readable images in " + a.manifest);
  }
  const ModelBundle bundle = lm.bundle();
  const ImageScorer scorer = [&](const Caption& cap, const ImageTensor& img) {
    return leica_score(cap, img, bundle, lm.cfg).leica;
  };

  Json protocol;
  protocol["mode"] = "ladder";
  protocol["manifest"] = a.manifest;
  protocol["repeats"] = a.repeats;
  Json rungs = Json::array();
  std::ostringstream csv;
  if (a.ladder == "replace") {
    std::vector<std::size_t> ks;
    if (a.degrees.empty()) {
      ks = {0, 1, 2, 3, 4};
    } else {
      for (double d : a.degrees) {
        if (d < 0 || d != std::floor(d)) throw ConfigError("replacement ladder degrees must be whole numbers");
        ks.push_back(static_cast<std::size_t>(d));
      }
    }
    const TextResources text = load_text_resources(a.perturb);
    protocol["kind"] = "replace";
    protocol["lexicon"] = a.perturb.lexicon;
    protocol["degrees"] = ks;
    std::vector<ReplacementRung> res;
    try {
      res = replacement_ladder_experiment(clean, text.keywords, text.vocabulary, ks, scorer, a.repeats, c.seed,
                                          c.jobs);
    } catch (const InvalidArgument& e) {
      throw DataError(e.what());
    }
    write_csv_row(csv, {"k", "mean_score", "std_score", "accuracy_mean", "accuracy_std", "excluded"});
    for (const auto& r : res) {
      rungs.push_back({{"k", r.k},
                       {"mean_score", r.mean_score},
                       {"std_score", r.std_score},
                       {"accuracy_mean", r.accuracy_mean},
                       {"accuracy_std", r.accuracy_std},
                       {"excluded", r.excluded}});
      write_csv_row(csv, {std::to_string(r.k), format_double(r.mean_score), format_double(r.std_score),
                          format_double(r.accuracy_mean), format_double(r.accuracy_std),
                          std::to_string(r.excluded)});
    }
  } else {
    DistortionKind kind;
    try {
      kind = parse_distortion_kind(a.ladder);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
    const std::vector<double> degrees = a.degrees.empty() ? default_ladder(kind) : a.degrees;
    protocol["kind"] = std::string(to_string(kind));
    protocol["degrees"] = degrees;
    const auto res = noise_ladder_experiment(clean, kind, degrees, scorer, a.repeats, c.seed, c.jobs);
    write_csv_row(csv, {"degree", "mean_score", "std_score", "tau_mean", "tau_std", "accuracy_mean"});
    for (const auto& r : res) {
      Json taus = Json::array();
      for (const auto& t : r.repeat_taus) taus.push_back(optional_number(t));
      rungs.push_back({{"degree", r.degree},
                       {"mean_score", r.mean_score},
                       {"std_score", r.std_score},
                       {"tau_mean", optional_number(r.tau_mean)},
                       {"tau_std", optional_number(r.tau_std)},
                       {"accuracy_mean", r.accuracy_mean},
                       {"repeat_scores", r.repeat_scores},
                       {"repeat_taus", taus}});
      write_csv_row(csv, {format_double(r.degree), format_double(r.mean_score), format_double(r.std_score),
                          r.tau_mean ? format_double(*r.tau_mean) : "", r.tau_std ? format_double(*r.tau_std) : "",
                          format_double(r.accuracy_mean)});
    }
  }
  if (!a.tsv.empty()) {
    if (a.ladder == "replace") {
      write_tsv(a.tsv, rungs, {"k", "mean_score", "std_score", "accuracy_mean", "accuracy_std"});
    } else {
      write_tsv(a.tsv, rungs, {"degree", "mean_score", "std_score", "tau_mean", "tau_std"});
    }
  }
  if (c.format == "csv") {
    emit(c, csv.str(), out);
  } else {
    Json j = report_head("metaeval", lm.echo);
    j["protocol"] = protocol;
    j["n"] = clean.size();
    j["rungs"] = std::move(rungs);
    j["errors"] = errors_json(errors);
    emit(c, dump(j), out);
  }
  report_errors(errors, err);
  return 0;
}

int cmd_metaeval(const Common& c, const MetaevalArgs& a, std::ostream& out, std::ostream& err) {
  const int modes = count_modes(a.perturb) + static_cast<int>(!a.noised.empty()) + static_cast<int>(!a.ladder.empty());
  if (modes != 1) throw ConfigError("choose exactly one of --noised, --kind, --replace, --mismatch, --ladder");
  if (!a.ladder.empty()) return cmd_metaeval_ladder(c, a, out, err);

  const Manifest m = read_nonempty(a.manifest);
  const LoadedModels lm = load_models(c);
  const ModelBundle bundle = lm.bundle();

  Json protocol;
  std::map<std::string, const ManifestEntry*> noised_by_id;
  Manifest noised;
  if (!a.noised.empty()) {
    noised = read_nonempty(a.noised);
    for (const auto& e : noised.entries) noised_by_id[e.id] = &e;
    protocol["mode"] = "paired";
    protocol["noised"] = a.noised;
  } else {
    protocol = protocol_json(a.perturb);
  }
  protocol["manifest"] = a.manifest;

  std::optional<TextResources> text;
  if (a.perturb.replace) text = load_text_resources(a.perturb);
  std::vector<Caption> pool;
  if (a.perturb.mismatch) {
    for (const auto& e : m.entries) pool.push_back(Caption::parse(e.text));
  }
  std::optional<std::pair<DistortionKind, double>> distortion;
  distortion = distortion_of(a.perturb);

  const std::size_t n = m.entries.size();
  std::vector<std::optional<JudgmentPair>> pairs(n);
  std::vector<std::string> neg_text(n);
  std::vector<std::string> failures(n);
  parallel_for(n, c.jobs, [&](std::size_t i) {
    const ManifestEntry& e = m.entries[i];
    try {
      const Caption cap = Caption::parse(e.text);
      const ImageTensor img = read_ppm(e.image);
      const double pos = leica_score(cap, img, bundle, lm.cfg, e.id).leica;
      double neg = 0.0;
      const std::uint64_t seed = sample_seed(c.seed, e.id);
      if (!a.noised.empty()) {
        const auto it = noised_by_id.find(e.id);
        if (it == noised_by_id.end()) throw DataError("no noised entry with this id");
        neg = leica_score(cap, read_ppm(it->second->image), bundle, lm.cfg, e.id).leica;
      } else if (distortion) {
        const DistortionSpec spec{distortion->first, distortion->second, seed};
        neg = leica_score(cap, distort_image(img, spec), bundle, lm.cfg, e.id).leica;
      } else {
        TextPerturbSpec spec;
        spec.seed = seed;
        Caption altered;
        if (a.perturb.replace) {
          spec.kind = TextPerturbKind::replace_k;
          spec.k = *a.perturb.replace;
          spec.vocabulary = text->vocabulary;
          altered = perturb_text(cap, spec, text->keywords);
        } else {
          spec.kind = TextPerturbKind::mismatch;
          altered = perturb_text(cap, spec, {}, pool);
        }
        neg_text[i] = altered.raw;
        neg = leica_score(altered, img, bundle, lm.cfg, e.id).leica;
      }
      pairs[i] = JudgmentPair{e.id, pos, neg};
    } catch (const std::exception& ex) {
      failures[i] = ex.what();
    }
  });

  std::vector<JudgmentPair> ok;
  std::vector<SampleError> errors;
  Json pairs_json = Json::array();
  std::ostringstream csv;
  write_csv_row(csv, {"id", "score_pos", "score_neg"});
  for (std::size_t i = 0; i < n; ++i) {
    if (!pairs[i]) {
      errors.push_back({m.entries[i].id, failures[i]});
      continue;
    }
    const JudgmentPair& p = *pairs[i];
    ok.push_back(p);
    Json pj{{"id", p.id}, {"score_pos", p.score_pos}, {"score_neg", p.score_neg}};
    if (!neg_text[i].empty()) pj["neg_text"] = neg_text[i];
    pairs_json.push_back(std::move(pj));
    write_csv_row(csv, {p.id, format_double(p.score_pos), format_double(p.score_neg)});
  }

  Json result;
  if (ok.empty()) {
    result = {{"n", 0}, {"accuracy", nullptr}, {"kendall_tau", nullptr}, {"pearson", nullptr}, {"spearman", nullptr}};
  } else {
    const MetaEvalReport r = evaluate_pairs(ok);
    result = {{"n", r.n},
              {"accuracy", r.accuracy},
              {"kendall_tau", optional_number(r.kendall_tau)},
              {"pearson", optional_number(r.pearson)},
              {"spearman", optional_number(r.spearman)}};
  }
  if (c.format == "csv") {
    emit(c, csv.str(), out);
  } else {
    Json j = report_head("metaeval", lm.echo);
    j["protocol"] = protocol;
    j["result"] = result;
    j["pairs"] = std::move(pairs_json);
    j["errors"] = errors_json(errors);
    emit(c, dump(j), out);
  }
  report_errors(errors, err);
  return ok.empty() ? 3 : 0;
}

// -------------------------------------------------------------- perturb

struct PerturbArgs {
  std::string manifest;
  std::string out_dir;
  PerturbChoice perturb;
};

std::string safe_file_stem(const std::string& id) {
  std::string s;
  for (char ch : id) {
    const bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') ||
                    ch == '-' || ch == '_' || ch == '.';
    s += ok ? ch : '_';
  }
  if (s.empty() || s[0] == '.') s.insert(0, "_");
  return s;
}

int cmd_perturb(const Common& c, const PerturbArgs& a, std::ostream& out, std::ostream& err) {
  if (count_modes(a.perturb) != 1) throw ConfigError("choose exactly one of --kind, --replace, --mismatch");
  const Manifest m = read_nonempty(a.manifest);
  const fs::path out_dir(a.out_dir);
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (ec) throw ConfigError("cannot create " + (out_dir / "images").string() + ": " + ec.message());

  std::optional<TextResources> text;
  if (a.perturb.replace) text = load_text_resources(a.perturb);
  std::optional<std::pair<DistortionKind, double>> distortion;
  distortion = distortion_of(a.perturb);
  std::vector<Caption> pool;
  if (a.perturb.mismatch) {
    for (const auto& e : m.entries) pool.push_back(Caption::parse(e.text));
  }

  // File names are fixed up front so that collisions resolve the same way on every run.
  std::vector<std::string> stems;
  std::map<std::string, int> used;
  for (const auto& e : m.entries) {
    std::string stem = safe_file_stem(e.id);
    if (const int k = used[stem]++; k > 0) stem += "~" + std::to_string(k);
    stems.push_back(stem);
  }

  const fs::path out_abs = fs::absolute(out_dir).lexically_normal();
  const std::size_t n = m.entries.size();
  std::vector<std::optional<ManifestEntry>> written(n);
  std::vector<std::string> failures(n);
  parallel_for(n, c.jobs, [&](std::size_t i) {
    const ManifestEntry& e = m.entries[i];
    try {
      ManifestEntry o = e;
      const std::uint64_t seed = sample_seed(c.seed, e.id);
      if (distortion) {
        const ImageTensor img = read_ppm(e.image);
        const std::string rel = "images/" + stems[i] + ".ppm";
        write_ppm(distort_image(img, {distortion->first, distortion->second, seed}), out_dir / rel);
        o.image_ref = rel;
      } else {
        TextPerturbSpec spec;
        spec.seed = seed;
        const Caption cap = Caption::parse(e.text);
        if (a.perturb.replace) {
          spec.kind = TextPerturbKind::replace_k;
          spec.k = *a.perturb.replace;
          spec.vocabulary = text->vocabulary;
          o.text = perturb_text(cap, spec, text->keywords).raw;
        } else {
          spec.kind = TextPerturbKind::mismatch;
          o.text = perturb_text(cap, spec, {}, pool).raw;
        }
        if (!fs::exists(e.image)) throw DataError("image not found: " + e.image.string());
        o.image_ref = fs::absolute(e.image).lexically_normal().lexically_relative(out_abs).generic_string();
      }
      o.image = out_dir / o.image_ref;
      written[i] = std::move(o);
    } catch (const std::exception& ex) {
      failures[i] = ex.what();
    }
  });

  std::vector<ManifestEntry> entries;
  std::vector<SampleError> errors;
  for (std::size_t i = 0; i < n; ++i) {
    if (written[i]) {
      entries.push_back(*written[i]);
    } else {
      errors.push_back({m.entries[i].id, failures[i]});
    }
  }
  const fs::path manifest_out = out_dir / "manifest.jsonl";
  write_manifest(manifest_out, entries);

  Json config;
  config["seed"] = c.seed;
  Json j = report_head("perturb", config);
  Json protocol = protocol_json(a.perturb);
  protocol["manifest"] = a.manifest;
  j["protocol"] = protocol;
  j["output_manifest"] = manifest_out.generic_string();
  j["written"] = entries.size();
  j["errors"] = errors_json(errors);
  emit(c, dump(j), out);
  report_errors(errors, err);
  return entries.empty() ? 3 : 0;
}

// ----------------------------------------------------------------- rank

struct RankArgs {
  std::vector<std::string> manifests;
};

int cmd_rank(const Common& c, const RankArgs& a, std::ostream& out, std::ostream& err) {
  if (a.manifests.empty()) throw ConfigError("rank needs at least one manifest");
  const LoadedModels lm = load_models(c);
  struct Row {
    std::string model, manifest;
    Summary summary;
    std::size_t failed = 0;
  };
  std::vector<Row> rows;
  std::map<std::string, std::string> names;
  for (const auto& arg : a.manifests) {
    // NAME=PATH names the model explicitly; otherwise a shared "model" field
    // or the file stem does.
    std::string name, path = arg;
    if (const auto eq = arg.find('='); eq != std::string::npos && eq > 0) {
      name = arg.substr(0, eq);
      path = arg.substr(eq + 1);
    }
    const Manifest m = read_nonempty(path);
    const auto& first = m.entries.front().model;
    if (name.empty() && first &&
        std::all_of(m.entries.begin(), m.entries.end(), [&](const ManifestEntry& e) { return e.model == first; })) {
      name = *first;
    }
    if (name.empty()) name = fs::path(path).stem().string();
    if (const auto [it, fresh] = names.emplace(name, path); !fresh) {
      throw ConfigError("manifests " + it->second + " and " + path + " both name model '" + name + "'");
    }
    const BatchResult res = score_manifest(m, lm, c.jobs);
    report_errors(res.errors, err);
    if (res.scores.empty()) throw DataError("no scorable samples in " + path);
    rows.push_back({name, path, res.summary, res.errors.size()});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& x, const Row& y) {
    if (x.summary.mean != y.summary.mean) return x.summary.mean > y.summary.mean;
    return x.model < y.model;
  });

  if (c.format == "csv") {
    std::ostringstream s;
    write_csv_row(s, {"rank", "model", "n", "failed", "mean", "std"});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& r = rows[i];
      write_csv_row(s, {std::to_string(i + 1), r.model, std::to_string(r.summary.n), std::to_string(r.failed),
                        format_double(r.summary.mean), format_double(r.summary.std)});
    }
    emit(c, s.str(), out);
  } else {
    Json j = report_head("rank", lm.echo);
    Json table = Json::array();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& r = rows[i];
      table.push_back({{"rank", i + 1},
                       {"model", r.model},
                       {"manifest", r.manifest},
                       {"n", r.summary.n},
                       {"failed", r.failed},
                       {"mean", r.summary.mean},
                       {"std", r.summary.std}});
    }
    j["table"] = std::move(table);
    emit(c, dump(j), out);
  }
  return 0;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  std::string out_dir;
  std::size_t count = 200;
  int image_size = 128;
  bool no_models = false;
};

int cmd_synth(const Common& c, const SynthArgs& a, std::ostream& out, std::ostream&) {
  if (a.count < 1) throw ConfigError("--count must be >= 1");
  if (a.image_size < 64 || a.image_size % 32 != 0) throw ConfigError("--image-size must be a multiple of 32, >= 64");
  const fs::path dir(a.out_dir);
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  if (ec) throw ConfigError("cannot create " + (dir / "images").string() + ": " + ec.message());

  const auto scenes = synth::sample_scenes(a.count, c.seed);
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    char prefix[16];
    std::snprintf(prefix, sizeof prefix, "s%05zu-", i);
    ManifestEntry e;
    e.id = prefix + synth::scene_id(scenes[i]);
    auto [cap, img] = synth::generate(scenes[i], a.image_size);
    e.text = cap.raw;
    e.image_ref = "images/" + e.id + ".ppm";
    e.model = "synthworld";
    write_ppm(img, dir / e.image_ref);
    entries.push_back(std::move(e));
  }
  write_manifest(dir / "manifest.jsonl", entries);
  {
    std::ofstream lex(dir / "lexicon.txt", std::ios::binary);
    for (const auto& w : synth::keyword_lexicon()) lex << w << '\n';
    if (!lex) throw ConfigError("cannot write lexicon");
  }

  Json files = Json::array({"manifest.jsonl", "lexicon.txt"});
  Json j;
  Json config;
  config["seed"] = c.seed;
  config["count"] = a.count;
  config["image_size"] = a.image_size;
  config["models"] = !a.no_models;
  j = report_head("synth", config);
  if (!a.no_models) {
    synth::OracleOptions opts;
    opts.image_size = a.image_size;
    const synth::Oracles o = synth::build_oracles(synth::oracle_corpus(), opts);
    o.tokenizer.encoder.save(dir / kEncoderFile);
    o.tokenizer.codebook.save(dir / kCodebookFile);
    o.estimator.save(dir / kEstimatorFile);
    o.prior.save(dir / kPriorFile);
    o.matcher.save(dir / kMatcherFile);
    for (const char* f : {kEncoderFile, kCodebookFile, kEstimatorFile, kPriorFile, kMatcherFile}) files.push_back(f);
    j["codebook_id"] = hex64(o.tokenizer.codebook.id());
    j["codebook_size"] = o.tokenizer.codebook.size();
  }
  j["out_dir"] = dir.generic_string();
  j["samples"] = entries.size();
  j["files"] = std::move(files);
  emit(c, dump(j), out);
  return 0;
}

// ------------------------------------------------------------ stability

struct StabilityArgs {
  std::string manifest;
  std::vector<std::size_t> sizes;
  int repeats = 10;
  std::string tsv;
};

int cmd_stability(const Common& c, const StabilityArgs& a, std::ostream& out, std::ostream& err) {
  const Manifest m = read_nonempty(a.manifest);
  const LoadedModels lm = load_models(c);
  if (a.repeats < 1) throw ConfigError("--repeats must be >= 1");
  const BatchResult res = score_manifest(m, lm, c.jobs);
  report_errors(res.errors, err);
  if (res.scores.empty()) throw DataError("no scorable samples in " + a.manifest);
  std::vector<double> scores;
  for (const auto& s : res.scores) scores.push_back(s.leica);
  const std::size_t n = scores.size();

  std::vector<std::size_t> sizes = a.sizes;
  if (sizes.empty()) {
    for (std::size_t s : {10, 50, 100, 500, 1000, 5000}) {
      if (s <= n) sizes.push_back(s);
    }
    if (sizes.empty() || sizes.back() != n) sizes.push_back(n);
  }
  for (std::size_t s : sizes) {
    if (s < 1 || s > n) {
      throw ConfigError("subset size " + std::to_string(s) + " outside 1.." + std::to_string(n));
    }
  }
  const SubsetMetric mean_of = [&](std::span<const std::size_t> idx) {
    double acc = 0.0;
    for (std::size_t i : idx) acc += scores[i];
    return acc / static_cast<double>(idx.size());
  };
  const auto cells = stability_sweep(n, mean_of, sizes, a.repeats, c.seed);
  const Summary full = res.summary;
  auto rel = [&](double v) -> std::optional<double> {
    if (full.mean == 0.0) return std::nullopt;
    return std::abs(v - full.mean) / std::abs(full.mean);
  };
  auto cv = [](double mean, double sd) -> std::optional<double> {
    if (mean == 0.0) return std::nullopt;
    return sd / std::abs(mean);
  };
  if (!a.tsv.empty()) {
    Json rows = Json::array();
    for (const auto& cell : cells) rows.push_back({{"size", cell.size}, {"mean", cell.mean}, {"std", cell.std}});
    write_tsv(a.tsv, rows, {"size", "mean", "std"});
  }

  if (c.format == "csv") {
    std::ostringstream s;
    write_csv_row(s, {"size", "mean", "std", "relative_diff", "cv"});
    for (const auto& cell : cells) {
      const auto r = rel(cell.mean);
      const auto v = cv(cell.mean, cell.std);
      write_csv_row(s, {std::to_string(cell.size), format_double(cell.mean), format_double(cell.std),
                        r ? format_double(*r) : "", v ? format_double(*v) : ""});
    }
    emit(c, s.str(), out);
  } else {
    Json j = report_head("stability", lm.echo);
    j["protocol"] = {{"manifest", a.manifest}, {"sizes", sizes}, {"repeats", a.repeats}};
    j["full"] = summary_json(full, res.errors.size());
    Json arr = Json::array();
    for (const auto& cell : cells) {
      arr.push_back({{"size", cell.size},
                     {"mean", cell.mean},
                     {"std", cell.std},
                     {"relative_diff", optional_number(rel(cell.mean))},
                     {"cv", optional_number(cv(cell.mean, cell.std))},
                     {"values", cell.values}});
    }
    j["cells"] = std::move(arr);
    j["errors"] = errors_json(res.errors);
    emit(c, dump(j), out);
  }
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"LEICA: likelihood-based text-to-image evaluation"};
  app.name("leica");
  app.require_subcommand(1);
  app.fallthrough(false);

  Common c;
  try {
    c.jobs = jobs_from_env();
  } catch (const ConfigError& e) {
    err << "leica: " << e.what() << '\n';
    return 2;
  }

  ScoreArgs score_args;
  auto* score = app.add_subcommand("score", "Score every entry of a manifest");
  score->add_option("--manifest", score_args.manifest, "JSONL manifest")->required();
  add_model_options(score, c);
  add_output_options(score, c, true);

  MetaevalArgs me_args;
  auto* metaeval = app.add_subcommand("metaeval", "Accuracy and rank agreement on preferred/dispreferred pairs");
  metaeval->add_option("--manifest", me_args.manifest, "Clean JSONL manifest")->required();
  metaeval->add_option("--noised", me_args.noised, "Manifest of distorted images with matching ids");
  add_perturb_options(metaeval, me_args.perturb);
  metaeval->add_option("--ladder", me_args.ladder, "Degree ladder for a distortion kind, or 'replace'");
  metaeval->add_option("--degrees", me_args.degrees, "Ladder degrees (default: built-in ladder)")->delimiter(',');
  metaeval->add_option("--repeats", me_args.repeats, "Ladder repeats per degree");
  metaeval->add_option("--tsv", me_args.tsv, "Also write the ladder curve as tab-separated columns");
  add_model_options(metaeval, c);
  add_output_options(metaeval, c, true);

  PerturbArgs pt_args;
  auto* perturb = app.add_subcommand("perturb", "Write a distorted copy of a manifest");
  perturb->add_option("--in,--manifest", pt_args.manifest, "Input JSONL manifest")->required();
  perturb->add_option("--out", pt_args.out_dir, "Output directory for images and manifest.jsonl")->required();
  add_perturb_options(perturb, pt_args.perturb);
  perturb->add_option("--jobs", c.jobs, "Worker threads (default: LEICA_JOBS or 1)")->check(CLI::Range(1, 1024));
  perturb->add_option("--seed", c.seed, "Seed for every stochastic step");

  RankArgs rank_args;
  auto* rank = app.add_subcommand("rank", "Rank models, one manifest per model, by mean score");
  rank->add_option("manifests", rank_args.manifests, "Per-model manifests, optionally NAME=PATH")->required();
  add_model_options(rank, c);
  add_output_options(rank, c, true);

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "Emit a synthetic corpus and its oracle models");
  synth->add_option("--out,--out-dir", synth_args.out_dir, "Output directory")->required();
  synth->add_option("--count", synth_args.count, "Number of samples in the manifest");
  synth->add_option("--image-size", synth_args.image_size, "Image side in pixels");
  synth->add_flag("--no-models", synth_args.no_models, "Skip fitting the oracle models");
  // --out names the corpus directory here, so the report always goes to stdout.
  add_output_options(synth, c, false, false);

  StabilityArgs st_args;
  auto* stability = app.add_subcommand("stability", "Mean score over random subsets of several sizes");
  stability->add_option("--manifest", st_args.manifest, "JSONL manifest")->required();
  stability->add_option("--sizes", st_args.sizes, "Subset sizes")->delimiter(',');
  stability->add_option("--repeats", st_args.repeats, "Subsets per size");
  stability->add_option("--tsv", st_args.tsv, "Also write size/mean/std as tab-separated columns");
  add_model_options(stability, c);
  add_output_options(stability, c, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*score) return cmd_score(c, score_args, out, err);
    if (*metaeval) return cmd_metaeval(c, me_args, out, err);
    if (*perturb) return cmd_perturb(c, pt_args, out, err);
    if (*rank) return cmd_rank(c, rank_args, out, err);
    if (*synth) return cmd_synth(c, synth_args, out, err);
    if (*stability) return cmd_stability(c, st_args, out, err);
    return 2;
  } catch (const ConfigError& e) {
    err << "leica: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    err << "leica: " << e.what() << '\n';
    return 3;
  } catch (const InvalidArgument& e) {
    err << "leica: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "leica: internal error: " << e.what() << '\n';
    return 4;
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"leica"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace leica::cli
