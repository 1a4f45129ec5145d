#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "app.hpp"
#include "json.hpp"
#include "leica/synthworld.hpp"
#include "test_support.hpp"

namespace leica {
namespace {

namespace fs = std::filesystem;
using Json = nlohmann::json;

struct Result {
  int code;
  std::string out;
  std::string err;
  Json json() const { return Json::parse(out); }
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

// A small synthetic corpus plus the cached oracle models, shared by every
// test in this process.
class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(test::fresh_dir("cli"));
    const Result r = run({"synth", "--out", data().string(), "--count", "30", "--no-models", "--seed", "5"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto& o = test::shared_oracles();
    o.tokenizer.encoder.save(models() / "encoder.leien");
    o.tokenizer.codebook.save(models() / "codebook.leicb");
    o.estimator.save(models() / "estimator.leicm");
    o.prior.save(models() / "prior.leipr");
    o.matcher.save(models() / "matcher.leimm");
  }
  static void TearDownTestSuite() {
    fs::remove_all(*dir_);
    delete dir_;
  }

  static fs::path data() { return *dir_ / "data"; }
  static fs::path models() { return data(); }
  static fs::path manifest() { return data() / "manifest.jsonl"; }
  static fs::path scratch(const std::string& name) {
    const auto p = *dir_ / name;
    fs::create_directories(p);
    return p;
  }

  static Result score(std::vector<std::string> extra = {}) {
    std::vector<std::string> args{"score", "--manifest", manifest().string(), "--models", models().string()};
    args.insert(args.end(), extra.begin(), extra.end());
    return run(args);
  }

 private:
  static fs::path* dir_;
};

fs::path* CliTest::dir_ = nullptr;

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::ofstream f(path);
  for (const auto& l : lines) f << l << "\n";
}

TEST_F(CliTest, SynthWritesManifestAndLexicon) {
  EXPECT_TRUE(fs::exists(data() / "lexicon.txt"));
  std::ifstream in(manifest());
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const Json e = Json::parse(line);
    EXPECT_EQ(e["model"], "synthworld");
    EXPECT_TRUE(fs::exists(data() / e["image"].get<std::string>()));
    ++n;
  }
  EXPECT_EQ(n, 30);
}

TEST_F(CliTest, ScoreReportCarriesEverySample) {
  const Result r = score();
  ASSERT_EQ(r.code, 0) << r.err;
  const Json j = r.json();
  EXPECT_EQ(j["schema"], "leica-report/1");
  EXPECT_EQ(j["command"], "score");
  EXPECT_EQ(j["summary"]["n"], 30);
  EXPECT_EQ(j["summary"]["failed"], 0);
  ASSERT_EQ(j["samples"].size(), 30u);
  double sum = 0.0;
  for (const auto& s : j["samples"]) {
    EXPECT_GE(s["leica"].get<double>(), 0.0);
    EXPECT_EQ(s["m"], 64);
    sum += s["leica"].get<double>();
  }
  EXPECT_NEAR(j["summary"]["mean"].get<double>(), sum / 30.0, 1e-9);
  EXPECT_NEAR(j["config"]["lambda"].get<double>(), std::log(1e-9), 1e-12);
  EXPECT_EQ(j["config"]["tau"], 0.07);
}

TEST_F(CliTest, BothAblationsReportMeanLogLikelihood) {
  const Result r = score({"--ablate-h", "--ablate-s"});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const auto& s : r.json()["samples"]) {
    EXPECT_EQ(s["leica"].get<double>(), s["mean_loglik"].get<double>());
    EXPECT_TRUE(s["psi"].is_null());
  }
}

TEST_F(CliTest, RerunsAreByteIdenticalForAnyJobCount) {
  const Result a = score({"--jobs", "1"});
  const Result b = score({"--jobs", "1"});
  const Result c = score({"--jobs", "4"});
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(a.out, c.out);
}

TEST_F(CliTest, LambdaAcceptsProbabilityOrLog) {
  const Result a = score({"--lambda", "1e-9"});
  const Result b = score();
  const Result c = score({"--lambda", "-5"});
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(c.json()["config"]["lambda"], -5.0);
  EXPECT_EQ(score({"--lambda", "0"}).code, 2);
  EXPECT_EQ(score({"--lambda", "2"}).code, 2);
}

TEST_F(CliTest, CsvFormat) {
  const Result r = score({"--format", "csv"});
  ASSERT_EQ(r.code, 0);
  std::istringstream in(r.out);
  std::string header, line;
  std::getline(in, header);
  EXPECT_EQ(header.rfind("id,", 0), 0u);
  int rows = 0;
  while (std::getline(in, line)) rows += line.empty() ? 0 : 1;
  EXPECT_EQ(rows, 30);
}

TEST_F(CliTest, EmptyManifestIsADataError) {
  const auto dir = scratch("empty");
  write_lines(dir / "m.jsonl", {});
  const Result r = run({"score", "--manifest", (dir / "m.jsonl").string(), "--models", models().string()});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("empty manifest"), std::string::npos) << r.err;
}

TEST_F(CliTest, MissingImageIsListedAndTheRunContinues) {
  const auto dir = scratch("missing");
  const auto [cap, img] = synth::generate({});
  write_ppm(img, dir / "ok.ppm");
  write_lines(dir / "m.jsonl", {R"({"id": "ok", "text": ")" + cap.raw + R"(", "image": "ok.ppm"})",
                                R"({"id": "gone", "text": "a red square", "image": "nowhere.ppm"})"});
  const Result r = run({"score", "--manifest", (dir / "m.jsonl").string(), "--models", models().string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const Json j = r.json();
  EXPECT_EQ(j["summary"]["n"], 1);
  EXPECT_EQ(j["summary"]["failed"], 1);
  ASSERT_EQ(j["errors"].size(), 1u);
  EXPECT_EQ(j["errors"][0]["id"], "gone");
}

TEST_F(CliTest, BadConfigurationExitsWithTwo) {
  EXPECT_EQ(run({"score", "--manifest", manifest().string(), "--models", "/nonexistent"}).code, 2);
  EXPECT_EQ(run({"score"}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST_F(CliTest, IdenticalNoisedSetHasZeroAccuracyAndNoTau) {
  const Result r = run({"metaeval", "--manifest", manifest().string(), "--noised", manifest().string(),
                        "--models", models().string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const Json res = r.json()["result"];
  EXPECT_EQ(res["accuracy"], 0.0);
  EXPECT_TRUE(res["kendall_tau"].is_null());
  EXPECT_EQ(res["n"], 30);
}

TEST_F(CliTest, MismatchedCaptionsScoreLower) {
  const Result r = run({"metaeval", "--manifest", manifest().string(), "--mismatch", "--models", models().string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_GE(r.json()["result"]["accuracy"].get<double>(), 0.9);
  for (const auto& p : r.json()["pairs"]) EXPECT_TRUE(p.contains("neg_text"));
}

TEST_F(CliTest, RankOneModel) {
  const Result r = run({"rank", manifest().string(), "--models", models().string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const Json t = r.json()["table"];
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0]["rank"], 1);
  EXPECT_EQ(t[0]["model"], "synthworld");
}

TEST_F(CliTest, NoisedModelRanksLower) {
  const auto out = scratch("noised");
  const Result p = run({"perturb", "--in", manifest().string(), "--out", out.string(), "--kind", "gn", "--degree",
                        "0.2", "--seed", "3"});
  ASSERT_EQ(p.code, 0) << p.err;
  const std::vector<std::string> args{"rank", "clean=" + manifest().string(),
                                      "noisy=" + (out / "manifest.jsonl").string(), "--models", models().string()};
  const Result a = run(args);
  ASSERT_EQ(a.code, 0) << a.err;
  const Json t = a.json()["table"];
  EXPECT_EQ(t[0]["model"], "clean");
  EXPECT_EQ(t[1]["model"], "noisy");
  EXPECT_EQ(run(args).out, a.out);
  // Without names both manifests claim the same model.
  EXPECT_EQ(run({"rank", manifest().string(), (out / "manifest.jsonl").string(), "--models", models().string()}).code,
            2);
}

TEST_F(CliTest, PerturbIsDeterministic) {
  const auto a = scratch("pa"), b = scratch("pb");
  for (const auto& d : {a, b}) {
    ASSERT_EQ(run({"perturb", "--in", manifest().string(), "--out", d.string(), "--kind", "spn+", "--degree", "0.1",
                   "--seed", "8"})
                  .code,
              0);
  }
  std::ifstream ma(a / "manifest.jsonl"), mb(b / "manifest.jsonl");
  std::string la, lb;
  while (std::getline(ma, la) && std::getline(mb, lb)) {
    const Json ea = Json::parse(la), eb = Json::parse(lb);
    EXPECT_EQ(read_ppm(a / ea["image"].get<std::string>()), read_ppm(b / eb["image"].get<std::string>()));
  }
}

TEST_F(CliTest, PerturbReplaceChangesCaptions) {
  const auto out = scratch("replace");
  const Result r = run({"perturb", "--in", manifest().string(), "--out", out.string(), "--replace", "2", "--lexicon",
                        (data() / "lexicon.txt").string(), "--seed", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream clean(manifest()), altered(out / "manifest.jsonl");
  std::string lc, la;
  while (std::getline(clean, lc) && std::getline(altered, la)) {
    const Json c = Json::parse(lc), a = Json::parse(la);
    EXPECT_EQ(c["id"], a["id"]);
    EXPECT_NE(c["text"], a["text"]);
    // The image path still resolves from the new manifest's directory.
    EXPECT_TRUE(fs::exists(out / a["image"].get<std::string>()));
  }
}

TEST_F(CliTest, ExternalMatcherAgreesWithBuiltIn) {
  const Result a = score();
  const Result b = score({"--matcher-cmd", std::string(LEICA_MATCHER_STUB)});
  ASSERT_EQ(b.code, 0) << b.err;
  const Json sa = a.json()["samples"], sb = b.json()["samples"];
  ASSERT_EQ(sa.size(), sb.size());
  for (std::size_t i = 0; i < sa.size(); ++i) {
    const double x = sa[i]["leica"].get<double>(), y = sb[i]["leica"].get<double>();
    EXPECT_NEAR(x, y, 1e-9 * std::max(1.0, std::abs(x)));
  }
  EXPECT_EQ(b.json()["config"]["models"]["matcher_cmd"], LEICA_MATCHER_STUB);
}

TEST_F(CliTest, StabilitySweep) {
  const Result r = run({"stability", "--manifest", manifest().string(), "--sizes", "5,10", "--repeats", "3",
                        "--models", models().string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const Json j = r.json();
  ASSERT_EQ(j["cells"].size(), 2u);
  EXPECT_EQ(j["cells"][0]["size"], 5);
  EXPECT_EQ(j["cells"][0]["values"].size(), 3u);
}

TEST_F(CliTest, NoiseLadderWithTsv) {
  const auto out = scratch("ladder");
  const Result r = run({"metaeval", "--manifest", manifest().string(), "--ladder", "gn", "--degrees", "0,0.05,0.2",
                        "--repeats", "2", "--models", models().string(), "--tsv", (out / "l.tsv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const Json rungs = r.json()["rungs"];
  ASSERT_EQ(rungs.size(), 3u);
  EXPECT_TRUE(rungs[0]["tau_mean"].is_null());
  EXPECT_GT(rungs[1]["mean_score"].get<double>(), rungs[2]["mean_score"].get<double>());
  std::ifstream tsv(out / "l.tsv");
  std::string first;
  std::getline(tsv, first);
  EXPECT_EQ(first.rfind("# ", 0), 0u);
}

}  // namespace
}  // namespace leica
