#include "leica/likelihood.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <sstream>

#include "leica/binary_io.hpp"
#include "leica/errors.hpp"

namespace leica {

namespace {

constexpr std::string_view kCountMagic = "LEICM1";
constexpr std::uint32_t kCountVersion = 1;

void check_grid(const EstimatorBackend& backend, const CodeGrid& grid) {
  if (grid.m() == 0) throw ShapeError("code grid is empty");
  if (auto id = backend.codebook_id(); id && *id != grid.codebook_id) {
    throw VocabularyError("code grid comes from a different codebook than backend '" +
                          backend.name() + "'");
  }
  const std::uint32_t k = backend.vocab_size();
  for (Code c : grid.codes) {
    if (c >= k) throw VocabularyError("code " + std::to_string(c) + " outside backend vocabulary");
  }
}

}  // namespace

Caption Caption::parse(std::string_view text) {
  Caption cap;
  cap.raw = std::string(text);
  std::istringstream in(cap.raw);
  std::string tok;
  while (in >> tok) {
    std::transform(tok.begin(), tok.end(), tok.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    cap.tokens.push_back(std::move(tok));
  }
  if (cap.tokens.empty()) throw InvalidArgument("caption is empty after tokenization");
  return cap;
}

Caption Caption::from_tokens(std::vector<std::string> tokens) {
  std::string raw;
  for (const auto& t : tokens) {
    if (!raw.empty()) raw.push_back(' ');
    raw += t;
  }
  return parse(raw);
}

std::string Caption::bag_key() const {
  std::vector<std::string> sorted = tokens;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::string key;
  for (const auto& t : sorted) {
    if (!key.empty()) key.push_back(' ');
    key += t;
  }
  return key;
}

double floored_log(double p) { return std::log(std::max(p, kProbabilityFloor)); }

void EstimatorBackend::teacher_forced(const Caption& caption, std::span<const Code> codes,
                                      std::span<double> out) const {
  std::vector<double> probs(vocab_size());
  for (std::size_t t = 0; t < codes.size(); ++t) {
    next_distribution(caption, codes.first(t), probs);
    out[t] = floored_log(probs[codes[t]]);
  }
}

UniformBackend::UniformBackend(std::uint32_t vocab) : vocab_(vocab) {
  if (vocab_ < 1) throw InvalidArgument("uniform backend needs K >= 1");
}

void UniformBackend::next_distribution(const Caption&, std::span<const Code>,
                                       std::span<double> probs) const {
  std::fill(probs.begin(), probs.end(), 1.0 / vocab_);
}

void UniformBackend::teacher_forced(const Caption&, std::span<const Code> codes,
                                    std::span<double> out) const {
  std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(codes.size()),
            floored_log(1.0 / vocab_));
}

CountModel::CountModel(std::uint32_t vocab, double alpha, std::uint64_t codebook_id)
    : vocab_(vocab), alpha_(alpha), codebook_id_(codebook_id) {
  if (vocab_ < 1) throw InvalidArgument("count model needs K >= 1");
  if (!(alpha_ >= 0.0) || !std::isfinite(alpha_)) throw InvalidArgument("alpha must be >= 0");
}

void CountModel::add(const Caption& caption, const CodeGrid& grid, std::uint32_t copies) {
  check_grid(*this, grid);
  const std::string bag = caption.bag_key();
  auto [it, inserted] = bags_.try_emplace(bag, static_cast<std::uint32_t>(bag_names_.size()));
  if (inserted) bag_names_.push_back(bag);
  const std::uint32_t b = it->second;
  std::uint32_t prev = vocab_;
  for (Code c : grid.codes) {
    Context& ctx = contexts_[key(b, prev)];
    ctx.total += copies;
    ctx.counts[c] += copies;
    prev = c;
  }
}

const CountModel::Context* CountModel::find(const std::string& bag, std::uint32_t prev) const {
  const auto b = bags_.find(bag);
  if (b == bags_.end()) return nullptr;
  const auto it = contexts_.find(key(b->second, prev));
  return it == contexts_.end() ? nullptr : &it->second;
}

double CountModel::prob(const Context* ctx, Code c) const {
  if (ctx == nullptr || ctx->total == 0) return 1.0 / vocab_;
  const auto it = ctx->counts.find(c);
  const double n = it == ctx->counts.end() ? 0.0 : static_cast<double>(it->second);
  return (n + alpha_) / (static_cast<double>(ctx->total) + alpha_ * vocab_);
}

void CountModel::next_distribution(const Caption& caption, std::span<const Code> prefix,
                                   std::span<double> probs) const {
  if (probs.size() != vocab_) throw ShapeError("probability buffer must have K entries");
  const std::uint32_t prev = prefix.empty() ? vocab_ : prefix.back();
  const Context* ctx = find(caption.bag_key(), prev);
  if (ctx == nullptr || ctx->total == 0) {
    std::fill(probs.begin(), probs.end(), 1.0 / vocab_);
    return;
  }
  const double denom = static_cast<double>(ctx->total) + alpha_ * vocab_;
  std::fill(probs.begin(), probs.end(), alpha_ / denom);
  for (const auto& [c, n] : ctx->counts) probs[c] = (static_cast<double>(n) + alpha_) / denom;
}

void CountModel::teacher_forced(const Caption& caption, std::span<const Code> codes,
                                std::span<double> out) const {
  const std::string bag = caption.bag_key();
  std::uint32_t prev = vocab_;
  for (std::size_t t = 0; t < codes.size(); ++t) {
    out[t] = floored_log(prob(find(bag, prev), codes[t]));
    prev = codes[t];
  }
}

void CountModel::save(const std::filesystem::path& path) const {
  // Bags and contexts are written in sorted order so equal models produce
  // equal files regardless of insertion history.
  std::vector<std::uint32_t> order(bag_names_.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(),
            [&](std::uint32_t a, std::uint32_t b) { return bag_names_[a] < bag_names_[b]; });
  std::vector<std::uint32_t> file_index(bag_names_.size());
  for (std::uint32_t i = 0; i < order.size(); ++i) file_index[order[i]] = i;

  std::vector<std::pair<std::uint64_t, const Context*>> rows;
  rows.reserve(contexts_.size());
  for (const auto& [k, ctx] : contexts_) {
    const auto b = static_cast<std::uint32_t>(k >> 32);
    rows.emplace_back(key(file_index[b], static_cast<std::uint32_t>(k)), &ctx);
  }
  std::sort(rows.begin(), rows.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  io::Writer w;
  w.magic(kCountMagic);
  w.u32(kCountVersion);
  w.u32(vocab_);
  w.f64(alpha_);
  w.u64(codebook_id_);
  w.u32(static_cast<std::uint32_t>(order.size()));
  for (std::uint32_t b : order) w.str(bag_names_[b]);
  w.u32(static_cast<std::uint32_t>(rows.size()));
  for (const auto& [k, ctx] : rows) {
    w.u32(static_cast<std::uint32_t>(k >> 32));
    w.u32(static_cast<std::uint32_t>(k));
    w.u64(ctx->total);
    w.u32(static_cast<std::uint32_t>(ctx->counts.size()));
    for (const auto& [c, n] : ctx->counts) {
      w.u32(c);
      w.u32(n);
    }
  }
  w.u64(io::fnv1a64(w.buffer()));
  w.save(path);
}

CountModel CountModel::load(const std::filesystem::path& path) {
  io::Reader r = io::Reader::from_file(path);
  r.expect_magic(kCountMagic);
  const std::uint32_t version = r.u32();
  if (version != kCountVersion) {
    throw FormatError(path.string() + ": unsupported count-model version " + std::to_string(version));
  }
  const std::uint32_t vocab = r.u32();
  const double alpha = r.f64();
  const std::uint64_t cb_id = r.u64();
  CountModel model(vocab, alpha, cb_id);
  const std::uint32_t n_bags = r.u32();
  for (std::uint32_t i = 0; i < n_bags; ++i) {
    std::string bag = r.str();
    if (!model.bags_.emplace(bag, i).second) throw FormatError(path.string() + ": duplicate bag");
    model.bag_names_.push_back(std::move(bag));
  }
  const std::uint32_t n_ctx = r.u32();
  for (std::uint32_t i = 0; i < n_ctx; ++i) {
    const std::uint32_t b = r.u32();
    const std::uint32_t prev = r.u32();
    if (b >= n_bags || prev > vocab) throw FormatError(path.string() + ": context out of range");
    Context ctx;
    ctx.total = r.u64();
    const std::uint32_t n = r.u32();
    std::uint64_t sum = 0;
    for (std::uint32_t j = 0; j < n; ++j) {
      const Code c = r.u32();
      const std::uint32_t cnt = r.u32();
      if (c >= vocab) throw FormatError(path.string() + ": code out of range");
      ctx.counts[c] = cnt;
      sum += cnt;
    }
    if (sum != ctx.total) throw FormatError(path.string() + ": context total mismatch");
    model.contexts_.emplace(key(b, prev), std::move(ctx));
  }
  const std::uint64_t expect = io::fnv1a64(r.consumed());
  if (r.u64() != expect) throw FormatError(path.string() + ": count-model hash mismatch");
  r.expect_end();
  return model;
}

LogLikMap score_teacher_forced(const EstimatorBackend& backend, const Caption& caption,
                               const CodeGrid& grid) {
  check_grid(backend, grid);
  LogLikMap map;
  map.codebook_id = grid.codebook_id;
  map.values.resize(grid.m());
  backend.teacher_forced(caption, grid.codes, map.values);
  return map;
}

LogLikMap score_autoregressive_oracle(const EstimatorBackend& backend, const Caption& caption,
                                      const CodeGrid& grid) {
  check_grid(backend, grid);
  LogLikMap map;
  map.codebook_id = grid.codebook_id;
  map.values.resize(grid.m());
  std::vector<double> probs(backend.vocab_size());
  const std::span<const Code> codes = grid.codes;
  for (std::size_t t = 0; t < codes.size(); ++t) {
    backend.next_distribution(caption, codes.first(t), probs);
    map.values[t] = floored_log(probs[codes[t]]);
  }
  return map;
}

double total_log_likelihood(const LogLikMap& map) {
  double total = 0.0;
  for (double v : map.values) total += v;
  return total;
}

}  // namespace leica
