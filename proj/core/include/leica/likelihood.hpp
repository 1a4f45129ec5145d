#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "leica/tokenizer.hpp"

namespace leica {

/// Caption text plus its lowercased whitespace tokens.
struct Caption {
  std::string raw;
  std::vector<std::string> tokens;

  // Throws InvalidArgument when no tokens remain.
  static Caption parse(std::string_view text);
  static Caption from_tokens(std::vector<std::string> tokens);

  // Sorted, de-duplicated tokens joined by single spaces; the
  // order-insensitive conditioning key of the reference backends.
  std::string bag_key() const;
};

// Probabilities below this are clamped before taking the log.
inline constexpr double kProbabilityFloor = 1e-300;

// ln(max(p, kProbabilityFloor)). Every scoring path goes through here.
double floored_log(double p);

/// Per-position natural-log likelihoods ln P(c_t | c_<t, caption).
struct LogLikMap {
  std::vector<double> values;
  std::uint64_t codebook_id = 0;

  std::size_t m() const { return values.size(); }
};

/// Conditional next-code distribution P(. | caption, prefix) over K codes.
///
/// Implementations must be deterministic and return probabilities that are
/// nonnegative and sum to 1 within 1e-6.
class EstimatorBackend {
 public:
  virtual ~EstimatorBackend() = default;

  virtual std::string name() const = 0;
  virtual std::uint32_t vocab_size() const = 0;
  // Codebook the backend was fit against, if it is tied to one.
  virtual std::optional<std::uint64_t> codebook_id() const { return std::nullopt; }

  virtual void next_distribution(const Caption& caption, std::span<const Code> prefix,
                                 std::span<double> probs) const = 0;

  // out[t] = ln P(codes[t] | codes[<t], caption) for all t. The default
  // walks next_distribution; backends override it with a batched pass that
  // must agree with the sequential route.
  virtual void teacher_forced(const Caption& caption, std::span<const Code> codes,
                              std::span<double> out) const;
};

class UniformBackend final : public EstimatorBackend {
 public:
  explicit UniformBackend(std::uint32_t vocab);

  std::string name() const override { return "uniform"; }
  std::uint32_t vocab_size() const override { return vocab_; }
  void next_distribution(const Caption&, std::span<const Code>, std::span<double> probs) const override;
  void teacher_forced(const Caption&, std::span<const Code> codes, std::span<double> out) const override;

 private:
  std::uint32_t vocab_;
};

/// Add-alpha count model of c_t given (c_{t-1}, caption bag of words).
///
///   P(c | prev, bag) = (n(bag, prev, c) + alpha) / (n(bag, prev) + alpha * K)
///
/// The first position uses a dedicated start context (prev = K). Contexts
/// never observed reduce to the uniform distribution; with alpha = 0 an
/// unseen context is also treated as uniform.
class CountModel final : public EstimatorBackend {
 public:
  CountModel(std::uint32_t vocab, double alpha, std::uint64_t codebook_id);

  void add(const Caption& caption, const CodeGrid& grid, std::uint32_t copies = 1);

  std::string name() const override { return "count"; }
  std::uint32_t vocab_size() const override { return vocab_; }
  std::optional<std::uint64_t> codebook_id() const override { return codebook_id_; }
  double alpha() const { return alpha_; }
  std::size_t context_count() const { return contexts_.size(); }

  void next_distribution(const Caption& caption, std::span<const Code> prefix,
                         std::span<double> probs) const override;
  void teacher_forced(const Caption& caption, std::span<const Code> codes,
                      std::span<double> out) const override;

  void save(const std::filesystem::path& path) const;
  static CountModel load(const std::filesystem::path& path);

 private:
  struct Context {
    std::uint64_t total = 0;
    std::map<Code, std::uint32_t> counts;
  };

  static std::uint64_t key(std::uint32_t bag, std::uint32_t prev) {
    return (static_cast<std::uint64_t>(bag) << 32) | prev;
  }
  const Context* find(const std::string& bag, std::uint32_t prev) const;
  double prob(const Context* ctx, Code c) const;

  std::uint32_t vocab_;
  double alpha_;
  std::uint64_t codebook_id_;
  std::unordered_map<std::string, std::uint32_t> bags_;
  std::vector<std::string> bag_names_;
  std::unordered_map<std::uint64_t, Context> contexts_;
};

// Every position in one batched backend call.
LogLikMap score_teacher_forced(const EstimatorBackend& backend, const Caption& caption,
                               const CodeGrid& grid);

// Reference route: one next_distribution call per position.
LogLikMap score_autoregressive_oracle(const EstimatorBackend& backend, const Caption& caption,
                                      const CodeGrid& grid);

double total_log_likelihood(const LogLikMap& map);

}  // namespace leica
