#include "leica/metric.hpp"

#include <cmath>
#include <variant>

#include "leica/errors.hpp"
#include "leica/parallel.hpp"

namespace leica {

CreditMode LeicaConfig::credit_mode() const {
  if (ablate_H && ablate_S) return CreditMode::raw;
  if (ablate_H) return h_ablation;
  return CreditMode::full;
}

double combine_credit(std::span<const double> credit, std::span<const double> semantic) {
  if (credit.size() != semantic.size()) throw ShapeError("credit and semantic maps differ in m");
  if (credit.empty()) throw ShapeError("cannot combine empty maps");
  double acc = 0.0;
  for (std::size_t t = 0; t < credit.size(); ++t) acc += credit[t] * semantic[t];
  return acc / static_cast<double>(credit.size());
}

SampleScore leica_score(const Caption& caption, const ImageTensor& img, const ModelBundle& models,
                        const LeicaConfig& cfg, std::string id) {
  if (!models.backend || !models.tokenizer || !models.prior) {
    throw InvalidArgument("model bundle needs backend, tokenizer and prior");
  }
  const CodeGrid grid = models.tokenizer->tokenize(img);
  const LogLikMap loglik = score_teacher_forced(*models.backend, caption, grid);

  SampleScore out;
  out.id = std::move(id);
  out.m = grid.m();
  out.total_loglik = total_log_likelihood(loglik);
  out.mean_loglik = out.total_loglik / static_cast<double>(out.m);

  const CreditMap full = apply_H(loglik, *models.prior, grid, cfg.perceptual, CreditMode::full);
  for (double v : full.values) out.zeroed_codes += v == 0.0 ? 1 : 0;
  const CreditMode mode = cfg.credit_mode();
  const CreditMap credit =
      mode == CreditMode::full ? full : apply_H(loglik, *models.prior, grid, cfg.perceptual, mode);

  std::vector<double> semantic;
  if (cfg.ablate_S) {
    semantic.assign(grid.m(), 1.0);
  } else {
    if (!models.matcher) throw InvalidArgument("semantic credit needs a matcher");
    const SemanticMap map = models.matcher->patch_alignment(caption, img);
    out.psi = map.psi;
    semantic = semantic_score(map, grid.rows, grid.cols, cfg.semantic);
  }
  out.leica = combine_credit(credit.values, semantic);
  if (!std::isfinite(out.leica)) throw DegenerateError("non-finite LEICA score");
  return out;
}

Summary summarize(std::span<const double> values) {
  Summary s;
  s.n = values.size();
  if (s.n == 0) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(s.n);
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(s.n));
  return s;
}

BatchResult score_batch(std::span<const BatchItem> items, const ModelBundle& models,
                        const LeicaConfig& cfg, int jobs) {
  std::vector<std::variant<SampleScore, SampleError>> slots(items.size());
  parallel_for(items.size(), jobs, [&](std::size_t i) {
    const BatchItem& item = items[i];
    try {
      const Caption caption = Caption::parse(item.text);
      const ImageTensor img = item.load();
      slots[i] = leica_score(caption, img, models, cfg, item.id);
    } catch (const std::exception& e) {
      slots[i] = SampleError{item.id, e.what()};
    }
  });
  BatchResult result;
  std::vector<double> values;
  for (auto& slot : slots) {
    if (auto* s = std::get_if<SampleScore>(&slot)) {
      values.push_back(s->leica);
      result.scores.push_back(std::move(*s));
    } else {
      result.errors.push_back(std::move(std::get<SampleError>(slot)));
    }
  }
  result.summary = summarize(values);
  return result;
}

}  // namespace leica
