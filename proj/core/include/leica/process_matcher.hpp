#pragma once

#include <filesystem>
#include <mutex>
#include <string>

#include "leica/credit_semantic.hpp"

namespace leica {

/// MatcherModel served by an external process over newline-delimited JSON.
///
/// Request, one line on the child's stdin:
///   {"caption": "<raw caption>", "image": "<path to P6 PPM>"}
/// Response, one line on the child's stdout:
///   {"phi": [s*s numbers, row-major], "psi": <number>}
/// or {"error": "<message>"}. Images without a known path are written to a
/// private temporary directory first. Calls are serialized.
class ProcessMatcher final : public MatcherModel {
 public:
  // `command` is run through /bin/sh -c.
  explicit ProcessMatcher(std::string command);
  ~ProcessMatcher() override;

  ProcessMatcher(const ProcessMatcher&) = delete;
  ProcessMatcher& operator=(const ProcessMatcher&) = delete;

  SemanticMap patch_alignment(const Caption& caption, const ImageTensor& img) const override;
  SemanticMap align_file(const Caption& caption, const std::filesystem::path& image) const;

 private:
  SemanticMap request(const Caption& caption, const std::filesystem::path& image) const;

  std::string command_;
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::filesystem::path scratch_;
  mutable std::mutex mu_;
  mutable std::string pending_;
  mutable unsigned long counter_ = 0;
};

}  // namespace leica
