#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "leica/errors.hpp"

namespace leica::cli {

// Bad flags, unreadable or corrupt model files. Exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Bad manifests or inputs. Exit code 3.
class DataError : public Error {
 public:
  using Error::Error;
};

struct ManifestEntry {
  std::string id;
  std::string text;
  std::string image_ref;            // as written in the manifest
  std::filesystem::path image;      // resolved against the manifest directory
  std::optional<std::string> model;
  std::vector<std::string> tags;
};

struct Manifest {
  std::filesystem::path path;
  std::vector<ManifestEntry> entries;
};

/// JSONL, one object per line with "id", "text", "image" and optional
/// "model" and "tags". Blank lines are skipped. Ids must be unique.
Manifest read_manifest(const std::filesystem::path& path);

// image_ref is written verbatim.
void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries);

}  // namespace leica::cli
