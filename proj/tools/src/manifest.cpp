#include "manifest.hpp"

#include <fstream>
#include <set>

#include "json.hpp"

namespace leica::cli {

namespace {

std::string where(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line) + ": ";
}

}  // namespace

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open manifest " + path.string());
  Manifest m;
  m.path = path;
  const std::filesystem::path base = path.parent_path();
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(where(path, lineno) + "invalid JSON: " + e.what());
    }
    if (!j.is_object()) throw DataError(where(path, lineno) + "entry is not an object");
    auto req = [&](const char* key) {
      const auto it = j.find(key);
      if (it == j.end() || !it->is_string()) {
        throw DataError(where(path, lineno) + "missing string field \"" + key + "\"");
      }
      return it->get<std::string>();
    };
    ManifestEntry e;
    e.id = req("id");
    e.text = req("text");
    e.image_ref = req("image");
    if (e.id.empty()) throw DataError(where(path, lineno) + "empty id");
    if (!ids.insert(e.id).second) throw DataError(where(path, lineno) + "duplicate id '" + e.id + "'");
    const std::filesystem::path img(e.image_ref);
    e.image = img.is_absolute() ? img : base / img;
    if (const auto it = j.find("model"); it != j.end() && !it->is_null()) {
      if (!it->is_string()) throw DataError(where(path, lineno) + "\"model\" must be a string");
      e.model = it->get<std::string>();
    }
    if (const auto it = j.find("tags"); it != j.end() && !it->is_null()) {
      if (!it->is_array()) throw DataError(where(path, lineno) + "\"tags\" must be a list of strings");
      for (const auto& t : *it) {
        if (!t.is_string()) throw DataError(where(path, lineno) + "\"tags\" must be a list of strings");
        e.tags.push_back(t.get<std::string>());
      }
    }
    m.entries.push_back(std::move(e));
  }
  if (in.bad()) throw DataError("error reading manifest " + path.string());
  return m;
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write manifest " + path.string());
  for (const auto& e : entries) {
    nlohmann::ordered_json j;
    j["id"] = e.id;
    j["text"] = e.text;
    j["image"] = e.image_ref;
    if (e.model) j["model"] = *e.model;
    if (!e.tags.empty()) j["tags"] = e.tags;
    out << j.dump() << '\n';
  }
  if (!out) throw DataError("error writing manifest " + path.string());
}

}  // namespace leica::cli
