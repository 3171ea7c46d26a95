#pragma once

// Local model registry: a CSV of (name, tag, location, sha256). Location is a
// filesystem path (relative paths resolve against the registry file) or an
// http:// URL that is fetched into a cache directory. The archive digest is
// always checked before the model is loaded.

#include <openssl/evp.h>

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "httplib.h"
#include "sheet/common.hpp"
#include "sheet/csv.hpp"
#include "sheet/predictor.hpp"

namespace sheet {

inline std::string sha256_hex(std::string_view data) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 || EVP_DigestFinal_ex(ctx.get(), md, &len) != 1)
    throw std::runtime_error("sha256 computation failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xF]);
  }
  return out;
}

inline std::string sha256_file(const std::string& path) { return sha256_hex(csv::read_file(path)); }

struct ModelRegistryEntry {
  std::string name;
  std::string tag;
  std::string location;
  std::string sha256;

  bool operator==(const ModelRegistryEntry&) const = default;
};

class ModelRegistry {
 public:
  explicit ModelRegistry(std::string path) : path_(std::move(path)) {
    if (std::filesystem::exists(path_)) load();
  }

  const std::vector<ModelRegistryEntry>& entries() const { return entries_; }
  const std::string& path() const { return path_; }

  std::optional<ModelRegistryEntry> find(const std::string& name, const std::string& tag) const {
    for (const auto& e : entries_)
      if (e.name == name && e.tag == tag) return e;
    return std::nullopt;
  }

  /// Adds or replaces (name, tag). Computes the digest of a local checkpoint.
  ModelRegistryEntry add(const std::string& name, const std::string& tag, const std::string& location,
                         std::optional<std::string> digest = std::nullopt) {
    if (name.empty() || tag.empty()) throw ConfigError("registry: name and tag must be non-empty");
    ModelRegistryEntry e{name, tag, location, digest.value_or("")};
    if (e.sha256.empty()) {
      if (is_url(location)) throw ConfigError("registry: remote entries need an explicit digest");
      e.sha256 = sha256_file(resolve_local(location));
    }
    std::erase_if(entries_, [&](const auto& x) { return x.name == name && x.tag == tag; });
    entries_.push_back(e);
    save();
    return e;
  }

  /// Local path of the archive for an entry, downloading remote ones.
  std::string materialize(const ModelRegistryEntry& e, const std::string& cache_dir) const {
    if (!is_url(e.location)) return resolve_local(e.location);
    std::filesystem::create_directories(cache_dir);
    const std::string dst = (std::filesystem::path(cache_dir) / (e.name + "-" + e.tag + ".ckpt")).string();
    http_get_to_file(e.location, dst);
    return dst;
  }

  Predictor load_model(const std::string& name, const std::string& tag, const std::string& cache_dir = ".sheet_cache") const {
    auto e = find(name, tag);
    if (!e) throw ConfigError("registry: no entry " + name + ":" + tag);
    const std::string local = materialize(*e, cache_dir);
    const std::string data = csv::read_file(local);
    const std::string got = sha256_hex(data);
    if (got != e->sha256)
      throw DigestMismatch("registry: digest mismatch for " + name + ":" + tag + " (expected " + e->sha256 + ", got " +
                           got + "); refusing to load");
    Predictor p = deserialize_checkpoint(data, local);
    if (std::filesystem::exists(local + ".knn.keys.feat")) p.datastore() = Datastore::load(local + ".knn");
    return p;
  }

  static bool is_url(const std::string& s) { return s.rfind("http://", 0) == 0 || s.rfind("https://", 0) == 0; }

 private:
  std::string resolve_local(const std::string& location) const {
    std::filesystem::path p(location);
    if (p.is_absolute()) return location;
    return (std::filesystem::absolute(path_).parent_path() / p).lexically_normal().string();
  }

  static void http_get_to_file(const std::string& url, const std::string& dst) {
    if (url.rfind("https://", 0) == 0) throw IoError("registry: https downloads are not supported; use http or a local path");
    const std::string rest = url.substr(7);
    const auto slash = rest.find('/');
    const std::string host = rest.substr(0, slash);
    const std::string target = slash == std::string::npos ? "/" : rest.substr(slash);
    httplib::Client cli("http://" + host);
    cli.set_follow_location(true);
    auto res = cli.Get(target);
    if (!res || res->status != 200) throw IoError("registry: download failed for " + url);
    std::ofstream out(dst, std::ios::binary | std::ios::trunc);
    out << res->body;
    if (!out) throw IoError("registry: cannot write " + dst);
  }

  void load() {
    const auto table = csv::read(path_);
    if (table.empty() || table[0] != csv::Row{"name", "tag", "location", "sha256"})
      throw FormatError(path_ + ": expected header name,tag,location,sha256");
    for (std::size_t i = 1; i < table.size(); ++i) {
      if (table[i].size() == 1 && table[i][0].empty()) continue;
      if (table[i].size() != 4) throw FormatError(path_ + ": bad row " + std::to_string(i - 1));
      entries_.push_back({table[i][0], table[i][1], table[i][2], table[i][3]});
    }
  }

  void save() const {
    std::vector<csv::Row> rows = {{"name", "tag", "location", "sha256"}};
    for (const auto& e : entries_) rows.push_back({e.name, e.tag, e.location, e.sha256});
    csv::write(path_, rows);
  }

  std::string path_;
  std::vector<ModelRegistryEntry> entries_;
};

/// Resolves "name:tag" through a registry file.
inline Predictor registry_load(const std::string& registry_path, const std::string& name, const std::string& tag,
                               const std::string& cache_dir = ".sheet_cache") {
  return ModelRegistry(registry_path).load_model(name, tag, cache_dir);
}

}  // namespace sheet
