#pragma once

// CSV manifests: the single interchange format between pipeline stages.
//
// Canonical column order on write:
//   wav_path,sample_id,system_id,listener_id,score,dataset_id
// On read, columns may appear in any order; wav_path, sample_id and score
// are required, the other three are optional. An empty system_id or
// listener_id cell means "absent".

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sheet/common.hpp"
#include "sheet/csv.hpp"

namespace sheet {

struct RatedUtterance {
  std::string wav_path;
  std::string sample_id;
  std::optional<std::string> system_id;
  std::optional<std::string> listener_id;
  double score = 0.0;
  std::string dataset_id;

  bool operator==(const RatedUtterance&) const = default;
};

struct DatasetSpec {
  std::string name = "default";
  std::string train_manifest;
  std::string dev_manifest;
  std::vector<std::string> test_manifests;
  double score_min = 1.0;
  double score_max = 5.0;
  double sampling_frequency = 16000.0;
  bool has_listener_ids = false;

  void validate() const {
    if (!(score_min < score_max))
      throw ConfigError("dataset '" + name + "': score_min must be < score_max");
    if (!(sampling_frequency > 0))
      throw ConfigError("dataset '" + name + "': sampling_frequency must be > 0");
  }
};

inline constexpr const char* kManifestColumns[] = {
    "wav_path", "sample_id", "system_id", "listener_id", "score", "dataset_id"};

/// Checks the RatedUtterance invariants over a whole row list.
inline void validate_rows(const std::vector<RatedUtterance>& rows, const DatasetSpec& spec) {
  std::set<std::pair<std::string, std::string>> seen;
  bool any_system = false, all_system = true;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const long idx = static_cast<long>(i);
    if (r.sample_id.empty())
      throw ValidationError("row " + std::to_string(i) + ": empty sample_id", idx);
    if (!std::isfinite(r.score) || r.score < spec.score_min || r.score > spec.score_max)
      throw ValidationError("row " + std::to_string(i) + ": score " + csv::format_double(r.score) +
                                " outside [" + csv::format_double(spec.score_min) + ", " +
                                csv::format_double(spec.score_max) + "]",
                            idx);
    if (!seen.emplace(r.sample_id, r.listener_id.value_or("")).second)
      throw ValidationError("row " + std::to_string(i) + ": duplicate (sample_id, listener_id) = (" +
                                r.sample_id + ", " + r.listener_id.value_or("") + ")",
                            idx);
    any_system |= r.system_id.has_value();
    all_system &= r.system_id.has_value();
  }
  if (any_system && !all_system)
    throw ValidationError("system_id must be present on all rows or on none");
}

inline std::vector<RatedUtterance> parse_manifest(std::string_view text, const DatasetSpec& spec,
                                                  const std::string& origin = "<memory>") {
  auto table = csv::parse(text);
  if (table.empty()) throw SchemaError(origin + ": missing header row");
  const auto& header = table.front();
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* required : {"wav_path", "sample_id", "score"})
    if (!col.count(required))
      throw SchemaError(origin + ": missing required column '" + std::string(required) + "'");
  auto opt_col = [&](const char* name) -> std::optional<std::size_t> {
    auto it = col.find(name);
    return it == col.end() ? std::nullopt : std::optional(it->second);
  };
  const auto c_sys = opt_col("system_id");
  const auto c_lis = opt_col("listener_id");
  const auto c_ds = opt_col("dataset_id");

  std::vector<RatedUtterance> rows;
  rows.reserve(table.size() - 1);
  for (std::size_t r = 1; r < table.size(); ++r) {
    const auto& cells = table[r];
    const long idx = static_cast<long>(r - 1);
    if (cells.size() == 1 && cells[0].empty()) continue;  // blank line
    if (cells.size() != header.size())
      throw ValidationError(origin + ": row " + std::to_string(idx) + " has " +
                                std::to_string(cells.size()) + " fields, header has " +
                                std::to_string(header.size()),
                            idx);
    RatedUtterance u;
    u.wav_path = cells[col["wav_path"]];
    u.sample_id = cells[col["sample_id"]];
    if (c_sys && !cells[*c_sys].empty()) u.system_id = cells[*c_sys];
    if (c_lis && !cells[*c_lis].empty()) u.listener_id = cells[*c_lis];
    u.dataset_id = (c_ds && !cells[*c_ds].empty()) ? cells[*c_ds] : spec.name;
    auto score = csv::parse_double(cells[col["score"]]);
    if (!score)
      throw ValidationError(origin + ": row " + std::to_string(idx) + ": unparsable score '" +
                                cells[col["score"]] + "'",
                            idx);
    u.score = *score;
    rows.push_back(std::move(u));
  }
  try {
    validate_rows(rows, spec);
  } catch (const ValidationError& e) {
    throw ValidationError(origin + ": " + e.what(), e.row());
  }
  return rows;
}

inline std::vector<RatedUtterance> read_manifest(const std::string& path, const DatasetSpec& spec) {
  return parse_manifest(csv::read_file(path), spec, path);
}

inline std::string format_manifest(const std::vector<RatedUtterance>& rows) {
  std::string out = csv::format_row(csv::Row(std::begin(kManifestColumns), std::end(kManifestColumns)));
  for (const auto& r : rows)
    out += csv::format_row({r.wav_path, r.sample_id, r.system_id.value_or(""),
                            r.listener_id.value_or(""), csv::format_double(r.score), r.dataset_id});
  return out;
}

inline void write_manifest(const std::vector<RatedUtterance>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path);
  out << format_manifest(rows);
  if (!out) throw IoError("write failed for " + path);
}

/// One row per distinct sample_id (first-appearance order) carrying the mean
/// of that sample's listener scores. Other fields come from the first row.
inline std::vector<RatedUtterance> aggregate_by_listener(const std::vector<RatedUtterance>& rows) {
  std::vector<RatedUtterance> out;
  std::vector<double> sums;
  std::vector<std::size_t> counts;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& r : rows) {
    auto [it, fresh] = index.try_emplace(r.sample_id, out.size());
    if (fresh) {
      out.push_back(r);
      out.back().listener_id.reset();
      sums.push_back(0.0);
      counts.push_back(0);
    }
    sums[it->second] += r.score;
    ++counts[it->second];
  }
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i].score = sums[i] / static_cast<double>(counts[i]);
  return out;
}

inline std::size_t count_distinct_systems(const std::vector<RatedUtterance>& rows) {
  std::set<std::string> s;
  for (const auto& r : rows)
    if (r.system_id) s.insert(*r.system_id);
  return s.size();
}

inline std::size_t count_distinct_samples(const std::vector<RatedUtterance>& rows) {
  std::set<std::string> s;
  for (const auto& r : rows) s.insert(r.sample_id);
  return s.size();
}

}  // namespace sheet
