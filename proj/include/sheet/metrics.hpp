#pragma once

// Utterance- and system-level evaluation: MSE, LCC (Pearson), SRCC
// (Spearman with average ranks for ties).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "sheet/common.hpp"
#include "sheet/csv.hpp"
#include "sheet/manifest.hpp"

namespace sheet {

inline void check_pair(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size())
    throw std::invalid_argument(std::string(what) + ": length mismatch (" + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
  if (a.empty()) throw std::invalid_argument(std::string(what) + ": empty input");
}

inline double mse(std::span<const double> pred, std::span<const double> truth) {
  check_pair(pred, truth, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return s / static_cast<double>(pred.size());
}

inline double lcc(std::span<const double> a, std::span<const double> b) {
  check_pair(a, b, "lcc");
  if (a.size() < 2) throw UndefinedCorrelation("correlation needs at least two points");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  const auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
  };
  if (constant(a) || constant(b) || saa == 0.0 || sbb == 0.0)
    throw UndefinedCorrelation("correlation undefined for constant input");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

/// 1-based ranks; tied values share the mean of the positions they occupy.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double srcc(std::span<const double> a, std::span<const double> b) {
  check_pair(a, b, "srcc");
  const auto ra = average_ranks(a), rb = average_ranks(b);
  return lcc(ra, rb);
}

/// One evaluated utterance (truth already listener-averaged).
struct ScoredUtterance {
  std::string sample_id;
  std::optional<std::string> system_id;
  double truth = 0.0;
  double prediction = 0.0;
};

struct SystemAggregate {
  std::vector<std::string> systems;  // first-appearance order
  std::vector<double> pred_means;
  std::vector<double> true_means;
};

inline SystemAggregate aggregate_systems(std::span<const ScoredUtterance> rows) {
  SystemAggregate out;
  std::unordered_map<std::string, std::size_t> idx;
  std::vector<std::size_t> counts;
  for (const auto& r : rows) {
    if (!r.system_id) throw ValidationError("aggregate_systems: sample '" + r.sample_id + "' has no system_id");
    auto [it, fresh] = idx.try_emplace(*r.system_id, out.systems.size());
    if (fresh) {
      out.systems.push_back(*r.system_id);
      out.pred_means.push_back(0.0);
      out.true_means.push_back(0.0);
      counts.push_back(0);
    }
    out.pred_means[it->second] += r.prediction;
    out.true_means[it->second] += r.truth;
    ++counts[it->second];
  }
  for (std::size_t i = 0; i < counts.size(); ++i) {
    out.pred_means[i] /= static_cast<double>(counts[i]);
    out.true_means[i] /= static_cast<double>(counts[i]);
  }
  return out;
}

struct EvaluationReport {
  std::string test_set;
  std::size_t n_utterances = 0;
  std::size_t n_systems = 0;
  double utt_mse = 0.0, utt_lcc = 0.0, utt_srcc = 0.0;
  std::optional<double> sys_mse, sys_lcc, sys_srcc;

  /// Ordered (name, value) pairs; system metrics only when present.
  std::vector<std::pair<std::string, double>> metrics() const {
    std::vector<std::pair<std::string, double>> m = {{"utt_mse", utt_mse}, {"utt_lcc", utt_lcc}, {"utt_srcc", utt_srcc}};
    if (sys_mse) m.emplace_back("sys_mse", *sys_mse);
    if (sys_lcc) m.emplace_back("sys_lcc", *sys_lcc);
    if (sys_srcc) m.emplace_back("sys_srcc", *sys_srcc);
    return m;
  }
};

/// Joins predictions (by sample_id) onto the listener-averaged test rows.
inline std::vector<ScoredUtterance> join_predictions(const std::vector<RatedUtterance>& test_rows,
                                                     const std::unordered_map<std::string, double>& predictions) {
  std::vector<ScoredUtterance> out;
  std::vector<std::string> missing;
  for (const auto& r : aggregate_by_listener(test_rows)) {
    auto it = predictions.find(r.sample_id);
    if (it == predictions.end()) {
      missing.push_back(r.sample_id);
      continue;
    }
    out.push_back({r.sample_id, r.system_id, r.score, it->second});
  }
  if (!missing.empty()) {
    std::string msg = "missing predictions for " + std::to_string(missing.size()) + " sample(s):";
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) msg += " " + missing[i];
    if (missing.size() > 20) msg += " ...";
    throw ValidationError(msg);
  }
  return out;
}

inline EvaluationReport compute_report(std::span<const ScoredUtterance> rows, const std::string& name) {
  EvaluationReport rep;
  rep.test_set = name;
  rep.n_utterances = rows.size();
  std::vector<double> p, t;
  for (const auto& r : rows) {
    p.push_back(r.prediction);
    t.push_back(r.truth);
  }
  rep.utt_mse = mse(p, t);
  rep.utt_lcc = lcc(p, t);
  rep.utt_srcc = srcc(p, t);
  const bool has_systems = !rows.empty() && std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.system_id.has_value(); });
  if (has_systems) {
    const auto agg = aggregate_systems(rows);
    rep.n_systems = agg.systems.size();
    rep.sys_mse = mse(agg.pred_means, agg.true_means);
    rep.sys_lcc = lcc(agg.pred_means, agg.true_means);
    rep.sys_srcc = srcc(agg.pred_means, agg.true_means);
  }
  return rep;
}

inline EvaluationReport evaluate(const std::unordered_map<std::string, double>& predictions,
                                 const std::vector<RatedUtterance>& test_rows, const std::string& name,
                                 std::vector<ScoredUtterance>* joined = nullptr) {
  auto rows = join_predictions(test_rows, predictions);
  auto rep = compute_report(rows, name);
  if (joined) *joined = std::move(rows);
  return rep;
}

// --- prediction CSV: sample_id,score ---------------------------------------

inline void write_predictions(const std::string& path, const std::vector<std::pair<std::string, double>>& preds) {
  std::vector<csv::Row> rows = {{"sample_id", "score"}};
  for (const auto& [id, s] : preds) rows.push_back({id, csv::format_double(s)});
  csv::write(path, rows);
}

inline std::unordered_map<std::string, double> read_predictions(const std::string& path) {
  const auto table = csv::read(path);
  if (table.empty()) throw SchemaError(path + ": missing header row");
  long c_id = -1, c_score = -1;
  for (std::size_t i = 0; i < table[0].size(); ++i) {
    if (table[0][i] == "sample_id") c_id = static_cast<long>(i);
    if (table[0][i] == "score") c_score = static_cast<long>(i);
  }
  if (c_id < 0) throw SchemaError(path + ": missing required column 'sample_id'");
  if (c_score < 0) throw SchemaError(path + ": missing required column 'score'");
  std::unordered_map<std::string, double> out;
  for (std::size_t r = 1; r < table.size(); ++r) {
    const auto& row = table[r];
    if (row.size() == 1 && row[0].empty()) continue;
    if (row.size() != table[0].size())
      throw ValidationError(path + ": row " + std::to_string(r - 1) + " has wrong field count", static_cast<long>(r - 1));
    auto v = csv::parse_double(row[static_cast<std::size_t>(c_score)]);
    if (!v || !std::isfinite(*v))
      throw ValidationError(path + ": row " + std::to_string(r - 1) + ": bad score", static_cast<long>(r - 1));
    if (!out.emplace(row[static_cast<std::size_t>(c_id)], *v).second)
      throw ValidationError(path + ": duplicate sample_id '" + row[static_cast<std::size_t>(c_id)] + "'",
                            static_cast<long>(r - 1));
  }
  return out;
}

inline void write_scored_csv(const std::string& path, std::span<const ScoredUtterance> rows) {
  std::vector<csv::Row> out = {{"sample_id", "system_id", "true_score", "predicted_score"}};
  for (const auto& r : rows)
    out.push_back({r.sample_id, r.system_id.value_or(""), csv::format_double(r.truth), csv::format_double(r.prediction)});
  csv::write(path, out);
}

// --- report output ----------------------------------------------------------

/// key=value lines; values in shortest round-trip form.
inline std::string format_report_kv(const EvaluationReport& r) {
  std::ostringstream ss;
  ss << "test_set=" << r.test_set << "\n";
  ss << "n_utterances=" << r.n_utterances << "\n";
  ss << "n_systems=" << r.n_systems << "\n";
  for (const auto& [k, v] : r.metrics()) ss << k << "=" << csv::format_double(v) << "\n";
  return ss.str();
}

inline EvaluationReport parse_report_kv(const std::string& text) {
  EvaluationReport r;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string k = line.substr(0, eq), v = line.substr(eq + 1);
    auto num = [&] {
      auto d = csv::parse_double(v);
      if (!d) throw FormatError("report: bad value for " + k);
      return *d;
    };
    if (k == "test_set") r.test_set = v;
    else if (k == "n_utterances") r.n_utterances = static_cast<std::size_t>(num());
    else if (k == "n_systems") r.n_systems = static_cast<std::size_t>(num());
    else if (k == "utt_mse") r.utt_mse = num();
    else if (k == "utt_lcc") r.utt_lcc = num();
    else if (k == "utt_srcc") r.utt_srcc = num();
    else if (k == "sys_mse") r.sys_mse = num();
    else if (k == "sys_lcc") r.sys_lcc = num();
    else if (k == "sys_srcc") r.sys_srcc = num();
  }
  return r;
}

/// Per-metric mean across reports; a metric is averaged over the reports
/// that carry it.
inline std::vector<std::pair<std::string, double>> average_metrics(std::span<const EvaluationReport> reports) {
  std::vector<std::string> order;
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& r : reports)
    for (const auto& [k, v] : r.metrics()) {
      if (!acc.count(k)) order.push_back(k);
      acc[k].first += v;
      acc[k].second += 1;
    }
  std::vector<std::pair<std::string, double>> out;
  for (const auto& k : order) out.emplace_back(k, acc[k].first / acc[k].second);
  return out;
}

inline std::string format_summary_table(std::span<const EvaluationReport> reports) {
  static const char* cols[] = {"utt_mse", "utt_lcc", "utt_srcc", "sys_mse", "sys_lcc", "sys_srcc"};
  std::ostringstream ss;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%-20s", "test_set");
  ss << buf;
  for (const char* c : cols) {
    std::snprintf(buf, sizeof(buf), " %9s", c);
    ss << buf;
  }
  ss << "\n";
  auto row = [&](const std::string& name, const std::vector<std::pair<std::string, double>>& m) {
    std::snprintf(buf, sizeof(buf), "%-20s", name.c_str());
    ss << buf;
    for (const char* c : cols) {
      auto it = std::find_if(m.begin(), m.end(), [&](const auto& p) { return p.first == c; });
      if (it == m.end()) std::snprintf(buf, sizeof(buf), " %9s", "-");
      else std::snprintf(buf, sizeof(buf), " %9.4f", it->second);
      ss << buf;
    }
    ss << "\n";
  };
  for (const auto& r : reports) row(r.test_set, r.metrics());
  if (reports.size() > 1) row("average", average_metrics(reports));
  return ss.str();
}

}  // namespace sheet
