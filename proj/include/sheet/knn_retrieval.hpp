#pragma once

// Non-parametric score estimate from the nearest training utterances,
// blended linearly with the parametric prediction.
//
// Persisted as two files next to a checkpoint:
//   <prefix>.keys.feat   N x D keys in the feature-matrix format
//   <prefix>.values.csv  sample_id,score (row i belongs to key row i)

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sheet/common.hpp"
#include "sheet/csv.hpp"
#include "sheet/encoder.hpp"
#include "sheet/tensor.hpp"

namespace sheet {

struct FusionConfig {
  int k = 8;
  double temperature = 1.0;
  double lambda = 0.5;  // weight of the parametric prediction

  void validate() const {
    if (k < 1) throw ConfigError("knn: k must be >= 1");
    if (!(temperature > 0)) throw ConfigError("knn: temperature must be > 0");
    if (lambda < 0 || lambda > 1) throw ConfigError("knn: lambda must lie in [0, 1]");
  }
};

/// Utterance-level key: time mean of frame features.
inline Vector pooled_key(const FrameFeatures& f) { return f.matrix.colwise().mean().transpose(); }

class Datastore {
 public:
  Datastore() = default;
  explicit Datastore(Eigen::Index dim) : keys_(0, dim) {}

  /// Keys are stored at float32 precision so the on-disk copy is exact.
  void add(const Vector& key, double value, std::string sample_id) {
    if (keys_.cols() == 0 && keys_.rows() == 0) keys_.resize(0, key.size());
    if (key.size() != keys_.cols()) throw std::invalid_argument("datastore: key dimension mismatch");
    keys_.conservativeResize(keys_.rows() + 1, Eigen::NoChange);
    keys_.row(keys_.rows() - 1) = key.cast<float>().cast<double>().transpose();
    values_.push_back(value);
    ids_.push_back(std::move(sample_id));
  }

  std::size_t size() const { return values_.size(); }
  Eigen::Index dim() const { return keys_.cols(); }
  const RowMatrix& keys() const { return keys_; }
  const std::vector<double>& values() const { return values_; }
  const std::vector<std::string>& ids() const { return ids_; }

  void save(const std::string& prefix) const {
    write_feature_matrix(prefix + ".keys.feat", keys_);
    std::vector<csv::Row> rows = {{"sample_id", "score"}};
    for (std::size_t i = 0; i < size(); ++i) rows.push_back({ids_[i], csv::format_double(values_[i])});
    csv::write(prefix + ".values.csv", rows);
  }

  static Datastore load(const std::string& prefix) {
    Datastore d;
    d.keys_ = read_feature_matrix(prefix + ".keys.feat");
    const auto table = csv::read(prefix + ".values.csv");
    if (table.empty() || table[0] != csv::Row{"sample_id", "score"})
      throw FormatError(prefix + ".values.csv: expected header sample_id,score");
    for (std::size_t i = 1; i < table.size(); ++i) {
      if (table[i].size() == 1 && table[i][0].empty()) continue;
      if (table[i].size() != 2) throw FormatError(prefix + ".values.csv: bad row " + std::to_string(i - 1));
      auto v = csv::parse_double(table[i][1]);
      if (!v) throw FormatError(prefix + ".values.csv: bad score on row " + std::to_string(i - 1));
      d.ids_.push_back(table[i][0]);
      d.values_.push_back(*v);
    }
    if (static_cast<Eigen::Index>(d.values_.size()) != d.keys_.rows())
      throw FormatError(prefix + ": key/value count mismatch");
    return d;
  }

 private:
  RowMatrix keys_;
  std::vector<double> values_;
  std::vector<std::string> ids_;
};

struct KnnResult {
  double score = 0.0;
  std::vector<std::size_t> neighbors;  // datastore row indices, nearest first
  std::vector<double> distances;
  std::vector<double> weights;
};

/// Euclidean k-NN; distance ties resolve to the earlier-inserted entry.
/// score = sum_i softmax(-d / temperature)_i * value_i.
inline KnnResult knn_query(const Datastore& store, const Vector& query, int k, double temperature) {
  if (k < 1) throw std::invalid_argument("knn_query: k must be >= 1");
  if (static_cast<std::size_t>(k) > store.size())
    throw std::invalid_argument("knn_query: k=" + std::to_string(k) + " exceeds datastore size " +
                                std::to_string(store.size()));
  if (!(temperature > 0)) throw std::invalid_argument("knn_query: temperature must be > 0");
  if (query.size() != store.dim()) throw std::invalid_argument("knn_query: query dimension mismatch");

  const auto N = store.size();
  std::vector<double> dist(N);
  for (std::size_t i = 0; i < N; ++i)
    dist[i] = (store.keys().row(static_cast<Eigen::Index>(i)).transpose() - query).norm();
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  const auto kk = static_cast<std::size_t>(k);
  std::partial_sort(order.begin(), order.begin() + static_cast<long>(kk), order.end(), [&](std::size_t a, std::size_t b) {
    return dist[a] < dist[b] || (dist[a] == dist[b] && a < b);
  });

  KnnResult r;
  r.neighbors.assign(order.begin(), order.begin() + static_cast<long>(kk));
  const double d0 = dist[r.neighbors.front()];
  double z = 0.0;
  for (auto i : r.neighbors) {
    r.distances.push_back(dist[i]);
    r.weights.push_back(std::exp(-(dist[i] - d0) / temperature));
    z += r.weights.back();
  }
  for (std::size_t j = 0; j < kk; ++j) {
    r.weights[j] /= z;
    r.score += r.weights[j] * store.values()[r.neighbors[j]];
  }
  return r;
}

inline double fuse(double parametric, double knn_score, double lambda) {
  if (lambda < 0 || lambda > 1) throw std::invalid_argument("fuse: lambda must lie in [0, 1]");
  return lambda * parametric + (1.0 - lambda) * knn_score;
}

/// Grid search for the fusion weight minimising MSE against targets.
/// The first grid value wins ties.
inline double tune_lambda(std::span<const double> parametric, std::span<const double> knn, std::span<const double> targets,
                          std::span<const double> grid) {
  if (parametric.size() != knn.size() || knn.size() != targets.size() || targets.empty())
    throw std::invalid_argument("tune_lambda: inputs must be non-empty and equally long");
  if (grid.empty()) throw std::invalid_argument("tune_lambda: empty grid");
  double best = grid.front(), best_err = INFINITY;
  for (double lam : grid) {
    double err = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const double d = fuse(parametric[i], knn[i], lam) - targets[i];
      err += d * d;
    }
    if (err < best_err) {
      best_err = err;
      best = lam;
    }
  }
  return best;
}

}  // namespace sheet
