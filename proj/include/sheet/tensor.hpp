#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "sheet/common.hpp"

namespace sheet {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  bool trainable = true;

  static Tensor zeros(std::vector<std::size_t> shape, bool trainable = true) {
    Tensor t;
    t.shape = std::move(shape);
    t.data.assign(t.numel(), 0.0);
    t.trainable = trainable;
    return t;
  }
  std::size_t numel() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }
  /// View a rank-2 tensor as a row-major matrix.
  Eigen::Map<RowMatrix> mat() {
    return {data.data(), static_cast<Eigen::Index>(shape.at(0)), static_cast<Eigen::Index>(shape.at(1))};
  }
  Eigen::Map<const RowMatrix> mat() const {
    return {data.data(), static_cast<Eigen::Index>(shape.at(0)), static_cast<Eigen::Index>(shape.at(1))};
  }
  Eigen::Map<Vector> vec() { return {data.data(), static_cast<Eigen::Index>(data.size())}; }
  Eigen::Map<const Vector> vec() const { return {data.data(), static_cast<Eigen::Index>(data.size())}; }

  bool operator==(const Tensor&) const = default;
};

/// Named tensors in insertion order. Non-trainable entries (feature
/// statistics, ...) are persisted but skipped by the optimizer.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw std::logic_error("duplicate parameter " + name);
    index_[name] = entries_.size();
    entries_.emplace_back(name, std::move(t));
    return entries_.back().second;
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  Tensor& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter " + name);
    return entries_[it->second].second;
  }
  const Tensor& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter " + name);
    return entries_[it->second].second;
  }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  std::size_t size() const { return entries_.size(); }

  /// Same names and shapes, all zeros.
  ParamStore zeros_like() const {
    ParamStore z;
    for (const auto& [n, t] : entries_) z.add(n, Tensor::zeros(t.shape, t.trainable));
    return z;
  }
  void set_zero() {
    for (auto& [n, t] : entries_) std::fill(t.data.begin(), t.data.end(), 0.0);
  }
  bool same_layout(const ParamStore& o) const {
    if (o.size() != size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].first != o.entries_[i].first || entries_[i].second.shape != o.entries_[i].second.shape)
        return false;
    return true;
  }
  bool operator==(const ParamStore& o) const { return entries_ == o.entries_; }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Gaussian init with the given standard deviation.
inline Tensor randn(std::vector<std::size_t> shape, double stddev, std::mt19937_64& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data) v = dist(rng);
  return t;
}

}  // namespace sheet
