#pragma once

#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "sheet/common.hpp"

namespace sheet {

struct LossConfig {
  bool use_clipped = true;
  double tau = 0.25;
  bool use_contrastive = false;
  double alpha = 0.1;
  double contrastive_weight = 0.5;

  void validate() const {
    if (tau < 0 || alpha < 0 || contrastive_weight < 0)
      throw ConfigError("loss: tau, alpha and contrastive_weight must be >= 0");
  }
};

inline double l1_loss(double y, double y_hat) { return std::abs(y - y_hat); }

/// d l1 / d y_hat; 0 at the kink.
inline double l1_grad(double y, double y_hat) {
  return y_hat > y ? 1.0 : (y_hat < y ? -1.0 : 0.0);
}

/// L1 with a dead zone: errors of magnitude <= tau cost nothing.
inline double clipped_l1_loss(double y, double y_hat, double tau) {
  const double e = std::abs(y - y_hat);
  return e > tau ? e : 0.0;
}

inline double clipped_l1_grad(double y, double y_hat, double tau) {
  return std::abs(y - y_hat) > tau ? l1_grad(y, y_hat) : 0.0;
}

struct ScorePair {
  double y = 0.0;      // target
  double y_hat = 0.0;  // prediction
};

/// Mean over pairs of max(0, |(ŷi - ŷj) - (yi - yj)| - alpha); 0 for no pairs.
inline double contrastive_loss(std::span<const std::pair<ScorePair, ScorePair>> pairs, double alpha) {
  if (pairs.empty()) return 0.0;
  double s = 0.0;
  for (const auto& [a, b] : pairs) s += std::max(0.0, std::abs((a.y_hat - b.y_hat) - (a.y - b.y)) - alpha);
  return s / static_cast<double>(pairs.size());
}

/// All unordered pairs (i < j) of a batch.
inline std::vector<std::pair<ScorePair, ScorePair>> all_pairs(std::span<const double> pred, std::span<const double> target) {
  std::vector<std::pair<ScorePair, ScorePair>> out;
  for (std::size_t i = 0; i < pred.size(); ++i)
    for (std::size_t j = i + 1; j < pred.size(); ++j)
      out.push_back({{target[i], pred[i]}, {target[j], pred[j]}});
  return out;
}

struct LossBreakdown {
  double total = 0.0;
  double primary = 0.0;
  double contrastive = 0.0;
  std::vector<double> grad;  // d total / d prediction_i
};

/// primary (batch-mean L1 or clipped L1) + contrastive_weight * contrastive
/// over all unordered pairs in the batch.
inline LossBreakdown total_loss(std::span<const double> pred, std::span<const double> target, const LossConfig& cfg) {
  if (pred.size() != target.size()) throw std::invalid_argument("total_loss: prediction/target length mismatch");
  LossBreakdown out;
  const std::size_t B = pred.size();
  out.grad.assign(B, 0.0);
  if (B == 0) return out;
  const double inv_b = 1.0 / static_cast<double>(B);
  for (std::size_t i = 0; i < B; ++i) {
    if (cfg.use_clipped) {
      out.primary += clipped_l1_loss(target[i], pred[i], cfg.tau);
      out.grad[i] += clipped_l1_grad(target[i], pred[i], cfg.tau) * inv_b;
    } else {
      out.primary += l1_loss(target[i], pred[i]);
      out.grad[i] += l1_grad(target[i], pred[i]) * inv_b;
    }
  }
  out.primary *= inv_b;
  if (cfg.use_contrastive && B >= 2) {
    const double n_pairs = static_cast<double>(B * (B - 1) / 2);
    const double w = cfg.contrastive_weight / n_pairs;
    double sum = 0.0;
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t j = i + 1; j < B; ++j) {
        const double e = (pred[i] - pred[j]) - (target[i] - target[j]);
        const double m = std::abs(e) - cfg.alpha;
        if (m > 0) {
          sum += m;
          const double g = (e > 0 ? 1.0 : -1.0) * w;
          out.grad[i] += g;
          out.grad[j] -= g;
        }
      }
    out.contrastive = sum / n_pairs;
  }
  out.total = out.primary + cfg.contrastive_weight * (cfg.use_contrastive ? out.contrastive : 0.0);
  return out;
}

}  // namespace sheet
