#pragma once

#include <span>
#include <vector>

#include "sheet/tensor.hpp"

namespace sheet {

/// Classical momentum SGD over a set of parameter stores:
///   v <- momentum * v + g
///   p <- p - lr * v
/// Non-trainable tensors are left untouched.
class MomentumSgd {
 public:
  MomentumSgd(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

  void step(std::span<ParamStore* const> params, std::span<const ParamStore* const> grads) {
    if (params.size() != grads.size()) throw std::invalid_argument("optimizer: params/grads count mismatch");
    if (velocity_.empty())
      for (auto* p : params) velocity_.push_back(p->zeros_like());
    for (std::size_t s = 0; s < params.size(); ++s) {
      auto p_it = params[s]->begin();
      auto g_it = grads[s]->begin();
      auto v_it = velocity_[s].begin();
      for (; p_it != params[s]->end(); ++p_it, ++g_it, ++v_it) {
        Tensor& p = p_it->second;
        if (!p.trainable) continue;
        auto v = v_it->second.vec();
        v = momentum_ * v + g_it->second.vec();
        p.vec() -= lr_ * v;
      }
    }
  }

  double lr() const { return lr_; }
  double momentum() const { return momentum_; }

 private:
  double lr_;
  double momentum_;
  std::vector<ParamStore> velocity_;
};

}  // namespace sheet
