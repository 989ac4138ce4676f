#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ase/common.hpp"
#include "ase/network.hpp"

namespace ase {

// Adaptive-moment optimizer with decoupled weight decay.
class AdamW {
 public:
  double lr = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  void step(ParamSet& params, const ParamSet& grads, double lr_scale = 1.0) {
    if (m_.empty()) {
      m_ = ParamSet::zeros_like(params).tensors;
      v_ = ParamSet::zeros_like(params).tensors;
    }
    ++step_count_;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count_));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count_));
    double rate = lr * lr_scale;
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
      const Mat& g = grads.tensors[i];
      m_[i] = beta1 * m_[i] + (1.0 - beta1) * g;
      v_[i] = beta2 * v_[i] + (1.0 - beta2) * g.cwiseProduct(g);
      Mat m_hat = m_[i] / bc1;
      Mat v_hat = v_[i] / bc2;
      params.tensors[i] -=
          rate * (m_hat.array() / (v_hat.array().sqrt() + eps)).matrix();
      if (weight_decay != 0.0)
        params.tensors[i] -= rate * weight_decay * params.tensors[i];
    }
  }

  std::int64_t step_count() const { return step_count_; }

 private:
  std::vector<Mat> m_, v_;
  std::int64_t step_count_ = 0;
};

}  // namespace ase
