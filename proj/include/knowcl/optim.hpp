#pragma once

#include <cstddef>
#include <vector>

#include "knowcl/nn.hpp"

namespace knowcl {

/// base_lr * (1 + cos(pi * step / total_steps)) / 2.
double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr);

/// Scales all trainable gradients so their global l2 norm is at most
/// max_norm. Returns the norm before clipping.
double clip_grad_norm(const nn::ParamRefs<float>& params, double max_norm);

/// Adam with decoupled weight decay. Parameters flagged `decay = false` skip
/// the decay term; non-trainable parameters are skipped entirely.
class AdamW {
 public:
  explicit AdamW(nn::ParamRefs<float> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(double lr, double weight_decay);
  void zero_grad();
  std::size_t steps() const noexcept { return t_; }

 private:
  nn::ParamRefs<float> params_;
  std::vector<nn::Mat<float>> m_;
  std::vector<nn::Mat<float>> v_;
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

}  // namespace knowcl
