#include "knowcl/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace knowcl {

double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr) {
  if (total_steps == 0) throw std::invalid_argument("cosine_lr: total_steps must be positive");
  if (step > total_steps) throw std::invalid_argument("cosine_lr: step beyond total_steps");
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return base_lr * (1.0 + std::cos(std::numbers::pi * frac)) / 2.0;
}

double clip_grad_norm(const nn::ParamRefs<float>& params, double max_norm) {
  double sq = 0.0;
  for (const auto* p : params) {
    if (!p->trainable) continue;
    sq += p->grad.cast<double>().squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const auto scale = static_cast<float>(max_norm / (norm + 1e-6));
    for (auto* p : params) {
      if (p->trainable) p->grad *= scale;
    }
  }
  return norm;
}

AdamW::AdamW(nn::ParamRefs<float> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto* p : params_) {
    m_.push_back(nn::Mat<float>::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(nn::Mat<float>::Zero(p->value.rows(), p->value.cols()));
  }
}

void AdamW::step(double lr, double weight_decay) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const auto b1 = static_cast<float>(beta1_);
  const auto b2 = static_cast<float>(beta2_);
  const auto step_size = static_cast<float>(lr / bc1);
  const auto rbc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  const auto eps = static_cast<float>(eps_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto* p = params_[i];
    if (!p->trainable) continue;
    if (p->decay && weight_decay > 0.0) p->value *= static_cast<float>(1.0 - lr * weight_decay);
    m_[i] = b1 * m_[i] + (1.0f - b1) * p->grad;
    v_[i] = b2 * v_[i] + (1.0f - b2) * p->grad.cwiseAbs2();
    p->value.array() -= step_size * m_[i].array() / (v_[i].array().sqrt() * rbc2 + eps);
  }
}

void AdamW::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

}  // namespace knowcl
