#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "knowcl/nn.hpp"

namespace knowcl {

/// Learnable per-task weights w_t, ordered [supervised, contrastive].
struct LossWeights {
  std::vector<double> w{1.0, 1.0};

  static LossWeights ones(std::size_t tasks) { return {std::vector<double>(tasks, 1.0)}; }
  void validate() const;
};

struct Temperature {
  double tau = 0.5;
  void validate() const;
};

/// Mean over rows of -log softmax(logits)[target]; targets are 0-based.
/// Writes d loss / d logits when `grad` is non-null.
template <class T>
double cross_entropy(const nn::Mat<T>& logits, std::span<const int> targets, nn::Mat<T>* grad = nullptr);

/// z . zhat / (|z| |zhat|); throws on a zero vector.
double cosine_sim(std::span<const double> z, std::span<const double> zhat);

struct ContrastiveResult {
  double loss = 0.0;
  double positive_similarity = 0.0;  // mean z_i . zhat_i
};

/// Pooled two-branch InfoNCE over 2N unit-norm projections. Row i of `z` and
/// row i of `zhat` form the positive pair; every other pooled row is a
/// negative. Gradients are written when the pointers are non-null.
template <class T>
ContrastiveResult contrastive_loss(const nn::Mat<T>& z, const nn::Mat<T>& zhat, double tau,
                                   nn::Mat<T>* dz = nullptr, nn::Mat<T>* dzhat = nullptr);

/// sum_t L_t w_t.
double combined_fixed(std::span<const double> losses, std::span<const double> weights);

struct FusedResult {
  double value = 0.0;
  std::vector<double> d_losses;   // d / d L_t = 1 / (2 w_t^2)
  std::vector<double> d_weights;  // d / d w_t = -L_t / w_t^3 + 2 w_t / (1 + w_t^2)
};

/// sum_t L_t / (2 w_t^2) + ln(1 + w_t^2).
FusedResult adaptive_fused(std::span<const double> losses, std::span<const double> weights);

/// Positive w minimizing L / (2 w^2) + ln(1 + w^2) for fixed L > 0.
double adaptive_optimal_weight(double loss);

}  // namespace knowcl
