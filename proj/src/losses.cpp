#include "knowcl/losses.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace knowcl {

void LossWeights::validate() const {
  for (std::size_t t = 0; t < w.size(); ++t) {
    if (!std::isfinite(w[t]) || w[t] == 0.0) {
      throw std::invalid_argument("loss weight " + std::to_string(t) + " must be finite and nonzero");
    }
  }
}

void Temperature::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw std::invalid_argument("temperature must be positive");
}

template <class T>
double cross_entropy(const nn::Mat<T>& logits, std::span<const int> targets, nn::Mat<T>* grad) {
  const Eigen::Index n = logits.rows();
  const Eigen::Index k = logits.cols();
  if (n == 0) throw std::invalid_argument("cross_entropy: empty batch");
  if (static_cast<std::size_t>(n) != targets.size()) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                                std::to_string(n) + " rows");
  }
  if (grad) grad->resize(n, k);
  double total = 0.0;
  Eigen::VectorXd row(k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int t = targets[static_cast<std::size_t>(i)];
    if (t < 0 || t >= k) {
      throw std::invalid_argument("cross_entropy: target " + std::to_string(t) + " outside [0, " +
                                  std::to_string(k) + ")");
    }
    row = logits.row(i).template cast<double>().transpose();
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    total += lse - row[t];
    if (grad) {
      for (Eigen::Index j = 0; j < k; ++j) {
        const double p = std::exp(row[j] - lse);
        (*grad)(i, j) = static_cast<T>((p - (j == t ? 1.0 : 0.0)) / static_cast<double>(n));
      }
    }
  }
  return total / static_cast<double>(n);
}

double cosine_sim(std::span<const double> z, std::span<const double> zhat) {
  if (z.size() != zhat.size()) throw std::invalid_argument("cosine_sim: length mismatch");
  double dot = 0.0, nz = 0.0, nh = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    dot += z[i] * zhat[i];
    nz += z[i] * z[i];
    nh += zhat[i] * zhat[i];
  }
  if (nz == 0.0 || nh == 0.0) throw std::invalid_argument("cosine_sim: zero vector");
  return dot / (std::sqrt(nz) * std::sqrt(nh));
}

template <class T>
ContrastiveResult contrastive_loss(const nn::Mat<T>& z, const nn::Mat<T>& zhat, double tau, nn::Mat<T>* dz,
                                   nn::Mat<T>* dzhat) {
  const Eigen::Index n = z.rows();
  if (n == 0) throw std::invalid_argument("contrastive_loss: empty batch");
  if (zhat.rows() != n || zhat.cols() != z.cols()) throw std::invalid_argument("contrastive_loss: branch shape mismatch");
  Temperature{tau}.validate();
  const Eigen::Index m2 = 2 * n;
  Eigen::MatrixXd p(m2, z.cols());
  p.topRows(n) = z.template cast<double>();
  p.bottomRows(n) = zhat.template cast<double>();
  for (Eigen::Index i = 0; i < m2; ++i) {
    const double norm = p.row(i).norm();
    if (std::abs(norm - 1.0) > 1e-4) {
      throw std::invalid_argument("contrastive_loss: projection " + std::to_string(i) + " has norm " +
                                  std::to_string(norm) + ", expected 1");
    }
  }
  const Eigen::MatrixXd s = (p * p.transpose()) / tau;
  const bool want_grad = dz || dzhat;
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(m2, m2);
  ContrastiveResult r;
  double total = 0.0;
  for (Eigen::Index a = 0; a < m2; ++a) {
    const Eigen::Index pos = (a + n) % m2;
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < m2; ++j) {
      if (j != a) mx = std::max(mx, s(a, j));
    }
    double sum = 0.0;
    for (Eigen::Index j = 0; j < m2; ++j) {
      if (j != a) sum += std::exp(s(a, j) - mx);
    }
    const double lse = mx + std::log(sum);
    total += lse - s(a, pos);
    if (want_grad) {
      for (Eigen::Index j = 0; j < m2; ++j) {
        if (j == a) continue;
        g(a, j) = (std::exp(s(a, j) - lse) - (j == pos ? 1.0 : 0.0)) / static_cast<double>(m2);
      }
    }
  }
  r.loss = total / static_cast<double>(m2);
  double pos_sim = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) pos_sim += p.row(i).dot(p.row(i + n));
  r.positive_similarity = pos_sim / static_cast<double>(n);
  if (want_grad) {
    const Eigen::MatrixXd dp = ((g + g.transpose()) * p) / tau;
    if (dz) *dz = dp.topRows(n).cast<T>();
    if (dzhat) *dzhat = dp.bottomRows(n).cast<T>();
  }
  return r;
}

double combined_fixed(std::span<const double> losses, std::span<const double> weights) {
  if (losses.size() != weights.size()) {
    throw std::invalid_argument("combined_fixed: " + std::to_string(losses.size()) + " losses, " +
                                std::to_string(weights.size()) + " weights");
  }
  double s = 0.0;
  for (std::size_t t = 0; t < losses.size(); ++t) s += losses[t] * weights[t];
  return s;
}

FusedResult adaptive_fused(std::span<const double> losses, std::span<const double> weights) {
  if (losses.size() != weights.size()) {
    throw std::invalid_argument("adaptive_fused: " + std::to_string(losses.size()) + " losses, " +
                                std::to_string(weights.size()) + " weights");
  }
  FusedResult r;
  r.d_losses.resize(losses.size());
  r.d_weights.resize(losses.size());
  for (std::size_t t = 0; t < losses.size(); ++t) {
    const double w = weights[t];
    if (!std::isfinite(w) || w == 0.0) {
      throw std::invalid_argument("adaptive_fused: weight " + std::to_string(t) + " must be finite and nonzero");
    }
    const double w2 = w * w;
    r.value += losses[t] / (2.0 * w2) + std::log1p(w2);
    r.d_losses[t] = 1.0 / (2.0 * w2);
    r.d_weights[t] = -losses[t] / (w2 * w) + 2.0 * w / (1.0 + w2);
  }
  return r;
}

double adaptive_optimal_weight(double loss) {
  if (!(loss > 0.0)) throw std::invalid_argument("adaptive_optimal_weight: loss must be positive");
  // 2 u^2 - L u - L = 0 with u = w^2.
  const double u = (loss + std::sqrt(loss * loss + 8.0 * loss)) / 4.0;
  return std::sqrt(u);
}

template double cross_entropy<float>(const nn::Mat<float>&, std::span<const int>, nn::Mat<float>*);
template double cross_entropy<double>(const nn::Mat<double>&, std::span<const int>, nn::Mat<double>*);
template ContrastiveResult contrastive_loss<float>(const nn::Mat<float>&, const nn::Mat<float>&, double,
                                                   nn::Mat<float>*, nn::Mat<float>*);
template ContrastiveResult contrastive_loss<double>(const nn::Mat<double>&, const nn::Mat<double>&, double,
                                                    nn::Mat<double>*, nn::Mat<double>*);

}  // namespace knowcl
