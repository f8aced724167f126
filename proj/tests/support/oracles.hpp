#pragma once

// Independent reference computations for tests. Nothing here calls into the
// library's numerical code; each routine is the plain textbook form.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <vector>

#include "knowcl/rng.hpp"

namespace knowcl::oracle {

using Rows = std::vector<std::vector<double>>;

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  long double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<long double>(a[i]) * b[i];
  return static_cast<double>(s);
}

inline std::vector<double> unit(std::vector<double> v) {
  const double n = std::sqrt(dot(v, v));
  for (auto& x : v) x /= n;
  return v;
}

inline std::vector<double> random_unit(Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  for (auto& x : v) x = rng.normal();
  return unit(std::move(v));
}

// Pooled two-branch InfoNCE written as a direct sum: for every anchor in the
// 2N pooled rows, -log(exp(s_pos / tau) / sum_{k != anchor} exp(s_k / tau)),
// averaged over the 2N anchors.
inline double contrastive(const Rows& z, const Rows& zhat, double tau) {
  const std::size_t n = z.size();
  Rows pooled = z;
  pooled.insert(pooled.end(), zhat.begin(), zhat.end());
  long double total = 0;
  for (std::size_t a = 0; a < 2 * n; ++a) {
    const std::size_t pos = a < n ? a + n : a - n;
    long double denom = 0;
    for (std::size_t k = 0; k < 2 * n; ++k) {
      if (k == a) continue;
      denom += std::exp(static_cast<long double>(dot(pooled[a], pooled[k])) / tau);
    }
    const long double num = std::exp(static_cast<long double>(dot(pooled[a], pooled[pos])) / tau);
    total += -std::log(num / denom);
  }
  return static_cast<double>(total / (2 * n));
}

inline double cross_entropy_row(const std::vector<double>& logits, int target) {
  long double s = 0;
  for (double l : logits) s += std::exp(static_cast<long double>(l));
  return static_cast<double>(std::log(s) - logits[static_cast<std::size_t>(target)]);
}

inline double fused(const std::vector<double>& L, const std::vector<double>& w) {
  double s = 0;
  for (std::size_t t = 0; t < L.size(); ++t) s += L[t] / (2 * w[t] * w[t]) + std::log(1 + w[t] * w[t]);
  return s;
}

struct EigenPairs {
  std::vector<double> values;  // descending
  Rows vectors;                // vectors[i] pairs with values[i]
};

// Cyclic Jacobi rotations on a dense symmetric matrix.
inline EigenPairs jacobi(Rows a) {
  const std::size_t n = a.size();
  Rows v(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a[x][x] > a[y][y]; });
  EigenPairs out;
  for (std::size_t i : order) {
    out.values.push_back(a[i][i]);
    std::vector<double> col(n);
    for (std::size_t k = 0; k < n; ++k) col[k] = v[k][i];
    out.vectors.push_back(col);
  }
  return out;
}

// Exhaustive weighted vote: full sort of the bank by (similarity desc, index
// asc), the top k vote with exp(sim / tau), ties resolved to the smaller label.
inline int knn(const std::vector<std::vector<float>>& bank, const std::vector<int>& labels,
               const std::vector<float>& query, std::size_t k, double tau) {
  std::vector<std::pair<double, std::size_t>> sims;
  for (std::size_t i = 0; i < bank.size(); ++i) {
    double s = 0;
    for (std::size_t j = 0; j < query.size(); ++j) s += static_cast<double>(query[j]) * static_cast<double>(bank[i][j]);
    sims.push_back({s, i});
  }
  std::sort(sims.begin(), sims.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::map<int, double> score;
  for (std::size_t i = 0; i < k; ++i) score[labels[sims[i].second]] += std::exp(sims[i].first / tau);
  int best = 0;
  double best_score = -1;
  for (const auto& [label, s] : score) {
    if (s > best_score) {
      best = label;
      best_score = s;
    }
  }
  return best;
}

struct Agreement {
  double oa, aa, kappa;
};

// cm[truth][pred], zero-based.
inline Agreement agreement(const std::vector<std::vector<long long>>& cm) {
  const std::size_t k = cm.size();
  double n = 0, diag = 0, pe = 0, aa = 0;
  int present = 0;
  for (std::size_t i = 0; i < k; ++i) {
    double row = 0, col = 0;
    for (std::size_t j = 0; j < k; ++j) {
      row += static_cast<double>(cm[i][j]);
      col += static_cast<double>(cm[j][i]);
    }
    n += row;
    diag += static_cast<double>(cm[i][i]);
    pe += row * col;
    if (row > 0) {
      aa += static_cast<double>(cm[i][i]) / row;
      ++present;
    }
  }
  pe /= n * n;
  const double oa = diag / n;
  return {oa, present ? aa / present : 0.0, pe < 1 ? (oa - pe) / (1 - pe) : (oa == 1 ? 1.0 : 0.0)};
}

// Random label raster with roughly `unlabeled` fraction of zeros.
inline std::vector<std::int32_t> random_labels(Rng& rng, std::size_t n, int classes, double unlabeled) {
  std::vector<std::int32_t> out(n);
  for (auto& v : out) v = rng.bernoulli(unlabeled) ? 0 : static_cast<std::int32_t>(1 + rng.below(classes));
  return out;
}

}  // namespace knowcl::oracle
