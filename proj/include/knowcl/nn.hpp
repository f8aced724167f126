#pragma once

// Minimal layer library with explicit forward/backward passes.
//
// Activations are row-major matrices with one row per token (or per sample).
// Each layer caches what its backward pass needs from the most recent
// forward call, so a layer instance supports one in-flight forward at a time.
// Layers are templated on the scalar so gradient checks can run in double.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "knowcl/rng.hpp"

namespace knowcl::nn {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
struct Parameter {
  std::string name;
  Mat<T> value;
  Mat<T> grad;
  bool decay = true;      // subject to weight decay
  bool trainable = true;  // false for running statistics

  Parameter() = default;
  Parameter(std::string name, Eigen::Index rows, Eigen::Index cols, bool decay = true, bool trainable = true)
      : name(std::move(name)), value(Mat<T>::Zero(rows, cols)), grad(Mat<T>::Zero(rows, cols)), decay(decay),
        trainable(trainable) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  std::size_t size() const noexcept { return static_cast<std::size_t>(value.size()); }
};

template <class T>
using ParamRefs = std::vector<Parameter<T>*>;

std::size_t count_trainable(std::span<Parameter<float>* const> params);
std::size_t count_trainable(std::span<Parameter<double>* const> params);

// Initializers.
template <class T>
void trunc_normal(Mat<T>& m, double std, Rng& rng);
template <class T>
void uniform_fan_in(Mat<T>& m, std::size_t fan_in, Rng& rng);

/// y = x W + b with W stored (in x out).
template <class T>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool bias = true);

  Mat<T> forward(const Mat<T>& x);
  Mat<T> backward(const Mat<T>& dy);
  void collect(ParamRefs<T>& out);

  std::size_t in_features() const noexcept { return static_cast<std::size_t>(weight.value.rows()); }
  std::size_t out_features() const noexcept { return static_cast<std::size_t>(weight.value.cols()); }

  Parameter<T> weight;
  Parameter<T> bias;
  bool has_bias = true;

 private:
  Mat<T> input_;
};

/// Row-wise layer normalization.
template <class T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(const std::string& name, std::size_t dim, double eps = 1e-6);

  Mat<T> forward(const Mat<T>& x);
  Mat<T> backward(const Mat<T>& dy);
  void collect(ParamRefs<T>& out);

  Parameter<T> gamma;
  Parameter<T> beta;

 private:
  double eps_ = 1e-6;
  Mat<T> xhat_;
  Eigen::Matrix<T, Eigen::Dynamic, 1> rstd_;
};

/// Exact (erf) GELU.
template <class T>
class Gelu {
 public:
  Mat<T> forward(const Mat<T>& x);
  Mat<T> backward(const Mat<T>& dy);

 private:
  Mat<T> input_;
};

template <class T>
class Relu {
 public:
  Mat<T> forward(const Mat<T>& x);
  Mat<T> backward(const Mat<T>& dy);

 private:
  Mat<T> mask_;
};

/// Inverted dropout; each row draws its mask from its own key.
template <class T>
class Dropout {
 public:
  explicit Dropout(double p = 0.0) : p_(p) {}

  Mat<T> forward(const Mat<T>& x, std::span<const std::uint64_t> row_keys, bool training);
  Mat<T> backward(const Mat<T>& dy);
  double rate() const noexcept { return p_; }

 private:
  double p_;
  bool active_ = false;
  Mat<T> mask_;
};

/// Multi-head self-attention over `batch` sequences of `tokens` rows each.
template <class T>
class Attention {
 public:
  Attention() = default;
  Attention(const std::string& name, std::size_t dim, std::size_t heads, Rng& rng);

  Mat<T> forward(const Mat<T>& x, std::size_t batch, std::size_t tokens);
  Mat<T> backward(const Mat<T>& dy);
  void collect(ParamRefs<T>& out);

  std::size_t heads() const noexcept { return heads_; }
  std::size_t head_dim() const noexcept { return head_dim_; }

 private:
  std::size_t dim_ = 0;
  std::size_t heads_ = 0;
  std::size_t head_dim_ = 0;
  std::size_t batch_ = 0;
  std::size_t tokens_ = 0;
  Linear<T> qkv_;
  Linear<T> proj_;
  Mat<T> qkv_out_;
  Mat<T> probs_;  // (batch * heads * tokens) x tokens
};

/// Per-sample stochastic depth factors: 0 or 1/keep for each sample.
std::vector<double> drop_path_factors(std::span<const std::uint64_t> sample_keys, std::uint64_t site,
                                      double rate, bool training);

/// Scales the rows of each sample (tokens consecutive rows) by its factor.
template <class T>
void scale_sample_rows(Mat<T>& m, std::span<const double> factors, std::size_t tokens);

/// Pre-norm transformer block: x + DropPath(Attn(LN(x))), then x + DropPath(MLP(LN(x))).
template <class T>
class Block {
 public:
  Block() = default;
  Block(const std::string& name, std::size_t dim, std::size_t heads, double mlp_ratio, double drop_path,
        Rng& rng);

  Mat<T> forward(const Mat<T>& x, std::size_t batch, std::size_t tokens,
                 std::span<const std::uint64_t> sample_keys, std::uint64_t site, bool training);
  Mat<T> backward(const Mat<T>& dy);
  void collect(ParamRefs<T>& out);

  const Attention<T>& attention() const noexcept { return attn_; }
  std::size_t mlp_hidden() const noexcept { return fc1_.out_features(); }

 private:
  double drop_path_ = 0.0;
  std::size_t tokens_ = 0;
  LayerNorm<T> norm1_;
  Attention<T> attn_;
  LayerNorm<T> norm2_;
  Linear<T> fc1_;
  Gelu<T> act_;
  Linear<T> fc2_;
  std::vector<double> attn_factor_;
  std::vector<double> mlp_factor_;
};

}  // namespace knowcl::nn
