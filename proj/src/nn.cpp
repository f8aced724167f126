#include "knowcl/nn.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include <unsupported/Eigen/SpecialFunctions>

namespace knowcl::nn {

namespace {

template <class T>
std::size_t count_impl(std::span<Parameter<T>* const> params) {
  std::size_t n = 0;
  for (const auto* p : params) {
    if (p->trainable) n += p->size();
  }
  return n;
}

}  // namespace

std::size_t count_trainable(std::span<Parameter<float>* const> params) { return count_impl(params); }
std::size_t count_trainable(std::span<Parameter<double>* const> params) { return count_impl(params); }

template <class T>
void trunc_normal(Mat<T>& m, double std, Rng& rng) {
  // Truncated at two standard deviations, as in timm's trunc_normal_.
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    double z = rng.normal();
    while (std::abs(z) > 2.0) z = rng.normal();
    m.data()[i] = static_cast<T>(z * std);
  }
}

template <class T>
void uniform_fan_in(Mat<T>& m, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
}

// ---------------------------------------------------------------- Linear

template <class T>
Linear<T>::Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool bias)
    : weight(name + ".weight", static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out)),
      bias(name + ".bias", 1, static_cast<Eigen::Index>(out), false),
      has_bias(bias) {
  trunc_normal(weight.value, 0.02, rng);
}

template <class T>
Mat<T> Linear<T>::forward(const Mat<T>& x) {
  if (x.cols() != weight.value.rows()) {
    throw std::invalid_argument(weight.name + ": input width " + std::to_string(x.cols()) + " != " +
                                std::to_string(weight.value.rows()));
  }
  input_ = x;
  Mat<T> y(x.rows(), weight.value.cols());
  y.noalias() = x * weight.value;
  if (has_bias) y.rowwise() += bias.value.row(0);
  return y;
}

template <class T>
Mat<T> Linear<T>::backward(const Mat<T>& dy) {
  weight.grad.noalias() += input_.transpose() * dy;
  if (has_bias) bias.grad.row(0) += dy.colwise().sum();
  Mat<T> dx(dy.rows(), weight.value.rows());
  dx.noalias() = dy * weight.value.transpose();
  return dx;
}

template <class T>
void Linear<T>::collect(ParamRefs<T>& out) {
  out.push_back(&weight);
  if (has_bias) out.push_back(&bias);
}

// ------------------------------------------------------------- LayerNorm

template <class T>
LayerNorm<T>::LayerNorm(const std::string& name, std::size_t dim, double eps)
    : gamma(name + ".weight", 1, static_cast<Eigen::Index>(dim), false),
      beta(name + ".bias", 1, static_cast<Eigen::Index>(dim), false),
      eps_(eps) {
  gamma.value.setOnes();
}

template <class T>
Mat<T> LayerNorm<T>::forward(const Mat<T>& x) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  xhat_.resize(n, d);
  rstd_.resize(n);
  Mat<T> y(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = x.row(i);
    const T mean = row.mean();
    const T var = (row.array() - mean).square().mean();
    const T rstd = T(1) / std::sqrt(var + static_cast<T>(eps_));
    rstd_[i] = rstd;
    xhat_.row(i) = (row.array() - mean) * rstd;
    y.row(i) = xhat_.row(i).cwiseProduct(gamma.value.row(0)) + beta.value.row(0);
  }
  return y;
}

template <class T>
Mat<T> LayerNorm<T>::backward(const Mat<T>& dy) {
  const Eigen::Index n = dy.rows();
  const Eigen::Index d = dy.cols();
  gamma.grad.row(0) += dy.cwiseProduct(xhat_).colwise().sum();
  beta.grad.row(0) += dy.colwise().sum();
  Mat<T> dx(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto dxhat = (dy.row(i).cwiseProduct(gamma.value.row(0))).eval();
    const T mean_d = dxhat.mean();
    const T mean_dx = dxhat.cwiseProduct(xhat_.row(i)).mean();
    dx.row(i) = ((dxhat.array() - mean_d) - xhat_.row(i).array() * mean_dx) * rstd_[i];
  }
  return dx;
}

template <class T>
void LayerNorm<T>::collect(ParamRefs<T>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

// ----------------------------------------------------------- activations

template <class T>
Mat<T> Gelu<T>::forward(const Mat<T>& x) {
  input_ = x;
  const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
  return (T(0.5) * x.array() * (T(1) + (x.array() * inv_sqrt2).erf())).matrix();
}

template <class T>
Mat<T> Gelu<T>::backward(const Mat<T>& dy) {
  const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
  const T inv_sqrt_2pi = static_cast<T>(1.0 / std::sqrt(2.0 * std::numbers::pi));
  const auto x = input_.array();
  const auto cdf = T(0.5) * (T(1) + (x * inv_sqrt2).erf());
  const auto pdf = (T(-0.5) * x.square()).exp() * inv_sqrt_2pi;
  return (dy.array() * (cdf + x * pdf)).matrix();
}

template <class T>
Mat<T> Relu<T>::forward(const Mat<T>& x) {
  mask_ = (x.array() > T(0)).template cast<T>();
  return x.cwiseMax(T(0));
}

template <class T>
Mat<T> Relu<T>::backward(const Mat<T>& dy) {
  return dy.cwiseProduct(mask_);
}

template <class T>
Mat<T> Dropout<T>::forward(const Mat<T>& x, std::span<const std::uint64_t> row_keys, bool training) {
  active_ = training && p_ > 0.0;
  if (!active_) return x;
  if (row_keys.size() != static_cast<std::size_t>(x.rows())) {
    throw std::invalid_argument("dropout: one key per row required");
  }
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p_));
  mask_.resize(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Rng rng(mix_key({row_keys[static_cast<std::size_t>(i)], 0xD80ULL}));
    for (Eigen::Index j = 0; j < x.cols(); ++j) mask_(i, j) = rng.bernoulli(p_) ? T(0) : keep_scale;
  }
  return x.cwiseProduct(mask_);
}

template <class T>
Mat<T> Dropout<T>::backward(const Mat<T>& dy) {
  if (!active_) return dy;
  return dy.cwiseProduct(mask_);
}

// ------------------------------------------------------------- Attention

template <class T>
Attention<T>::Attention(const std::string& name, std::size_t dim, std::size_t heads, Rng& rng)
    : dim_(dim), heads_(heads), head_dim_(heads ? dim / heads : 0), qkv_(name + ".qkv", dim, 3 * dim, rng),
      proj_(name + ".proj", dim, dim, rng) {
  if (heads == 0 || dim % heads != 0) {
    throw std::invalid_argument("attention: dim " + std::to_string(dim) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
}

template <class T>
Mat<T> Attention<T>::forward(const Mat<T>& x, std::size_t batch, std::size_t tokens) {
  batch_ = batch;
  tokens_ = tokens;
  const auto n = static_cast<Eigen::Index>(tokens);
  const auto dh = static_cast<Eigen::Index>(head_dim_);
  const auto d = static_cast<Eigen::Index>(dim_);
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(head_dim_)));
  qkv_out_ = qkv_.forward(x);
  probs_.resize(static_cast<Eigen::Index>(batch * heads_) * n, n);
  Mat<T> out(x.rows(), d);
  Mat<T> s(n, n);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto r0 = static_cast<Eigen::Index>(b) * n;
    for (std::size_t h = 0; h < heads_; ++h) {
      const auto c0 = static_cast<Eigen::Index>(h) * dh;
      const auto q = qkv_out_.block(r0, c0, n, dh);
      const auto k = qkv_out_.block(r0, d + c0, n, dh);
      const auto v = qkv_out_.block(r0, 2 * d + c0, n, dh);
      s.noalias() = q * k.transpose();
      s *= scale;
      for (Eigen::Index i = 0; i < n; ++i) {
        const T m = s.row(i).maxCoeff();
        s.row(i) = (s.row(i).array() - m).exp();
        s.row(i) /= s.row(i).sum();
      }
      out.block(r0, c0, n, dh).noalias() = s * v;
      probs_.block(static_cast<Eigen::Index>(b * heads_ + h) * n, 0, n, n) = s;
    }
  }
  return proj_.forward(out);
}

template <class T>
Mat<T> Attention<T>::backward(const Mat<T>& dy) {
  const auto n = static_cast<Eigen::Index>(tokens_);
  const auto dh = static_cast<Eigen::Index>(head_dim_);
  const auto d = static_cast<Eigen::Index>(dim_);
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(head_dim_)));
  const Mat<T> dout = proj_.backward(dy);
  Mat<T> dqkv(dout.rows(), 3 * d);
  Mat<T> dp(n, n);
  Mat<T> ds(n, n);
  for (std::size_t b = 0; b < batch_; ++b) {
    const auto r0 = static_cast<Eigen::Index>(b) * n;
    for (std::size_t h = 0; h < heads_; ++h) {
      const auto c0 = static_cast<Eigen::Index>(h) * dh;
      const auto p = probs_.block(static_cast<Eigen::Index>(b * heads_ + h) * n, 0, n, n);
      const auto q = qkv_out_.block(r0, c0, n, dh);
      const auto k = qkv_out_.block(r0, d + c0, n, dh);
      const auto v = qkv_out_.block(r0, 2 * d + c0, n, dh);
      const auto d_o = dout.block(r0, c0, n, dh);
      dp.noalias() = d_o * v.transpose();
      dqkv.block(r0, 2 * d + c0, n, dh).noalias() = p.transpose() * d_o;
      for (Eigen::Index i = 0; i < n; ++i) {
        const T dot = dp.row(i).dot(p.row(i));
        ds.row(i) = p.row(i).array() * (dp.row(i).array() - dot) * scale;
      }
      dqkv.block(r0, c0, n, dh).noalias() = ds * k;
      dqkv.block(r0, d + c0, n, dh).noalias() = ds.transpose() * q;
    }
  }
  return qkv_.backward(dqkv);
}

template <class T>
void Attention<T>::collect(ParamRefs<T>& out) {
  qkv_.collect(out);
  proj_.collect(out);
}

// ---------------------------------------------------------------- Block

std::vector<double> drop_path_factors(std::span<const std::uint64_t> sample_keys, std::uint64_t site,
                                      double rate, bool training) {
  std::vector<double> f(sample_keys.size(), 1.0);
  if (!training || rate <= 0.0) return f;
  const double keep = 1.0 - rate;
  for (std::size_t i = 0; i < sample_keys.size(); ++i) {
    Rng rng(mix_key({sample_keys[i], 0xD9A7ULL, site}));
    f[i] = rng.uniform() < keep ? 1.0 / keep : 0.0;
  }
  return f;
}

template <class T>
void scale_sample_rows(Mat<T>& m, std::span<const double> factors, std::size_t tokens) {
  const auto n = static_cast<Eigen::Index>(tokens);
  for (std::size_t b = 0; b < factors.size(); ++b) {
    if (factors[b] == 1.0) continue;
    m.block(static_cast<Eigen::Index>(b) * n, 0, n, m.cols()) *= static_cast<T>(factors[b]);
  }
}

template <class T>
Block<T>::Block(const std::string& name, std::size_t dim, std::size_t heads, double mlp_ratio, double drop_path,
                Rng& rng)
    : drop_path_(drop_path),
      norm1_(name + ".norm1", dim),
      attn_(name + ".attn", dim, heads, rng),
      norm2_(name + ".norm2", dim),
      fc1_(name + ".mlp.fc1", dim, static_cast<std::size_t>(std::lround(static_cast<double>(dim) * mlp_ratio)), rng),
      fc2_(name + ".mlp.fc2", static_cast<std::size_t>(std::lround(static_cast<double>(dim) * mlp_ratio)), dim, rng) {
}

template <class T>
Mat<T> Block<T>::forward(const Mat<T>& x, std::size_t batch, std::size_t tokens,
                         std::span<const std::uint64_t> sample_keys, std::uint64_t site, bool training) {
  tokens_ = tokens;
  attn_factor_ = drop_path_factors(sample_keys, 2 * site, drop_path_, training);
  mlp_factor_ = drop_path_factors(sample_keys, 2 * site + 1, drop_path_, training);

  Mat<T> branch = attn_.forward(norm1_.forward(x), batch, tokens);
  scale_sample_rows(branch, attn_factor_, tokens);
  Mat<T> x1 = x + branch;

  branch = fc2_.forward(act_.forward(fc1_.forward(norm2_.forward(x1))));
  scale_sample_rows(branch, mlp_factor_, tokens);
  x1 += branch;
  return x1;
}

template <class T>
Mat<T> Block<T>::backward(const Mat<T>& dy) {
  Mat<T> g = dy;
  scale_sample_rows(g, mlp_factor_, tokens_);
  Mat<T> dx1 = dy + norm2_.backward(fc1_.backward(act_.backward(fc2_.backward(g))));
  g = dx1;
  scale_sample_rows(g, attn_factor_, tokens_);
  dx1 += norm1_.backward(attn_.backward(g));
  return dx1;
}

template <class T>
void Block<T>::collect(ParamRefs<T>& out) {
  norm1_.collect(out);
  attn_.collect(out);
  norm2_.collect(out);
  fc1_.collect(out);
  fc2_.collect(out);
}

#define KNOWCL_NN_INSTANTIATE(T)                                                   \
  template void trunc_normal<T>(Mat<T>&, double, Rng&);                            \
  template void uniform_fan_in<T>(Mat<T>&, std::size_t, Rng&);                     \
  template void scale_sample_rows<T>(Mat<T>&, std::span<const double>, std::size_t); \
  template class Linear<T>;                                                        \
  template class LayerNorm<T>;                                                     \
  template class Gelu<T>;                                                          \
  template class Relu<T>;                                                          \
  template class Dropout<T>;                                                       \
  template class Attention<T>;                                                     \
  template class Block<T>;

KNOWCL_NN_INSTANTIATE(float)
KNOWCL_NN_INSTANTIATE(double)

#undef KNOWCL_NN_INSTANTIATE

}  // namespace knowcl::nn
