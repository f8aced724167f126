#pragma once

#include <cstddef>
#include <vector>

#include "knowcl/backbone.hpp"
#include "knowcl/nn.hpp"

namespace knowcl {

namespace nn {

/// 2-D convolution without bias via im2col. Rows are samples laid out (C, H, W).
template <class T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, Rng& rng);

  Mat<T> forward(const Mat<T>& x, std::size_t height, std::size_t width);
  Mat<T> backward(const Mat<T>& dy);
  void collect(ParamRefs<T>& out);

  std::size_t out_height() const noexcept { return out_h_; }
  std::size_t out_width() const noexcept { return out_w_; }
  std::size_t kernel() const noexcept { return k_; }

  Parameter<T> weight;  // out x (in * k * k)

 private:
  void im2col(const T* src, Mat<T>& cols) const;
  void col2im(const Mat<T>& cols, T* dst) const;

  std::size_t in_ = 0, out_ = 0, k_ = 0, stride_ = 1, pad_ = 0;
  std::size_t h_ = 0, w_ = 0, out_h_ = 0, out_w_ = 0;
  Mat<T> input_;
};

/// Batch normalization over (batch, H, W) per channel, with running statistics.
template <class T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, std::size_t channels, double momentum = 0.1, double eps = 1e-5);

  Mat<T> forward(const Mat<T>& x, std::size_t spatial, bool training);
  Mat<T> backward(const Mat<T>& dy);
  void collect(ParamRefs<T>& out);

  Parameter<T> gamma;
  Parameter<T> beta;
  Parameter<T> running_mean;
  Parameter<T> running_var;

 private:
  std::size_t channels_ = 0;
  std::size_t spatial_ = 0;
  double momentum_ = 0.1;
  double eps_ = 1e-5;
  bool training_ = false;
  Mat<T> xhat_;
  std::vector<T> rstd_;
};

}  // namespace nn

/// ResNet with a 3x3 stride-1 stem and no stem max-pool or classifier; the
/// embedding is the global average of the last stage.
template <class T>
class ResNet final : public Encoder<T> {
 public:
  ResNet(const BackboneConfig& cfg, Rng& rng);
  ~ResNet() override;

  Encoded<T> forward(const nn::Mat<T>& x, std::span<const std::uint64_t> sample_keys, bool training) override;
  nn::Mat<T> backward(const nn::Mat<T>& d_cls, const nn::Mat<T>& d_mean) override;
  void collect(nn::ParamRefs<T>& out) override;
  std::size_t embed_dim() const override { return out_channels_; }

  /// Kernel sizes of every convolution, stem first.
  std::vector<std::size_t> kernel_sizes() const;

  struct Unit;

 private:
  BackboneConfig cfg_;
  nn::Conv2d<T> stem_;
  nn::BatchNorm2d<T> stem_bn_;
  nn::Relu<T> stem_relu_;
  std::vector<std::unique_ptr<Unit>> units_;
  std::size_t out_channels_ = 0;
  std::size_t final_spatial_ = 0;
};

}  // namespace knowcl
