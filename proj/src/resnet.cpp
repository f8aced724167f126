#include "knowcl/resnet.hpp"

#include <cmath>
#include <stdexcept>

namespace knowcl {

namespace nn {

template <class T>
Conv2d<T>::Conv2d(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                  Rng& rng)
    : weight(name + ".weight", static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in * kernel * kernel)),
      in_(in),
      out_(out),
      k_(kernel),
      stride_(stride),
      pad_(kernel / 2) {
  // Kaiming normal, fan_out mode.
  const double std = std::sqrt(2.0 / static_cast<double>(out * kernel * kernel));
  for (Eigen::Index i = 0; i < weight.value.size(); ++i) {
    weight.value.data()[i] = static_cast<T>(rng.normal() * std);
  }
}

template <class T>
void Conv2d<T>::im2col(const T* src, Mat<T>& cols) const {
  cols.setZero(static_cast<Eigen::Index>(in_ * k_ * k_), static_cast<Eigen::Index>(out_h_ * out_w_));
  for (std::size_t c = 0; c < in_; ++c) {
    for (std::size_t ky = 0; ky < k_; ++ky) {
      for (std::size_t kx = 0; kx < k_; ++kx) {
        const auto row = static_cast<Eigen::Index>((c * k_ + ky) * k_ + kx);
        for (std::size_t oy = 0; oy < out_h_; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride_ + ky) - static_cast<std::ptrdiff_t>(pad_);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h_)) continue;
          for (std::size_t ox = 0; ox < out_w_; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride_ + kx) - static_cast<std::ptrdiff_t>(pad_);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w_)) continue;
            cols(row, static_cast<Eigen::Index>(oy * out_w_ + ox)) =
                src[(c * h_ + static_cast<std::size_t>(iy)) * w_ + static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

template <class T>
void Conv2d<T>::col2im(const Mat<T>& cols, T* dst) const {
  for (std::size_t c = 0; c < in_; ++c) {
    for (std::size_t ky = 0; ky < k_; ++ky) {
      for (std::size_t kx = 0; kx < k_; ++kx) {
        const auto row = static_cast<Eigen::Index>((c * k_ + ky) * k_ + kx);
        for (std::size_t oy = 0; oy < out_h_; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride_ + ky) - static_cast<std::ptrdiff_t>(pad_);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h_)) continue;
          for (std::size_t ox = 0; ox < out_w_; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride_ + kx) - static_cast<std::ptrdiff_t>(pad_);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w_)) continue;
            dst[(c * h_ + static_cast<std::size_t>(iy)) * w_ + static_cast<std::size_t>(ix)] +=
                cols(row, static_cast<Eigen::Index>(oy * out_w_ + ox));
          }
        }
      }
    }
  }
}

template <class T>
Mat<T> Conv2d<T>::forward(const Mat<T>& x, std::size_t height, std::size_t width) {
  if (static_cast<std::size_t>(x.cols()) != in_ * height * width) {
    throw std::invalid_argument(weight.name + ": input shape mismatch");
  }
  h_ = height;
  w_ = width;
  out_h_ = (h_ + 2 * pad_ - k_) / stride_ + 1;
  out_w_ = (w_ + 2 * pad_ - k_) / stride_ + 1;
  input_ = x;
  const auto plane = static_cast<Eigen::Index>(out_h_ * out_w_);
  Mat<T> y(x.rows(), static_cast<Eigen::Index>(out_) * plane);
  Mat<T> cols;
  Mat<T> out_b(static_cast<Eigen::Index>(out_), plane);
  for (Eigen::Index b = 0; b < x.rows(); ++b) {
    im2col(x.row(b).data(), cols);
    out_b.noalias() = weight.value * cols;
    y.row(b) = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(out_b.data(), out_b.size());
  }
  return y;
}

template <class T>
Mat<T> Conv2d<T>::backward(const Mat<T>& dy) {
  const auto plane = static_cast<Eigen::Index>(out_h_ * out_w_);
  Mat<T> dx = Mat<T>::Zero(input_.rows(), input_.cols());
  Mat<T> cols;
  Mat<T> dcols;
  for (Eigen::Index b = 0; b < dy.rows(); ++b) {
    im2col(input_.row(b).data(), cols);
    const Eigen::Map<const Mat<T>> dy_b(dy.row(b).data(), static_cast<Eigen::Index>(out_), plane);
    weight.grad.noalias() += dy_b * cols.transpose();
    dcols.noalias() = weight.value.transpose() * dy_b;
    col2im(dcols, dx.row(b).data());
  }
  return dx;
}

template <class T>
void Conv2d<T>::collect(ParamRefs<T>& out) {
  out.push_back(&weight);
}

template <class T>
BatchNorm2d<T>::BatchNorm2d(const std::string& name, std::size_t channels, double momentum, double eps)
    : gamma(name + ".weight", 1, static_cast<Eigen::Index>(channels), false),
      beta(name + ".bias", 1, static_cast<Eigen::Index>(channels), false),
      running_mean(name + ".running_mean", 1, static_cast<Eigen::Index>(channels), false, false),
      running_var(name + ".running_var", 1, static_cast<Eigen::Index>(channels), false, false),
      channels_(channels),
      momentum_(momentum),
      eps_(eps) {
  gamma.value.setOnes();
  running_var.value.setOnes();
}

template <class T>
Mat<T> BatchNorm2d<T>::forward(const Mat<T>& x, std::size_t spatial, bool training) {
  spatial_ = spatial;
  training_ = training;
  const auto s = static_cast<Eigen::Index>(spatial);
  const Eigen::Index batch = x.rows();
  Mat<T> y(x.rows(), x.cols());
  xhat_.resize(x.rows(), x.cols());
  rstd_.assign(channels_, T(0));
  const double count = static_cast<double>(batch * s);
  for (std::size_t c = 0; c < channels_; ++c) {
    const auto c0 = static_cast<Eigen::Index>(c) * s;
    double mean, var;
    if (training) {
      double sum = 0.0;
      for (Eigen::Index b = 0; b < batch; ++b) sum += static_cast<double>(x.row(b).segment(c0, s).sum());
      mean = sum / count;
      double sq = 0.0;
      for (Eigen::Index b = 0; b < batch; ++b) {
        sq += static_cast<double>((x.row(b).segment(c0, s).array() - static_cast<T>(mean)).square().sum());
      }
      var = sq / count;
      const double unbiased = count > 1 ? sq / (count - 1) : var;
      const auto ci = static_cast<Eigen::Index>(c);
      running_mean.value(0, ci) =
          static_cast<T>((1 - momentum_) * running_mean.value(0, ci) + momentum_ * mean);
      running_var.value(0, ci) = static_cast<T>((1 - momentum_) * running_var.value(0, ci) + momentum_ * unbiased);
    } else {
      mean = running_mean.value(0, static_cast<Eigen::Index>(c));
      var = running_var.value(0, static_cast<Eigen::Index>(c));
    }
    const T rstd = static_cast<T>(1.0 / std::sqrt(var + eps_));
    rstd_[c] = rstd;
    const T g = gamma.value(0, static_cast<Eigen::Index>(c));
    const T bt = beta.value(0, static_cast<Eigen::Index>(c));
    for (Eigen::Index b = 0; b < batch; ++b) {
      xhat_.row(b).segment(c0, s) = (x.row(b).segment(c0, s).array() - static_cast<T>(mean)) * rstd;
      y.row(b).segment(c0, s) = xhat_.row(b).segment(c0, s).array() * g + bt;
    }
  }
  return y;
}

template <class T>
Mat<T> BatchNorm2d<T>::backward(const Mat<T>& dy) {
  const auto s = static_cast<Eigen::Index>(spatial_);
  const Eigen::Index batch = dy.rows();
  const T count = static_cast<T>(batch * s);
  Mat<T> dx(dy.rows(), dy.cols());
  for (std::size_t c = 0; c < channels_; ++c) {
    const auto c0 = static_cast<Eigen::Index>(c) * s;
    const auto ci = static_cast<Eigen::Index>(c);
    T sum_dy = 0, sum_dy_xhat = 0;
    for (Eigen::Index b = 0; b < batch; ++b) {
      sum_dy += dy.row(b).segment(c0, s).sum();
      sum_dy_xhat += dy.row(b).segment(c0, s).dot(xhat_.row(b).segment(c0, s));
    }
    gamma.grad(0, ci) += sum_dy_xhat;
    beta.grad(0, ci) += sum_dy;
    const T g = gamma.value(0, ci);
    for (Eigen::Index b = 0; b < batch; ++b) {
      if (training_) {
        dx.row(b).segment(c0, s) = (dy.row(b).segment(c0, s).array() - sum_dy / count -
                                    xhat_.row(b).segment(c0, s).array() * (sum_dy_xhat / count)) *
                                   (g * rstd_[c]);
      } else {
        dx.row(b).segment(c0, s) = dy.row(b).segment(c0, s) * (g * rstd_[c]);
      }
    }
  }
  return dx;
}

template <class T>
void BatchNorm2d<T>::collect(ParamRefs<T>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
  out.push_back(&running_mean);
  out.push_back(&running_var);
}

template class Conv2d<float>;
template class Conv2d<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;

}  // namespace nn

// Residual unit: basic (two 3x3) or bottleneck (1x1, 3x3, 1x1 with expansion 4).
template <class T>
struct ResNet<T>::Unit {
  std::vector<nn::Conv2d<T>> convs;
  std::vector<nn::BatchNorm2d<T>> bns;
  std::vector<nn::Relu<T>> relus;  // one after each inner conv except the last
  bool has_down = false;
  nn::Conv2d<T> down;
  nn::BatchNorm2d<T> down_bn;
  nn::Relu<T> out_relu;
  std::size_t in_h = 0, in_w = 0;

  nn::Mat<T> forward(const nn::Mat<T>& x, std::size_t h, std::size_t w, bool training) {
    in_h = h;
    in_w = w;
    nn::Mat<T> o = x;
    std::size_t ch = h, cw = w;
    for (std::size_t i = 0; i < convs.size(); ++i) {
      o = convs[i].forward(o, ch, cw);
      ch = convs[i].out_height();
      cw = convs[i].out_width();
      o = bns[i].forward(o, ch * cw, training);
      if (i + 1 < convs.size()) o = relus[i].forward(o);
    }
    if (has_down) {
      nn::Mat<T> sc = down.forward(x, h, w);
      o += down_bn.forward(sc, down.out_height() * down.out_width(), training);
    } else {
      o += x;
    }
    return out_relu.forward(o);
  }

  nn::Mat<T> backward(const nn::Mat<T>& dy) {
    const nn::Mat<T> d = out_relu.backward(dy);
    nn::Mat<T> g = d;
    for (std::size_t i = convs.size(); i-- > 0;) {
      if (i + 1 < convs.size()) g = relus[i].backward(g);
      g = convs[i].backward(bns[i].backward(g));
    }
    if (has_down) {
      g += down.backward(down_bn.backward(d));
    } else {
      g += d;
    }
    return g;
  }

  std::size_t out_h() const { return convs.back().out_height(); }
  std::size_t out_w() const { return convs.back().out_width(); }

  void collect(nn::ParamRefs<T>& out) {
    for (std::size_t i = 0; i < convs.size(); ++i) {
      convs[i].collect(out);
      bns[i].collect(out);
    }
    if (has_down) {
      down.collect(out);
      down_bn.collect(out);
    }
  }
};

template <class T>
ResNet<T>::ResNet(const BackboneConfig& cfg, Rng& rng)
    : cfg_(cfg),
      stem_("backbone.conv1", cfg.in_channels, 64, 3, 1, rng),
      stem_bn_("backbone.bn1", 64) {
  const bool bottleneck = cfg.variant == Variant::resnet50;
  const std::vector<std::size_t> depth = bottleneck ? std::vector<std::size_t>{3, 4, 6, 3}
                                                    : std::vector<std::size_t>{2, 2, 2, 2};
  const std::size_t widths[4] = {64, 128, 256, 512};
  const std::size_t expansion = bottleneck ? 4 : 1;
  std::size_t in = 64;
  for (std::size_t stage = 0; stage < 4; ++stage) {
    for (std::size_t i = 0; i < depth[stage]; ++i) {
      const std::size_t stride = (stage > 0 && i == 0) ? 2 : 1;
      const std::size_t width = widths[stage];
      const std::string name =
          "backbone.layer" + std::to_string(stage + 1) + "." + std::to_string(i);
      auto unit = std::make_unique<Unit>();
      if (bottleneck) {
        unit->convs.emplace_back(name + ".conv1", in, width, 1, 1, rng);
        unit->convs.emplace_back(name + ".conv2", width, width, 3, stride, rng);
        unit->convs.emplace_back(name + ".conv3", width, width * expansion, 1, 1, rng);
        unit->bns.emplace_back(name + ".bn1", width);
        unit->bns.emplace_back(name + ".bn2", width);
        unit->bns.emplace_back(name + ".bn3", width * expansion);
        unit->relus.resize(2);
      } else {
        unit->convs.emplace_back(name + ".conv1", in, width, 3, stride, rng);
        unit->convs.emplace_back(name + ".conv2", width, width, 3, 1, rng);
        unit->bns.emplace_back(name + ".bn1", width);
        unit->bns.emplace_back(name + ".bn2", width);
        unit->relus.resize(1);
      }
      if (stride != 1 || in != width * expansion) {
        unit->has_down = true;
        unit->down = nn::Conv2d<T>(name + ".downsample.0", in, width * expansion, 1, stride, rng);
        unit->down_bn = nn::BatchNorm2d<T>(name + ".downsample.1", width * expansion);
      }
      in = width * expansion;
      units_.push_back(std::move(unit));
    }
  }
  out_channels_ = in;
}

template <class T>
ResNet<T>::~ResNet() = default;

template <class T>
Encoded<T> ResNet<T>::forward(const nn::Mat<T>& x, std::span<const std::uint64_t>, bool training) {
  const std::size_t s = cfg_.input_size;
  nn::Mat<T> o = stem_relu_.forward(stem_bn_.forward(stem_.forward(x, s, s), s * s, training));
  std::size_t h = s, w = s;
  for (auto& unit : units_) {
    o = unit->forward(o, h, w, training);
    h = unit->out_h();
    w = unit->out_w();
  }
  final_spatial_ = h * w;
  const auto sp = static_cast<Eigen::Index>(final_spatial_);
  nn::Mat<T> pooled(o.rows(), static_cast<Eigen::Index>(out_channels_));
  for (Eigen::Index b = 0; b < o.rows(); ++b) {
    for (Eigen::Index c = 0; c < pooled.cols(); ++c) pooled(b, c) = o.row(b).segment(c * sp, sp).mean();
  }
  return {pooled, pooled};
}

template <class T>
nn::Mat<T> ResNet<T>::backward(const nn::Mat<T>& d_cls, const nn::Mat<T>& d_mean) {
  nn::Mat<T> dpool;
  if (d_cls.size() > 0) dpool = d_cls;
  if (d_mean.size() > 0) dpool = dpool.size() > 0 ? nn::Mat<T>(dpool + d_mean) : d_mean;
  const auto sp = static_cast<Eigen::Index>(final_spatial_);
  nn::Mat<T> g(dpool.rows(), dpool.cols() * sp);
  for (Eigen::Index b = 0; b < dpool.rows(); ++b) {
    for (Eigen::Index c = 0; c < dpool.cols(); ++c) {
      g.row(b).segment(c * sp, sp).setConstant(dpool(b, c) / static_cast<T>(sp));
    }
  }
  for (std::size_t i = units_.size(); i-- > 0;) g = units_[i]->backward(g);
  return stem_.backward(stem_bn_.backward(stem_relu_.backward(g)));
}

template <class T>
void ResNet<T>::collect(nn::ParamRefs<T>& out) {
  stem_.collect(out);
  stem_bn_.collect(out);
  for (auto& unit : units_) unit->collect(out);
}

template <class T>
std::vector<std::size_t> ResNet<T>::kernel_sizes() const {
  std::vector<std::size_t> k{stem_.kernel()};
  for (const auto& unit : units_) {
    for (const auto& c : unit->convs) k.push_back(c.kernel());
    if (unit->has_down) k.push_back(unit->down.kernel());
  }
  return k;
}

template class ResNet<float>;
template class ResNet<double>;

}  // namespace knowcl
