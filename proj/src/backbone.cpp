#include "knowcl/backbone.hpp"

#include <cmath>
#include <stdexcept>

#include "knowcl/resnet.hpp"

namespace knowcl {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::vit_hsi: return "vit_hsi";
    case Variant::vit_tiny: return "vit_tiny";
    case Variant::vit_small: return "vit_small";
    case Variant::resnet18: return "resnet18";
    case Variant::resnet50: return "resnet50";
  }
  throw std::invalid_argument("unknown variant");
}

Variant variant_from_string(const std::string& s) {
  for (Variant v : {Variant::vit_hsi, Variant::vit_tiny, Variant::vit_small, Variant::resnet18, Variant::resnet50}) {
    if (to_string(v) == s) return v;
  }
  throw std::invalid_argument("unknown backbone variant \"" + s + "\"");
}

BackboneConfig BackboneConfig::preset(Variant v) {
  BackboneConfig c;
  c.variant = v;
  switch (v) {
    case Variant::vit_tiny:
      c.embed_dim = 192;
      c.depth = 12;
      c.num_heads = 3;
      c.mlp_ratio = 4.0;
      break;
    case Variant::vit_small:
      c.embed_dim = 384;
      c.depth = 12;
      c.num_heads = 6;
      c.mlp_ratio = 4.0;
      break;
    default:
      break;
  }
  return c;
}

std::size_t BackboneConfig::output_dim() const {
  switch (variant) {
    case Variant::resnet18: return 512;
    case Variant::resnet50: return 2048;
    default: return embed_dim;
  }
}

void BackboneConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("backbone: " + m); };
  if (input_size == 0) fail("input_size must be positive");
  if (in_channels == 0) fail("in_channels must be positive");
  if (is_vit()) {
    if (token_patch == 0 || input_size % token_patch != 0) {
      fail("input_size " + std::to_string(input_size) + " not divisible by token_patch " +
           std::to_string(token_patch));
    }
    if (depth == 0) fail("depth must be positive");
    if (num_heads == 0 || embed_dim % num_heads != 0) {
      fail("embed_dim " + std::to_string(embed_dim) + " not divisible by num_heads " + std::to_string(num_heads));
    }
    if (!(mlp_ratio > 0.0)) fail("mlp_ratio must be positive");
  }
  if (!(drop_path_rate >= 0.0 && drop_path_rate < 1.0)) fail("drop_path_rate must be in [0, 1)");
  if (!(head_dropout >= 0.0 && head_dropout < 1.0)) fail("head_dropout must be in [0, 1)");
  if (head_hidden == 0) fail("head_hidden must be positive");
  if (projection_dim == 0) fail("projection_dim must be positive");
}

// ------------------------------------------------------- VisionTransformer

template <class T>
VisionTransformer<T>::VisionTransformer(const BackboneConfig& cfg, Rng& rng)
    : cfg_(cfg),
      grid_(cfg.input_size / cfg.token_patch),
      patch_dim_(cfg.in_channels * cfg.token_patch * cfg.token_patch),
      patch_embed_("backbone.patch_embed", patch_dim_, cfg.embed_dim, rng),
      cls_token_("backbone.cls_token", 1, static_cast<Eigen::Index>(cfg.embed_dim), false),
      pos_embed_("backbone.pos_embed", static_cast<Eigen::Index>(cfg.tokens()),
                 static_cast<Eigen::Index>(cfg.embed_dim), false),
      norm_("backbone.norm", cfg.embed_dim) {
  cfg.validate();
  nn::trunc_normal(cls_token_.value, 0.02, rng);
  nn::trunc_normal(pos_embed_.value, 0.02, rng);
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    blocks_.emplace_back("backbone.blocks." + std::to_string(i), cfg.embed_dim, cfg.num_heads, cfg.mlp_ratio,
                         cfg.drop_path_rate, rng);
  }
}

template <class T>
Encoded<T> VisionTransformer<T>::forward(const nn::Mat<T>& x, std::span<const std::uint64_t> sample_keys,
                                         bool training) {
  const std::size_t s = cfg_.input_size;
  const std::size_t c = cfg_.in_channels;
  const std::size_t p = cfg_.token_patch;
  if (static_cast<std::size_t>(x.cols()) != c * s * s) {
    throw std::invalid_argument("vit: input width " + std::to_string(x.cols()) + " != " +
                                std::to_string(c * s * s));
  }
  batch_ = static_cast<std::size_t>(x.rows());
  const std::vector<std::uint64_t> zero_keys(batch_, 0);
  if (sample_keys.empty()) sample_keys = zero_keys;
  if (sample_keys.size() != batch_) throw std::invalid_argument("vit: one key per sample required");

  const std::size_t np = grid_ * grid_;
  const std::size_t nt = np + 1;
  nn::Mat<T> patches(static_cast<Eigen::Index>(batch_ * np), static_cast<Eigen::Index>(patch_dim_));
  for (std::size_t b = 0; b < batch_; ++b) {
    const T* src = x.row(static_cast<Eigen::Index>(b)).data();
    for (std::size_t gy = 0; gy < grid_; ++gy) {
      for (std::size_t gx = 0; gx < grid_; ++gx) {
        T* dst = patches.row(static_cast<Eigen::Index>(b * np + gy * grid_ + gx)).data();
        for (std::size_t ch = 0; ch < c; ++ch) {
          for (std::size_t dy = 0; dy < p; ++dy) {
            const T* line = src + (ch * s + gy * p + dy) * s + gx * p;
            for (std::size_t dx = 0; dx < p; ++dx) *dst++ = line[dx];
          }
        }
      }
    }
  }
  const nn::Mat<T> emb = patch_embed_.forward(patches);
  const auto d = static_cast<Eigen::Index>(cfg_.embed_dim);
  nn::Mat<T> h(static_cast<Eigen::Index>(batch_ * nt), d);
  for (std::size_t b = 0; b < batch_; ++b) {
    const auto r0 = static_cast<Eigen::Index>(b * nt);
    h.row(r0) = cls_token_.value.row(0) + pos_embed_.value.row(0);
    h.block(r0 + 1, 0, static_cast<Eigen::Index>(np), d) =
        emb.block(static_cast<Eigen::Index>(b * np), 0, static_cast<Eigen::Index>(np), d) +
        pos_embed_.value.bottomRows(static_cast<Eigen::Index>(np));
  }
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    h = blocks_[i].forward(h, batch_, nt, sample_keys, i, training);
  }
  h = norm_.forward(h);

  Encoded<T> out{nn::Mat<T>(static_cast<Eigen::Index>(batch_), d), nn::Mat<T>(static_cast<Eigen::Index>(batch_), d)};
  for (std::size_t b = 0; b < batch_; ++b) {
    const auto r0 = static_cast<Eigen::Index>(b * nt);
    out.cls.row(static_cast<Eigen::Index>(b)) = h.row(r0);
    out.mean.row(static_cast<Eigen::Index>(b)) = h.block(r0, 0, static_cast<Eigen::Index>(nt), d).colwise().mean();
  }
  return out;
}

template <class T>
nn::Mat<T> VisionTransformer<T>::backward(const nn::Mat<T>& d_cls, const nn::Mat<T>& d_mean) {
  const std::size_t s = cfg_.input_size;
  const std::size_t c = cfg_.in_channels;
  const std::size_t p = cfg_.token_patch;
  const std::size_t np = grid_ * grid_;
  const std::size_t nt = np + 1;
  const auto d = static_cast<Eigen::Index>(cfg_.embed_dim);
  nn::Mat<T> g = nn::Mat<T>::Zero(static_cast<Eigen::Index>(batch_ * nt), d);
  for (std::size_t b = 0; b < batch_; ++b) {
    const auto r0 = static_cast<Eigen::Index>(b * nt);
    if (d_mean.size() > 0) {
      g.block(r0, 0, static_cast<Eigen::Index>(nt), d).rowwise() +=
          d_mean.row(static_cast<Eigen::Index>(b)) / static_cast<T>(nt);
    }
    if (d_cls.size() > 0) g.row(r0) += d_cls.row(static_cast<Eigen::Index>(b));
  }
  g = norm_.backward(g);
  for (std::size_t i = blocks_.size(); i-- > 0;) g = blocks_[i].backward(g);

  nn::Mat<T> demb(static_cast<Eigen::Index>(batch_ * np), d);
  for (std::size_t b = 0; b < batch_; ++b) {
    const auto r0 = static_cast<Eigen::Index>(b * nt);
    cls_token_.grad.row(0) += g.row(r0);
    pos_embed_.grad += g.block(r0, 0, static_cast<Eigen::Index>(nt), d);
    demb.block(static_cast<Eigen::Index>(b * np), 0, static_cast<Eigen::Index>(np), d) =
        g.block(r0 + 1, 0, static_cast<Eigen::Index>(np), d);
  }
  const nn::Mat<T> dpatch = patch_embed_.backward(demb);
  nn::Mat<T> dx(static_cast<Eigen::Index>(batch_), static_cast<Eigen::Index>(c * s * s));
  for (std::size_t b = 0; b < batch_; ++b) {
    T* dst = dx.row(static_cast<Eigen::Index>(b)).data();
    for (std::size_t gy = 0; gy < grid_; ++gy) {
      for (std::size_t gx = 0; gx < grid_; ++gx) {
        const T* src = dpatch.row(static_cast<Eigen::Index>(b * np + gy * grid_ + gx)).data();
        for (std::size_t ch = 0; ch < c; ++ch) {
          for (std::size_t dy = 0; dy < p; ++dy) {
            T* line = dst + (ch * s + gy * p + dy) * s + gx * p;
            for (std::size_t dxi = 0; dxi < p; ++dxi) line[dxi] = *src++;
          }
        }
      }
    }
  }
  return dx;
}

template <class T>
void VisionTransformer<T>::collect(nn::ParamRefs<T>& out) {
  patch_embed_.collect(out);
  out.push_back(&cls_token_);
  out.push_back(&pos_embed_);
  for (auto& b : blocks_) b.collect(out);
  norm_.collect(out);
}

// ------------------------------------------------------------------ heads

template <class T>
SupervisedHead<T>::SupervisedHead(std::size_t in, std::size_t hidden, std::size_t num_classes, double dropout_p,
                                  Rng& rng)
    : fc1("supervised.fc1", in, hidden, rng),
      norm("supervised.norm", hidden),
      dropout(dropout_p),
      fc2("supervised.fc2", hidden, num_classes, rng) {}

template <class T>
nn::Mat<T> SupervisedHead<T>::forward(const nn::Mat<T>& h, std::span<const std::uint64_t> sample_keys,
                                      bool training) {
  nn::Mat<T> a = act.forward(norm.forward(fc1.forward(h)));
  a = dropout.forward(a, sample_keys, training);
  return fc2.forward(a);
}

template <class T>
nn::Mat<T> SupervisedHead<T>::backward(const nn::Mat<T>& d_logits) {
  return fc1.backward(norm.backward(act.backward(dropout.backward(fc2.backward(d_logits)))));
}

template <class T>
void SupervisedHead<T>::collect(nn::ParamRefs<T>& out) {
  fc1.collect(out);
  norm.collect(out);
  fc2.collect(out);
}

template <class T>
ContrastiveHead<T>::ContrastiveHead(std::size_t in, std::size_t out, Rng& rng) : fc("contrastive.fc", in, out, rng) {}

template <class T>
nn::Mat<T> ContrastiveHead<T>::forward(const nn::Mat<T>& h) {
  pre_ = fc.forward(h);
  return l2_normalize_rows(pre_);
}

template <class T>
nn::Mat<T> ContrastiveHead<T>::backward(const nn::Mat<T>& dz) {
  return fc.backward(l2_normalize_rows_backward(pre_, dz));
}

template <class T>
void ContrastiveHead<T>::collect(nn::ParamRefs<T>& out) {
  fc.collect(out);
}

template <class T>
nn::Mat<T> l2_normalize_rows(const nn::Mat<T>& v, T eps) {
  nn::Mat<T> z(v.rows(), v.cols());
  for (Eigen::Index i = 0; i < v.rows(); ++i) z.row(i) = v.row(i) / (v.row(i).norm() + eps);
  return z;
}

template <class T>
nn::Mat<T> l2_normalize_rows_backward(const nn::Mat<T>& v, const nn::Mat<T>& dz, T eps) {
  // z = v / (n + eps), n = ||v||:  dv = dz / (n + eps) - (dz . v) v / ((n + eps)^2 n)
  nn::Mat<T> dv(v.rows(), v.cols());
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    const T n = v.row(i).norm();
    const T ne = n + eps;
    dv.row(i) = dz.row(i) / ne;
    if (n > T(0)) dv.row(i) -= v.row(i) * (dz.row(i).dot(v.row(i)) / (ne * ne * n));
  }
  return dv;
}

template <class T>
std::unique_ptr<Encoder<T>> make_encoder(const BackboneConfig& cfg, Rng& rng) {
  cfg.validate();
  if (cfg.is_vit()) return std::make_unique<VisionTransformer<T>>(cfg, rng);
  return std::make_unique<ResNet<T>>(cfg, rng);
}

#define KNOWCL_BACKBONE_INSTANTIATE(T)                                                     \
  template class VisionTransformer<T>;                                                     \
  template class SupervisedHead<T>;                                                        \
  template class ContrastiveHead<T>;                                                       \
  template nn::Mat<T> l2_normalize_rows<T>(const nn::Mat<T>&, T);                          \
  template nn::Mat<T> l2_normalize_rows_backward<T>(const nn::Mat<T>&, const nn::Mat<T>&, T); \
  template std::unique_ptr<Encoder<T>> make_encoder<T>(const BackboneConfig&, Rng&);

KNOWCL_BACKBONE_INSTANTIATE(float)
KNOWCL_BACKBONE_INSTANTIATE(double)

#undef KNOWCL_BACKBONE_INSTANTIATE

// ------------------------------------------------------------------ Model

Model Model::create(const BackboneConfig& cfg, int num_classes, bool with_supervised, bool with_contrastive,
                    std::uint64_t seed) {
  if (with_supervised && num_classes < 1) throw std::invalid_argument("model: num_classes must be positive");
  Model m;
  m.config = cfg;
  m.num_classes = num_classes;
  Rng rng(mix_key({seed, 0x6D6F64656CULL}));
  m.encoder = make_encoder<float>(cfg, rng);
  const std::size_t dim = cfg.output_dim();
  if (with_supervised) {
    m.supervised.emplace(dim, cfg.head_hidden, static_cast<std::size_t>(num_classes), cfg.head_dropout, rng);
  }
  if (with_contrastive) m.contrastive.emplace(dim, cfg.projection_dim, rng);
  m.loss_weights = nn::Parameter<float>("loss_weights", 1, 2, false);
  m.loss_weights.value.setOnes();
  return m;
}

nn::ParamRefs<float> Model::parameters() {
  nn::ParamRefs<float> out;
  encoder->collect(out);
  if (supervised) supervised->collect(out);
  if (contrastive) contrastive->collect(out);
  out.push_back(&loss_weights);
  return out;
}

std::size_t Model::backbone_parameter_count() {
  nn::ParamRefs<float> refs;
  encoder->collect(refs);
  return nn::count_trainable(refs);
}

}  // namespace knowcl
