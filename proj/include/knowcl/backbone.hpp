#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "knowcl/nn.hpp"

namespace knowcl {

enum class Variant { vit_hsi, vit_tiny, vit_small, resnet18, resnet50 };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct BackboneConfig {
  Variant variant = Variant::vit_hsi;
  std::size_t input_size = 24;
  std::size_t in_channels = 5;
  std::size_t token_patch = 4;
  std::size_t embed_dim = 126;
  std::size_t depth = 4;
  std::size_t num_heads = 6;
  double mlp_ratio = 2.0;
  double drop_path_rate = 0.1;
  std::size_t head_hidden = 256;     // supervised head width
  double head_dropout = 0.1;         // supervised head dropout
  std::size_t projection_dim = 256;  // contrastive head output

  /// Architecture defaults for a variant; input geometry left at defaults.
  static BackboneConfig preset(Variant v);

  bool is_vit() const noexcept { return variant == Variant::vit_hsi || variant == Variant::vit_tiny ||
                                        variant == Variant::vit_small; }
  std::size_t tokens() const noexcept {
    const std::size_t g = input_size / token_patch;
    return g * g + 1;
  }
  /// Width of the embedding h produced by the backbone.
  std::size_t output_dim() const;

  void validate() const;
  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

/// Per-sample pooled embeddings. For ViTs `cls` is the class token and `mean`
/// averages all tokens (class token included); ResNets return the global
/// average pool in both.
template <class T>
struct Encoded {
  nn::Mat<T> cls;
  nn::Mat<T> mean;
};

/// Backbone f_b. Inputs are one row per sample laid out (channel, y, x).
template <class T>
class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual Encoded<T> forward(const nn::Mat<T>& x, std::span<const std::uint64_t> sample_keys, bool training) = 0;
  /// Either gradient may be empty (no contribution). Returns d loss / d input.
  virtual nn::Mat<T> backward(const nn::Mat<T>& d_cls, const nn::Mat<T>& d_mean) = 0;
  virtual void collect(nn::ParamRefs<T>& out) = 0;
  virtual std::size_t embed_dim() const = 0;
};

template <class T>
class VisionTransformer final : public Encoder<T> {
 public:
  VisionTransformer(const BackboneConfig& cfg, Rng& rng);

  Encoded<T> forward(const nn::Mat<T>& x, std::span<const std::uint64_t> sample_keys, bool training) override;
  nn::Mat<T> backward(const nn::Mat<T>& d_cls, const nn::Mat<T>& d_mean) override;
  void collect(nn::ParamRefs<T>& out) override;
  std::size_t embed_dim() const override { return cfg_.embed_dim; }

  const std::vector<nn::Block<T>>& blocks() const noexcept { return blocks_; }

 private:
  BackboneConfig cfg_;
  std::size_t grid_ = 0;
  std::size_t patch_dim_ = 0;
  nn::Linear<T> patch_embed_;
  nn::Parameter<T> cls_token_;
  nn::Parameter<T> pos_embed_;
  std::vector<nn::Block<T>> blocks_;
  nn::LayerNorm<T> norm_;
  std::size_t batch_ = 0;
};

/// f_s: Linear -> LayerNorm -> GELU -> Dropout -> Linear.
template <class T>
class SupervisedHead {
 public:
  SupervisedHead(std::size_t in, std::size_t hidden, std::size_t num_classes, double dropout, Rng& rng);

  nn::Mat<T> forward(const nn::Mat<T>& h, std::span<const std::uint64_t> sample_keys, bool training);
  nn::Mat<T> backward(const nn::Mat<T>& d_logits);
  void collect(nn::ParamRefs<T>& out);

  std::size_t num_classes() const noexcept { return fc2.out_features(); }

  nn::Linear<T> fc1;
  nn::LayerNorm<T> norm;
  nn::Gelu<T> act;
  nn::Dropout<T> dropout;
  nn::Linear<T> fc2;
};

/// f_c: Linear then l2 normalization by (||v|| + 1e-12).
template <class T>
class ContrastiveHead {
 public:
  ContrastiveHead(std::size_t in, std::size_t out, Rng& rng);

  nn::Mat<T> forward(const nn::Mat<T>& h);
  nn::Mat<T> backward(const nn::Mat<T>& dz);
  void collect(nn::ParamRefs<T>& out);

  nn::Linear<T> fc;

 private:
  nn::Mat<T> pre_;
  Eigen::Matrix<T, Eigen::Dynamic, 1> norms_;
};

/// Row-wise v / (||v|| + eps) and its backward pass.
template <class T>
nn::Mat<T> l2_normalize_rows(const nn::Mat<T>& v, T eps = T(1e-12));
template <class T>
nn::Mat<T> l2_normalize_rows_backward(const nn::Mat<T>& v, const nn::Mat<T>& dz, T eps = T(1e-12));

template <class T>
std::unique_ptr<Encoder<T>> make_encoder(const BackboneConfig& cfg, Rng& rng);

/// Full network: backbone, optional heads and the learnable task weights.
struct Model {
  BackboneConfig config;
  int num_classes = 0;
  std::unique_ptr<Encoder<float>> encoder;
  std::optional<SupervisedHead<float>> supervised;
  std::optional<ContrastiveHead<float>> contrastive;
  nn::Parameter<float> loss_weights;  // 1 x 2: [supervised, contrastive]

  Model() = default;
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  /// Deterministic initialization from seed.
  static Model create(const BackboneConfig& cfg, int num_classes, bool with_supervised, bool with_contrastive,
                      std::uint64_t seed);

  nn::ParamRefs<float> parameters();
  std::size_t backbone_parameter_count();
};

}  // namespace knowcl
