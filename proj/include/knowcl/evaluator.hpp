#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "knowcl/backbone.hpp"
#include "knowcl/datacube.hpp"
#include "knowcl/patcher.hpp"
#include "knowcl/splitter.hpp"

namespace knowcl {

/// Which token summary of the backbone output feeds the feature bank.
/// `automatic` takes the class token when the model has a supervised head and
/// the token mean otherwise.
enum class Pooling { automatic, cls, mean };

std::string to_string(Pooling p);
Pooling pooling_from_string(const std::string& s);
Pooling resolve_pooling(const Model& model, Pooling p);

struct FeatureBank {
  nn::Mat<float> features;   // n x d, unit rows
  std::vector<int> labels;   // class labels 1..K, 0 when unknown
  std::vector<Pixel> coords;

  std::size_t size() const noexcept { return coords.size(); }
  void validate() const;
};

/// Deterministic backbone embeddings of the group-A center views, one row per
/// pixel, before normalization.
nn::Mat<float> embed_pixels(Model& model, const GroupedCube& reduced, const AugmentConfig& augment,
                            std::span<const Pixel> pixels, Pooling pooling, std::size_t threads = 1);

FeatureBank extract_features(Model& model, const GroupedCube& reduced, const AugmentConfig& augment,
                             std::span<const LabeledPixel> pixels, Pooling pooling, std::size_t threads = 1);
FeatureBank extract_features(Model& model, const GroupedCube& reduced, const AugmentConfig& augment,
                             std::span<const Pixel> pixels, Pooling pooling, std::size_t threads = 1);

/// Weighted kNN: the k most similar bank rows (ties by lower row index) vote
/// with exp(sim / tau_knn); the highest class score wins, ties to the smaller
/// class. Returns one label per query row.
std::vector<int> knn_predict(const FeatureBank& bank, const FeatureBank& queries, std::size_t k, double tau_knn,
                             std::size_t threads = 1);

/// Class predictions from the supervised head on the class-token embedding.
std::vector<int> head_predict(Model& model, const GroupedCube& reduced, const AugmentConfig& augment,
                              std::span<const Pixel> pixels, std::size_t threads = 1);

struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<std::int64_t> counts;  // (truth - 1) * K + (pred - 1)

  explicit ConfusionMatrix(int k = 0) : num_classes(k), counts(static_cast<std::size_t>(k) * k, 0) {}
  std::int64_t at(int truth, int pred) const { return counts[static_cast<std::size_t>(truth - 1) * num_classes + (pred - 1)]; }
  std::int64_t& at(int truth, int pred) { return counts[static_cast<std::size_t>(truth - 1) * num_classes + (pred - 1)]; }
  std::int64_t total() const;
};

/// Labels are 1..num_classes.
ConfusionMatrix confusion(std::span<const int> predicted, std::span<const int> truth, int num_classes);

struct MetricsReport {
  double oa = 0.0;
  double aa = 0.0;
  double kappa = 0.0;
  std::vector<double> per_class_accuracy;
  std::vector<std::int64_t> support;
  bool kappa_degenerate = false;

  nlohmann::json to_json() const;
};

MetricsReport metrics(const ConfusionMatrix& cm);

struct LinearProbeConfig {
  std::size_t epochs = 100;
  double lr = 0.01;
  std::size_t batch_size = 256;
  double weight_decay = 1e-6;
  std::uint64_t seed = 0;
};

struct LinearProbeResult {
  std::vector<int> predictions;
  MetricsReport metrics;
};

/// Trains a single d -> K linear map on frozen features with cross-entropy.
/// Metrics are filled only when every test row carries a label.
LinearProbeResult linear_eval(const FeatureBank& train, const FeatureBank& test, int num_classes,
                              const LinearProbeConfig& cfg);

using Rgb = std::array<std::uint8_t, 3>;

/// Class 0 is black; classes 1..19 come from a fixed table; larger indices
/// step the hue by the golden angle.
Rgb class_color(int label);

enum class MapScope { labeled_only, full_image };

std::string to_string(MapScope s);
MapScope map_scope_from_string(const std::string& s);

/// `labels` is a rows x cols raster of class indices (0 = none). With
/// labeled_only, pixels unlabeled in gt are painted black. Writes an 8-bit RGB PNG.
void render_map(std::span<const std::int32_t> labels, const GroundTruth& gt, const std::filesystem::path& path,
                MapScope scope);

/// Decodes an 8-bit RGB PNG written by render_map (rows, cols, interleaved RGB).
struct RgbImage {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> pixels;
  Rgb at(std::size_t r, std::size_t c) const {
    const std::size_t i = (r * cols + c) * 3;
    return {pixels[i], pixels[i + 1], pixels[i + 2]};
  }
};
RgbImage read_png(const std::filesystem::path& path);

}  // namespace knowcl
