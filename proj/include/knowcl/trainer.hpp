#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "knowcl/backbone.hpp"
#include "knowcl/patcher.hpp"
#include "knowcl/spectral.hpp"
#include "knowcl/splitter.hpp"

namespace knowcl {

enum class Mode { supervised, unsupervised, semisupervised };

std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);

struct TrainConfig {
  Mode mode = Mode::semisupervised;
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  double weight_decay = 1e-6;
  double tau = 0.5;
  std::uint64_t seed = 0;
  double grad_clip = 5.0;
  std::size_t threads = 1;

  // Ablation hooks for the semi-supervised mode.
  std::optional<std::array<double, 2>> initial_loss_weights;
  bool freeze_loss_weights = false;
  bool detach_contrastive = false;

  void validate() const;
};

/// Labeled training pixels with 0-based class indices.
struct LabeledSet {
  std::vector<Pixel> pixels;
  std::vector<int> targets;
};

/// Pixels whose labels are withheld. Carries no label field by design.
struct UnlabeledSet {
  std::vector<Pixel> pixels;
};

LabeledSet labeled_from(std::span<const LabeledPixel> pixels);
UnlabeledSet unlabeled_from(std::span<const LabeledPixel> pixels);

/// Reduced cube pair plus the augmentation used to draw training views.
struct ViewSource {
  const GroupedCube* reduced = nullptr;
  AugmentConfig augment;
};

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  std::optional<double> supervised_loss;
  std::optional<double> contrastive_loss;
  double fused_loss = 0.0;
  std::optional<std::array<double, 2>> weights;  // values used for this step
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;        // rate of the epoch's first step
  std::optional<double> supervised_loss;
  std::optional<double> contrastive_loss;
  double fused_loss = 0.0;
  std::optional<std::array<double, 2>> weights;  // after the epoch
  std::optional<double> positive_similarity;
  double seconds = 0.0;
};

struct TrainReport {
  Mode mode = Mode::supervised;
  std::size_t total_steps = 0;
  std::vector<EpochRecord> epochs;
  std::vector<StepRecord> steps;

  double final_loss() const;
  /// One JSON object per line: every epoch record, then every step record.
  std::string to_ndjson() const;
};

nlohmann::json to_json(const EpochRecord& r);
nlohmann::json to_json(const StepRecord& r);

/// Builds a model with the heads the mode needs.
Model make_model(const BackboneConfig& cfg, int num_classes, Mode mode, std::uint64_t seed);

/// Number of optimizer steps per epoch for the given stream sizes.
std::size_t steps_per_epoch(std::size_t labeled, std::size_t unlabeled, std::size_t batch_size);

TrainReport train_supervised(Model& model, const ViewSource& source, const LabeledSet& data, const TrainConfig& cfg);
TrainReport train_unsupervised(Model& model, const ViewSource& source, const UnlabeledSet& data,
                               const TrainConfig& cfg);
TrainReport train_semisupervised(Model& model, const ViewSource& source, const LabeledSet& labeled,
                                 const UnlabeledSet& unlabeled, const TrainConfig& cfg);

/// Dispatches on cfg.mode; the stream the mode does not use is ignored.
TrainReport train(Model& model, const ViewSource& source, const LabeledSet& labeled, const UnlabeledSet& unlabeled,
                  const TrainConfig& cfg);

}  // namespace knowcl
