#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "knowcl/backbone.hpp"
#include "knowcl/datacube.hpp"
#include "knowcl/evaluator.hpp"
#include "knowcl/patcher.hpp"
#include "knowcl/trainer.hpp"

namespace knowcl {

struct DataConfig {
  std::optional<SynthSpec> synth;
  std::filesystem::path cube;          // used when synth is absent
  std::filesystem::path ground_truth;
};

struct SplitConfig {
  double ratio = 0.3;
  std::vector<double> per_class;  // overrides ratio when non-empty
};

enum class PcaFit { scene, train };

struct PcaConfig {
  std::size_t components = 5;  // per spectral group
  PcaFit fit = PcaFit::scene;
};

/// Which pixels feed the unlabeled stream (labels always withheld).
enum class UnlabeledPool { train, scene };

struct TrainSection {
  TrainConfig train;
  UnlabeledPool unlabeled_pool = UnlabeledPool::train;
  std::size_t unlabeled_limit = 0;  // 0 keeps the whole pool
};

struct EvalConfig {
  std::vector<std::string> protocols{"knn"};  // knn, linear, head
  std::size_t k = 5;
  double tau_knn = 0.07;
  std::size_t linear_epochs = 100;
  double linear_lr = 0.01;
  Pooling pooling = Pooling::automatic;
  std::vector<MapScope> maps;
};

struct SweepConfig {
  std::vector<std::size_t> crop_size;
  std::vector<std::size_t> batch_size;
  std::vector<std::size_t> pca_components;
  std::vector<std::size_t> k;
};

struct RunConfig {
  std::string name = "knowcl";
  std::filesystem::path out_dir = "runs/knowcl";
  bool deterministic = true;
  DataConfig data;
  SplitConfig split;
  PcaConfig pca;
  AugmentConfig augment;
  BackboneConfig backbone;
  TrainSection train;
  EvalConfig eval;
  SweepConfig sweep;

  /// Parses and validates. Unknown keys anywhere are rejected; the message
  /// names the key and its section.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  /// Cross-section checks (backbone geometry follows pca and augment).
  void validate() const;

  /// Seed applied to training, augmentation draws and the linear probe.
  void set_seed(std::uint64_t seed);
  /// Worker threads honoring `deterministic` and KNOWCL_THREADS.
  std::size_t threads() const;
};

std::string to_string(PcaFit f);
std::string to_string(UnlabeledPool p);

}  // namespace knowcl
