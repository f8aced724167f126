#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "knowcl/config.hpp"
#include "knowcl/evaluator.hpp"
#include "knowcl/spectral.hpp"
#include "knowcl/splitter.hpp"
#include "knowcl/trainer.hpp"

namespace knowcl {

/// Normalized cube and its labels.
struct Scene {
  Cube cube;
  GroundTruth gt;
};

/// Everything training and evaluation consume.
struct Prepared {
  GroundTruth gt;
  Split split;
  PcaModel pca_a;
  PcaModel pca_b;
  GroupedCube reduced;
};

// Artifact locations inside RunConfig::out_dir.
struct ArtifactPaths {
  std::filesystem::path cube, ground_truth, split, pca_a, pca_b;
  std::filesystem::path checkpoint(Mode m) const;
  std::filesystem::path report(Mode m) const;
  std::filesystem::path dir;
};
ArtifactPaths artifact_paths(const RunConfig& cfg);

/// Synthesizes (synth configs) or loads the raw scene, then normalizes it.
Scene build_scene(const RunConfig& cfg);
/// Loads a scene previously written by `synth` (synth configs) or from the
/// configured dataset paths, then normalizes it.
Scene load_scene(const RunConfig& cfg);

Split make_split(const GroundTruth& gt, const RunConfig& cfg);
Prepared prepare(const Scene& scene, const RunConfig& cfg);
/// Rebuilds Prepared from a saved split manifest and PCA models.
Prepared prepare_from(const Scene& scene, const Split& split, const PcaModel& pca_a, const PcaModel& pca_b);

/// Unlabeled stream per config: the training pixels or the whole scene,
/// optionally subsampled to `unlabeled_limit` pixels (keyed by seed, kept in
/// scan order).
UnlabeledSet unlabeled_pool(const Prepared& prep, const RunConfig& cfg);

struct TrainRun {
  Model model;
  TrainReport report;
};
TrainRun run_training(const Prepared& prep, const RunConfig& cfg);

struct EvalResult {
  std::string protocol;
  std::size_t k = 0;  // knn only
  MetricsReport metrics;
  std::vector<int> predictions;  // aligned with prep.split.test
};

/// Runs one protocol ("knn", "linear" or "head") on the test split.
EvalResult evaluate(Model& model, const Prepared& prep, const RunConfig& cfg, const std::string& protocol,
                    std::size_t k);

/// kNN at several k values, sharing one feature extraction.
std::vector<EvalResult> knn_sweep(Model& model, const Prepared& prep, const RunConfig& cfg,
                                  const std::vector<std::size_t>& ks);

/// Predicts every pixel of the scene with a protocol; returns a rows x cols raster.
std::vector<std::int32_t> predict_scene(Model& model, const Prepared& prep, const RunConfig& cfg,
                                        const std::string& protocol, std::size_t k);

/// Nearest class-mean spectral angle on the normalized cube; class means come
/// from the training pixels. Returns test-set metrics.
MetricsReport spectral_angle_baseline(const Scene& scene, const Split& split);

}  // namespace knowcl
