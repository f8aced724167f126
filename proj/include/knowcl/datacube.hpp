#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace knowcl {

/// Hyperspectral raster stored band-sequential: values[(b * rows + r) * cols + c].
struct Cube {
  std::string name;
  std::size_t bands = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;

  Cube() = default;
  Cube(std::string name, std::size_t bands, std::size_t rows, std::size_t cols);

  std::size_t pixels() const noexcept { return rows * cols; }

  float at(std::size_t b, std::size_t r, std::size_t c) const noexcept {
    return values[(b * rows + r) * cols + c];
  }
  float& at(std::size_t b, std::size_t r, std::size_t c) noexcept {
    return values[(b * rows + r) * cols + c];
  }

  std::span<const float> band(std::size_t b) const noexcept {
    return {values.data() + b * pixels(), pixels()};
  }
  std::span<float> band(std::size_t b) noexcept { return {values.data() + b * pixels(), pixels()}; }

  /// Throws std::invalid_argument on empty dimensions, a size mismatch, or a
  /// non-finite value (the message names the offending (band,row,col)).
  void validate() const;

  friend bool operator==(const Cube&, const Cube&) = default;
};

/// Integer label raster aligned with a Cube; 0 marks unlabeled pixels.
struct GroundTruth {
  std::size_t rows = 0;
  std::size_t cols = 0;
  int num_classes = 0;
  std::vector<std::int32_t> labels;
  std::vector<std::string> class_names;

  GroundTruth() = default;
  GroundTruth(std::size_t rows, std::size_t cols, int num_classes);

  std::int32_t at(std::size_t r, std::size_t c) const noexcept { return labels[r * cols + c]; }
  std::int32_t& at(std::size_t r, std::size_t c) noexcept { return labels[r * cols + c]; }

  void validate() const;

  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

struct SynthSpec {
  std::size_t rows = 64;
  std::size_t cols = 64;
  std::size_t bands = 32;
  int num_classes = 4;
  double class_signature_separation = 0.5;  // radians
  double noise_sigma = 0.05;
  std::size_t region_scale = 16;
  std::uint64_t seed = 7;

  void validate() const;
};

struct SynthScene {
  Cube cube;
  GroundTruth ground_truth;
  /// Unit-norm class mean spectra, one row per class (index 0 is class 1).
  std::vector<std::vector<float>> signatures;
};

/// Resolves "<dir>/<name>", "<dir>/<name>.json" or "<dir>/<name>.raw" to the
/// sidecar and raster paths of a pair.
struct RasterPaths {
  std::filesystem::path sidecar;
  std::filesystem::path raster;
  std::string stem;
};
RasterPaths raster_paths(const std::filesystem::path& path);

Cube load_cube(const std::filesystem::path& path);
void save_cube(const Cube& cube, const std::filesystem::path& path);

GroundTruth load_ground_truth(const std::filesystem::path& path);
void save_ground_truth(const GroundTruth& gt, const std::filesystem::path& path);

/// Per-band min-max scaling to [0, 1]. Constant bands become all zeros.
Cube normalize(const Cube& cube);

/// Deterministic blob-tiled scene: every pixel of a class shares the class
/// signature plus i.i.d. Gaussian noise.
SynthScene synth_cube(const SynthSpec& spec);

}  // namespace knowcl
