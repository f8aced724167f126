#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "knowcl/datacube.hpp"
#include "knowcl/splitter.hpp"

namespace knowcl {

/// The two spectral observations of one scene.
struct GroupedCube {
  Cube group_a;  // bands [0, ceil(C/2))
  Cube group_b;  // bands [ceil(C/2), C)
};

GroupedCube group_bands(const Cube& cube);

struct PcaModel {
  std::size_t input_bands = 0;
  std::size_t n_components = 0;
  std::vector<float> mean;                 // input_bands
  std::vector<float> components;           // n_components x input_bands, row-major
  std::vector<double> explained_variance;  // n_components, non-increasing

  float component(std::size_t i, std::size_t b) const noexcept { return components[i * input_bands + b]; }

  friend bool operator==(const PcaModel&, const PcaModel&) = default;
};

/// Fits on every pixel of the cube.
PcaModel fit_pca(const Cube& cube, std::size_t n_components);
/// Fits on a subset of pixels (the `pca_fit: train` switch).
PcaModel fit_pca(const Cube& cube, std::size_t n_components, std::span<const Pixel> pixels);

/// value = components * (pixel - mean), band-sequential output.
Cube apply_pca(const PcaModel& model, const Cube& cube);

/// Sidecar JSON with dims and explained variance, plus a raw f32le block
/// holding the mean followed by the row-major components.
void save_pca(const PcaModel& model, const std::filesystem::path& path);
PcaModel load_pca(const std::filesystem::path& path);

}  // namespace knowcl
