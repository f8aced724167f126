#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "knowcl/datacube.hpp"
#include "knowcl/spectral.hpp"
#include "knowcl/splitter.hpp"

namespace knowcl {

/// Square multi-channel window, values laid out (channel, y, x).
struct Patch {
  std::size_t channels = 0;
  std::size_t size = 0;
  std::vector<float> values;
  Pixel center;
  std::optional<std::int32_t> label;

  Patch() = default;
  Patch(std::size_t channels, std::size_t size) : channels(channels), size(size), values(channels * size * size) {}

  float at(std::size_t ch, std::size_t y, std::size_t x) const noexcept {
    return values[(ch * size + y) * size + x];
  }
  float& at(std::size_t ch, std::size_t y, std::size_t x) noexcept { return values[(ch * size + y) * size + x]; }

  friend bool operator==(const Patch&, const Patch&) = default;
};

struct AugmentConfig {
  std::size_t patch_size = 25;
  std::size_t crop_size = 23;
  std::size_t canonical_size = 24;
  double flip_prob = 0.5;
  double blur_prob = 0.5;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 2.0;
  std::uint64_t seed = 0;

  /// All augmentations off: crop = patch = canonical, no flips, no blur.
  static AugmentConfig disabled(std::size_t patch_size);

  void validate() const;
};

struct ViewPair {
  Patch view_a;
  Patch view_b;
  Pixel center;
};

/// Reflect padding (mirror without repeating the edge pixel) outside the raster.
Patch extract_patch(const Cube& cube, Pixel center, std::size_t size);

/// Random crop -> bilinear resize -> vertical flip -> horizontal flip ->
/// Gaussian blur. Fully determined by `draw_key`.
Patch augment_view(const Patch& patch, const AugmentConfig& cfg, std::uint64_t draw_key);

/// Deterministic evaluation view: centered crop then resize.
Patch center_view(const Patch& patch, const AugmentConfig& cfg);

ViewPair make_view_pair(const GroupedCube& reduced, Pixel center, const AugmentConfig& cfg,
                        std::uint64_t draw_key, std::optional<std::int32_t> label = std::nullopt);

// Individual transforms, exposed for testing.
Patch resize_bilinear(const Patch& patch, std::size_t out_size);
Patch flip_vertical(const Patch& patch);
Patch flip_horizontal(const Patch& patch);
Patch gaussian_blur(const Patch& patch, double sigma);
Patch crop(const Patch& patch, std::size_t y0, std::size_t x0, std::size_t size);

/// Mirror index into [0, n) without repeating the edge sample.
std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) noexcept;

}  // namespace knowcl
