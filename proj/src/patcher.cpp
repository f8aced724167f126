#include "knowcl/patcher.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "knowcl/rng.hpp"

namespace knowcl {

AugmentConfig AugmentConfig::disabled(std::size_t patch_size) {
  AugmentConfig cfg;
  cfg.patch_size = patch_size;
  cfg.crop_size = patch_size;
  cfg.canonical_size = patch_size;
  cfg.flip_prob = 0.0;
  cfg.blur_prob = 0.0;
  cfg.blur_sigma_min = 0.0;
  cfg.blur_sigma_max = 0.0;
  return cfg;
}

void AugmentConfig::validate() const {
  if (patch_size == 0 || patch_size % 2 == 0) throw std::invalid_argument("augment: patch_size must be odd");
  if (crop_size == 0 || crop_size > patch_size) {
    throw std::invalid_argument("augment: crop_size must lie in 1..patch_size");
  }
  if (canonical_size == 0) throw std::invalid_argument("augment: canonical_size must be positive");
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw std::invalid_argument("augment: flip_prob outside [0,1]");
  if (!(blur_prob >= 0.0 && blur_prob <= 1.0)) throw std::invalid_argument("augment: blur_prob outside [0,1]");
  if (!(blur_sigma_min >= 0.0 && blur_sigma_max >= blur_sigma_min)) {
    throw std::invalid_argument("augment: blur_sigma_range must satisfy 0 <= lo <= hi");
  }
}

std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) noexcept {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < static_cast<std::ptrdiff_t>(n) ? i : period - i);
}

Patch extract_patch(const Cube& cube, Pixel center, std::size_t size) {
  if (size % 2 == 0) throw std::invalid_argument("patch size must be odd, got " + std::to_string(size));
  const std::size_t limit = 2 * std::min(cube.rows, cube.cols) - 1;
  if (size > limit) {
    throw std::invalid_argument("patch size " + std::to_string(size) + " exceeds " + std::to_string(limit) +
                                " for a " + std::to_string(cube.rows) + "x" + std::to_string(cube.cols) + " raster");
  }
  if (center.row < 0 || center.col < 0 || static_cast<std::size_t>(center.row) >= cube.rows ||
      static_cast<std::size_t>(center.col) >= cube.cols) {
    throw std::invalid_argument("patch center outside the raster");
  }
  const auto half = static_cast<std::ptrdiff_t>(size / 2);
  Patch patch(cube.bands, size);
  patch.center = center;
  std::vector<std::size_t> rows(size), cols(size);
  for (std::size_t k = 0; k < size; ++k) {
    rows[k] = reflect_index(center.row - half + static_cast<std::ptrdiff_t>(k), cube.rows);
    cols[k] = reflect_index(center.col - half + static_cast<std::ptrdiff_t>(k), cube.cols);
  }
  for (std::size_t b = 0; b < cube.bands; ++b) {
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) patch.at(b, y, x) = cube.at(b, rows[y], cols[x]);
    }
  }
  return patch;
}

Patch crop(const Patch& patch, std::size_t y0, std::size_t x0, std::size_t size) {
  if (y0 + size > patch.size || x0 + size > patch.size) throw std::invalid_argument("crop outside the patch");
  Patch out(patch.channels, size);
  out.center = patch.center;
  out.label = patch.label;
  for (std::size_t ch = 0; ch < patch.channels; ++ch) {
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) out.at(ch, y, x) = patch.at(ch, y0 + y, x0 + x);
    }
  }
  return out;
}

Patch resize_bilinear(const Patch& patch, std::size_t out_size) {
  if (out_size == patch.size) return patch;
  Patch out(patch.channels, out_size);
  out.center = patch.center;
  out.label = patch.label;
  const double scale = static_cast<double>(patch.size) / static_cast<double>(out_size);
  struct Tap {
    std::size_t i0, i1;
    float w1;
  };
  std::vector<Tap> taps(out_size);
  for (std::size_t o = 0; o < out_size; ++o) {
    // Half-pixel centers, matching align_corners=False.
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    src = std::max(src, 0.0);
    auto i0 = static_cast<std::size_t>(std::floor(src));
    i0 = std::min(i0, patch.size - 1);
    const std::size_t i1 = std::min(i0 + 1, patch.size - 1);
    taps[o] = {i0, i1, static_cast<float>(src - static_cast<double>(i0))};
  }
  for (std::size_t ch = 0; ch < patch.channels; ++ch) {
    for (std::size_t y = 0; y < out_size; ++y) {
      const auto& ty = taps[y];
      for (std::size_t x = 0; x < out_size; ++x) {
        const auto& tx = taps[x];
        const float top = patch.at(ch, ty.i0, tx.i0) * (1.0f - tx.w1) + patch.at(ch, ty.i0, tx.i1) * tx.w1;
        const float bot = patch.at(ch, ty.i1, tx.i0) * (1.0f - tx.w1) + patch.at(ch, ty.i1, tx.i1) * tx.w1;
        out.at(ch, y, x) = top * (1.0f - ty.w1) + bot * ty.w1;
      }
    }
  }
  return out;
}

Patch flip_vertical(const Patch& patch) {
  Patch out = patch;
  for (std::size_t ch = 0; ch < patch.channels; ++ch) {
    for (std::size_t y = 0; y < patch.size; ++y) {
      for (std::size_t x = 0; x < patch.size; ++x) out.at(ch, y, x) = patch.at(ch, patch.size - 1 - y, x);
    }
  }
  return out;
}

Patch flip_horizontal(const Patch& patch) {
  Patch out = patch;
  for (std::size_t ch = 0; ch < patch.channels; ++ch) {
    for (std::size_t y = 0; y < patch.size; ++y) {
      for (std::size_t x = 0; x < patch.size; ++x) out.at(ch, y, x) = patch.at(ch, y, patch.size - 1 - x);
    }
  }
  return out;
}

Patch gaussian_blur(const Patch& patch, double sigma) {
  if (!(sigma > 0.0)) return patch;
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
    const double w = std::exp(-static_cast<double>(k * k) / (2.0 * sigma * sigma));
    kernel[static_cast<std::size_t>(k + radius)] = w;
    total += w;
  }
  for (auto& w : kernel) w /= total;

  const std::size_t n = patch.size;
  Patch tmp = patch;
  Patch out = patch;
  for (std::size_t ch = 0; ch < patch.channels; ++ch) {
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
          acc += kernel[static_cast<std::size_t>(k + radius)] *
                 patch.at(ch, y, reflect_index(static_cast<std::ptrdiff_t>(x) + k, n));
        }
        tmp.at(ch, y, x) = static_cast<float>(acc);
      }
    }
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
          acc += kernel[static_cast<std::size_t>(k + radius)] *
                 tmp.at(ch, reflect_index(static_cast<std::ptrdiff_t>(y) + k, n), x);
        }
        out.at(ch, y, x) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

Patch augment_view(const Patch& patch, const AugmentConfig& cfg, std::uint64_t draw_key) {
  if (cfg.crop_size > patch.size) {
    throw std::invalid_argument("crop_size " + std::to_string(cfg.crop_size) + " exceeds patch size " +
                                std::to_string(patch.size));
  }
  // Every draw is consumed unconditionally so the stream layout is fixed.
  Rng rng(mix_key({cfg.seed, draw_key}));
  const std::size_t slack = patch.size - cfg.crop_size;
  const auto y0 = static_cast<std::size_t>(rng.below(slack + 1));
  const auto x0 = static_cast<std::size_t>(rng.below(slack + 1));
  const bool vflip = rng.bernoulli(cfg.flip_prob);
  const bool hflip = rng.bernoulli(cfg.flip_prob);
  const bool blur = rng.bernoulli(cfg.blur_prob);
  const double sigma = rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max);

  Patch out = resize_bilinear(crop(patch, y0, x0, cfg.crop_size), cfg.canonical_size);
  if (vflip) out = flip_vertical(out);
  if (hflip) out = flip_horizontal(out);
  if (blur) out = gaussian_blur(out, sigma);
  return out;
}

Patch center_view(const Patch& patch, const AugmentConfig& cfg) {
  if (cfg.crop_size > patch.size) throw std::invalid_argument("crop_size exceeds patch size");
  const std::size_t off = (patch.size - cfg.crop_size) / 2;
  return resize_bilinear(crop(patch, off, off, cfg.crop_size), cfg.canonical_size);
}

ViewPair make_view_pair(const GroupedCube& reduced, Pixel center, const AugmentConfig& cfg,
                        std::uint64_t draw_key, std::optional<std::int32_t> label) {
  if (reduced.group_a.bands != reduced.group_b.bands) {
    throw std::invalid_argument("view groups must have equal channel counts (" +
                                std::to_string(reduced.group_a.bands) + " vs " +
                                std::to_string(reduced.group_b.bands) + ")");
  }
  ViewPair pair;
  pair.center = center;
  Patch a = extract_patch(reduced.group_a, center, cfg.patch_size);
  Patch b = extract_patch(reduced.group_b, center, cfg.patch_size);
  a.label = label;
  b.label = label;
  pair.view_a = augment_view(a, cfg, mix_key({draw_key, 0}));
  pair.view_b = augment_view(b, cfg, mix_key({draw_key, 1}));
  return pair;
}

}  // namespace knowcl
