#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "knowcl/datacube.hpp"

namespace knowcl {

struct Pixel {
  std::int32_t row = 0;
  std::int32_t col = 0;
  friend auto operator<=>(const Pixel&, const Pixel&) = default;
};

struct LabeledPixel {
  Pixel at;
  std::int32_t label = 0;  // 1..num_classes
  friend bool operator==(const LabeledPixel&, const LabeledPixel&) = default;
};

/// Disjoint train/test partition of the labeled pixels. Both lists are in
/// row-major scan order.
struct Split {
  std::vector<LabeledPixel> train;
  std::vector<LabeledPixel> test;
  std::vector<double> ratios;  // one per class

  friend bool operator==(const Split&, const Split&) = default;
};

struct ClassCounts {
  std::vector<std::size_t> per_class;  // index k-1 holds class k
  std::size_t unlabeled = 0;
};

ClassCounts class_counts(const GroundTruth& gt);

/// Per class, the first round-half-up(ratio * n_c) labeled pixels in row-major
/// order go to train and the rest to test.
Split split_disjoint(const GroundTruth& gt, double ratio);
Split split_disjoint(const GroundTruth& gt, std::span<const double> per_class_ratios);

/// Round-half-up used for train counts.
std::size_t train_count(double ratio, std::size_t n);

/// Re-checks disjointness, coverage and scan-order precedence against gt.
void validate_split(const Split& split, const GroundTruth& gt);

void save_split(const Split& split, const std::filesystem::path& path);
Split load_split(const std::filesystem::path& path);

}  // namespace knowcl
