#include <doctest.h>

#include <cmath>

#include "knowcl/io.hpp"
#include "knowcl/patcher.hpp"
#include "knowcl/spectral.hpp"
#include "oracles.hpp"
#include "scratch.hpp"

using namespace knowcl;

namespace {

Cube random_cube(Rng& rng, std::size_t bands, std::size_t rows, std::size_t cols) {
  Cube c("r", bands, rows, cols);
  // Correlated bands so the spectrum is not flat.
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t col = 0; col < cols; ++col) {
      const double a = rng.normal(), b = rng.normal();
      for (std::size_t k = 0; k < bands; ++k) {
        c.at(k, r, col) = static_cast<float>(a * std::sin(0.3 * double(k)) + 0.5 * b * double(k) / bands +
                                             0.1 * rng.normal());
      }
    }
  }
  return c;
}

oracle::Rows covariance(const Cube& c) {
  const std::size_t n = c.pixels();
  std::vector<double> mean(c.bands, 0.0);
  for (std::size_t k = 0; k < c.bands; ++k)
    for (float v : c.band(k)) mean[k] += v;
  for (auto& m : mean) m /= double(n);
  oracle::Rows cov(c.bands, std::vector<double>(c.bands, 0.0));
  for (std::size_t i = 0; i < c.bands; ++i)
    for (std::size_t j = 0; j < c.bands; ++j) {
      long double s = 0;
      for (std::size_t p = 0; p < n; ++p) s += (c.band(i)[p] - mean[i]) * (c.band(j)[p] - mean[j]);
      cov[i][j] = double(s / (n - 1));
    }
  return cov;
}

}  // namespace

TEST_CASE("band grouping puts the extra band in group A") {
  Cube c("g", 5, 2, 3);
  for (std::size_t i = 0; i < c.values.size(); ++i) c.values[i] = float(i);
  const GroupedCube g = group_bands(c);
  CHECK(g.group_a.bands == 3);
  CHECK(g.group_b.bands == 2);
  CHECK(g.group_a.at(2, 1, 2) == c.at(2, 1, 2));
  CHECK(g.group_b.at(0, 0, 0) == c.at(3, 0, 0));
  CHECK_THROWS_AS(group_bands(Cube("x", 1, 2, 2)), std::invalid_argument);
}

TEST_CASE("PCA agrees with a Jacobi eigendecomposition") {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t bands = 2 + rng.below(15);
    const Cube c = random_cube(rng, bands, 12, 15);
    const PcaModel m = fit_pca(c, bands);
    const oracle::EigenPairs ref = oracle::jacobi(covariance(c));
    for (std::size_t i = 0; i < bands; ++i) {
      CHECK(m.explained_variance[i] == doctest::Approx(ref.values[i]).epsilon(1e-6).scale(1e-6));
      if (i + 1 < bands && std::abs(ref.values[i] - ref.values[i + 1]) < 1e-6) continue;
      double d = 0;
      for (std::size_t b = 0; b < bands; ++b) d += m.component(i, b) * ref.vectors[i][b];
      const double sign = d < 0 ? -1.0 : 1.0;
      for (std::size_t b = 0; b < bands; ++b) CHECK(std::abs(m.component(i, b) - sign * ref.vectors[i][b]) < 1e-6);
    }
    for (std::size_t i = 0; i < bands; ++i)
      for (std::size_t j = 0; j < bands; ++j) {
        double d = 0;
        for (std::size_t b = 0; b < bands; ++b) d += double(m.component(i, b)) * m.component(j, b);
        CHECK(std::abs(d - (i == j ? 1.0 : 0.0)) < 1e-5);
      }
    CHECK(std::is_sorted(m.explained_variance.rbegin(), m.explained_variance.rend()));
  }
}

TEST_CASE("full-rank PCA reconstructs the cube") {
  Rng rng(2);
  const Cube c = random_cube(rng, 8, 10, 9);
  const PcaModel m = fit_pca(c, 8);
  const Cube y = apply_pca(m, c);
  for (std::size_t p = 0; p < c.pixels(); ++p) {
    for (std::size_t b = 0; b < 8; ++b) {
      double x = m.mean[b];
      for (std::size_t i = 0; i < 8; ++i) x += double(m.component(i, b)) * y.band(i)[p];
      CHECK(std::abs(x - c.band(b)[p]) < 1e-4);
    }
  }
}

TEST_CASE("PCA fit on a pixel subset and file round-trip") {
  test::Scratch dir("pca");
  Rng rng(9);
  const Cube c = random_cube(rng, 6, 8, 8);
  std::vector<Pixel> subset;
  for (std::int32_t r = 0; r < 4; ++r)
    for (std::int32_t col = 0; col < 8; ++col) subset.push_back({r, col});
  const PcaModel part = fit_pca(c, 3, subset);
  Cube top("t", 6, 4, 8);
  for (std::size_t b = 0; b < 6; ++b)
    for (std::size_t i = 0; i < 32; ++i) top.band(b)[i] = c.band(b)[i];
  CHECK(part == fit_pca(top, 3));
  save_pca(part, dir.path / "a.json");
  CHECK(load_pca(dir.path / "a") == part);
  save_pca(load_pca(dir.path / "a"), dir.path / "b");
  CHECK(io::read_bytes(dir.path / "a.raw") == io::read_bytes(dir.path / "b.raw"));
  CHECK_THROWS_AS(fit_pca(c, 7), std::invalid_argument);
  CHECK_THROWS_AS(apply_pca(part, Cube("x", 5, 2, 2)), std::invalid_argument);
}

TEST_CASE("patch extraction equals pad-then-slice") {
  Rng rng(12);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t rows = 2 + rng.below(12), cols = 2 + rng.below(12), ch = 1 + rng.below(3);
    Cube c("p", ch, rows, cols);
    for (auto& v : c.values) v = float(rng.uniform());
    const std::size_t size = 1 + 2 * rng.below(std::min(rows, cols));  // pad < extent
    const std::size_t pad = size / 2;
    // Mirror padding without repeating the edge.
    const std::size_t pr = rows + 2 * pad, pc = cols + 2 * pad;
    std::vector<float> padded(ch * pr * pc);
    auto mirror = [](long i, long n) {
      while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
      return i;
    };
    for (std::size_t k = 0; k < ch; ++k)
      for (std::size_t y = 0; y < pr; ++y)
        for (std::size_t x = 0; x < pc; ++x)
          padded[(k * pr + y) * pc + x] = c.at(k, mirror(long(y) - long(pad), long(rows)), mirror(long(x) - long(pad), long(cols)));
    const Pixel at{static_cast<std::int32_t>(rng.below(rows)), static_cast<std::int32_t>(rng.below(cols))};
    const Patch p = extract_patch(c, at, size);
    CHECK(p.center == at);
    for (std::size_t k = 0; k < ch; ++k)
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x)
          CHECK(p.at(k, y, x) == padded[(k * pr + at.row + y) * pc + at.col + x]);
  }
  CHECK(reflect_index(-1, 5) == 1);
  CHECK(reflect_index(5, 5) == 3);
  CHECK(reflect_index(-3, 1) == 0);
}

TEST_CASE("view transforms") {
  Rng rng(1);
  Patch p(2, 7);
  for (auto& v : p.values) v = float(rng.uniform());
  CHECK(flip_vertical(flip_vertical(p)) == p);
  CHECK(flip_horizontal(flip_horizontal(p)) == p);
  CHECK(flip_horizontal(p).at(1, 2, 0) == p.at(1, 2, 6));
  CHECK(resize_bilinear(p, 7) == p);
  CHECK(crop(p, 1, 2, 3).at(0, 0, 0) == p.at(0, 1, 2));

  Patch flat(1, 9);
  std::fill(flat.values.begin(), flat.values.end(), 0.25f);
  const Patch blurred = gaussian_blur(flat, 1.3);
  for (float v : blurred.values) CHECK(v == doctest::Approx(0.25f).epsilon(1e-6));
  const Patch up = resize_bilinear(flat, 24);
  for (float v : up.values) CHECK(v == doctest::Approx(0.25f).epsilon(1e-6));
  // Blur preserves the mean of a mirrored signal only approximately; it must smooth.
  Patch spike(1, 9);
  spike.at(0, 4, 4) = 1.0f;
  const Patch s = gaussian_blur(spike, 1.0);
  CHECK(s.at(0, 4, 4) < 1.0f);
  CHECK(s.at(0, 4, 5) > 0.0f);
  CHECK(s.at(0, 4, 5) == doctest::Approx(s.at(0, 5, 4)));
}

TEST_CASE("augmentation is keyed") {
  AugmentConfig cfg;
  Rng rng(3);
  Patch p(3, 25);
  for (auto& v : p.values) v = float(rng.uniform());
  const Patch a = augment_view(p, cfg, 42);
  CHECK(a.size == 24);
  CHECK(a.channels == 3);
  CHECK(augment_view(p, cfg, 42) == a);
  CHECK_FALSE(augment_view(p, cfg, 43) == a);
  cfg.seed = 5;
  CHECK_FALSE(augment_view(p, cfg, 42) == a);
  const AugmentConfig off = AugmentConfig::disabled(25);
  CHECK(augment_view(p, off, 7) == p);
  CHECK(center_view(p, off) == p);
  AugmentConfig bad;
  bad.crop_size = 27;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = AugmentConfig{};
  bad.patch_size = 24;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("view pairs draw group A and group B with separate keys") {
  Rng rng(6);
  GroupedCube g{random_cube(rng, 4, 10, 10), random_cube(rng, 4, 10, 10)};
  const AugmentConfig off = AugmentConfig::disabled(5);
  const ViewPair v = make_view_pair(g, {3, 4}, off, 1, 2);
  CHECK(v.view_a.values == extract_patch(g.group_a, {3, 4}, 5).values);
  CHECK(v.view_b.values == extract_patch(g.group_b, {3, 4}, 5).values);
  CHECK(v.view_a.label == 2);
  GroupedCube uneven{random_cube(rng, 4, 10, 10), random_cube(rng, 3, 10, 10)};
  CHECK_THROWS_AS(make_view_pair(uneven, {0, 0}, off, 1), std::invalid_argument);
}
