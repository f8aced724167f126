#include "knowcl/datacube.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "knowcl/io.hpp"
#include "knowcl/rng.hpp"

namespace knowcl {

namespace fs = std::filesystem;
using nlohmann::json;

Cube::Cube(std::string name_, std::size_t bands_, std::size_t rows_, std::size_t cols_)
    : name(std::move(name_)), bands(bands_), rows(rows_), cols(cols_), values(bands_ * rows_ * cols_, 0.0f) {}

void Cube::validate() const {
  if (bands == 0 || rows == 0 || cols == 0) {
    throw std::invalid_argument("cube dimensions must be positive (bands=" + std::to_string(bands) +
                                ", rows=" + std::to_string(rows) + ", cols=" + std::to_string(cols) + ")");
  }
  if (values.size() != bands * rows * cols) {
    throw std::invalid_argument("cube value count " + std::to_string(values.size()) +
                                " does not match bands*rows*cols = " + std::to_string(bands * rows * cols));
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      const std::size_t b = i / pixels();
      const std::size_t r = (i % pixels()) / cols;
      const std::size_t c = i % cols;
      std::ostringstream msg;
      msg << "non-finite value at (band,row,col)=(" << b << "," << r << "," << c << ")";
      throw std::invalid_argument(msg.str());
    }
  }
}

GroundTruth::GroundTruth(std::size_t rows_, std::size_t cols_, int num_classes_)
    : rows(rows_), cols(cols_), num_classes(num_classes_), labels(rows_ * cols_, 0) {}

void GroundTruth::validate() const {
  if (rows == 0 || cols == 0) {
    throw std::invalid_argument("ground truth dimensions must be positive");
  }
  if (num_classes < 1) {
    throw std::invalid_argument("ground truth num_classes must be positive");
  }
  if (labels.size() != rows * cols) {
    throw std::invalid_argument("ground truth label count does not match rows*cols");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] > num_classes) {
      throw std::invalid_argument("label " + std::to_string(labels[i]) + " at (row,col)=(" +
                                  std::to_string(i / cols) + "," + std::to_string(i % cols) +
                                  ") outside 0.." + std::to_string(num_classes));
    }
  }
  if (!class_names.empty() && class_names.size() != static_cast<std::size_t>(num_classes)) {
    throw std::invalid_argument("class_names must list one name per class");
  }
}

void SynthSpec::validate() const {
  if (rows == 0 || cols == 0 || bands == 0) {
    throw std::invalid_argument("synth: rows, cols and bands must be positive");
  }
  if (num_classes < 2) throw std::invalid_argument("synth: num_classes must be >= 2");
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("synth: noise_sigma must be >= 0");
  if (region_scale < 1) throw std::invalid_argument("synth: region_scale must be >= 1");
  if (!(class_signature_separation >= 0.0)) {
    throw std::invalid_argument("synth: class_signature_separation must be >= 0");
  }
}

RasterPaths raster_paths(const fs::path& path) {
  fs::path base = path;
  if (base.extension() == ".json" || base.extension() == ".raw") {
    base.replace_extension();
  }
  RasterPaths out;
  out.stem = base.filename().string();
  out.sidecar = base;
  out.sidecar += ".json";
  out.raster = base;
  out.raster += ".raw";
  return out;
}

namespace {

std::size_t positive_dim(const json& sidecar, const std::string& key, const std::string& ctx) {
  const auto& v = io::require(sidecar, key, ctx);
  if (!v.is_number_integer() || v.get<long long>() <= 0) {
    throw std::invalid_argument(ctx + ": \"" + key + "\" must be a positive integer");
  }
  return v.get<std::size_t>();
}

void expect_string(const json& sidecar, const std::string& key, const std::string& expected,
                   const std::string& ctx) {
  const auto& v = io::require(sidecar, key, ctx);
  if (!v.is_string() || v.get<std::string>() != expected) {
    throw std::invalid_argument(ctx + ": \"" + key + "\" must be \"" + expected + "\"");
  }
}

void check_size(std::size_t actual, std::size_t expected, const fs::path& raster) {
  if (actual != expected) {
    throw std::invalid_argument("size mismatch: " + raster.string() + " holds " + std::to_string(actual) +
                                " bytes, sidecar implies " + std::to_string(expected));
  }
}

}  // namespace

Cube load_cube(const fs::path& path) {
  const RasterPaths p = raster_paths(path);
  if (!fs::exists(p.sidecar)) throw std::runtime_error("missing file " + p.sidecar.string());
  if (!fs::exists(p.raster)) throw std::runtime_error("missing file " + p.raster.string());
  const json sidecar = io::read_json(p.sidecar);
  const std::string ctx = p.sidecar.string();
  expect_string(sidecar, "dtype", "f32le", ctx);
  expect_string(sidecar, "order", "bsq", ctx);
  Cube cube;
  cube.name = p.stem;
  cube.bands = positive_dim(sidecar, "bands", ctx);
  cube.rows = positive_dim(sidecar, "rows", ctx);
  cube.cols = positive_dim(sidecar, "cols", ctx);
  const auto bytes = io::read_bytes(p.raster);
  check_size(bytes.size(), cube.bands * cube.rows * cube.cols * 4, p.raster);
  cube.values = io::decode_f32le(bytes);
  cube.validate();
  return cube;
}

void save_cube(const Cube& cube, const fs::path& path) {
  cube.validate();
  const RasterPaths p = raster_paths(path);
  const json sidecar = {{"bands", cube.bands},
                        {"rows", cube.rows},
                        {"cols", cube.cols},
                        {"dtype", "f32le"},
                        {"order", "bsq"}};
  std::vector<std::uint8_t> raw;
  io::append_f32le(raw, cube.values);
  io::write_bytes(p.raster, raw);
  io::write_json(p.sidecar, sidecar);
}

GroundTruth load_ground_truth(const fs::path& path) {
  const RasterPaths p = raster_paths(path);
  if (!fs::exists(p.sidecar)) throw std::runtime_error("missing file " + p.sidecar.string());
  if (!fs::exists(p.raster)) throw std::runtime_error("missing file " + p.raster.string());
  const json sidecar = io::read_json(p.sidecar);
  const std::string ctx = p.sidecar.string();
  expect_string(sidecar, "dtype", "i32le", ctx);
  expect_string(sidecar, "order", "rm", ctx);
  GroundTruth gt;
  gt.rows = positive_dim(sidecar, "rows", ctx);
  gt.cols = positive_dim(sidecar, "cols", ctx);
  gt.num_classes = static_cast<int>(positive_dim(sidecar, "num_classes", ctx));
  if (sidecar.contains("class_names")) {
    gt.class_names = sidecar.at("class_names").get<std::vector<std::string>>();
  }
  const auto bytes = io::read_bytes(p.raster);
  check_size(bytes.size(), gt.rows * gt.cols * 4, p.raster);
  gt.labels = io::decode_i32le(bytes);
  gt.validate();
  return gt;
}

void save_ground_truth(const GroundTruth& gt, const fs::path& path) {
  gt.validate();
  const RasterPaths p = raster_paths(path);
  const json sidecar = {{"bands", 1},
                        {"rows", gt.rows},
                        {"cols", gt.cols},
                        {"dtype", "i32le"},
                        {"order", "rm"},
                        {"num_classes", gt.num_classes},
                        {"class_names", gt.class_names}};
  std::vector<std::uint8_t> raw;
  io::append_i32le(raw, gt.labels);
  io::write_bytes(p.raster, raw);
  io::write_json(p.sidecar, sidecar);
}

Cube normalize(const Cube& cube) {
  cube.validate();
  Cube out = cube;
  for (std::size_t b = 0; b < cube.bands; ++b) {
    const auto in = cube.band(b);
    const auto [lo_it, hi_it] = std::minmax_element(in.begin(), in.end());
    const double lo = *lo_it;
    const double range = static_cast<double>(*hi_it) - lo;
    auto dst = out.band(b);
    if (range <= 0.0) {
      std::fill(dst.begin(), dst.end(), 0.0f);
      continue;
    }
    for (std::size_t i = 0; i < in.size(); ++i) {
      dst[i] = static_cast<float>((static_cast<double>(in[i]) - lo) / range);
    }
  }
  return out;
}

namespace {

std::vector<std::vector<double>> draw_signatures(const SynthSpec& spec) {
  // Signatures are positive (spectrum-like), which caps pairwise angles at pi/2.
  if (spec.class_signature_separation >= std::numbers::pi / 2 || (spec.bands == 1 && spec.num_classes > 1 &&
                                                                  spec.class_signature_separation > 0.0)) {
    throw std::invalid_argument("synth: infeasible separation " + std::to_string(spec.class_signature_separation) +
                                " rad for " + std::to_string(spec.num_classes) + " classes in " +
                                std::to_string(spec.bands) + " bands");
  }
  Rng rng(mix_key({spec.seed, 1}));
  const double min_cos = std::cos(spec.class_signature_separation);
  std::vector<std::vector<double>> sigs;
  constexpr int kMaxAttempts = 200000;
  int attempts = 0;
  while (sigs.size() < static_cast<std::size_t>(spec.num_classes)) {
    if (++attempts > kMaxAttempts) {
      throw std::invalid_argument("synth: infeasible separation " +
                                  std::to_string(spec.class_signature_separation) + " rad for " +
                                  std::to_string(spec.num_classes) + " classes in " + std::to_string(spec.bands) +
                                  " bands");
    }
    std::vector<double> v(spec.bands);
    double norm = 0.0;
    for (auto& x : v) {
      x = std::abs(rng.normal());
      norm += x * x;
    }
    norm = std::sqrt(norm);
    if (norm == 0.0) continue;
    for (auto& x : v) x /= norm;
    bool ok = true;
    for (const auto& s : sigs) {
      const double cosine = std::inner_product(s.begin(), s.end(), v.begin(), 0.0);
      if (cosine > min_cos) {
        ok = false;
        break;
      }
    }
    if (ok) sigs.push_back(std::move(v));
  }
  return sigs;
}

}  // namespace

SynthScene synth_cube(const SynthSpec& spec) {
  spec.validate();
  const auto sigs = draw_signatures(spec);

  const std::size_t grid_rows = (spec.rows + spec.region_scale - 1) / spec.region_scale;
  const std::size_t grid_cols = (spec.cols + spec.region_scale - 1) / spec.region_scale;
  const std::size_t blobs = grid_rows * grid_cols;
  if (blobs < static_cast<std::size_t>(spec.num_classes)) {
    throw std::invalid_argument("synth: " + std::to_string(blobs) + " blobs cannot host " +
                                std::to_string(spec.num_classes) + " classes; lower region_scale");
  }
  // Balanced class assignment: blob order is shuffled, classes dealt round-robin.
  std::vector<std::size_t> order(blobs);
  std::iota(order.begin(), order.end(), 0);
  Rng layout_rng(mix_key({spec.seed, 2}));
  shuffle(order.begin(), order.end(), layout_rng);
  std::vector<int> blob_class(blobs);
  for (std::size_t i = 0; i < blobs; ++i) {
    blob_class[order[i]] = static_cast<int>(i % static_cast<std::size_t>(spec.num_classes)) + 1;
  }

  SynthScene scene;
  scene.cube = Cube("synthetic", spec.bands, spec.rows, spec.cols);
  scene.ground_truth = GroundTruth(spec.rows, spec.cols, spec.num_classes);
  for (int k = 1; k <= spec.num_classes; ++k) {
    scene.ground_truth.class_names.push_back("class_" + std::to_string(k));
  }
  for (const auto& s : sigs) scene.signatures.emplace_back(s.begin(), s.end());

  Rng noise_rng(mix_key({spec.seed, 3}));
  for (std::size_t r = 0; r < spec.rows; ++r) {
    for (std::size_t c = 0; c < spec.cols; ++c) {
      const std::size_t blob = (r / spec.region_scale) * grid_cols + c / spec.region_scale;
      const int label = blob_class[blob];
      scene.ground_truth.at(r, c) = label;
      const auto& sig = sigs[static_cast<std::size_t>(label - 1)];
      for (std::size_t b = 0; b < spec.bands; ++b) {
        const double noise = spec.noise_sigma > 0.0 ? spec.noise_sigma * noise_rng.normal() : 0.0;
        scene.cube.at(b, r, c) = static_cast<float>(sig[b] + noise);
      }
    }
  }
  return scene;
}

}  // namespace knowcl
