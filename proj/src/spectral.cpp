#include "knowcl/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

#include "knowcl/io.hpp"

namespace knowcl {

using nlohmann::json;

GroupedCube group_bands(const Cube& cube) {
  cube.validate();
  if (cube.bands < 2) {
    throw std::invalid_argument("group_bands needs at least 2 bands, got " + std::to_string(cube.bands));
  }
  const std::size_t split = (cube.bands + 1) / 2;
  GroupedCube out;
  out.group_a = Cube(cube.name + "_a", split, cube.rows, cube.cols);
  out.group_b = Cube(cube.name + "_b", cube.bands - split, cube.rows, cube.cols);
  const std::size_t px = cube.pixels();
  std::copy_n(cube.values.begin(), split * px, out.group_a.values.begin());
  std::copy_n(cube.values.begin() + static_cast<std::ptrdiff_t>(split * px), (cube.bands - split) * px,
              out.group_b.values.begin());
  return out;
}

namespace {

PcaModel fit_from_rows(const Cube& cube, std::size_t n_components, std::span<const std::size_t> pixel_index) {
  cube.validate();
  const std::size_t bands = cube.bands;
  if (n_components < 1 || n_components > bands) {
    throw std::invalid_argument("n_components " + std::to_string(n_components) + " must lie in 1.." +
                                std::to_string(bands));
  }
  const std::size_t n = pixel_index.size();
  if (n < n_components + 1) {
    throw std::invalid_argument("PCA needs at least n_components + 1 pixels");
  }

  // Double-precision accumulation with a fixed reduction order per band.
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(bands));
  for (std::size_t b = 0; b < bands; ++b) {
    const auto band = cube.band(b);
    double s = 0.0;
    for (std::size_t i : pixel_index) s += band[i];
    mean[static_cast<Eigen::Index>(b)] = s / static_cast<double>(n);
  }
  Eigen::MatrixXd centered(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(bands));
  for (std::size_t b = 0; b < bands; ++b) {
    const auto band = cube.band(b);
    for (std::size_t j = 0; j < n; ++j) {
      centered(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(b)) =
          band[pixel_index[j]] - mean[static_cast<Eigen::Index>(b)];
    }
  }
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) {
    throw std::runtime_error("PCA eigendecomposition failed");
  }
  // Eigen returns ascending eigenvalues.
  PcaModel model;
  model.input_bands = bands;
  model.n_components = n_components;
  model.mean.resize(bands);
  for (std::size_t b = 0; b < bands; ++b) model.mean[b] = static_cast<float>(mean[static_cast<Eigen::Index>(b)]);
  model.components.resize(n_components * bands);
  model.explained_variance.resize(n_components);
  for (std::size_t i = 0; i < n_components; ++i) {
    const auto col = static_cast<Eigen::Index>(bands - 1 - i);
    Eigen::VectorXd v = solver.eigenvectors().col(col);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    for (std::size_t b = 0; b < bands; ++b) {
      model.components[i * bands + b] = static_cast<float>(v[static_cast<Eigen::Index>(b)]);
    }
    model.explained_variance[i] = std::max(0.0, solver.eigenvalues()[col]);
  }
  return model;
}

}  // namespace

PcaModel fit_pca(const Cube& cube, std::size_t n_components) {
  std::vector<std::size_t> all(cube.pixels());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return fit_from_rows(cube, n_components, all);
}

PcaModel fit_pca(const Cube& cube, std::size_t n_components, std::span<const Pixel> pixels) {
  std::vector<std::size_t> index;
  index.reserve(pixels.size());
  for (const auto& p : pixels) {
    if (p.row < 0 || p.col < 0 || static_cast<std::size_t>(p.row) >= cube.rows ||
        static_cast<std::size_t>(p.col) >= cube.cols) {
      throw std::invalid_argument("PCA fit pixel outside the raster");
    }
    index.push_back(static_cast<std::size_t>(p.row) * cube.cols + static_cast<std::size_t>(p.col));
  }
  return fit_from_rows(cube, n_components, index);
}

Cube apply_pca(const PcaModel& model, const Cube& cube) {
  cube.validate();
  if (cube.bands != model.input_bands) {
    throw std::invalid_argument("band mismatch: model expects " + std::to_string(model.input_bands) +
                                " bands, cube has " + std::to_string(cube.bands));
  }
  const auto px = static_cast<Eigen::Index>(cube.pixels());
  const auto bands = static_cast<Eigen::Index>(cube.bands);
  const auto nc = static_cast<Eigen::Index>(model.n_components);
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  // Band-sequential layout is already (bands x pixels) row-major.
  const RowMajor x = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                         cube.values.data(), bands, px)
                         .cast<double>();
  const RowMajor w = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                         model.components.data(), nc, bands)
                         .cast<double>();
  Eigen::VectorXd mean(bands);
  for (Eigen::Index b = 0; b < bands; ++b) mean[b] = model.mean[static_cast<std::size_t>(b)];
  const RowMajor y = w * (x.colwise() - mean);
  Cube out(cube.name + "_pca", model.n_components, cube.rows, cube.cols);
  Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(out.values.data(), nc, px) =
      y.cast<float>();
  return out;
}

void save_pca(const PcaModel& model, const std::filesystem::path& path) {
  const RasterPaths p = raster_paths(path);
  const json sidecar = {{"input_bands", model.input_bands},
                        {"n_components", model.n_components},
                        {"dtype", "f32le"},
                        {"layout", "mean,components"},
                        {"explained_variance", model.explained_variance}};
  std::vector<std::uint8_t> raw;
  io::append_f32le(raw, model.mean);
  io::append_f32le(raw, model.components);
  io::write_bytes(p.raster, raw);
  io::write_json(p.sidecar, sidecar);
}

PcaModel load_pca(const std::filesystem::path& path) {
  const RasterPaths p = raster_paths(path);
  const json sidecar = io::read_json(p.sidecar);
  const std::string ctx = p.sidecar.string();
  PcaModel model;
  model.input_bands = io::require(sidecar, "input_bands", ctx).get<std::size_t>();
  model.n_components = io::require(sidecar, "n_components", ctx).get<std::size_t>();
  model.explained_variance = io::require(sidecar, "explained_variance", ctx).get<std::vector<double>>();
  const auto values = io::decode_f32le(io::read_bytes(p.raster));
  if (values.size() != model.input_bands * (model.n_components + 1) ||
      model.explained_variance.size() != model.n_components) {
    throw std::invalid_argument("size mismatch in PCA model " + p.raster.string());
  }
  model.mean.assign(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(model.input_bands));
  model.components.assign(values.begin() + static_cast<std::ptrdiff_t>(model.input_bands), values.end());
  return model;
}

}  // namespace knowcl
