#include "knowcl/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <png.h>

#include "knowcl/losses.hpp"
#include "knowcl/optim.hpp"
#include "knowcl/parallel.hpp"

namespace knowcl {

std::string to_string(Pooling p) {
  switch (p) {
    case Pooling::automatic: return "auto";
    case Pooling::cls: return "cls";
    case Pooling::mean: return "mean";
  }
  throw std::invalid_argument("unknown pooling");
}

Pooling pooling_from_string(const std::string& s) {
  for (Pooling p : {Pooling::automatic, Pooling::cls, Pooling::mean}) {
    if (to_string(p) == s) return p;
  }
  throw std::invalid_argument("unknown pooling \"" + s + "\" (expected auto, cls or mean)");
}

Pooling resolve_pooling(const Model& model, Pooling p) {
  if (p != Pooling::automatic) return p;
  return model.supervised ? Pooling::cls : Pooling::mean;
}

void FeatureBank::validate() const {
  const auto n = static_cast<Eigen::Index>(coords.size());
  if (features.rows() != n || labels.size() != coords.size()) throw std::invalid_argument("feature bank: size mismatch");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(features.row(i).norm() - 1.0f) > 1e-5f) {
      throw std::invalid_argument("feature bank: row " + std::to_string(i) + " is not unit norm");
    }
  }
}

namespace {

constexpr std::size_t kEvalChunk = 256;

nn::Mat<float> center_views(const GroupedCube& reduced, const AugmentConfig& augment, std::span<const Pixel> pixels,
                            std::size_t threads) {
  const std::size_t width = reduced.group_a.bands * augment.canonical_size * augment.canonical_size;
  nn::Mat<float> x(static_cast<Eigen::Index>(pixels.size()), static_cast<Eigen::Index>(width));
  parallel_for(pixels.size(), threads, [&](std::size_t i) {
    const Patch v = center_view(extract_patch(reduced.group_a, pixels[i], augment.patch_size), augment);
    std::copy(v.values.begin(), v.values.end(), x.row(static_cast<Eigen::Index>(i)).data());
  });
  return x;
}

void check_geometry(const Model& model, const GroupedCube& reduced, const AugmentConfig& augment) {
  if (reduced.group_a.bands != model.config.in_channels || augment.canonical_size != model.config.input_size) {
    throw std::invalid_argument("evaluation pipeline (channels " + std::to_string(reduced.group_a.bands) + ", size " +
                                std::to_string(augment.canonical_size) + ") does not match the checkpoint (" +
                                std::to_string(model.config.in_channels) + ", " +
                                std::to_string(model.config.input_size) + ")");
  }
}

}  // namespace

nn::Mat<float> embed_pixels(Model& model, const GroupedCube& reduced, const AugmentConfig& augment,
                            std::span<const Pixel> pixels, Pooling pooling, std::size_t threads) {
  check_geometry(model, reduced, augment);
  const Pooling pool = resolve_pooling(model, pooling);
  nn::Mat<float> out(static_cast<Eigen::Index>(pixels.size()), static_cast<Eigen::Index>(model.encoder->embed_dim()));
  for (std::size_t s = 0; s < pixels.size(); s += kEvalChunk) {
    const std::size_t n = std::min(kEvalChunk, pixels.size() - s);
    const nn::Mat<float> x = center_views(reduced, augment, pixels.subspan(s, n), threads);
    const Encoded<float> enc = model.encoder->forward(x, {}, false);
    out.middleRows(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(n)) =
        pool == Pooling::cls ? enc.cls : enc.mean;
  }
  return out;
}

FeatureBank extract_features(Model& model, const GroupedCube& reduced, const AugmentConfig& augment,
                             std::span<const Pixel> pixels, Pooling pooling, std::size_t threads) {
  FeatureBank bank;
  bank.coords.assign(pixels.begin(), pixels.end());
  bank.labels.assign(pixels.size(), 0);
  bank.features = l2_normalize_rows(embed_pixels(model, reduced, augment, pixels, pooling, threads));
  return bank;
}

FeatureBank extract_features(Model& model, const GroupedCube& reduced, const AugmentConfig& augment,
                             std::span<const LabeledPixel> pixels, Pooling pooling, std::size_t threads) {
  std::vector<Pixel> coords;
  coords.reserve(pixels.size());
  for (const auto& p : pixels) coords.push_back(p.at);
  FeatureBank bank = extract_features(model, reduced, augment, coords, pooling, threads);
  for (std::size_t i = 0; i < pixels.size(); ++i) bank.labels[i] = pixels[i].label;
  return bank;
}

std::vector<int> knn_predict(const FeatureBank& bank, const FeatureBank& queries, std::size_t k, double tau_knn,
                             std::size_t threads) {
  const std::size_t n = bank.size();
  if (n == 0) throw std::invalid_argument("knn: empty feature bank");
  if (k < 1 || k > n) {
    throw std::invalid_argument("knn: k = " + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  }
  if (!(tau_knn > 0.0)) throw std::invalid_argument("knn: tau_knn must be positive");
  if (queries.size() > 0 && queries.features.cols() != bank.features.cols()) {
    throw std::invalid_argument("knn: feature width mismatch");
  }
  if (*std::min_element(bank.labels.begin(), bank.labels.end()) < 1) {
    throw std::invalid_argument("knn: bank rows need class labels >= 1");
  }
  const int max_label = *std::max_element(bank.labels.begin(), bank.labels.end());
  const auto d = static_cast<std::size_t>(bank.features.cols());
  std::vector<int> out(queries.size(), 0);
  parallel_for(queries.size(), threads, [&](std::size_t q) {
    const float* qv = queries.features.row(static_cast<Eigen::Index>(q)).data();
    std::vector<double> sim(n);
    for (std::size_t i = 0; i < n; ++i) {
      const float* bv = bank.features.row(static_cast<Eigen::Index>(i)).data();
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += static_cast<double>(qv[j]) * static_cast<double>(bv[j]);
      sim[i] = s;
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) { return sim[a] > sim[b] || (sim[a] == sim[b] && a < b); });
    std::vector<double> score(static_cast<std::size_t>(max_label) + 1, 0.0);
    for (std::size_t i = 0; i < k; ++i) score[static_cast<std::size_t>(bank.labels[order[i]])] += std::exp(sim[order[i]] / tau_knn);
    int best = -1;
    for (int c = 0; c <= max_label; ++c) {
      if (score[static_cast<std::size_t>(c)] <= 0.0) continue;
      if (best < 0 || score[static_cast<std::size_t>(c)] > score[static_cast<std::size_t>(best)]) best = c;
    }
    out[q] = best;
  });
  return out;
}

std::vector<int> head_predict(Model& model, const GroupedCube& reduced, const AugmentConfig& augment,
                              std::span<const Pixel> pixels, std::size_t threads) {
  if (!model.supervised) throw std::invalid_argument("head protocol: checkpoint has no supervised head");
  const nn::Mat<float> h = embed_pixels(model, reduced, augment, pixels, Pooling::cls, threads);
  const nn::Mat<float> logits = model.supervised->forward(h, {}, false);
  std::vector<int> out(pixels.size());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index arg = 0;
    logits.row(i).maxCoeff(&arg);
    out[static_cast<std::size_t>(i)] = static_cast<int>(arg) + 1;
  }
  return out;
}

std::int64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
}

ConfusionMatrix confusion(std::span<const int> predicted, std::span<const int> truth, int num_classes) {
  if (predicted.size() != truth.size()) {
    throw std::invalid_argument("confusion: " + std::to_string(predicted.size()) + " predictions for " +
                                std::to_string(truth.size()) + " truths");
  }
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 1 || truth[i] > num_classes) throw std::invalid_argument("confusion: truth label out of range");
    if (predicted[i] < 1 || predicted[i] > num_classes) {
      throw std::invalid_argument("confusion: predicted label out of range");
    }
    ++cm.at(truth[i], predicted[i]);
  }
  return cm;
}

MetricsReport metrics(const ConfusionMatrix& cm) {
  const int k = cm.num_classes;
  const std::int64_t total = cm.total();
  if (total <= 0) throw std::invalid_argument("metrics: empty confusion matrix");
  MetricsReport r;
  r.per_class_accuracy.assign(static_cast<std::size_t>(k), 0.0);
  r.support.assign(static_cast<std::size_t>(k), 0);
  std::int64_t trace = 0;
  double pe_num = 0.0;
  double aa_sum = 0.0;
  int aa_n = 0;
  for (int i = 1; i <= k; ++i) {
    std::int64_t row = 0, col = 0;
    for (int j = 1; j <= k; ++j) {
      row += cm.at(i, j);
      col += cm.at(j, i);
    }
    trace += cm.at(i, i);
    pe_num += static_cast<double>(row) * static_cast<double>(col);
    r.support[static_cast<std::size_t>(i - 1)] = row;
    if (row > 0) {
      const double acc = static_cast<double>(cm.at(i, i)) / static_cast<double>(row);
      r.per_class_accuracy[static_cast<std::size_t>(i - 1)] = acc;
      aa_sum += acc;
      ++aa_n;
    }
  }
  const double t = static_cast<double>(total);
  r.oa = static_cast<double>(trace) / t;
  r.aa = aa_n > 0 ? aa_sum / aa_n : 0.0;
  const double pe = pe_num / (t * t);
  if (pe >= 1.0) {
    r.kappa_degenerate = true;
    r.kappa = trace == total ? 1.0 : 0.0;
  } else {
    r.kappa = (r.oa - pe) / (1.0 - pe);
  }
  return r;
}

nlohmann::json MetricsReport::to_json() const {
  return {{"oa", oa},
          {"aa", aa},
          {"kappa", kappa},
          {"kappa_degenerate", kappa_degenerate},
          {"per_class_accuracy", per_class_accuracy},
          {"support", support}};
}

LinearProbeResult linear_eval(const FeatureBank& train, const FeatureBank& test, int num_classes,
                              const LinearProbeConfig& cfg) {
  if (train.size() == 0) throw std::invalid_argument("linear_eval: empty training bank");
  if (num_classes < 1) throw std::invalid_argument("linear_eval: num_classes must be positive");
  if (cfg.epochs < 1 || cfg.batch_size < 1 || !(cfg.lr > 0.0)) throw std::invalid_argument("linear_eval: bad config");
  for (int l : train.labels) {
    if (l < 1 || l > num_classes) throw std::invalid_argument("linear_eval: training label out of range");
  }
  const std::size_t d = static_cast<std::size_t>(train.features.cols());
  Rng init(mix_key({cfg.seed, 0x4C494EULL}));
  nn::Linear<float> probe("probe", d, static_cast<std::size_t>(num_classes), init);
  nn::ParamRefs<float> params;
  probe.collect(params);
  AdamW opt(params);

  const std::size_t n = train.size();
  const std::size_t bs = std::min(cfg.batch_size, n);
  const std::size_t per_epoch = (n + bs - 1) / bs;
  const std::size_t total = per_epoch * cfg.epochs;
  std::vector<std::size_t> order(n);
  std::size_t step = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_key({cfg.seed, e, 0x50524F42ULL}));
    shuffle(order.begin(), order.end(), rng);
    for (std::size_t s = 0; s < n; s += bs, ++step) {
      const std::size_t m = std::min(bs, n - s);
      nn::Mat<float> x(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
      std::vector<int> t(m);
      for (std::size_t i = 0; i < m; ++i) {
        x.row(static_cast<Eigen::Index>(i)) = train.features.row(static_cast<Eigen::Index>(order[s + i]));
        t[i] = train.labels[order[s + i]] - 1;
      }
      opt.zero_grad();
      nn::Mat<float> grad;
      cross_entropy(probe.forward(x), t, &grad);
      probe.backward(grad);
      opt.step(cosine_lr(step, total, cfg.lr), cfg.weight_decay);
    }
  }

  LinearProbeResult r;
  r.predictions.resize(test.size());
  if (test.size() > 0) {
    const nn::Mat<float> logits = probe.forward(test.features);
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      Eigen::Index arg = 0;
      logits.row(i).maxCoeff(&arg);
      r.predictions[static_cast<std::size_t>(i)] = static_cast<int>(arg) + 1;
    }
    const bool labeled = std::all_of(test.labels.begin(), test.labels.end(), [](int l) { return l > 0; });
    if (labeled) r.metrics = metrics(confusion(r.predictions, test.labels, num_classes));
  }
  return r;
}

Rgb class_color(int label) {
  static constexpr Rgb kPalette[20] = {
      {0, 0, 0},       {230, 25, 75},   {60, 180, 75},   {255, 225, 25},  {0, 130, 200},
      {245, 130, 48},  {145, 30, 180},  {70, 240, 240},  {240, 50, 230},  {210, 245, 60},
      {250, 190, 212}, {0, 128, 128},   {220, 190, 255}, {170, 110, 40},  {255, 250, 200},
      {128, 0, 0},     {170, 255, 195}, {128, 128, 0},   {255, 215, 180}, {0, 0, 128},
  };
  if (label < 0) throw std::invalid_argument("class_color: negative label");
  if (label < 20) return kPalette[label];
  const double golden = 137.50776405003785;
  const double h = std::fmod(static_cast<double>(label - 20) * golden, 360.0) / 60.0;
  const double s = 0.65, v = 0.95;
  const double c = v * s;
  const double x = c * (1.0 - std::abs(std::fmod(h, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h)) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  const double m = v - c;
  auto q = [&](double u) { return static_cast<std::uint8_t>(std::lround((u + m) * 255.0)); };
  return {q(r), q(g), q(b)};
}

std::string to_string(MapScope s) { return s == MapScope::labeled_only ? "labeled_only" : "full_image"; }

MapScope map_scope_from_string(const std::string& s) {
  if (s == "labeled_only") return MapScope::labeled_only;
  if (s == "full_image") return MapScope::full_image;
  throw std::invalid_argument("unknown map scope \"" + s + "\" (expected labeled_only or full_image)");
}

void render_map(std::span<const std::int32_t> labels, const GroundTruth& gt, const std::filesystem::path& path,
                MapScope scope) {
  if (labels.size() != gt.rows * gt.cols) throw std::invalid_argument("render_map: raster size mismatch");
  std::vector<std::uint8_t> rgb(labels.size() * 3);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool paint = scope == MapScope::full_image || gt.labels[i] != 0;
    const Rgb c = class_color(paint ? labels[i] : 0);
    std::copy(c.begin(), c.end(), rgb.begin() + static_cast<std::ptrdiff_t>(i * 3));
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(gt.cols);
  image.height = static_cast<png_uint_32>(gt.rows);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, rgb.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw std::runtime_error("render_map: cannot write " + path.string() + ": " + msg);
  }
}

RgbImage read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw std::runtime_error("cannot read " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  RgbImage out;
  out.rows = image.height;
  out.cols = image.width;
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw std::runtime_error("cannot decode " + path.string() + ": " + msg);
  }
  return out;
}

}  // namespace knowcl
