// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance            run every criterion
//   acceptance 3 7        run criteria 3 and 7

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "knowcl/checkpoint.hpp"
#include "knowcl/io.hpp"
#include "knowcl/losses.hpp"
#include "knowcl/pipeline.hpp"
#include "oracles.hpp"
#include "scratch.hpp"

using namespace knowcl;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 6) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

nn::Mat<double> to_mat(const oracle::Rows& rows) {
  nn::Mat<double> m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(Eigen::Index(i), Eigen::Index(j)) = rows[i][j];
  return m;
}

oracle::Rows unit_rows(Rng& rng, std::size_t n, std::size_t d) {
  oracle::Rows r;
  for (std::size_t i = 0; i < n; ++i) r.push_back(oracle::random_unit(rng, d));
  return r;
}

// ---------------------------------------------------------------- 1
Outcome loss_oracle() {
  const auto t0 = Clock::now();
  Rng rng(101);
  double worst = 0;
  for (std::size_t n = 1; n <= 4; ++n) {
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t d = 2 + rng.below(63);
      const double tau = rng.uniform(0.05, 2.0);
      const auto z = unit_rows(rng, n, d), zh = unit_rows(rng, n, d);
      const double got = contrastive_loss(to_mat(z), to_mat(zh), tau).loss;
      worst = std::max(worst, std::abs(got - oracle::contrastive(z, zh, tau)));
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-6 && secs < 5.0, "max abs err " + fmt(worst) + ", " + fmt(secs, 3) + " s"};
}

// ---------------------------------------------------------------- 2
Outcome analytic_anchors() {
  Rng rng(202);
  double n1 = 0;
  for (int t = 0; t < 20; ++t) n1 = std::max(n1, std::abs(contrastive_loss(to_mat(unit_rows(rng, 1, 16)), to_mat(unit_rows(rng, 1, 16)), 0.5).loss));
  const double big = contrastive_loss(to_mat(unit_rows(rng, 2, 16)), to_mat(unit_rows(rng, 2, 16)), 1e6).loss;
  const nn::Mat<double> logits = nn::Mat<double>::Zero(5, 4);
  const std::vector<int> targets{0, 1, 2, 3, 1};
  const double ce = cross_entropy(logits, std::span<const int>(targets));
  const bool ok = n1 == 0.0 && std::abs(big - std::log(3.0)) <= 1e-3 && std::abs(ce - std::log(4.0)) <= 1e-6;
  return {ok, "N=1 loss " + fmt(n1) + ", tau=1e6 loss " + fmt(big, 8) + ", uniform CE " + fmt(ce, 10)};
}

// ---------------------------------------------------------------- 3
Outcome fusion_gradients() {
  Rng rng(303);
  double worst_rel = 0, worst_closed = 0;
  const double h = 1e-5;
  for (int p = 0; p < 50; ++p) {
    std::vector<double> L{rng.uniform(0, 5), rng.uniform(0, 5)};
    std::vector<double> w{rng.uniform(0.3, 3), rng.uniform(0.3, 3)};
    const FusedResult r = adaptive_fused(L, w);
    for (std::size_t t = 0; t < 2; ++t) {
      auto fd = [&](std::vector<double>& v) {
        const double keep = v[t];
        v[t] = keep + h;
        const double up = adaptive_fused(L, w).value;
        v[t] = keep - h;
        const double dn = adaptive_fused(L, w).value;
        v[t] = keep;
        return (up - dn) / (2 * h);
      };
      const double fw = fd(w), fl = fd(L);
      worst_rel = std::max(worst_rel, std::abs(r.d_weights[t] - fw) / std::max(std::abs(fw), 1e-12));
      worst_rel = std::max(worst_rel, std::abs(r.d_losses[t] - fl) / std::max(std::abs(fl), 1e-12));
      const double closed = -L[t] / std::pow(w[t], 3) + 2 * w[t] / (1 + w[t] * w[t]);
      worst_closed = std::max(worst_closed, std::abs(closed - r.d_weights[t]));
    }
  }
  return {worst_rel <= 1e-4 && worst_closed <= 1e-6,
          "max rel FD err " + fmt(worst_rel) + ", closed-form diff " + fmt(worst_closed)};
}

// ---------------------------------------------------------------- 4
Outcome split_properties() {
  Rng rng(404);
  int failures = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t rows = 1 + rng.below(24), cols = 1 + rng.below(24);
    const int k = 1 + static_cast<int>(rng.below(std::min<std::size_t>(6, rows * cols)));
    GroundTruth gt(rows, cols, k);
    gt.labels = oracle::random_labels(rng, rows * cols, k, rng.uniform(0, 0.6));
    std::vector<std::size_t> slots(rows * cols);
    std::iota(slots.begin(), slots.end(), 0);
    shuffle(slots.begin(), slots.end(), rng);
    for (int c = 1; c <= k; ++c) gt.labels[slots[static_cast<std::size_t>(c - 1)]] = c;
    const double ratio = rng.uniform(0.01, 1.0);
    const Split s = split_disjoint(gt, ratio);

    bool ok = true;
    std::set<Pixel> train, test;
    std::map<int, std::size_t> n, nt;
    std::map<int, Pixel> last;
    for (const auto& p : s.train) {
      ok &= train.insert(p.at).second && gt.at(p.at.row, p.at.col) == p.label;
      ++nt[p.label];
      last[p.label] = std::max(last[p.label], p.at);
    }
    for (const auto& p : s.test) {
      ok &= test.insert(p.at).second && !train.contains(p.at) && gt.at(p.at.row, p.at.col) == p.label;
      if (last.contains(p.label)) ok &= last[p.label] < p.at;
    }
    std::size_t labeled = 0;
    for (std::size_t i = 0; i < gt.labels.size(); ++i) {
      if (gt.labels[i] > 0) {
        ++labeled;
        ++n[gt.labels[i]];
      }
    }
    ok &= train.size() + test.size() == labeled;
    for (const auto& [c, count] : n) ok &= nt[c] == static_cast<std::size_t>(std::floor(ratio * double(count) + 0.5));
    failures += !ok;
  }
  return {failures == 0, std::to_string(failures) + " of 1000 rasters violated a property"};
}

// ---------------------------------------------------------------- 5
Outcome pca_checks() {
  Rng rng(505);
  double ortho = 0, eig = 0, recon = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t bands = 2 + rng.below(15);
    Cube c("pca", bands, 10 + rng.below(10), 10 + rng.below(10));
    std::vector<double> mix(bands * 3);
    for (auto& m : mix) m = rng.normal();
    for (std::size_t p = 0; p < c.pixels(); ++p) {
      const double a = rng.normal(), b = rng.normal(), d = rng.normal();
      for (std::size_t k = 0; k < bands; ++k) {
        c.band(k)[p] = static_cast<float>(mix[k * 3] * a + 0.5 * mix[k * 3 + 1] * b + 0.2 * mix[k * 3 + 2] * d + 0.05 * rng.normal());
      }
    }
    const PcaModel m = fit_pca(c, bands);
    for (std::size_t i = 0; i < bands; ++i)
      for (std::size_t j = 0; j < bands; ++j) {
        double s = 0;
        for (std::size_t b = 0; b < bands; ++b) s += double(m.component(i, b)) * m.component(j, b);
        ortho = std::max(ortho, std::abs(s - (i == j ? 1.0 : 0.0)));
      }
    // Dense covariance and brute-force eigenpairs.
    std::vector<double> mean(bands, 0);
    for (std::size_t k = 0; k < bands; ++k) {
      for (float v : c.band(k)) mean[k] += v;
      mean[k] /= double(c.pixels());
    }
    oracle::Rows cov(bands, std::vector<double>(bands, 0));
    for (std::size_t i = 0; i < bands; ++i)
      for (std::size_t j = 0; j < bands; ++j) {
        long double s = 0;
        for (std::size_t p = 0; p < c.pixels(); ++p) s += (c.band(i)[p] - mean[i]) * (c.band(j)[p] - mean[j]);
        cov[i][j] = double(s / (c.pixels() - 1));
      }
    const oracle::EigenPairs ref = oracle::jacobi(cov);
    for (std::size_t i = 0; i < bands; ++i) {
      eig = std::max(eig, std::abs(m.explained_variance[i] - ref.values[i]));
      const bool isolated = (i == 0 || ref.values[i - 1] - ref.values[i] > 1e-3) &&
                            (i + 1 == bands || ref.values[i] - ref.values[i + 1] > 1e-3);
      if (!isolated) continue;
      double dot = 0;
      for (std::size_t b = 0; b < bands; ++b) dot += m.component(i, b) * ref.vectors[i][b];
      const double sign = dot < 0 ? -1 : 1;
      for (std::size_t b = 0; b < bands; ++b) eig = std::max(eig, std::abs(m.component(i, b) - sign * ref.vectors[i][b]));
    }
    const Cube y = apply_pca(m, c);
    for (std::size_t p = 0; p < c.pixels(); ++p)
      for (std::size_t b = 0; b < bands; ++b) {
        double x = m.mean[b];
        for (std::size_t i = 0; i < bands; ++i) x += double(m.component(i, b)) * y.band(i)[p];
        recon = std::max(recon, std::abs(x - c.band(b)[p]));
      }
  }
  return {ortho <= 1e-5 && eig <= 1e-6 && recon <= 1e-4,
          "orthonormality " + fmt(ortho) + ", eigenpair diff " + fmt(eig) + ", reconstruction " + fmt(recon)};
}

// ---------------------------------------------------------------- 6
Outcome knn_oracle() {
  Rng rng(606);
  std::size_t checked = 0, mismatched = 0;
  for (int b = 0; b < 100; ++b) {
    const std::size_t n = 15 + rng.below(186), d = 1 + rng.below(32);
    const int classes = 2 + static_cast<int>(rng.below(6));
    FeatureBank bank, q;
    bank.features.resize(Eigen::Index(n), Eigen::Index(d));
    std::vector<std::vector<float>> rows;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<float> v(d);
      if (i > 0 && rng.bernoulli(0.1)) {
        v = rows[rng.below(i)];
      } else {
        const auto u = oracle::random_unit(rng, d);
        for (std::size_t j = 0; j < d; ++j) v[j] = float(u[j]);
      }
      for (std::size_t j = 0; j < d; ++j) bank.features(Eigen::Index(i), Eigen::Index(j)) = v[j];
      rows.push_back(v);
      bank.labels.push_back(1 + static_cast<int>(rng.below(classes)));
      bank.coords.push_back({0, static_cast<std::int32_t>(i)});
    }
    const std::size_t nq = 25;
    q.features.resize(Eigen::Index(nq), Eigen::Index(d));
    std::vector<std::vector<float>> qrows;
    for (std::size_t i = 0; i < nq; ++i) {
      std::vector<float> v(d);
      if (i < 3) {
        v = rows[rng.below(n)];
      } else {
        const auto u = oracle::random_unit(rng, d);
        for (std::size_t j = 0; j < d; ++j) v[j] = float(u[j]);
      }
      for (std::size_t j = 0; j < d; ++j) q.features(Eigen::Index(i), Eigen::Index(j)) = v[j];
      qrows.push_back(v);
      q.labels.push_back(0);
      q.coords.push_back({1, static_cast<std::int32_t>(i)});
    }
    for (std::size_t k : {1, 5, 15}) {
      const std::vector<int> got = knn_predict(bank, q, k, 0.07);
      for (std::size_t i = 0; i < nq; ++i) {
        ++checked;
        mismatched += got[i] != oracle::knn(rows, bank.labels, qrows[i], k, 0.07);
      }
    }
  }
  return {mismatched == 0, std::to_string(mismatched) + " mismatches in " + std::to_string(checked) + " queries"};
}

// ---------------------------------------------------------------- 7
Outcome metric_checks() {
  ConfusionMatrix anchor(2);
  anchor.at(1, 1) = 4;
  anchor.at(1, 2) = 1;
  anchor.at(2, 1) = 1;
  anchor.at(2, 2) = 4;
  const MetricsReport a = metrics(anchor);
  bool ok = a.oa == 0.8 && std::abs(a.kappa - 0.6) <= 1e-15;
  Rng rng(707);
  int perm_fail = 0, range_fail = 0;
  for (int t = 0; t < 100; ++t) {
    const int k = 2 + static_cast<int>(rng.below(7));
    ConfusionMatrix cm(k);
    for (auto& c : cm.counts) c = static_cast<std::int64_t>(rng.below(rng.bernoulli(0.3) ? 2 : 50));
    cm.at(1, 1) += 1;
    std::vector<int> perm(static_cast<std::size_t>(k));
    std::iota(perm.begin(), perm.end(), 1);
    shuffle(perm.begin(), perm.end(), rng);
    ConfusionMatrix p(k);
    for (int i = 1; i <= k; ++i)
      for (int j = 1; j <= k; ++j) p.at(perm[i - 1], perm[j - 1]) = cm.at(i, j);
    const MetricsReport r = metrics(cm), rp = metrics(p);
    perm_fail += std::abs(r.oa - rp.oa) > 1e-12 || std::abs(r.aa - rp.aa) > 1e-12 || std::abs(r.kappa - rp.kappa) > 1e-12;
    range_fail += !(r.kappa >= -1.0 && r.kappa <= 1.0);
  }
  // Adversarial shapes: single column, anti-diagonal, single cell.
  for (int k = 2; k <= 6; ++k) {
    ConfusionMatrix col(k), anti(k), cell(k);
    for (int i = 1; i <= k; ++i) {
      col.at(i, 1) = i;
      anti.at(i, k + 1 - i) = 3;
    }
    cell.at(k, 1) = 5;
    for (const auto* m : {&col, &anti, &cell}) {
      const double kap = metrics(*m).kappa;
      range_fail += !(kap >= -1.0 && kap <= 1.0);
    }
  }
  ok = ok && perm_fail == 0 && range_fail == 0;
  return {ok, "anchor OA " + fmt(a.oa) + " kappa " + fmt(a.kappa, 17) + ", permutation failures " +
                  std::to_string(perm_fail) + ", range failures " + std::to_string(range_fail)};
}

// ------------------------------------------------------- shared desk-scale run

// Desk-scale scene and schedule. The window is scaled to the 16-pixel regions of
// the 64x64 scene (see README, "Desk-scale runs").
constexpr int kDeskPatch = 5;
constexpr int kDeskCrop = 3;

RunConfig desk_config(double ratio, double sigma, Mode mode, std::uint64_t seed) {
  json j = {{"name", "desk"},
            {"data",
             {{"synth",
               {{"rows", 64}, {"cols", 64}, {"bands", 32}, {"num_classes", 4}, {"class_signature_separation", 0.5},
                {"noise_sigma", sigma}, {"region_scale", 16}, {"seed", 7}}}}},
            {"split", {{"ratio", ratio}}},
            {"pca", {{"components", 5}}},
            {"augment", {{"patch_size", kDeskPatch}, {"crop_size", kDeskCrop}}},
            {"train", {{"mode", to_string(mode)}, {"epochs", 30}, {"batch_size", 64}}},
            {"eval", {{"k", 5}}}};
  RunConfig cfg = RunConfig::from_json(j);
  cfg.set_seed(seed);
  return cfg;
}

// ---------------------------------------------------------------- 8
Outcome desk_end_to_end() {
  const auto t0 = Clock::now();
  const RunConfig cfg = desk_config(0.3, 0.05, Mode::semisupervised, 0);
  const Scene scene = build_scene(cfg);
  const Prepared prep = prepare(scene, cfg);
  const double sam = spectral_angle_baseline(scene, prep.split).oa;
  if (sam < 0.95) return {false, "spectral-angle baseline OA " + fmt(sam, 4) + " below 0.95; bar not applicable"};
  TrainRun run = run_training(prep, cfg);
  const EvalResult r = evaluate(run.model, prep, cfg, "knn", 5);
  const double secs = seconds_since(t0);
  return {r.metrics.oa >= 0.90 && secs <= 600.0,
          "kNN OA " + fmt(r.metrics.oa, 4) + " (spectral-angle " + fmt(sam, 4) + "), " + fmt(secs, 4) + " s on " +
              std::to_string(cfg.threads()) + " thread(s)"};
}

// ---------------------------------------------------------------- 9
Outcome mode_ordering() {
  std::vector<double> semi, sup;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (Mode m : {Mode::supervised, Mode::semisupervised}) {
      const RunConfig cfg = desk_config(0.05, 0.15, m, seed);
      const Scene scene = build_scene(cfg);
      const Prepared prep = prepare(scene, cfg);
      TrainRun run = run_training(prep, cfg);
      const double oa = evaluate(run.model, prep, cfg, "knn", 5).metrics.oa;
      (m == Mode::supervised ? sup : semi).push_back(oa);
      std::printf("  seed %llu %-14s kNN OA %.4f\n", static_cast<unsigned long long>(seed), to_string(m).c_str(), oa);
      std::fflush(stdout);
    }
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  const double ms = median(semi), mu = median(sup);
  return {ms >= mu - 0.02, "median semi-supervised " + fmt(ms, 4) + " vs supervised " + fmt(mu, 4)};
}

// ---------------------------------------------------------------- 10
Outcome determinism() {
  test::Scratch dir("acceptance_det");
  json j = {{"name", "det"},
            {"data",
             {{"synth",
               {{"rows", 24}, {"cols", 24}, {"bands", 12}, {"num_classes", 3}, {"class_signature_separation", 0.5},
                {"noise_sigma", 0.05}, {"region_scale", 8}, {"seed", 4}}}}},
            {"pca", {{"components", 3}}},
            {"augment", {{"patch_size", 7}, {"crop_size", 5}, {"canonical_size", 8}}},
            {"backbone", {{"embed_dim", 24}, {"depth", 2}, {"num_heads", 4}}},
            {"train", {{"epochs", 2}, {"batch_size", 32}, {"seed", 3}}}};
  const RunConfig cfg = RunConfig::from_json(j);
  const Scene scene = build_scene(cfg);
  const Prepared prep = prepare(scene, cfg);
  TrainRun a = run_training(prep, cfg);
  TrainRun b = run_training(prep, cfg);
  const double loss_diff = std::abs(a.report.final_loss() - b.report.final_loss());

  save_checkpoint(dir.path / "m.kncl", a.model);
  Model back = load_checkpoint(dir.path / "m.kncl");
  bool metrics_equal = true;
  for (const std::string p : {"knn", "linear", "head"}) {
    const EvalResult x = evaluate(a.model, prep, cfg, p, 5), y = evaluate(back, prep, cfg, p, 5);
    metrics_equal &= x.predictions == y.predictions && x.metrics.to_json().dump() == y.metrics.to_json().dump();
  }

  const SynthScene raw = synth_cube(*cfg.data.synth);
  save_cube(raw.cube, dir.path / "cube");
  save_ground_truth(raw.ground_truth, dir.path / "gt");
  save_split(prep.split, dir.path / "split.txt");
  save_cube(load_cube(dir.path / "cube"), dir.path / "cube2");
  save_ground_truth(load_ground_truth(dir.path / "gt"), dir.path / "gt2");
  save_split(load_split(dir.path / "split.txt"), dir.path / "split2.txt");
  const bool bytes_equal = io::read_bytes(dir.path / "cube.raw") == io::read_bytes(dir.path / "cube2.raw") &&
                           io::read_bytes(dir.path / "cube.json") == io::read_bytes(dir.path / "cube2.json") &&
                           io::read_bytes(dir.path / "gt.raw") == io::read_bytes(dir.path / "gt2.raw") &&
                           io::read_bytes(dir.path / "split.txt") == io::read_bytes(dir.path / "split2.txt");
  return {loss_diff <= 1e-6 && metrics_equal && bytes_equal,
          "final-loss diff " + fmt(loss_diff) + ", reload metrics " + (metrics_equal ? "identical" : "differ") +
              ", files " + (bytes_equal ? "byte-identical" : "differ")};
}

// ---------------------------------------------------------------- 11
Outcome parameter_budget() {
  const BackboneConfig cfg;  // vit_hsi at the default geometry
  Model m = Model::create(cfg, 4, false, false, 0);
  const auto count = m.backbone_parameter_count();
  const double rel = std::abs(double(count) - 534110.0) / 534110.0;
  return {rel <= 0.10, std::to_string(count) + " parameters, " + fmt(100 * rel, 3) + "% from 534.11K"};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "contrastive loss matches exhaustive summation", loss_oracle},
      {2, "analytic loss anchors", analytic_anchors},
      {3, "adaptive fusion gradients", fusion_gradients},
      {4, "disjoint split properties", split_properties},
      {5, "PCA orthonormality, eigenpairs, reconstruction", pca_checks},
      {6, "weighted kNN matches exhaustive vote", knn_oracle},
      {7, "OA/AA/kappa anchors and invariances", metric_checks},
      {8, "desk-scale semi-supervised kNN OA >= 0.90", desk_end_to_end},
      {9, "semi-supervised non-inferior at low labels", mode_ordering},
      {10, "determinism and round-trips", determinism},
      {11, "vit_hsi parameter budget", parameter_budget},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.contains(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("[%s] C%-2d %s: %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
