#include "knowcl/splitter.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

#include "knowcl/io.hpp"

namespace knowcl {

namespace {

constexpr const char* kManifestMagic = "knowcl-split 1";

}  // namespace

ClassCounts class_counts(const GroundTruth& gt) {
  ClassCounts counts;
  counts.per_class.assign(static_cast<std::size_t>(std::max(gt.num_classes, 0)), 0);
  for (std::int32_t label : gt.labels) {
    if (label == 0) {
      ++counts.unlabeled;
    } else if (label > 0 && label <= gt.num_classes) {
      ++counts.per_class[static_cast<std::size_t>(label - 1)];
    } else {
      throw std::invalid_argument("label " + std::to_string(label) + " outside 0.." +
                                  std::to_string(gt.num_classes));
    }
  }
  return counts;
}

std::size_t train_count(double ratio, std::size_t n) {
  // The epsilon absorbs binary representation error of decimal ratios so that
  // exact halves such as 0.35 * 10 round up.
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 0.5 + 1e-9));
}

Split split_disjoint(const GroundTruth& gt, double ratio) {
  const std::vector<double> ratios(static_cast<std::size_t>(gt.num_classes), ratio);
  return split_disjoint(gt, ratios);
}

Split split_disjoint(const GroundTruth& gt, std::span<const double> per_class_ratios) {
  gt.validate();
  if (per_class_ratios.size() != static_cast<std::size_t>(gt.num_classes)) {
    throw std::invalid_argument("expected " + std::to_string(gt.num_classes) + " per-class ratios, got " +
                                std::to_string(per_class_ratios.size()));
  }
  for (std::size_t k = 0; k < per_class_ratios.size(); ++k) {
    const double r = per_class_ratios[k];
    if (!(r > 0.0 && r <= 1.0)) {
      throw std::invalid_argument("ratio for class " + std::to_string(k + 1) + " must lie in (0, 1]");
    }
  }
  const ClassCounts counts = class_counts(gt);
  std::vector<std::size_t> quota(counts.per_class.size());
  for (std::size_t k = 0; k < quota.size(); ++k) {
    if (counts.per_class[k] == 0) {
      throw std::invalid_argument("class " + std::to_string(k + 1) + " has no labeled pixels");
    }
    quota[k] = train_count(per_class_ratios[k], counts.per_class[k]);
  }

  Split split;
  split.ratios.assign(per_class_ratios.begin(), per_class_ratios.end());
  std::vector<std::size_t> taken(quota.size(), 0);
  for (std::size_t r = 0; r < gt.rows; ++r) {
    for (std::size_t c = 0; c < gt.cols; ++c) {
      const std::int32_t label = gt.at(r, c);
      if (label == 0) continue;
      const auto k = static_cast<std::size_t>(label - 1);
      LabeledPixel px{{static_cast<std::int32_t>(r), static_cast<std::int32_t>(c)}, label};
      if (taken[k] < quota[k]) {
        ++taken[k];
        split.train.push_back(px);
      } else {
        split.test.push_back(px);
      }
    }
  }
  return split;
}

void validate_split(const Split& split, const GroundTruth& gt) {
  std::set<Pixel> train_set;
  for (const auto& p : split.train) {
    if (!train_set.insert(p.at).second) throw std::invalid_argument("split: duplicate train pixel");
  }
  std::set<Pixel> seen = train_set;
  for (const auto& p : split.test) {
    if (!seen.insert(p.at).second) throw std::invalid_argument("split: train and test overlap");
  }
  std::size_t labeled = 0;
  for (std::size_t r = 0; r < gt.rows; ++r) {
    for (std::size_t c = 0; c < gt.cols; ++c) {
      if (gt.at(r, c) != 0) ++labeled;
    }
  }
  if (seen.size() != labeled) throw std::invalid_argument("split: does not cover every labeled pixel");
  auto check_label = [&](const LabeledPixel& p) {
    if (p.at.row < 0 || p.at.col < 0 || static_cast<std::size_t>(p.at.row) >= gt.rows ||
        static_cast<std::size_t>(p.at.col) >= gt.cols) {
      throw std::invalid_argument("split: pixel outside the raster");
    }
    if (gt.at(static_cast<std::size_t>(p.at.row), static_cast<std::size_t>(p.at.col)) != p.label) {
      throw std::invalid_argument("split: label disagrees with ground truth");
    }
  };
  std::vector<Pixel> last_train(static_cast<std::size_t>(gt.num_classes), Pixel{-1, -1});
  for (const auto& p : split.train) {
    check_label(p);
    auto& last = last_train[static_cast<std::size_t>(p.label - 1)];
    last = std::max(last, p.at);
  }
  for (const auto& p : split.test) {
    check_label(p);
    if (p.at < last_train[static_cast<std::size_t>(p.label - 1)]) {
      throw std::invalid_argument("split: test pixel precedes a train pixel of the same class");
    }
  }
}

void save_split(const Split& split, const std::filesystem::path& path) {
  std::ostringstream out;
  out << kManifestMagic << "\n";
  out << "ratios";
  for (std::size_t i = 0; i < split.ratios.size(); ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", split.ratios[i]);
    out << (i == 0 ? " " : ",") << buf;
  }
  out << "\n";
  auto section = [&](const char* name, const std::vector<LabeledPixel>& pixels) {
    out << name << " " << pixels.size() << "\n";
    for (const auto& p : pixels) out << p.at.row << "," << p.at.col << "," << p.label << "\n";
  };
  section("train", split.train);
  section("test", split.test);
  io::write_text(path, out.str());
}

Split load_split(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw std::runtime_error("missing split manifest " + path.string());
  }
  std::istringstream in(io::read_text(path));
  const std::string ctx = "split manifest " + path.string();
  std::string line;
  if (!std::getline(in, line) || line != kManifestMagic) {
    throw std::invalid_argument(ctx + ": bad header");
  }
  Split split;
  if (!std::getline(in, line) || line.rfind("ratios", 0) != 0) {
    throw std::invalid_argument(ctx + ": missing ratios line");
  }
  {
    std::istringstream rs(line.substr(6));
    std::string tok;
    while (std::getline(rs >> std::ws, tok, ',')) split.ratios.push_back(std::stod(tok));
  }
  auto read_section = [&](const std::string& name, std::vector<LabeledPixel>& dst) {
    if (!std::getline(in, line)) throw std::invalid_argument(ctx + ": missing " + name + " section");
    std::istringstream hs(line);
    std::string tag;
    std::size_t count = 0;
    if (!(hs >> tag >> count) || tag != name) {
      throw std::invalid_argument(ctx + ": expected \"" + name + " <count>\"");
    }
    dst.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      if (!std::getline(in, line)) throw std::invalid_argument(ctx + ": truncated " + name + " section");
      LabeledPixel p;
      char c1 = 0, c2 = 0;
      std::istringstream ls(line);
      if (!(ls >> p.at.row >> c1 >> p.at.col >> c2 >> p.label) || c1 != ',' || c2 != ',') {
        throw std::invalid_argument(ctx + ": malformed line \"" + line + "\"");
      }
      dst.push_back(p);
    }
  };
  read_section("train", split.train);
  read_section("test", split.test);
  std::set<Pixel> train_set;
  for (const auto& p : split.train) train_set.insert(p.at);
  for (const auto& p : split.test) {
    if (train_set.contains(p.at)) throw std::invalid_argument(ctx + ": train and test overlap");
  }
  return split;
}

}  // namespace knowcl
