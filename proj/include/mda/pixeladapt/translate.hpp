#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "mda/core/benchmark.hpp"
#include "mda/core/png_io.hpp"
#include "mda/core/types.hpp"
#include "mda/errors.hpp"

// Pixel-level adaptation: restyle source images toward the targets before
// feature alignment. The reference translator matches per-channel mean and
// standard deviation; anything else (e.g. a CycleGAN run) can be imported
// from a directory of images.

namespace mda::pixeladapt {

inline constexpr double kStdFloor = 1e-6;

struct ColorStats {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> stddev{1.0, 1.0, 1.0};
};

/// Pooled channel moments over a set of images.
inline ColorStats fit_color_stats(const std::vector<const Image*>& images) {
  if (images.empty()) throw ValidationError("cannot fit colour statistics on no images");
  std::array<double, 3> sum{}, sq{};
  double count = 0.0;
  for (const auto* img : images) {
    const std::size_t plane = static_cast<std::size_t>(img->height) * img->width;
    for (int c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < plane; ++i) {
        const double v = img->data[c * plane + i];
        sum[c] += v;
        sq[c] += v * v;
      }
    count += static_cast<double>(plane);
  }
  if (count == 0.0) throw ValidationError("cannot fit colour statistics on empty images");
  ColorStats s;
  for (int c = 0; c < 3; ++c) {
    s.mean[c] = sum[c] / count;
    const double var = std::max(0.0, sq[c] / count - s.mean[c] * s.mean[c]);
    s.stddev[c] = std::max(kStdFloor, std::sqrt(var));
  }
  return s;
}

/// Statistics over the train split.
inline ColorStats fit_color_stats(const DomainDataset& ds) {
  if (ds.train.empty())
    throw ValidationError("train split of '" + ds.spec.name + "' is empty");
  std::vector<const Image*> images;
  for (const auto& s : ds.train) images.push_back(&s.pixels());
  return fit_color_stats(images);
}

/// Per-channel affine map (x - mu_s) / sigma_s * sigma_t + mu_t, clipped to
/// [0, 1]. `clip` = false keeps the raw affine values.
inline Image translate(const Image& img, const ColorStats& source, const ColorStats& target,
                       bool clip = true) {
  Image out = img;
  const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
  for (int c = 0; c < 3; ++c) {
    const double scale = target.stddev[c] / source.stddev[c];
    for (std::size_t i = 0; i < plane; ++i) {
      double v = (img.data[c * plane + i] - source.mean[c]) * scale + target.mean[c];
      if (clip) v = std::clamp(v, 0.0, 1.0);
      out.data[c * plane + i] = static_cast<float>(v);
    }
  }
  return out;
}

/// Image-to-image mapping that preserves geometry.
class Translator {
 public:
  virtual ~Translator() = default;
  virtual bool is_identity() const { return false; }
  virtual Image apply(const Image& img) const = 0;
};

class IdentityTranslator : public Translator {
 public:
  bool is_identity() const override { return true; }
  Image apply(const Image& img) const override { return img; }
};

class StatsTranslator : public Translator {
 public:
  StatsTranslator(ColorStats source, ColorStats target)
      : source_(source), target_(target) {}
  const ColorStats& source() const { return source_; }
  const ColorStats& target() const { return target_; }
  Image apply(const Image& img) const override { return translate(img, source_, target_); }

 private:
  ColorStats source_;
  ColorStats target_;
};

/// Fits the reference translator: source stats from `source`, target stats
/// over the merged train pools of `targets`.
inline StatsTranslator fit_reference_translator(const DomainDataset& source,
                                                const std::vector<const DomainDataset*>& targets) {
  std::vector<const Image*> pool;
  for (const auto* t : targets)
    for (const auto& s : t->train) pool.push_back(&s.pixels());
  if (pool.empty()) throw ValidationError("no target train images to fit against");
  return StatsTranslator(fit_color_stats(source), fit_color_stats(pool));
}

/// S': same ids and annotations, translated train pixels. The test split is
/// left as is so source evaluation keeps measuring the real source domain.
inline DomainDataset translate_dataset(const DomainDataset& ds, const Translator& translator) {
  DomainDataset out = ds;
  if (translator.is_identity()) return out;
  for (auto& s : out.train) s = s.with_pixels(translator.apply(s.pixels()));
  return out;
}

/// Stats manifest: "key value" lines.
inline void save_stats(const std::filesystem::path& path, const StatsTranslator& t) {
  std::ofstream os(path);
  if (!os) throw LoadError("cannot write " + path.string());
  os.precision(17);
  const char* ch = "rgb";
  for (int c = 0; c < 3; ++c) {
    os << "source_mean_" << ch[c] << " " << t.source().mean[c] << "\n";
    os << "source_std_" << ch[c] << " " << t.source().stddev[c] << "\n";
    os << "target_mean_" << ch[c] << " " << t.target().mean[c] << "\n";
    os << "target_std_" << ch[c] << " " << t.target().stddev[c] << "\n";
  }
}

inline StatsTranslator load_stats(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw LoadError("cannot open " + path.string());
  std::map<std::string, double> kv;
  std::string key;
  double value;
  while (is >> key >> value) kv[key] = value;
  auto need = [&](const std::string& k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw LoadError(path.string() + ": missing '" + k + "'");
    return it->second;
  };
  ColorStats s, t;
  const char* ch = "rgb";
  for (int c = 0; c < 3; ++c) {
    s.mean[c] = need(std::string("source_mean_") + ch[c]);
    s.stddev[c] = std::max(kStdFloor, need(std::string("source_std_") + ch[c]));
    t.mean[c] = need(std::string("target_mean_") + ch[c]);
    t.stddev[c] = std::max(kStdFloor, need(std::string("target_std_") + ch[c]));
  }
  return StatsTranslator(s, t);
}

/// Assembles S' from externally translated images named <image_id>.png in
/// `dir`, keeping the annotations of `source`. Only the train split is
/// replaced; test images stay untouched.
inline DomainDataset load_external_translation(const std::filesystem::path& dir,
                                               const DomainDataset& source) {
  if (!std::filesystem::is_directory(dir))
    throw LoadError("translation directory not found: " + dir.string());
  std::vector<int> missing;
  for (const auto& s : source.train)
    if (!std::filesystem::exists(dir / (std::to_string(s.image_id()) + ".png")))
      missing.push_back(s.image_id());
  if (!missing.empty()) {
    std::ostringstream os;
    os << "missing translated images for ids";
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) os << " " << missing[i];
    if (missing.size() > 20) os << " ... (" << missing.size() << " total)";
    throw LoadError(os.str());
  }
  DomainDataset out = source;
  for (auto& s : out.train) {
    Image img = read_png(dir / (std::to_string(s.image_id()) + ".png"));
    if (img.height != s.height() || img.width != s.width())
      throw LoadError("translated image " + std::to_string(s.image_id()) + " is " +
                      std::to_string(img.width) + "x" + std::to_string(img.height) +
                      ", expected " + std::to_string(s.width()) + "x" +
                      std::to_string(s.height()));
    s = s.with_pixels(std::move(img));
  }
  return out;
}

/// Writes the translated train images as <image_id>.png.
inline void write_translation(const std::filesystem::path& dir, const DomainDataset& ds) {
  std::filesystem::create_directories(dir);
  for (const auto& s : ds.train) write_png(dir / (std::to_string(s.image_id()) + ".png"), s.pixels());
}

}  // namespace mda::pixeladapt
