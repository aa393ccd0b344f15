#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mda/core/batch.hpp"
#include "mda/core/render.hpp"
#include "mda/core/types.hpp"
#include "mda/errors.hpp"

// Camera-style domain transforms for the toy benchmark. A stack is written as
// comma-separated steps "name:arg[:arg...]", e.g. "hue:120,blur:1.2,noise:0.03".
//
//   hue:DEG          rotate hue
//   saturation:F     scale saturation
//   brightness:F     scale values
//   contrast:F       (x - 0.5) * F + 0.5
//   gamma:G          x^G
//   tint:R:G:B       add a per-channel offset
//   blur:SIGMA       separable Gaussian blur
//   noise:SIGMA      additive Gaussian noise (random)
//   crop:F           centred crop of fraction F, resized back (field of view)

namespace mda {

struct TransformStep {
  std::string name;
  std::vector<double> args;
};

struct TransformStack {
  std::vector<TransformStep> steps;

  bool is_identity() const { return steps.empty(); }

  std::string to_string() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < steps.size(); ++i) {
      if (i) os << ",";
      os << steps[i].name;
      for (double a : steps[i].args) os << ":" << a;
    }
    return os.str();
  }
};

inline TransformStack parse_transform_stack(const std::string& text) {
  static const std::vector<std::pair<std::string, int>> arity = {
      {"hue", 1},   {"saturation", 1}, {"brightness", 1}, {"contrast", 1}, {"gamma", 1},
      {"tint", 3},  {"blur", 1},       {"noise", 1},      {"crop", 1},     {"identity", 0}};
  TransformStack stack;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::stringstream is(item);
    std::string tok;
    TransformStep step;
    std::getline(is, step.name, ':');
    while (std::getline(is, tok, ':')) {
      try {
        step.args.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw ConfigError("bad transform argument '" + tok + "' in '" + item + "'");
      }
    }
    auto it = std::find_if(arity.begin(), arity.end(),
                           [&](const auto& a) { return a.first == step.name; });
    if (it == arity.end()) throw ConfigError("unknown transform '" + step.name + "'");
    if (static_cast<int>(step.args.size()) != it->second)
      throw ConfigError("transform '" + step.name + "' takes " +
                        std::to_string(it->second) + " argument(s)");
    if (step.name == "identity") continue;
    if (step.name == "crop" && !(step.args[0] > 0.0 && step.args[0] <= 1.0))
      throw ConfigError("crop fraction must lie in (0, 1]");
    if (step.name == "blur" && step.args[0] < 0.0) throw ConfigError("blur sigma must be >= 0");
    stack.steps.push_back(std::move(step));
  }
  return stack;
}

namespace detail {

inline void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double d = mx - mn;
  v = mx;
  s = mx > 0 ? d / mx : 0;
  if (d <= 0) {
    h = 0;
    return;
  }
  if (mx == r)
    h = 60 * std::fmod((g - b) / d, 6.0);
  else if (mx == g)
    h = 60 * ((b - r) / d + 2);
  else
    h = 60 * ((r - g) / d + 4);
  if (h < 0) h += 360;
}

template <typename F>
void map_hsv(Image& img, F&& f) {
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double h, s, v;
      rgb_to_hsv(img.at(0, y, x), img.at(1, y, x), img.at(2, y, x), h, s, v);
      f(h, s, v);
      const auto rgb = hsv_to_rgb(h, std::clamp(s, 0.0, 1.0), std::clamp(v, 0.0, 1.0));
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = rgb[c];
    }
}

inline void gaussian_blur(Image& img, double sigma) {
  if (sigma <= 0) return;
  const int radius = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-i * i / (2 * sigma * sigma));
  for (auto& v : k) v /= sum;
  Image tmp = img;
  auto clampi = [](int v, int hi) { return std::clamp(v, 0, hi - 1); };
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * img.at(c, y, clampi(x + i, img.width));
        tmp.at(c, y, x) = static_cast<float>(acc);
      }
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp.at(c, clampi(y + i, img.height), x);
        img.at(c, y, x) = static_cast<float>(acc);
      }
}

/// Bilinear crop of [x0, x0 + cw) x [y0, y0 + ch) resized to the full frame.
inline Image crop_resize(const Image& img, double x0, double y0, double cw, double ch) {
  Image out(img.height, img.width);
  const double sx = cw / img.width, sy = ch / img.height;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double fx = std::clamp(x0 + (x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
      const double fy = std::clamp(y0 + (y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
      const int ix = static_cast<int>(fx), iy = static_cast<int>(fy);
      const int jx = std::min(ix + 1, img.width - 1), jy = std::min(iy + 1, img.height - 1);
      const double ax = fx - ix, ay = fy - iy;
      for (int c = 0; c < 3; ++c)
        out.at(c, y, x) = static_cast<float>(
            (1 - ay) * ((1 - ax) * img.at(c, iy, ix) + ax * img.at(c, iy, jx)) +
            ay * ((1 - ax) * img.at(c, jy, ix) + ax * img.at(c, jy, jx)));
    }
  return out;
}

}  // namespace detail

/// Applies a stack to an image and its annotations. Geometric steps move the
/// boxes; a box keeping less than half of its area inside the frame is
/// dropped.
inline void apply_transform_stack(const TransformStack& stack, Image& img,
                                  std::vector<Annotation>& anns, Rng& rng) {
  for (const auto& step : stack.steps) {
    const auto& a = step.args;
    if (step.name == "hue") {
      detail::map_hsv(img, [&](double& h, double&, double&) { h += a[0]; });
    } else if (step.name == "saturation") {
      detail::map_hsv(img, [&](double&, double& s, double&) { s *= a[0]; });
    } else if (step.name == "brightness") {
      for (auto& v : img.data) v = static_cast<float>(v * a[0]);
    } else if (step.name == "contrast") {
      for (auto& v : img.data) v = static_cast<float>((v - 0.5) * a[0] + 0.5);
    } else if (step.name == "gamma") {
      for (auto& v : img.data) v = static_cast<float>(std::pow(std::max(0.0f, v), a[0]));
    } else if (step.name == "tint") {
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.height; ++y)
          for (int x = 0; x < img.width; ++x) img.at(c, y, x) += static_cast<float>(a[c]);
    } else if (step.name == "blur") {
      detail::gaussian_blur(img, a[0]);
    } else if (step.name == "noise") {
      std::normal_distribution<double> n(0.0, a[0]);
      for (auto& v : img.data) v = static_cast<float>(v + n(rng));
    } else if (step.name == "crop") {
      const double cw = img.width * a[0], ch = img.height * a[0];
      const double x0 = (img.width - cw) / 2, y0 = (img.height - ch) / 2;
      img = detail::crop_resize(img, x0, y0, cw, ch);
      std::vector<Annotation> kept;
      for (const auto& ann : anns) {
        const BoundingBox moved{(ann.box.x_min - x0) / a[0], (ann.box.y_min - y0) / a[0],
                                (ann.box.x_max - x0) / a[0], (ann.box.y_max - y0) / a[0]};
        const BoundingBox clipped = moved.clipped(img.width, img.height);
        if (clipped.valid() && clipped.area() >= 0.5 * moved.area())
          kept.push_back({clipped, ann.class_id});
      }
      anns = std::move(kept);
    }
    for (auto& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
  }
}

}  // namespace mda

namespace mda {

/// Training-time geometric augmentation.
struct AugmentConfig {
  bool horizontal_flip = true;
  /// Maximum translation in pixels along each axis; edges are replicated.
  int max_shift = 6;

  bool enabled() const { return horizontal_flip || max_shift > 0; }
};

/// Randomly flips and shifts an image; moves `anns` along when non-null.
/// Boxes keeping less than half of their area in frame are dropped.
inline void augment_sample(const AugmentConfig& cfg, Image& img, std::vector<Annotation>* anns,
                           Rng& rng) {
  std::uniform_int_distribution<int> coin(0, 1);
  const bool flip = cfg.horizontal_flip && coin(rng) == 1;
  int dx = 0, dy = 0;
  if (cfg.max_shift > 0) {
    std::uniform_int_distribution<int> shift(-cfg.max_shift, cfg.max_shift);
    dx = shift(rng);
    dy = shift(rng);
  }
  if (!flip && dx == 0 && dy == 0) return;
  Image out(img.height, img.width);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y) {
      const int sy = std::clamp(y - dy, 0, img.height - 1);
      for (int x = 0; x < img.width; ++x) {
        int sx = std::clamp(x - dx, 0, img.width - 1);
        if (flip) sx = img.width - 1 - sx;
        out.at(c, y, x) = img.at(c, sy, sx);
      }
    }
  img = std::move(out);
  if (anns == nullptr) return;
  std::vector<Annotation> kept;
  for (const auto& a : *anns) {
    BoundingBox b = a.box;
    if (flip) b = {img.width - b.x_max, b.y_min, img.width - b.x_min, b.y_max};
    const BoundingBox moved{b.x_min + dx, b.y_min + dy, b.x_max + dx, b.y_max + dy};
    const BoundingBox clipped = moved.clipped(img.width, img.height);
    if (clipped.valid() && clipped.area() >= 0.5 * moved.area()) kept.push_back({clipped, a.class_id});
  }
  *anns = std::move(kept);
}

}  // namespace mda
