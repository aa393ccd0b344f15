#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "mda/core/batch.hpp"
#include "mda/core/types.hpp"

namespace mda {

/// Shape classes of the toy benchmark, in class-id order.
enum class ShapeKind : int {
  kSquare = 0,
  kDisk,
  kTriangle,
  kPlus,
  kRing,
  kDiamond,
  kFrame,
  kCross,
};
inline constexpr int kMaxShapeClasses = 8;

inline const char* shape_name(int class_id) {
  static constexpr std::array<const char*, kMaxShapeClasses> names = {
      "square", "disk", "triangle", "plus", "ring", "diamond", "frame", "cross"};
  return names.at(static_cast<std::size_t>(class_id));
}

/// Whether point (u, v), in shape-local coordinates scaled to [-1, 1], lies
/// inside the shape.
inline bool shape_contains(ShapeKind kind, double u, double v) {
  const double au = std::abs(u), av = std::abs(v);
  switch (kind) {
    case ShapeKind::kSquare: return au <= 1 && av <= 1;
    case ShapeKind::kDisk: return u * u + v * v <= 1;
    case ShapeKind::kTriangle:
      // Apex at top (v = -1), base at v = 1.
      return v >= -1 && v <= 1 && au <= (v + 1) / 2;
    case ShapeKind::kPlus:
      return (au <= 0.34 && av <= 1) || (av <= 0.34 && au <= 1);
    case ShapeKind::kRing: {
      const double r2 = u * u + v * v;
      return r2 <= 1 && r2 >= 0.3;
    }
    case ShapeKind::kDiamond: return au + av <= 1;
    case ShapeKind::kFrame: return au <= 1 && av <= 1 && (au >= 0.55 || av >= 0.55);
    case ShapeKind::kCross:
      return (std::abs(u - v) <= 0.4 || std::abs(u + v) <= 0.4) && au <= 1 && av <= 1;
  }
  return false;
}

/// One rendered object: its label and the exact pixel mask it painted.
struct RenderedShape {
  Annotation annotation;
  /// Row-major H x W, 1 where the shape painted the pixel.
  std::vector<std::uint8_t> mask;
  int pixel_count = 0;
};

struct RenderedScene {
  Image image;
  std::vector<RenderedShape> shapes;
};

struct SceneConfig {
  int height = 64;
  int width = 64;
  int num_classes = 5;
  int min_objects = 2;
  int max_objects = 4;
  double min_size = 12.0;
  double max_size = 26.0;
  int max_placement_attempts = 50;
};

inline std::array<float, 3> hsv_to_rgb(double h, double s, double v) {
  h = std::fmod(h, 360.0);
  if (h < 0) h += 360.0;
  const double c = v * s;
  const double x = c * (1 - std::abs(std::fmod(h / 60.0, 2.0) - 1));
  const double m = v - c;
  double r = 0, g = 0, b = 0;
  if (h < 60) { r = c; g = x; }
  else if (h < 120) { r = x; g = c; }
  else if (h < 180) { g = c; b = x; }
  else if (h < 240) { g = x; b = c; }
  else if (h < 300) { r = x; b = c; }
  else { r = c; b = x; }
  return {static_cast<float>(r + m), static_cast<float>(g + m), static_cast<float>(b + m)};
}

/// Draws a scene of non-overlapping shapes on a smooth random background.
/// Boxes are the tight bounds of each shape's painted pixels.
inline RenderedScene render_scene(const SceneConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  RenderedScene scene;
  scene.image = Image(cfg.height, cfg.width);

  // Background: a linear gradient between two muted colours plus fine noise.
  const auto bg0 = hsv_to_rgb(360 * unit(rng), 0.15 * unit(rng), 0.35 + 0.3 * unit(rng));
  const auto bg1 = hsv_to_rgb(360 * unit(rng), 0.15 * unit(rng), 0.35 + 0.3 * unit(rng));
  const double angle = 2 * M_PI * unit(rng);
  const double gx = std::cos(angle), gy = std::sin(angle);
  std::normal_distribution<double> noise(0.0, 0.02);
  for (int y = 0; y < cfg.height; ++y)
    for (int x = 0; x < cfg.width; ++x) {
      const double t = 0.5 + 0.5 * ((x / double(cfg.width) - 0.5) * gx +
                                    (y / double(cfg.height) - 0.5) * gy);
      for (int c = 0; c < 3; ++c)
        scene.image.at(c, y, x) =
            static_cast<float>(std::clamp(bg0[c] * (1 - t) + bg1[c] * t + noise(rng), 0.0, 1.0));
    }

  std::uniform_int_distribution<int> count_dist(cfg.min_objects, cfg.max_objects);
  std::uniform_int_distribution<int> class_dist(0, cfg.num_classes - 1);
  const int count = count_dist(rng);
  std::vector<BoundingBox> taken;
  for (int k = 0; k < count; ++k) {
    for (int attempt = 0; attempt < cfg.max_placement_attempts; ++attempt) {
      const int cls = class_dist(rng);
      const double size = cfg.min_size + (cfg.max_size - cfg.min_size) * unit(rng);
      const double aspect = 0.8 + 0.45 * unit(rng);
      const double half_w = size * std::sqrt(aspect) / 2;
      const double half_h = size / std::sqrt(aspect) / 2;
      if (2 * half_w + 2 >= cfg.width || 2 * half_h + 2 >= cfg.height) continue;
      const double cx = half_w + 1 + (cfg.width - 2 * half_w - 2) * unit(rng);
      const double cy = half_h + 1 + (cfg.height - 2 * half_h - 2) * unit(rng);
      const BoundingBox outer{cx - half_w - 2, cy - half_h - 2, cx + half_w + 2, cy + half_h + 2};
      bool overlaps = false;
      for (const auto& t : taken)
        if (outer.x_min < t.x_max && t.x_min < outer.x_max && outer.y_min < t.y_max &&
            t.y_min < outer.y_max)
          overlaps = true;
      if (overlaps) continue;

      const auto colour = hsv_to_rgb(360 * unit(rng), 0.55 + 0.45 * unit(rng),
                                     0.55 + 0.45 * unit(rng));
      RenderedShape shape;
      shape.mask.assign(static_cast<std::size_t>(cfg.height) * cfg.width, 0);
      int x0 = cfg.width, y0 = cfg.height, x1 = -1, y1 = -1;
      for (int y = 0; y < cfg.height; ++y)
        for (int x = 0; x < cfg.width; ++x) {
          const double u = (x + 0.5 - cx) / half_w;
          const double v = (y + 0.5 - cy) / half_h;
          if (!shape_contains(static_cast<ShapeKind>(cls), u, v)) continue;
          shape.mask[static_cast<std::size_t>(y) * cfg.width + x] = 1;
          ++shape.pixel_count;
          x0 = std::min(x0, x);
          y0 = std::min(y0, y);
          x1 = std::max(x1, x);
          y1 = std::max(y1, y);
          for (int c = 0; c < 3; ++c) scene.image.at(c, y, x) = colour[c];
        }
      if (shape.pixel_count == 0) continue;
      shape.annotation = {{double(x0), double(y0), double(x1 + 1), double(y1 + 1)}, cls};
      taken.push_back(outer);
      scene.shapes.push_back(std::move(shape));
      break;
    }
  }
  return scene;
}

}  // namespace mda
