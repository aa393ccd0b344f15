#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "mda/core/types.hpp"
#include "mda/errors.hpp"

namespace mda::detector {

enum class Level { C3, C4, C5, P3, P4, P5 };

inline const char* level_name(Level l) {
  switch (l) {
    case Level::C3: return "C3";
    case Level::C4: return "C4";
    case Level::C5: return "C5";
    case Level::P3: return "P3";
    case Level::P4: return "P4";
    case Level::P5: return "P5";
  }
  return "?";
}

inline Level parse_level(const std::string& s) {
  static const std::map<std::string, Level> table = {
      {"C3", Level::C3}, {"C4", Level::C4}, {"C5", Level::C5},
      {"P3", Level::P3}, {"P4", Level::P4}, {"P5", Level::P5}};
  auto it = table.find(s);
  if (it == table.end()) throw ConfigError("unknown feature level '" + s + "'");
  return it->second;
}

inline int level_stride(Level l) {
  switch (l) {
    case Level::C3:
    case Level::P3: return 8;
    case Level::C4:
    case Level::P4: return 16;
    case Level::C5:
    case Level::P5: return 32;
  }
  return 0;
}

inline bool is_backbone_level(Level l) {
  return l == Level::C3 || l == Level::C4 || l == Level::C5;
}

/// Index 0..2 within the C or P family.
inline int level_index(Level l) { return static_cast<int>(l) % 3; }

inline int ceil_div(int a, int b) { return (a + b - 1) / b; }

struct AnchorConfig {
  /// Base anchor side per pyramid level as a multiple of the stride.
  double size_per_stride = 2.0;
  std::vector<double> scales = {1.0};
  /// Height / width.
  std::vector<double> aspect_ratios = {1.0};

  int per_location() const {
    return static_cast<int>(scales.size() * aspect_ratios.size());
  }
};

/// Anchors of the three prediction levels (P3, P4, P5), concatenated level by
/// level; within a level ordered (row, column, anchor).
struct AnchorSet {
  AnchorConfig config;
  std::vector<BoundingBox> boxes;
  /// Offsets into `boxes`: level l covers [offsets[l], offsets[l+1]).
  std::vector<int> offsets;
  std::vector<int> level_h;
  std::vector<int> level_w;

  int count() const { return static_cast<int>(boxes.size()); }
  int level_count(int l) const { return offsets[l + 1] - offsets[l]; }
};

inline AnchorSet make_anchors(int image_h, int image_w,
                              const AnchorConfig& config) {
  AnchorSet set;
  set.config = config;
  set.offsets.push_back(0);
  for (int li = 0; li < 3; ++li) {
    const int stride = 8 << li;
    const int h = ceil_div(image_h, stride);
    const int w = ceil_div(image_w, stride);
    set.level_h.push_back(h);
    set.level_w.push_back(w);
    const double base = config.size_per_stride * stride;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double cx = (x + 0.5) * stride;
        const double cy = (y + 0.5) * stride;
        for (double s : config.scales)
          for (double r : config.aspect_ratios) {
            const double side = base * s;
            const double aw = side / std::sqrt(r);
            const double ah = side * std::sqrt(r);
            set.boxes.push_back(
                {cx - aw / 2, cy - ah / 2, cx + aw / 2, cy + ah / 2});
          }
      }
    set.offsets.push_back(static_cast<int>(set.boxes.size()));
  }
  return set;
}

/// Box regression targets relative to an anchor: centre offsets scaled by
/// anchor size and log size ratios.
struct BoxDelta {
  double dx = 0, dy = 0, dw = 0, dh = 0;
};

inline BoxDelta encode_box(const BoundingBox& anchor, const BoundingBox& gt) {
  const double aw = anchor.width(), ah = anchor.height();
  const double ax = anchor.x_min + aw / 2, ay = anchor.y_min + ah / 2;
  const double gw = gt.width(), gh = gt.height();
  const double gx = gt.x_min + gw / 2, gy = gt.y_min + gh / 2;
  return {(gx - ax) / aw, (gy - ay) / ah, std::log(gw / aw), std::log(gh / ah)};
}

inline BoundingBox decode_box(const BoundingBox& anchor, const BoxDelta& d) {
  // Clamp log-size deltas as common detector implementations do.
  constexpr double kMaxLog = 4.135166556742356;  // log(1000 / 16)
  const double aw = anchor.width(), ah = anchor.height();
  const double ax = anchor.x_min + aw / 2, ay = anchor.y_min + ah / 2;
  const double cx = ax + d.dx * aw, cy = ay + d.dy * ah;
  const double w = aw * std::exp(std::min(d.dw, kMaxLog));
  const double h = ah * std::exp(std::min(d.dh, kMaxLog));
  return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

}  // namespace mda::detector
