#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mda/errors.hpp"

namespace mda {

/// Axis-aligned box in continuous pixel coordinates. A pixel (x, y) covers
/// [x, x+1) x [y, y+1).
struct BoundingBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const {
    return std::max(0.0, width()) * std::max(0.0, height());
  }
  bool valid() const {
    return std::isfinite(x_min) && std::isfinite(y_min) &&
           std::isfinite(x_max) && std::isfinite(y_max) && x_min < x_max &&
           y_min < y_max;
  }

  BoundingBox clipped(double image_width, double image_height) const {
    return {std::clamp(x_min, 0.0, image_width),
            std::clamp(y_min, 0.0, image_height),
            std::clamp(x_max, 0.0, image_width),
            std::clamp(y_max, 0.0, image_height)};
  }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct Annotation {
  BoundingBox box;
  int class_id = 0;

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct Detection {
  BoundingBox box;
  int class_id = 0;
  double score = 0.0;
};

/// Three-channel image stored planar (channel, row, column), values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Image() = default;
  Image(int h, int w, float fill = 0.0f)
      : height(h), width(w), data(static_cast<std::size_t>(3) * h * w, fill) {}

  float& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  bool empty() const { return data.empty(); }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Label availability of a sample.
///  - kLabeled: annotations are readable (source, test splits, pseudo labels).
///  - kUnlabeled: no annotations.
///  - kSealed: ground truth exists but is withheld from training; reading it
///    trips the protocol sentinel unless explicitly unsealed (oracle runs).
enum class LabelState { kLabeled, kUnlabeled, kSealed };

/// Process-wide count of attempted reads of sealed labels.
inline std::atomic<std::int64_t>& sealed_label_reads() {
  static std::atomic<std::int64_t> counter{0};
  return counter;
}

class ImageSample {
 public:
  ImageSample() = default;
  ImageSample(int image_id, int domain_id, Image pixels,
              std::vector<Annotation> annotations,
              LabelState state = LabelState::kLabeled)
      : image_id_(image_id),
        domain_id_(domain_id),
        pixels_(std::move(pixels)),
        annotations_(std::move(annotations)),
        state_(state) {}

  int image_id() const { return image_id_; }
  int domain_id() const { return domain_id_; }
  const Image& pixels() const { return pixels_; }
  Image& mutable_pixels() { return pixels_; }
  int height() const { return pixels_.height; }
  int width() const { return pixels_.width; }
  LabelState label_state() const { return state_; }
  bool has_labels() const { return state_ == LabelState::kLabeled; }

  /// Training-visible annotations. Empty for unlabeled samples; throws
  /// ProtocolViolation (and bumps the sentinel counter) for sealed ones.
  const std::vector<Annotation>& annotations() const {
    if (state_ == LabelState::kSealed) {
      sealed_label_reads().fetch_add(1);
      std::ostringstream os;
      os << "sealed target label read: domain " << domain_id_ << " image "
         << image_id_;
      throw ProtocolViolation(os.str());
    }
    return annotations_;
  }

  /// Ground truth regardless of state. Only for persistence and for the
  /// explicit oracle unlock path.
  const std::vector<Annotation>& stored_annotations() const {
    return annotations_;
  }

  ImageSample sealed() const {
    ImageSample out = *this;
    out.state_ = LabelState::kSealed;
    return out;
  }
  ImageSample unsealed() const {
    ImageSample out = *this;
    out.state_ = LabelState::kLabeled;
    return out;
  }
  ImageSample with_labels(std::vector<Annotation> labels) const {
    ImageSample out = *this;
    out.annotations_ = std::move(labels);
    out.state_ = LabelState::kLabeled;
    return out;
  }
  ImageSample with_pixels(Image pixels) const {
    ImageSample out = *this;
    out.pixels_ = std::move(pixels);
    return out;
  }

 private:
  int image_id_ = 0;
  int domain_id_ = 0;
  Image pixels_;
  std::vector<Annotation> annotations_;
  LabelState state_ = LabelState::kLabeled;
};

enum class DomainRole { kSource, kTarget };

struct DomainSpec {
  int domain_id = 0;
  std::string name;
  DomainRole role = DomainRole::kSource;
  bool train_labeled = true;

  static DomainSpec source(int id, std::string name) {
    return {id, std::move(name), DomainRole::kSource, true};
  }
  static DomainSpec target(int id, std::string name) {
    return {id, std::move(name), DomainRole::kTarget, false};
  }
};

struct DomainDataset {
  DomainSpec spec;
  std::vector<ImageSample> train;
  std::vector<ImageSample> test;

  std::size_t annotation_count() const {
    std::size_t n = 0;
    for (const auto* split : {&train, &test})
      for (const auto& s : *split) n += s.stored_annotations().size();
    return n;
  }
};

/// Checks the domain-set invariant: exactly one labeled source, every other
/// domain an unlabeled target.
inline void validate_domains(const std::vector<DomainDataset>& datasets) {
  int sources = 0;
  for (const auto& d : datasets) {
    if (d.spec.role == DomainRole::kSource) {
      ++sources;
      if (!d.spec.train_labeled)
        throw ValidationError("source domain '" + d.spec.name +
                              "' must have labeled train split");
    } else if (d.spec.train_labeled) {
      throw ValidationError("target domain '" + d.spec.name +
                            "' must not have labeled train split");
    }
  }
  if (sources != 1)
    throw ValidationError("exactly one source domain required, got " +
                          std::to_string(sources));
}

inline void validate_annotation(const Annotation& a, int num_classes,
                                const std::string& where) {
  if (!a.box.valid())
    throw ValidationError("degenerate box at " + where);
  if (a.class_id < 0 || a.class_id >= num_classes)
    throw ValidationError("class id " + std::to_string(a.class_id) +
                          " out of range at " + where);
}

}  // namespace mda
