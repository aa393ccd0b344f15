#pragma once

#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mda/core/types.hpp"
#include "mda/detector/infer.hpp"
#include "mda/detector/model.hpp"
#include "mda/eval/average_precision.hpp"

namespace mda::eval {

struct DomainEval {
  int domain_id = 0;
  std::string name;
  /// Per class; kNotPresent when the class has no ground truth.
  std::vector<double> ap;
  std::vector<int> detection_count;
  std::vector<int> ground_truth_count;
  double map = 0.0;
};

struct EvalReport {
  double iou_threshold = 0.5;
  int num_classes = 0;
  std::vector<DomainEval> domains;

  const DomainEval* find(int domain_id) const {
    for (const auto& d : domains)
      if (d.domain_id == domain_id) return &d;
    return nullptr;
  }

  /// Plain-text table; numbers printed with enough digits to round-trip so
  /// that two reports are equal iff their texts are.
  std::string to_text() const {
    std::ostringstream os;
    char buf[64];
    os << "iou_threshold " << iou_threshold << "\n";
    for (const auto& d : domains) {
      std::snprintf(buf, sizeof buf, "%.17g", d.map);
      os << "domain " << d.domain_id << " " << d.name << " mAP " << buf << "\n";
      for (int c = 0; c < num_classes; ++c) {
        os << "  class " << c << " AP ";
        if (present(d.ap[c])) {
          std::snprintf(buf, sizeof buf, "%.17g", d.ap[c]);
          os << buf;
        } else {
          os << "n/a";
        }
        os << " detections " << d.detection_count[c] << " ground_truth "
           << d.ground_truth_count[c] << "\n";
      }
    }
    return os.str();
  }

  /// FNV-1a of to_text().
  std::uint64_t digest() const {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : to_text()) {
      h ^= ch;
      h *= 1099511628211ull;
    }
    return h;
  }
};

inline void to_json(nlohmann::json& j, const DomainEval& d) {
  nlohmann::json ap = nlohmann::json::array();
  for (double v : d.ap) ap.push_back(present(v) ? nlohmann::json(v) : nlohmann::json(nullptr));
  j = {{"domain_id", d.domain_id}, {"name", d.name}, {"ap", ap},
       {"detections", d.detection_count}, {"ground_truth", d.ground_truth_count},
       {"mAP", d.map}};
}

inline void from_json(const nlohmann::json& j, DomainEval& d) {
  d.domain_id = j.at("domain_id");
  d.name = j.at("name");
  d.ap.clear();
  for (const auto& v : j.at("ap")) d.ap.push_back(v.is_null() ? kNotPresent : v.get<double>());
  d.detection_count = j.at("detections").get<std::vector<int>>();
  d.ground_truth_count = j.at("ground_truth").get<std::vector<int>>();
  d.map = j.at("mAP");
}

inline void to_json(nlohmann::json& j, const EvalReport& r) {
  j = {{"iou_threshold", r.iou_threshold}, {"num_classes", r.num_classes}, {"domains", r.domains}};
}

inline void from_json(const nlohmann::json& j, EvalReport& r) {
  r.iou_threshold = j.at("iou_threshold");
  r.num_classes = j.at("num_classes");
  r.domains = j.at("domains").get<std::vector<DomainEval>>();
}

/// Any detector: maps a list of images to one detection list per image.
using DetectFn =
    std::function<std::vector<std::vector<Detection>>(const std::vector<const Image*>&)>;

inline DomainEval evaluate_domain(const DetectFn& detect, const DomainDataset& ds,
                                  int num_classes, double iou_threshold) {
  DomainEval out;
  out.domain_id = ds.spec.domain_id;
  out.name = ds.spec.name;
  std::vector<const Image*> images;
  for (const auto& s : ds.test) {
    if (s.label_state() != LabelState::kLabeled)
      throw ValidationError("test split of '" + ds.spec.name + "' is not labeled");
    images.push_back(&s.pixels());
  }
  const auto detections = images.empty() ? std::vector<std::vector<Detection>>{} : detect(images);
  std::vector<std::vector<ImageDetection>> per_class_dets(num_classes);
  std::vector<std::map<int, std::vector<BoundingBox>>> per_class_gt(num_classes);
  out.detection_count.assign(num_classes, 0);
  out.ground_truth_count.assign(num_classes, 0);
  for (std::size_t i = 0; i < ds.test.size(); ++i) {
    for (const auto& a : ds.test[i].annotations()) {
      if (a.class_id < 0 || a.class_id >= num_classes)
        throw ValidationError("ground truth class out of range in '" + ds.spec.name + "'");
      per_class_gt[a.class_id][static_cast<int>(i)].push_back(a.box);
      ++out.ground_truth_count[a.class_id];
    }
    for (const auto& d : detections[i]) {
      if (d.class_id < 0 || d.class_id >= num_classes) continue;
      per_class_dets[d.class_id].push_back({static_cast<int>(i), d.box, d.score});
      ++out.detection_count[d.class_id];
    }
  }
  for (int c = 0; c < num_classes; ++c)
    out.ap.push_back(average_precision(per_class_dets[c], per_class_gt[c], iou_threshold));
  out.map = mean_ap(out.ap);
  return out;
}

inline EvalReport evaluate(const DetectFn& detect, const std::vector<DomainDataset>& datasets,
                           int num_classes, double iou_threshold = 0.5) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0))
    throw ValidationError("iou_threshold must lie in (0, 1]");
  EvalReport report;
  report.iou_threshold = iou_threshold;
  report.num_classes = num_classes;
  for (const auto& ds : datasets)
    report.domains.push_back(evaluate_domain(detect, ds, num_classes, iou_threshold));
  return report;
}

template <typename T>
EvalReport evaluate(const detector::Detector<T>& model, const std::vector<DomainDataset>& datasets,
                    double iou_threshold = 0.5, double score_floor = 0.05, double nms_iou = 0.5) {
  detector::InferConfig cfg;
  cfg.score_floor = score_floor;
  cfg.nms_iou = nms_iou;
  DetectFn fn = [&](const std::vector<const Image*>& images) {
    return detector::infer_batch(model, images, cfg);
  };
  return evaluate(fn, datasets, model.config().num_classes, iou_threshold);
}

}  // namespace mda::eval
