#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mda/core/png_io.hpp"
#include "mda/core/types.hpp"
#include "mda/errors.hpp"

// COCO-style annotation documents.
//
// On disk a box is stored as "bbox": [x, y, w, h]. Writers also emit the
// corner form as "bbox_xyxy" so that a round trip is bit-exact for boxes whose
// x + w is not exactly representable; readers prefer it when present. Each
// image may carry a "split" key ("train" | "test", default "train").

namespace mda {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct CocoLoadOptions {
  bool load_pixels = true;
  /// When nonzero, category ids must map into [0, num_classes).
  int num_classes = 0;
};

/// Converts a COCO [x, y, w, h] box to corners. Rejects w <= 0 or h <= 0.
inline BoundingBox bbox_from_xywh(double x, double y, double w, double h,
                                  const std::string& where) {
  if (!(w > 0.0) || !(h > 0.0))
    throw ValidationError("degenerate bbox (w=" + std::to_string(w) +
                          ", h=" + std::to_string(h) + ") in " + where);
  return {x, y, x + w, y + h};
}

inline DomainDataset load_annotations(const fs::path& path,
                                      const DomainSpec& domain,
                                      const CocoLoadOptions& options = {}) {
  if (!fs::exists(path))
    throw LoadError("annotation file not found: " + path.string());
  json doc;
  {
    std::ifstream in(path);
    try {
      in >> doc;
    } catch (const json::exception& e) {
      throw LoadError("cannot parse " + path.string() + ": " + e.what());
    }
  }
  if (!doc.contains("images") || !doc.contains("annotations") ||
      !doc.contains("categories"))
    throw LoadError(path.string() +
                    ": expected images, annotations and categories");

  // Category ids are mapped to dense class indices in ascending id order.
  std::vector<int> category_ids;
  for (const auto& c : doc["categories"]) category_ids.push_back(c.at("id"));
  std::sort(category_ids.begin(), category_ids.end());
  std::map<int, int> class_of;
  for (std::size_t i = 0; i < category_ids.size(); ++i)
    class_of[category_ids[i]] = static_cast<int>(i);
  if (options.num_classes > 0 &&
      static_cast<int>(category_ids.size()) > options.num_classes)
    throw ValidationError(path.string() + ": more categories than classes");

  std::map<int, std::vector<Annotation>> per_image;
  for (const auto& a : doc["annotations"]) {
    const int ann_id = a.value("id", -1);
    const std::string where = "annotation id " + std::to_string(ann_id);
    const auto& bb = a.at("bbox");
    if (bb.size() != 4) throw ValidationError("bbox must have 4 values in " + where);
    BoundingBox box = bbox_from_xywh(bb[0], bb[1], bb[2], bb[3], where);
    if (a.contains("bbox_xyxy")) {
      const auto& c = a["bbox_xyxy"];
      box = {c[0].get<double>(), c[1].get<double>(), c[2].get<double>(),
             c[3].get<double>()};
      if (!box.valid()) throw ValidationError("degenerate bbox_xyxy in " + where);
    }
    const int cat = a.at("category_id");
    auto it = class_of.find(cat);
    if (it == class_of.end())
      throw ValidationError("unknown category " + std::to_string(cat) + " in " +
                            where);
    per_image[a.at("image_id").get<int>()].push_back({box, it->second});
  }

  DomainDataset ds;
  ds.spec = domain;
  const fs::path base = path.parent_path();
  for (const auto& im : doc["images"]) {
    const int id = im.at("id");
    const int w = im.at("width");
    const int h = im.at("height");
    if (w <= 0 || h <= 0)
      throw ValidationError("image " + std::to_string(id) + " has no extent");
    Image pixels;
    if (options.load_pixels) {
      pixels = read_png(base / im.at("file_name").get<std::string>());
      if (pixels.width != w || pixels.height != h)
        throw LoadError("image " + std::to_string(id) +
                        " dimensions differ from the document");
    } else {
      pixels = Image(h, w);
    }
    const std::string split = im.value("split", "train");
    auto anns = per_image[id];
    const bool is_test = split == "test";
    LabelState state = LabelState::kLabeled;
    if (!is_test && !domain.train_labeled) state = LabelState::kSealed;
    ImageSample sample(id, domain.domain_id, std::move(pixels), std::move(anns),
                       state);
    (is_test ? ds.test : ds.train).push_back(std::move(sample));
  }
  return ds;
}

struct CocoWriteOptions {
  bool write_pixels = true;
  /// Directory holding image files, relative to the document.
  std::string image_dir;
  int num_classes = 0;
  /// Writes stored ground truth even for sealed samples (benchmark export).
  bool include_sealed = true;
};

inline json to_coco(const DomainDataset& ds, const CocoWriteOptions& options) {
  json doc;
  doc["info"] = {{"domain", ds.spec.name},
                 {"domain_id", ds.spec.domain_id},
                 {"role", ds.spec.role == DomainRole::kSource ? "source" : "target"}};
  doc["images"] = json::array();
  doc["annotations"] = json::array();
  doc["categories"] = json::array();
  int max_class = options.num_classes;
  for (const auto* split : {&ds.train, &ds.test})
    for (const auto& s : *split)
      for (const auto& a : s.stored_annotations())
        max_class = std::max(max_class, a.class_id + 1);
  for (int c = 0; c < max_class; ++c)
    doc["categories"].push_back({{"id", c + 1}, {"name", "class_" + std::to_string(c)}});

  int ann_id = 1;
  auto emit = [&](const std::vector<ImageSample>& split, const char* name) {
    for (const auto& s : split) {
      const std::string file =
          (fs::path(options.image_dir) / (std::to_string(s.image_id()) + ".png"))
              .generic_string();
      doc["images"].push_back({{"id", s.image_id()},
                               {"file_name", file},
                               {"width", s.width()},
                               {"height", s.height()},
                               {"split", name}});
      if (s.label_state() == LabelState::kSealed && !options.include_sealed)
        continue;
      for (const auto& a : s.stored_annotations()) {
        const auto& b = a.box;
        doc["annotations"].push_back(
            {{"id", ann_id++},
             {"image_id", s.image_id()},
             {"category_id", a.class_id + 1},
             {"bbox", {b.x_min, b.y_min, b.width(), b.height()}},
             {"bbox_xyxy", {b.x_min, b.y_min, b.x_max, b.y_max}},
             {"area", b.area()},
             {"iscrowd", 0}});
      }
    }
  };
  emit(ds.train, "train");
  emit(ds.test, "test");
  return doc;
}

/// Writes `<doc_path>` and, when requested, one PNG per image under
/// `<doc dir>/<image_dir>/<image_id>.png`.
inline void write_annotations(const DomainDataset& ds, const fs::path& doc_path,
                              const CocoWriteOptions& options) {
  const fs::path base = doc_path.parent_path();
  if (!base.empty()) fs::create_directories(base);
  if (options.write_pixels) {
    fs::create_directories(base / options.image_dir);
    for (const auto* split : {&ds.train, &ds.test})
      for (const auto& s : *split)
        write_png(base / options.image_dir /
                      (std::to_string(s.image_id()) + ".png"),
                  s.pixels());
  }
  std::ofstream out(doc_path);
  if (!out) throw LoadError("cannot write " + doc_path.string());
  out << to_coco(ds, options).dump(1) << "\n";
}

}  // namespace mda
