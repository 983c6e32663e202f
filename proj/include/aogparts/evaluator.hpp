#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "aogparts/annotation.hpp"
#include "aogparts/errors.hpp"
#include "aogparts/feature_volume.hpp"
#include "aogparts/geometry.hpp"
#include "aogparts/parser.hpp"

namespace aogparts {

inline double iou(const Box& a, const Box& b) {
    const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    return uni > 0 ? inter / uni : 0.0;
}

inline double iou(const Region& a, const Region& b) { return iou(a.box(), b.box()); }

inline constexpr double kDetectionIou = 0.5;

/// True when the center lies inside the closed ground-truth box.
inline bool center_prediction(Point pred, const Box& gt) {
    return pred.x >= gt.x1 && pred.x <= gt.x2 && pred.y >= gt.y1 && pred.y <= gt.y2;
}

/// Center distance divided by the image diagonal.
inline double normalized_distance(Point pred, Point gt, double image_width, double image_height) {
    const double diag = std::hypot(image_width, image_height);
    return diag > 0 ? norm(pred - gt) / diag : 0.0;
}

struct EvalRecord {
    std::string image_id;
    int template_id = 0;
    Point predicted_center;
    Box predicted_box;
    Box gt_box;
    double overlap = 0.0;
    bool detected = false;
    bool center_correct = false;
    double distance = 0.0;
};

struct EvalReport {
    std::vector<EvalRecord> records;
    double detection_rate = 0.0;
    double center_rate = 0.0;
    double mean_distance = 0.0;
};

inline EvalRecord evaluate_one(const ParseGraph& g, const PartAnnotation& gt, double image_width,
                               double image_height) {
    EvalRecord r;
    r.image_id = gt.image_id;
    r.template_id = g.chosen_template_id;
    r.predicted_center = g.part_region.center;
    r.predicted_box = g.part_region.box();
    r.gt_box = gt.bbox;
    r.overlap = iou(r.predicted_box, gt.bbox);
    r.detected = r.overlap >= kDetectionIou;
    r.center_correct = center_prediction(r.predicted_center, gt.bbox);
    r.distance = normalized_distance(r.predicted_center, gt.bbox.center(), image_width, image_height);
    return r;
}

inline EvalReport summarize(std::vector<EvalRecord> records) {
    EvalReport rep;
    rep.records = std::move(records);
    if (rep.records.empty()) {
        return rep;
    }
    for (const auto& r : rep.records) {
        rep.detection_rate += r.detected ? 1.0 : 0.0;
        rep.center_rate += r.center_correct ? 1.0 : 0.0;
        rep.mean_distance += r.distance;
    }
    const double n = static_cast<double>(rep.records.size());
    rep.detection_rate /= n;
    rep.center_rate /= n;
    rep.mean_distance /= n;
    return rep;
}

inline nlohmann::json eval_report_to_json(const EvalReport& rep) {
    nlohmann::json j;
    j["images"] = rep.records.size();
    j["detection_rate"] = rep.detection_rate;
    j["center_rate"] = rep.center_rate;
    j["mean_normalized_distance"] = rep.mean_distance;
    j["distance_normalizer"] = "image_diagonal";
    j["records"] = nlohmann::json::array();
    for (const auto& r : rep.records) {
        const auto& p = r.predicted_box;
        const auto& g = r.gt_box;
        j["records"].push_back({{"image", r.image_id},
                                {"template", r.template_id},
                                {"center", {r.predicted_center.x, r.predicted_center.y}},
                                {"bbox", {p.x1, p.y1, p.x2, p.y2}},
                                {"gt_bbox", {g.x1, g.y1, g.x2, g.y2}},
                                {"iou", r.overlap},
                                {"detected", r.detected},
                                {"center_correct", r.center_correct},
                                {"distance", r.distance}});
    }
    return j;
}

// ---------------------------------------------------------------------------
// Heat maps

/// Sum of the chosen units' raw activations on one layer, one value per cell.
inline std::vector<double> heatmap(const ParseGraph& g, const FeatureVolume& vol, std::uint32_t layer_id) {
    const auto& layer = vol.layer(layer_id);
    std::vector<double> map(layer.geom.slice_size(), 0.0);
    for (const auto& r : g.patterns) {
        if (r.layer_id != layer_id) {
            continue;
        }
        map[static_cast<std::size_t>(r.unit.iy) * layer.geom.width + r.unit.ix] +=
            layer.at(r.slice, r.unit.iy, r.unit.ix);
    }
    return map;
}

/// Binary PGM (P5) of the heat map, min-max scaled to 0..255. A flat map is all zero.
inline void heatmap_export(const ParseGraph& g, const FeatureVolume& vol, std::uint32_t layer_id,
                           const std::filesystem::path& path) {
    const auto& geom = vol.layer(layer_id).geom;
    const auto map = heatmap(g, vol, layer_id);
    const auto [lo, hi] = std::minmax_element(map.begin(), map.end());
    std::string pixels(map.size(), '\0');
    if (*hi > *lo) {
        for (std::size_t i = 0; i < map.size(); ++i) {
            pixels[i] = static_cast<char>(std::lround(255.0 * (map[i] - *lo) / (*hi - *lo)));
        }
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    out << "P5\n" << geom.width << ' ' << geom.height << "\n255\n";
    out.write(pixels.data(), static_cast<std::streamsize>(pixels.size()));
    if (!out) {
        throw IoError("write failed for '" + path.string() + "'");
    }
}

} // namespace aogparts
