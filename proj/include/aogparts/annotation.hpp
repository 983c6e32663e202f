#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "aogparts/errors.hpp"
#include "aogparts/feature_volume.hpp"
#include "aogparts/geometry.hpp"

namespace aogparts {

/// Ground-truth part box and human-assigned template for one image.
struct PartAnnotation {
    std::string image_id;
    std::string part_name;
    int template_id = 0;
    Box bbox;

    friend bool operator==(const PartAnnotation&, const PartAnnotation&) = default;
};

inline std::vector<Violation> validate_annotation(const PartAnnotation& a, double image_width,
                                                  double image_height, int template_count) {
    std::vector<Violation> out;
    const std::string where = "annotation " + a.image_id;
    if (!(a.bbox.x1 < a.bbox.x2) || !(a.bbox.y1 < a.bbox.y2)) {
        out.push_back({where, "bbox must satisfy x1 < x2 and y1 < y2"});
    }
    if (a.bbox.x1 < 0 || a.bbox.y1 < 0 || a.bbox.x2 > image_width || a.bbox.y2 > image_height) {
        out.push_back({where, "bbox outside image bounds"});
    }
    if (a.template_id < 0 || a.template_id >= template_count) {
        out.push_back({where, "template id " + std::to_string(a.template_id) + " outside [0, " +
                                  std::to_string(template_count) + ")"});
    }
    return out;
}

inline nlohmann::json annotations_to_json(const std::vector<PartAnnotation>& anns) {
    auto arr = nlohmann::json::array();
    for (const auto& a : anns) {
        arr.push_back({{"image", a.image_id},
                       {"part", a.part_name},
                       {"template", a.template_id},
                       {"bbox", {a.bbox.x1, a.bbox.y1, a.bbox.x2, a.bbox.y2}}});
    }
    return arr;
}

inline std::vector<PartAnnotation> annotations_from_json(const nlohmann::json& doc) {
    if (!doc.is_array()) {
        throw FormatError("annotations must be a JSON array");
    }
    std::vector<PartAnnotation> out;
    for (const auto& item : doc) {
        try {
            PartAnnotation a;
            a.image_id = item.at("image").get<std::string>();
            a.part_name = item.value("part", std::string{});
            a.template_id = item.at("template").get<int>();
            const auto& b = item.at("bbox");
            if (!b.is_array() || b.size() != 4) {
                throw FormatError("bbox must have four numbers");
            }
            a.bbox = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
            out.push_back(std::move(a));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(std::string("malformed annotation: ") + e.what());
        }
    }
    return out;
}

inline std::vector<PartAnnotation> load_annotations(const std::filesystem::path& path) {
    try {
        return annotations_from_json(nlohmann::json::parse(read_file(path)));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

} // namespace aogparts
