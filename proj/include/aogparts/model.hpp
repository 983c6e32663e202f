#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "aogparts/annotation.hpp"
#include "aogparts/errors.hpp"
#include "aogparts/feature_volume.hpp"
#include "aogparts/geometry.hpp"

namespace aogparts {

/// Constants of the terminal, AND-node and mining scores.
struct ScoreWeights {
    double lambda_rsp = 1.5;
    double lambda_loc = 1.0 / 3.0;
    double lambda_pair = 10.0;
    double lambda_unsup = 5.0;
    double lambda_close = 0.4;
    double lambda_inf = 5.0;
    double s_none = -3.0;
    double d_px = 37.0;             // vote truncation distance
    double deform_range_px = 75.0;  // side of a pattern's square deformation range
    int neighbor_count = 15;        // upper-layer neighbors entering the pair term
    bool loc_in_units = false;      // measure the deformation penalty in layer units instead of pixels

    friend bool operator==(const ScoreWeights&, const ScoreWeights&) = default;
};

inline std::vector<Violation> validate_weights(const ScoreWeights& w) {
    std::vector<Violation> out;
    const auto nonneg = [&](double v, const char* name) {
        if (!(v >= 0.0) || !std::isfinite(v)) {
            out.push_back({"weights", std::string(name) + " must be a finite value >= 0"});
        }
    };
    nonneg(w.lambda_rsp, "lambda_rsp");
    nonneg(w.lambda_loc, "lambda_loc");
    nonneg(w.lambda_pair, "lambda_pair");
    nonneg(w.lambda_unsup, "lambda_unsup");
    nonneg(w.lambda_close, "lambda_close");
    nonneg(w.lambda_inf, "lambda_inf");
    if (!std::isfinite(w.s_none)) {
        out.push_back({"weights", "s_none must be finite"});
    }
    if (!(w.d_px > 0)) {
        out.push_back({"weights", "d_px must be > 0"});
    }
    if (!(w.deform_range_px > 0)) {
        out.push_back({"weights", "deform_range_px must be > 0"});
    }
    if (w.neighbor_count < 0) {
        out.push_back({"weights", "neighbor_count must be >= 0"});
    }
    return out;
}

/// A mined sub-part: one conv-slice of one layer, an ideal position and the
/// average displacement to its parent template center.
struct LatentPattern {
    std::uint32_t layer_id = 0;
    std::uint32_t slice = 0;
    Point ideal_center_px;
    Point displacement_px;
    double mined_score = 0.0;

    friend bool operator==(const LatentPattern&, const LatentPattern&) = default;
};

/// AND node with a fixed region scale. Patterns are kept sorted by
/// descending layer id, the order in which they are parsed.
struct PartTemplate {
    int template_id = 0;
    Scale scale;
    Point anchor_px;          // mean annotated part center
    int annotation_count = 0;
    std::vector<LatentPattern> patterns;

    friend bool operator==(const PartTemplate&, const PartTemplate&) = default;
};

/// Mining bookkeeping carried with a learned graph.
struct Provenance {
    int annotation_count = 0;
    std::uint32_t image_width_px = 0;
    std::uint32_t image_height_px = 0;
    int epsilon_units = 0;                 // NMS window used when mining, 0 if unknown
    std::vector<LayerGeometry> layers;     // geometry of the layers mined from
    std::map<int, std::map<std::uint32_t, int>> nk; // template -> layer -> selected count
    std::map<int, double> lambda_tmp;      // template -> lambda_inf * sum_k n_k

    const LayerGeometry* find_layer(std::uint32_t id) const {
        const auto it = std::find_if(layers.begin(), layers.end(),
                                     [&](const LayerGeometry& g) { return g.layer_id == id; });
        return it == layers.end() ? nullptr : &*it;
    }

    friend bool operator==(const Provenance&, const Provenance&) = default;
};

/// Four-layer And-Or graph for one semantic part.
struct Aog {
    std::string part_name;
    ScoreWeights weights;
    std::vector<PartTemplate> templates;
    Provenance provenance;

    friend bool operator==(const Aog&, const Aog&) = default;
};

inline constexpr int kAogFormatVersion = 1;

/// Templates with scales from the annotations, no patterns yet.
inline Aog build_skeleton(const std::vector<PartAnnotation>& annotations, const ScoreWeights& weights) {
    if (annotations.empty()) {
        throw ArgumentError("build_skeleton needs at least one annotation");
    }
    std::map<int, std::vector<Box>> boxes;
    for (const auto& a : annotations) {
        if (!(a.bbox.x1 < a.bbox.x2) || !(a.bbox.y1 < a.bbox.y2)) {
            throw ArgumentError("annotation for '" + a.image_id + "' has an empty box");
        }
        boxes[a.template_id].push_back(a.bbox);
    }
    const int first = boxes.begin()->first;
    const int last = boxes.rbegin()->first;
    if (last - first + 1 != static_cast<int>(boxes.size())) {
        throw ArgumentError("template ids must form a contiguous range");
    }

    Aog aog;
    aog.part_name = annotations.front().part_name;
    aog.weights = weights;
    aog.provenance.annotation_count = static_cast<int>(annotations.size());
    for (auto& [id, list] : boxes) {
        // sorted summation
        std::sort(list.begin(), list.end(), [](const Box& a, const Box& b) {
            return std::tie(a.x1, a.y1, a.x2, a.y2) < std::tie(b.x1, b.y1, b.x2, b.y2);
        });
        double w = 0, h = 0, cx = 0, cy = 0;
        for (const auto& b : list) {
            w += b.width();
            h += b.height();
            cx += b.center().x;
            cy += b.center().y;
        }
        const double n = static_cast<double>(list.size());
        PartTemplate tpl;
        tpl.template_id = id;
        tpl.scale = {w / n, h / n};
        tpl.anchor_px = {cx / n, cy / n};
        tpl.annotation_count = static_cast<int>(list.size());
        aog.templates.push_back(std::move(tpl));
    }
    return aog;
}

inline std::vector<Violation> validate_aog(const Aog& aog) {
    std::vector<Violation> out = validate_weights(aog.weights);
    if (aog.templates.empty()) {
        out.push_back({"aog", "graph has no templates"});
    }
    std::set<int> ids;
    const auto& prov = aog.provenance;
    for (const auto& tpl : aog.templates) {
        const std::string where = "template " + std::to_string(tpl.template_id);
        if (!ids.insert(tpl.template_id).second) {
            out.push_back({where, "duplicate template id"});
        }
        if (!(tpl.scale.width > 0) || !(tpl.scale.height > 0)) {
            out.push_back({where, "scale must be positive"});
        }
        for (std::size_t i = 0; i < tpl.patterns.size(); ++i) {
            const auto& p = tpl.patterns[i];
            const std::string pw = where + ", pattern " + std::to_string(i);
            if (i > 0 && p.layer_id > tpl.patterns[i - 1].layer_id) {
                out.push_back({pw, "patterns must be ordered by descending layer"});
            }
            if (!std::isfinite(p.ideal_center_px.x) || !std::isfinite(p.ideal_center_px.y) ||
                !std::isfinite(p.displacement_px.x) || !std::isfinite(p.displacement_px.y)) {
                out.push_back({pw, "non-finite position"});
            }
            if (prov.image_width_px > 0 &&
                (p.ideal_center_px.x < 0 || p.ideal_center_px.y < 0 || p.ideal_center_px.x >= prov.image_width_px ||
                 p.ideal_center_px.y >= prov.image_height_px)) {
                out.push_back({pw, "ideal center outside image"});
            }
            const auto* g = prov.find_layer(p.layer_id);
            if (!prov.layers.empty() && g == nullptr) {
                out.push_back({pw, "layer " + std::to_string(p.layer_id) + " unknown to provenance"});
            }
            if (g != nullptr && p.slice >= g->channels) {
                out.push_back({pw, "slice " + std::to_string(p.slice) + " >= channels"});
            }
            if (g != nullptr && prov.epsilon_units > 0) {
                const double win = prov.epsilon_units * static_cast<double>(g->stride_px);
                for (std::size_t j = 0; j < i; ++j) {
                    const auto& q = tpl.patterns[j];
                    if (q.layer_id == p.layer_id && q.slice == p.slice &&
                        std::abs(q.ideal_center_px.x - p.ideal_center_px.x) < win &&
                        std::abs(q.ideal_center_px.y - p.ideal_center_px.y) < win) {
                        out.push_back({pw, "shares an epsilon window with pattern " + std::to_string(j)});
                    }
                }
            }
        }
    }
    return out;
}

struct AogStats {
    std::size_t template_count = 0;
    double patterns_per_template = 0.0;
    double units_per_pattern = 0.0; // mean size of the deformation ranges, in units
};

inline AogStats aog_stats(const Aog& aog) {
    AogStats s;
    s.template_count = aog.templates.size();
    std::size_t patterns = 0;
    std::size_t counted = 0;
    double units = 0.0;
    for (const auto& tpl : aog.templates) {
        patterns += tpl.patterns.size();
        for (const auto& p : tpl.patterns) {
            if (const auto* g = aog.provenance.find_layer(p.layer_id)) {
                units += static_cast<double>(units_in_range(*g, p.ideal_center_px, aog.weights.deform_range_px).size());
                ++counted;
            }
        }
    }
    if (s.template_count > 0) {
        s.patterns_per_template = static_cast<double>(patterns) / static_cast<double>(s.template_count);
    }
    if (counted > 0) {
        s.units_per_pattern = units / static_cast<double>(counted);
    }
    return s;
}

// ---------------------------------------------------------------------------
// JSON document

inline nlohmann::json weights_to_json(const ScoreWeights& w) {
    return {{"lambda_rsp", w.lambda_rsp},     {"lambda_loc", w.lambda_loc},
            {"lambda_pair", w.lambda_pair},   {"lambda_unsup", w.lambda_unsup},
            {"lambda_close", w.lambda_close}, {"lambda_inf", w.lambda_inf},
            {"s_none", w.s_none},             {"d", w.d_px},
            {"deform_range", w.deform_range_px}, {"neighbors", w.neighbor_count},
            {"loc_in_units", w.loc_in_units}};
}

/// Overrides fields present in `j`, leaving the rest of `base` untouched.
inline ScoreWeights weights_from_json(const nlohmann::json& j, ScoreWeights base = {}) {
    if (!j.is_object()) {
        throw FormatError("weights must be a JSON object");
    }
    static const std::set<std::string> known{"lambda_rsp", "lambda_loc", "lambda_pair", "lambda_unsup",
                                             "lambda_close", "lambda_inf", "s_none", "d",
                                             "deform_range", "neighbors", "loc_in_units"};
    for (const auto& [key, _] : j.items()) {
        if (!known.contains(key)) {
            throw FormatError("unknown weight '" + key + "'");
        }
    }
    try {
        base.lambda_rsp = j.value("lambda_rsp", base.lambda_rsp);
        base.lambda_loc = j.value("lambda_loc", base.lambda_loc);
        base.lambda_pair = j.value("lambda_pair", base.lambda_pair);
        base.lambda_unsup = j.value("lambda_unsup", base.lambda_unsup);
        base.lambda_close = j.value("lambda_close", base.lambda_close);
        base.lambda_inf = j.value("lambda_inf", base.lambda_inf);
        base.s_none = j.value("s_none", base.s_none);
        base.d_px = j.value("d", base.d_px);
        base.deform_range_px = j.value("deform_range", base.deform_range_px);
        base.neighbor_count = j.value("neighbors", base.neighbor_count);
        base.loc_in_units = j.value("loc_in_units", base.loc_in_units);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed weights: ") + e.what());
    }
    if (const auto v = validate_weights(base); !v.empty()) {
        throw FormatError(v.front().message);
    }
    return base;
}

inline nlohmann::json geometry_to_json(const LayerGeometry& g) {
    return {{"id", g.layer_id},         {"channels", g.channels}, {"height", g.height},
            {"width", g.width},         {"stride", g.stride_px},  {"rf_size", g.rf_size_px},
            {"offset", g.offset_px}};
}

inline LayerGeometry geometry_from_json(const nlohmann::json& j) {
    LayerGeometry g;
    g.layer_id = j.at("id").get<std::uint32_t>();
    g.channels = j.at("channels").get<std::uint32_t>();
    g.height = j.at("height").get<std::uint32_t>();
    g.width = j.at("width").get<std::uint32_t>();
    g.stride_px = j.at("stride").get<float>();
    g.rf_size_px = j.at("rf_size").get<float>();
    g.offset_px = j.at("offset").get<float>();
    return g;
}

inline nlohmann::json aog_to_json(const Aog& aog) {
    nlohmann::json doc;
    doc["version"] = kAogFormatVersion;
    doc["part"] = aog.part_name;
    doc["weights"] = weights_to_json(aog.weights);
    doc["templates"] = nlohmann::json::array();
    for (const auto& tpl : aog.templates) {
        nlohmann::json t{{"id", tpl.template_id},
                         {"scale", {tpl.scale.width, tpl.scale.height}},
                         {"anchor", {tpl.anchor_px.x, tpl.anchor_px.y}},
                         {"annotations", tpl.annotation_count},
                         {"patterns", nlohmann::json::array()}};
        for (const auto& p : tpl.patterns) {
            t["patterns"].push_back({{"layer", p.layer_id},
                                     {"slice", p.slice},
                                     {"center", {p.ideal_center_px.x, p.ideal_center_px.y}},
                                     {"dp", {p.displacement_px.x, p.displacement_px.y}},
                                     {"score", p.mined_score}});
        }
        doc["templates"].push_back(std::move(t));
    }
    const auto& prov = aog.provenance;
    nlohmann::json pj;
    pj["annotation_count"] = prov.annotation_count;
    pj["image"] = {prov.image_width_px, prov.image_height_px};
    pj["epsilon"] = prov.epsilon_units;
    pj["layers"] = nlohmann::json::array();
    for (const auto& g : prov.layers) {
        pj["layers"].push_back(geometry_to_json(g));
    }
    pj["nk"] = nlohmann::json::array();
    for (const auto& [tid, per_layer] : prov.nk) {
        for (const auto& [layer, n] : per_layer) {
            pj["nk"].push_back({{"template", tid}, {"layer", layer}, {"n", n}});
        }
    }
    pj["lambda_tmp"] = nlohmann::json::array();
    for (const auto& [tid, v] : prov.lambda_tmp) {
        pj["lambda_tmp"].push_back({{"template", tid}, {"value", v}});
    }
    doc["provenance"] = std::move(pj);
    return doc;
}

namespace detail {
inline Point point_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 2) {
        throw FormatError("expected a two-element [x, y] array");
    }
    return {j[0].get<double>(), j[1].get<double>()};
}
} // namespace detail

inline Aog aog_from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) {
        throw FormatError("AOG document must be a JSON object");
    }
    if (!doc.contains("version")) {
        throw FormatError("AOG document has no version");
    }
    if (doc["version"] != kAogFormatVersion) {
        throw FormatError("unsupported AOG version " + doc["version"].dump());
    }
    if (!doc.contains("weights")) {
        throw FormatError("AOG document has no weights");
    }
    if (!doc.contains("templates")) {
        throw FormatError("AOG document has no templates");
    }
    Aog aog;
    try {
        aog.part_name = doc.value("part", std::string{});
        aog.weights = weights_from_json(doc["weights"]);
        for (const auto& t : doc["templates"]) {
            PartTemplate tpl;
            tpl.template_id = t.at("id").get<int>();
            const Point scale = detail::point_from_json(t.at("scale"));
            tpl.scale = {scale.x, scale.y};
            if (t.contains("anchor")) {
                tpl.anchor_px = detail::point_from_json(t["anchor"]);
            }
            tpl.annotation_count = t.value("annotations", 0);
            for (const auto& p : t.at("patterns")) {
                LatentPattern lp;
                lp.layer_id = p.at("layer").get<std::uint32_t>();
                lp.slice = p.at("slice").get<std::uint32_t>();
                lp.ideal_center_px = detail::point_from_json(p.at("center"));
                lp.displacement_px = detail::point_from_json(p.at("dp"));
                lp.mined_score = p.value("score", 0.0);
                tpl.patterns.push_back(lp);
            }
            aog.templates.push_back(std::move(tpl));
        }
        if (doc.contains("provenance")) {
            const auto& pj = doc["provenance"];
            auto& prov = aog.provenance;
            prov.annotation_count = pj.value("annotation_count", 0);
            if (pj.contains("image")) {
                prov.image_width_px = pj["image"].at(0).get<std::uint32_t>();
                prov.image_height_px = pj["image"].at(1).get<std::uint32_t>();
            }
            prov.epsilon_units = pj.value("epsilon", 0);
            for (const auto& g : pj.value("layers", nlohmann::json::array())) {
                prov.layers.push_back(geometry_from_json(g));
            }
            for (const auto& e : pj.value("nk", nlohmann::json::array())) {
                prov.nk[e.at("template").get<int>()][e.at("layer").get<std::uint32_t>()] = e.at("n").get<int>();
            }
            for (const auto& e : pj.value("lambda_tmp", nlohmann::json::array())) {
                prov.lambda_tmp[e.at("template").get<int>()] = e.at("value").get<double>();
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed AOG document: ") + e.what());
    }
    return aog;
}

inline std::string serialize(const Aog& aog) { return aog_to_json(aog).dump(2); }

inline Aog deserialize(std::string_view text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("AOG document is not valid JSON: ") + e.what());
    }
    return aog_from_json(doc);
}

} // namespace aogparts
