#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "aogparts/annotation.hpp"
#include "aogparts/errors.hpp"
#include "aogparts/feature_volume.hpp"
#include "aogparts/geometry.hpp"

namespace aogparts {

/// One planted response: a truncated Gaussian bump in a given conv-slice,
/// placed at part center + offset_px.
struct SignatureEntry {
    std::uint32_t layer_id = 0;
    std::uint32_t slice = 0;
    Point offset_px;
    double amplitude = 1.0;
    double radius_units = 1.0;
};

struct TemplateSignature {
    Scale box;
    std::vector<SignatureEntry> entries;
};

/// Recipe for a synthetic dataset with known latent patterns.
struct SynthSpec {
    int image_count = 1;
    std::uint32_t image_width_px = 0;
    std::uint32_t image_height_px = 0;
    std::vector<LayerGeometry> layers; // channels/size/stride per exported layer
    Box center_region;                 // part centers are drawn uniformly from this box
    std::vector<TemplateSignature> templates;
    double noise = 0.0;                // std-dev of the zero-mean background
    std::uint64_t seed = 0;
    std::string part_name = "part";
    std::string image_prefix = "img";
};

/// A planted pattern as the miner should rediscover it.
struct PlantedPattern {
    int template_id = 0;
    std::uint32_t layer_id = 0;
    std::uint32_t slice = 0;
    Point ideal_center_px; // unit center nearest to region center + offset
};

/// Where a bump actually landed in one image.
struct PlantedUnit {
    int image = 0;
    int template_id = 0;
    std::uint32_t layer_id = 0;
    std::uint32_t slice = 0;
    UnitIndex unit;
};

struct SynthDataset {
    std::vector<FeatureVolume> volumes;
    std::vector<PartAnnotation> annotations;
    std::vector<PlantedPattern> ground_truth;
    std::vector<PlantedUnit> planted_units;
};

inline void check_synth_spec(const SynthSpec& spec) {
    if (spec.image_count < 1) {
        throw ArgumentError("synth spec needs at least one image");
    }
    if (spec.image_width_px == 0 || spec.image_height_px == 0) {
        throw ArgumentError("synth spec needs positive image dimensions");
    }
    if (spec.layers.empty()) {
        throw ArgumentError("synth spec needs at least one layer");
    }
    if (spec.templates.empty()) {
        throw ArgumentError("synth spec needs at least one template");
    }
    if (!(spec.center_region.x1 <= spec.center_region.x2) || !(spec.center_region.y1 <= spec.center_region.y2)) {
        throw ArgumentError("synth center region is inverted");
    }
    if (spec.noise < 0) {
        throw ArgumentError("synth noise must be non-negative");
    }
    FeatureVolume probe{"probe", spec.image_width_px, spec.image_height_px, {}};
    for (const auto& g : spec.layers) {
        probe.layers.push_back({g, std::vector<float>(g.element_count(), 0.0F)});
    }
    if (const auto v = validate_volume(probe); !v.empty()) {
        throw ArgumentError("synth layer geometry invalid: " + v.front().location + ": " + v.front().message);
    }
    for (std::size_t t = 0; t < spec.templates.size(); ++t) {
        const auto& tpl = spec.templates[t];
        if (!(tpl.box.width > 0) || !(tpl.box.height > 0)) {
            throw ArgumentError("template " + std::to_string(t) + " box must be positive");
        }
        for (const auto& e : tpl.entries) {
            const auto* layer = probe.find_layer(e.layer_id);
            if (layer == nullptr) {
                throw ArgumentError("template " + std::to_string(t) + " references missing layer " +
                                    std::to_string(e.layer_id));
            }
            if (e.slice >= layer->geom.channels) {
                throw ArgumentError("template " + std::to_string(t) + " slice " + std::to_string(e.slice) +
                                    " >= channels of layer " + std::to_string(e.layer_id));
            }
            if (!(e.amplitude > spec.noise)) {
                throw ArgumentError("template " + std::to_string(t) + " bump amplitude must exceed noise level");
            }
            if (e.radius_units < 0) {
                throw ArgumentError("bump radius must be non-negative");
            }
        }
    }
}

namespace detail {

inline bool inside_image(Point p, double w, double h) {
    return p.x >= 0 && p.y >= 0 && p.x < w && p.y < h;
}

inline void write_bump(FeatureLayer& layer, std::uint32_t slice, UnitIndex at, double amplitude,
                       double radius, std::vector<char>& touched) {
    const auto& g = layer.geom;
    const int reach = static_cast<int>(std::floor(radius));
    const double sigma = radius / 2.0;
    for (int dy = -reach; dy <= reach; ++dy) {
        for (int dx = -reach; dx <= reach; ++dx) {
            const int ix = at.ix + dx;
            const int iy = at.iy + dy;
            if (ix < 0 || iy < 0 || ix >= static_cast<int>(g.width) || iy >= static_cast<int>(g.height)) {
                continue;
            }
            const double d2 = static_cast<double>(dx * dx + dy * dy);
            if (d2 > radius * radius) {
                continue;
            }
            const double v = (d2 == 0.0) ? amplitude : amplitude * std::exp(-d2 / (2.0 * sigma * sigma));
            const std::size_t idx = slice * g.slice_size() + static_cast<std::size_t>(iy) * g.width + ix;
            float& cell = layer.values[idx];
            if (!touched[idx] || static_cast<float>(v) > cell) {
                cell = static_cast<float>(v);
            }
            touched[idx] = 1;
        }
    }
}

} // namespace detail

/// Builds volumes whose template-specific slices carry bumps at fixed offsets
/// from a randomly placed part center. Image i uses template i mod m.
inline SynthDataset synth_generate(const SynthSpec& spec) {
    check_synth_spec(spec);
    const double w = spec.image_width_px;
    const double h = spec.image_height_px;
    const int m = static_cast<int>(spec.templates.size());

    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> ux(spec.center_region.x1, spec.center_region.x2);
    std::uniform_real_distribution<double> uy(spec.center_region.y1, spec.center_region.y2);
    std::normal_distribution<double> noise(0.0, spec.noise > 0 ? spec.noise : 1.0);

    SynthDataset ds;
    const int digits = std::max<int>(4, static_cast<int>(std::to_string(spec.image_count).size()));
    std::vector<std::vector<int>> entry_hits(spec.templates.size());
    for (std::size_t t = 0; t < spec.templates.size(); ++t) {
        entry_hits[t].assign(spec.templates[t].entries.size(), 0);
    }
    std::vector<int> template_uses(spec.templates.size(), 0);

    for (int i = 0; i < spec.image_count; ++i) {
        const int t = i % m;
        const auto& tpl = spec.templates[t];
        const Point center{spec.center_region.x1 == spec.center_region.x2 ? spec.center_region.x1 : ux(rng),
                           spec.center_region.y1 == spec.center_region.y2 ? spec.center_region.y1 : uy(rng)};

        std::string num = std::to_string(i);
        if (num.size() < static_cast<std::size_t>(digits)) {
            num.insert(0, static_cast<std::size_t>(digits) - num.size(), '0');
        }
        const std::string id = spec.image_prefix + num;

        FeatureVolume vol{id, spec.image_width_px, spec.image_height_px, {}};
        for (const auto& g : spec.layers) {
            FeatureLayer layer{g, std::vector<float>(g.element_count())};
            for (auto& v : layer.values) {
                v = spec.noise > 0 ? static_cast<float>(noise(rng)) : 0.0F;
            }
            vol.layers.push_back(std::move(layer));
        }

        ++template_uses[t];
        std::vector<std::vector<char>> touched;
        for (const auto& layer : vol.layers) {
            touched.emplace_back(layer.values.size(), 0);
        }
        for (std::size_t e = 0; e < tpl.entries.size(); ++e) {
            const auto& entry = tpl.entries[e];
            const Point target = center + entry.offset_px;
            if (!detail::inside_image(target, w, h)) {
                continue;
            }
            std::size_t li = 0;
            while (vol.layers[li].geom.layer_id != entry.layer_id) {
                ++li;
            }
            auto& layer = vol.layers[li];
            const UnitIndex u = nearest_unit(layer.geom, target);
            detail::write_bump(layer, entry.slice, u, entry.amplitude, entry.radius_units, touched[li]);
            ds.planted_units.push_back({i, t, entry.layer_id, entry.slice, u});
            ++entry_hits[t][e];
        }

        const Box box{std::max(0.0, center.x - 0.5 * tpl.box.width), std::max(0.0, center.y - 0.5 * tpl.box.height),
                      std::min(w, center.x + 0.5 * tpl.box.width), std::min(h, center.y + 0.5 * tpl.box.height)};
        ds.annotations.push_back({id, spec.part_name, t, box});
        ds.volumes.push_back(std::move(vol));
    }

    const Point nominal = spec.center_region.center();
    for (std::size_t t = 0; t < spec.templates.size(); ++t) {
        for (std::size_t e = 0; e < spec.templates[t].entries.size(); ++e) {
            const auto& entry = spec.templates[t].entries[e];
            if (template_uses[t] > 0 && entry_hits[t][e] == 0) {
                throw GenerationError("signature " + std::to_string(e) + " of template " + std::to_string(t) +
                                      " falls outside the image for every sampled center");
            }
            LayerGeometry g;
            for (const auto& lg : spec.layers) {
                if (lg.layer_id == entry.layer_id) {
                    g = lg;
                }
            }
            const Point target = nominal + entry.offset_px;
            ds.ground_truth.push_back({static_cast<int>(t), entry.layer_id, entry.slice,
                                       unit_center(g, nearest_unit(g, target))});
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// JSON form of SynthSpec and ground truth.

inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
    try {
        SynthSpec s;
        s.image_count = j.at("images").get<int>();
        s.image_width_px = j.at("image_width").get<std::uint32_t>();
        s.image_height_px = j.at("image_height").get<std::uint32_t>();
        std::uint32_t next_id = 0;
        for (const auto& l : j.at("layers")) {
            LayerGeometry g;
            g.layer_id = l.value("id", next_id);
            next_id = g.layer_id + 1;
            g.channels = l.at("channels").get<std::uint32_t>();
            g.height = l.at("height").get<std::uint32_t>();
            g.width = l.at("width").get<std::uint32_t>();
            g.stride_px = l.at("stride").get<float>();
            g.rf_size_px = l.value("rf_size", g.stride_px);
            g.offset_px = l.value("offset", 0.5F * g.stride_px);
            s.layers.push_back(g);
        }
        const auto& r = j.at("center_region");
        s.center_region = {r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>(), r.at(3).get<double>()};
        for (const auto& t : j.at("templates")) {
            TemplateSignature tpl;
            tpl.box = {t.at("box").at(0).get<double>(), t.at("box").at(1).get<double>()};
            for (const auto& e : t.at("signature")) {
                SignatureEntry entry;
                entry.layer_id = e.at("layer").get<std::uint32_t>();
                entry.slice = e.at("slice").get<std::uint32_t>();
                entry.offset_px = {e.at("offset").at(0).get<double>(), e.at("offset").at(1).get<double>()};
                entry.amplitude = e.at("amplitude").get<double>();
                entry.radius_units = e.value("radius", 1.0);
                tpl.entries.push_back(entry);
            }
            s.templates.push_back(std::move(tpl));
        }
        s.noise = j.value("noise", 0.0);
        s.seed = j.value("seed", std::uint64_t{0});
        s.part_name = j.value("part", std::string("part"));
        s.image_prefix = j.value("image_prefix", std::string("img"));
        check_synth_spec(s);
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ArgumentError(std::string("malformed synth spec: ") + e.what());
    }
}

inline nlohmann::json synth_spec_to_json(const SynthSpec& s) {
    nlohmann::json j;
    j["images"] = s.image_count;
    j["image_width"] = s.image_width_px;
    j["image_height"] = s.image_height_px;
    j["layers"] = nlohmann::json::array();
    for (const auto& g : s.layers) {
        j["layers"].push_back({{"id", g.layer_id},
                               {"channels", g.channels},
                               {"height", g.height},
                               {"width", g.width},
                               {"stride", g.stride_px},
                               {"rf_size", g.rf_size_px},
                               {"offset", g.offset_px}});
    }
    j["center_region"] = {s.center_region.x1, s.center_region.y1, s.center_region.x2, s.center_region.y2};
    j["templates"] = nlohmann::json::array();
    for (const auto& t : s.templates) {
        nlohmann::json tj{{"box", {t.box.width, t.box.height}}, {"signature", nlohmann::json::array()}};
        for (const auto& e : t.entries) {
            tj["signature"].push_back({{"layer", e.layer_id},
                                       {"slice", e.slice},
                                       {"offset", {e.offset_px.x, e.offset_px.y}},
                                       {"amplitude", e.amplitude},
                                       {"radius", e.radius_units}});
        }
        j["templates"].push_back(std::move(tj));
    }
    j["noise"] = s.noise;
    j["seed"] = s.seed;
    j["part"] = s.part_name;
    j["image_prefix"] = s.image_prefix;
    return j;
}

inline nlohmann::json ground_truth_to_json(const std::vector<PlantedPattern>& gt) {
    auto arr = nlohmann::json::array();
    for (const auto& p : gt) {
        arr.push_back({{"template", p.template_id},
                       {"layer", p.layer_id},
                       {"slice", p.slice},
                       {"center", {p.ideal_center_px.x, p.ideal_center_px.y}}});
    }
    return arr;
}

} // namespace aogparts
