#pragma once

// Shared fixtures for the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "aogparts.hpp"

namespace aogparts::fixture {

/// Two-layer, three-template synthetic recipe used across the suites.
/// noise_fraction is the background std-dev relative to the bump amplitude.
inline SynthSpec reference_spec(std::uint64_t seed, int images, double noise_fraction) {
    constexpr double amp = 4.0;
    SynthSpec s;
    s.image_count = images;
    s.image_width_px = 128;
    s.image_height_px = 128;
    s.layers = {{0, 8, 16, 16, 8.0F, 40.0F, 4.0F}, {1, 8, 8, 8, 16.0F, 92.0F, 8.0F}};
    s.center_region = {58, 58, 70, 70};
    s.templates = {
        {{48, 48}, {{1, 0, {0, 0}, amp, 1.5}, {0, 1, {-16, 8}, amp, 1.5}, {0, 2, {16, -8}, amp, 1.5}}},
        {{40, 56}, {{1, 3, {16, 0}, amp, 1.5}, {0, 4, {0, 16}, amp, 1.5}, {0, 5, {-8, -16}, amp, 1.5}}},
        {{56, 40}, {{1, 6, {-16, 16}, amp, 1.5}, {0, 7, {8, 8}, amp, 1.5}, {0, 3, {-24, 0}, amp, 1.5}}},
    };
    s.noise = noise_fraction * amp;
    s.seed = seed;
    s.part_name = "head";
    return s;
}

/// Fraction of planted (template, layer, slice) signatures that some mined
/// pattern of the same template reproduces with its ideal center within one
/// unit stride on both axes.
inline double recovered_fraction(const Aog& aog, const std::vector<PlantedPattern>& truth) {
    if (truth.empty()) {
        return 1.0;
    }
    int hits = 0;
    for (const auto& gt : truth) {
        const auto& tpl = find_template(aog, gt.template_id);
        const auto* g = aog.provenance.find_layer(gt.layer_id);
        const double stride = g != nullptr ? g->stride_px : 0.0;
        for (const auto& p : tpl.patterns) {
            if (p.layer_id == gt.layer_id && p.slice == gt.slice &&
                std::abs(p.ideal_center_px.x - gt.ideal_center_px.x) <= stride &&
                std::abs(p.ideal_center_px.y - gt.ideal_center_px.y) <= stride) {
                ++hits;
                break;
            }
        }
    }
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

/// First `shots` annotations of a synthetic dataset.
inline std::vector<PartAnnotation> first_annotations(const SynthDataset& ds, int shots) {
    return {ds.annotations.begin(), ds.annotations.begin() + shots};
}

inline Aog learn(const SynthDataset& ds, int shots, const MinerConfig& cfg = {}, const ScoreWeights& w = {}) {
    const auto ann = first_annotations(ds, shots);
    return grow_aog(build_skeleton(ann, w), ds.volumes, ann, cfg);
}

inline double center_rate(const Aog& aog, const SynthDataset& test) {
    int ok = 0;
    for (std::size_t i = 0; i < test.volumes.size(); ++i) {
        const auto g = parse_semantic(aog, test.volumes[i]);
        ok += center_prediction(g.part_region.center, test.annotations[i].bbox) ? 1 : 0;
    }
    return static_cast<double>(ok) / static_cast<double>(test.volumes.size());
}

// ---------------------------------------------------------------------------
// Small random parsing instances for the brute-force oracle.

struct SmallInstance {
    Aog aog;
    FeatureVolume volume;
};

/// <= 2 layers of <= 6x6x3 units on an 80x80 image (20x20 center grid),
/// <= 2 templates of <= 3 patterns, resampled until within the brute-force bound.
inline SmallInstance random_instance(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> coin(0, 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (;;) {
        SmallInstance inst;
        auto& vol = inst.volume;
        vol.image_id = "small";
        vol.image_width_px = 80;
        vol.image_height_px = 80;
        const int layer_count = 1 + coin(rng);
        for (int l = 0; l < layer_count; ++l) {
            LayerGeometry g;
            g.layer_id = static_cast<std::uint32_t>(l);
            g.channels = 1 + static_cast<std::uint32_t>(std::uniform_int_distribution<int>(0, 2)(rng));
            if (l == 0) {
                g.width = g.height = 6;
                g.stride_px = 13.0F;
                g.offset_px = 7.0F;
            } else {
                g.width = g.height = 3;
                g.stride_px = 26.0F;
                g.offset_px = 14.0F;
            }
            g.rf_size_px = 2.0F * g.stride_px;
            FeatureLayer layer{g, std::vector<float>(g.element_count())};
            for (auto& v : layer.values) {
                // about a third exactly zero so ties and non-activated units occur
                v = coin(rng) == 0 && coin(rng) == 0 ? 0.0F : static_cast<float>(unit(rng) * 4.0);
            }
            vol.layers.push_back(std::move(layer));
        }

        auto& aog = inst.aog;
        aog.part_name = "small";
        const int templates = 1 + coin(rng);
        for (int t = 0; t < templates; ++t) {
            PartTemplate tpl;
            tpl.template_id = t;
            tpl.scale = {20.0 + 20.0 * unit(rng), 20.0 + 20.0 * unit(rng)};
            const int patterns = 1 + std::uniform_int_distribution<int>(0, 2)(rng);
            for (int p = 0; p < patterns; ++p) {
                LatentPattern lp;
                const auto& layer = vol.layers[static_cast<std::size_t>(
                    std::uniform_int_distribution<int>(0, layer_count - 1)(rng))];
                lp.layer_id = layer.geom.layer_id;
                lp.slice = static_cast<std::uint32_t>(
                    std::uniform_int_distribution<int>(0, static_cast<int>(layer.geom.channels) - 1)(rng));
                if (coin(rng) == 0) {
                    const int ix = std::uniform_int_distribution<int>(0, static_cast<int>(layer.geom.width) - 1)(rng);
                    const int iy = std::uniform_int_distribution<int>(0, static_cast<int>(layer.geom.height) - 1)(rng);
                    lp.ideal_center_px = unit_center(layer.geom, ix, iy);
                } else {
                    lp.ideal_center_px = {80.0 * unit(rng), 80.0 * unit(rng)};
                }
                lp.displacement_px = {80.0 * unit(rng) - 40.0, 80.0 * unit(rng) - 40.0};
                tpl.patterns.push_back(lp);
            }
            std::stable_sort(tpl.patterns.begin(), tpl.patterns.end(),
                             [](const LatentPattern& a, const LatentPattern& b) { return a.layer_id > b.layer_id; });
            aog.templates.push_back(std::move(tpl));
        }

        double joint = 0.0;
        for (const auto& tpl : aog.templates) {
            double a = 1.0;
            for (const auto& p : tpl.patterns) {
                a *= static_cast<double>(
                    units_in_range(vol.layer(p.layer_id).geom, p.ideal_center_px, aog.weights.deform_range_px).size());
            }
            joint += a * grid_count(vol.image_width_px) * grid_count(vol.image_height_px);
        }
        if (joint <= kBruteForceLimit) {
            return inst;
        }
    }
}

// ---------------------------------------------------------------------------
// Hand-built graphs

/// Every pattern of every template placed on its ground-truth signature.
inline Aog oracle_aog(const SynthSpec& spec, const SynthDataset& ds) {
    std::vector<PartAnnotation> anns;
    for (std::size_t t = 0; t < spec.templates.size(); ++t) {
        anns.push_back(ds.annotations[t]);
    }
    Aog aog = build_skeleton(anns, {});
    const Point nominal = spec.center_region.center();
    for (const auto& gt : ds.ground_truth) {
        auto& tpl = aog.templates[static_cast<std::size_t>(gt.template_id)];
        tpl.patterns.push_back({gt.layer_id, gt.slice, gt.ideal_center_px, nominal - gt.ideal_center_px, 0.0});
    }
    for (auto& tpl : aog.templates) {
        std::stable_sort(tpl.patterns.begin(), tpl.patterns.end(),
                         [](const LatentPattern& a, const LatentPattern& b) { return a.layer_id > b.layer_id; });
    }
    return aog;
}

inline FeatureVolume shifted(const FeatureVolume& v, int k) {
    FeatureVolume out = v;
    for (auto& layer : out.layers) {
        std::fill(layer.values.begin(), layer.values.end(), 0.0F);
        const auto& g = layer.geom;
        for (std::uint32_t s = 0; s < g.channels; ++s) {
            for (int iy = 0; iy + k < static_cast<int>(g.height); ++iy) {
                for (int ix = 0; ix + k < static_cast<int>(g.width); ++ix) {
                    layer.at(s, iy + k, ix + k) = v.layer(g.layer_id).at(s, iy, ix);
                }
            }
        }
    }
    return out;
}

/// One template on two layers of equal stride, so a one-unit shift of the
/// volume moves every bump by 8 px.
inline SynthSpec translation_spec() {
    SynthSpec spec;
    spec.image_count = 1;
    spec.image_width_px = spec.image_height_px = 128;
    spec.layers = {{0, 3, 16, 16, 8.0F, 16.0F, 4.0F}, {1, 3, 16, 16, 8.0F, 32.0F, 4.0F}};
    spec.center_region = {60, 60, 60, 60};
    spec.templates = {{{40, 40}, {{1, 0, {0, 0}, 4.0, 1.5}, {0, 1, {-16, 8}, 4.0, 1.5}, {0, 2, {16, 0}, 4.0, 1.5}}}};
    return spec;
}

/// Largest deviation of the parsed center shift from (8k, 8k), k = 1, 2.
inline double translation_error() {
    const auto spec = translation_spec();
    const auto ds = synth_generate(spec);
    auto aog = oracle_aog(spec, ds);
    aog.weights.lambda_loc = 0.001;
    const auto base = parse_semantic(aog, ds.volumes[0]);
    double err = 0.0;
    for (int k : {1, 2}) {
        const auto g = parse_semantic(aog, shifted(ds.volumes[0], k));
        err = std::max(err, std::abs(g.part_region.center.x - base.part_region.center.x - 8.0 * k));
        err = std::max(err, std::abs(g.part_region.center.y - base.part_region.center.y - 8.0 * k));
    }
    return err;
}

} // namespace aogparts::fixture
