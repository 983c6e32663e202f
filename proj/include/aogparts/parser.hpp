#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "aogparts/errors.hpp"
#include "aogparts/feature_volume.hpp"
#include "aogparts/geometry.hpp"
#include "aogparts/model.hpp"

namespace aogparts {

/// Spacing of the candidate grid for template centers.
inline constexpr double kCenterGridStridePx = 4.0;

/// Largest number of joint configurations brute_force_parse will enumerate.
inline constexpr double kBruteForceLimit = 1e7;

// ---------------------------------------------------------------------------
// Normalized responses

/// Per-image z-scored activations of one layer.
struct NormalizedLayer {
    LayerGeometry geom;
    std::vector<double> x;

    double at(std::uint32_t slice, UnitIndex u) const {
        return x[slice * geom.slice_size() + static_cast<std::size_t>(u.iy) * geom.width +
                 static_cast<std::size_t>(u.ix)];
    }
    double& at(std::uint32_t slice, UnitIndex u) {
        return x[slice * geom.slice_size() + static_cast<std::size_t>(u.iy) * geom.width +
                 static_cast<std::size_t>(u.ix)];
    }
};

struct NormalizedVolume {
    std::string image_id;
    std::uint32_t image_width_px = 0;
    std::uint32_t image_height_px = 0;
    std::vector<NormalizedLayer> layers;

    const NormalizedLayer* find_layer(std::uint32_t id) const {
        const auto it = std::find_if(layers.begin(), layers.end(),
                                     [&](const NormalizedLayer& l) { return l.geom.layer_id == id; });
        return it == layers.end() ? nullptr : &*it;
    }
    const NormalizedLayer& layer(std::uint32_t id) const {
        if (const auto* l = find_layer(id)) {
            return *l;
        }
        throw LookupError("normalized volume '" + image_id + "' has no layer " + std::to_string(id));
    }
    NormalizedLayer& layer(std::uint32_t id) {
        return const_cast<NormalizedLayer&>(std::as_const(*this).layer(id));
    }
};

/// X = (a - mean) / std over every unit of the layer; a constant layer maps to 0.
inline NormalizedLayer normalize_responses(const FeatureVolume& vol, std::uint32_t layer_id) {
    const auto& layer = vol.layer(layer_id);
    NormalizedLayer out{layer.geom, std::vector<double>(layer.values.size(), 0.0)};
    if (layer.values.empty()) {
        return out;
    }
    const double n = static_cast<double>(layer.values.size());
    double mean = 0.0;
    for (float v : layer.values) {
        mean += v;
    }
    mean /= n;
    double var = 0.0;
    for (float v : layer.values) {
        const double d = v - mean;
        var += d * d;
    }
    const double sd = std::sqrt(var / n);
    if (sd == 0.0) {
        return out;
    }
    for (std::size_t i = 0; i < layer.values.size(); ++i) {
        out.x[i] = (layer.values[i] - mean) / sd;
    }
    return out;
}

inline NormalizedVolume normalize_volume(const FeatureVolume& vol) {
    NormalizedVolume out{vol.image_id, vol.image_width_px, vol.image_height_px, {}};
    for (const auto& l : vol.layers) {
        out.layers.push_back(normalize_responses(vol, l.geom.layer_id));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Terminal nodes

/// Ideal and parsed position of one upper-layer neighbor pattern.
struct NeighborParse {
    Point ideal_center_px;
    Point parsed_center_px;
};

struct TerminalTerms {
    double rsp = 0.0;
    double loc = 0.0;
    double pair = 0.0;
    double total() const { return rsp + loc + pair; }
};

inline double response_score(double x, const ScoreWeights& w) {
    return x > 0.0 ? w.lambda_rsp * x : w.lambda_rsp * w.s_none;
}

inline double deformation_score(Point unit_px, Point ideal_px, double stride_px, const ScoreWeights& w) {
    Point diff = unit_px - ideal_px;
    if (w.loc_in_units) {
        diff = (1.0 / stride_px) * diff;
    }
    return -w.lambda_loc * squared_norm(diff);
}

/// Mean Euclidean (not squared) mismatch between the unit's offset from each
/// parsed neighbor and the ideal offset between the two patterns.
inline double pair_score(Point unit_px, Point ideal_px, std::span<const NeighborParse> neighbors,
                         const ScoreWeights& w) {
    if (neighbors.empty()) {
        return 0.0;
    }
    double sum = 0.0;
    for (const auto& nb : neighbors) {
        sum += norm((unit_px - nb.parsed_center_px) - (ideal_px - nb.ideal_center_px));
    }
    return -w.lambda_pair * sum / static_cast<double>(neighbors.size());
}

inline TerminalTerms terminal_terms(double x, Point unit_px, double stride_px, const LatentPattern& pattern,
                                    std::span<const NeighborParse> neighbors, const ScoreWeights& w) {
    return {response_score(x, w), deformation_score(unit_px, pattern.ideal_center_px, stride_px, w),
            pair_score(unit_px, pattern.ideal_center_px, neighbors, w)};
}

inline bool in_deformation_range(Point unit_px, const LatentPattern& pattern, const ScoreWeights& w) {
    const double half = 0.5 * w.deform_range_px;
    return std::abs(unit_px.x - pattern.ideal_center_px.x) <= half &&
           std::abs(unit_px.y - pattern.ideal_center_px.y) <= half;
}

/// S_I(V^unt) = S_rsp + S_loc + S_pair for one unit of the pattern's slice.
inline double score_terminal(const NormalizedLayer& layer, UnitIndex unit, const LatentPattern& pattern,
                             std::span<const NeighborParse> neighbors, const ScoreWeights& w) {
    const Point p = unit_center(layer.geom, unit);
    if (!in_deformation_range(p, pattern, w)) {
        throw ContractError("unit (" + std::to_string(unit.ix) + ", " + std::to_string(unit.iy) +
                            ") lies outside the pattern's deformation range");
    }
    return terminal_terms(layer.at(pattern.slice, unit), p, layer.geom.stride_px, pattern, neighbors, w).total();
}

// ---------------------------------------------------------------------------
// Latent patterns (OR nodes over units)

struct PatternParse {
    UnitIndex unit;
    Point center_px; // P-hat of the pattern
    double score = 0.0;
};

inline std::string describe_pattern(const LatentPattern& p) {
    return "pattern (layer " + std::to_string(p.layer_id) + ", slice " + std::to_string(p.slice) + ", center " +
           std::to_string(p.ideal_center_px.x) + "," + std::to_string(p.ideal_center_px.y) + ")";
}

/// Best unit in the deformation range; ties go to the smallest (row, column).
inline PatternParse parse_latent(const LatentPattern& pattern, const NormalizedLayer& layer,
                                 std::span<const NeighborParse> neighbors, const ScoreWeights& w) {
    const auto range = units_in_range(layer.geom, pattern.ideal_center_px, w.deform_range_px);
    if (range.empty()) {
        throw ParseError("empty deformation range for " + describe_pattern(pattern));
    }
    PatternParse best{{}, {}, -std::numeric_limits<double>::infinity()};
    for (const auto& u : range) {
        const Point p = unit_center(layer.geom, u);
        const double s =
            terminal_terms(layer.at(pattern.slice, u), p, layer.geom.stride_px, pattern, neighbors, w).total();
        if (s > best.score) {
            best = {u, p, s};
        }
    }
    return best;
}

/// Indices of the <= k patterns of the next populated upper layer nearest to
/// each pattern by ideal center; ties go to the smaller index. Patterns in the
/// topmost layer get an empty set.
inline std::vector<std::vector<std::size_t>> neighbor_sets(std::span<const LatentPattern> patterns, int k) {
    std::vector<std::vector<std::size_t>> out(patterns.size());
    for (std::size_t i = 0; i < patterns.size(); ++i) {
        const auto layer = patterns[i].layer_id;
        bool found = false;
        std::uint32_t upper = 0;
        for (const auto& p : patterns) {
            if (p.layer_id > layer && (!found || p.layer_id < upper)) {
                upper = p.layer_id;
                found = true;
            }
        }
        if (!found || k <= 0) {
            continue;
        }
        std::vector<std::pair<double, std::size_t>> cands;
        for (std::size_t j = 0; j < patterns.size(); ++j) {
            if (patterns[j].layer_id == upper) {
                cands.emplace_back(squared_norm(patterns[i].ideal_center_px - patterns[j].ideal_center_px), j);
            }
        }
        std::sort(cands.begin(), cands.end());
        const std::size_t n = std::min(cands.size(), static_cast<std::size_t>(k));
        for (std::size_t c = 0; c < n; ++c) {
            out[i].push_back(cands[c].second);
        }
    }
    return out;
}

/// Patterns indices in parsing order: descending layer, then stored order.
inline std::vector<std::size_t> parse_order(std::span<const LatentPattern> patterns) {
    std::vector<std::size_t> order(patterns.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return patterns[a].layer_id > patterns[b].layer_id; });
    return order;
}

inline std::vector<NeighborParse> gather_neighbors(std::span<const LatentPattern> patterns,
                                                   std::span<const std::size_t> neighbor_ids,
                                                   std::span<const PatternParse> parses) {
    std::vector<NeighborParse> out;
    out.reserve(neighbor_ids.size());
    for (auto j : neighbor_ids) {
        out.push_back({patterns[j].ideal_center_px, parses[j].center_px});
    }
    return out;
}

/// Parses every pattern of a template top layer first, so each pair term sees
/// the already-parsed upper neighbors. Result is indexed like `patterns`.
inline std::vector<PatternParse> parse_patterns(std::span<const LatentPattern> patterns, const NormalizedVolume& vol,
                                                const std::vector<std::vector<std::size_t>>& neighbors,
                                                const ScoreWeights& w) {
    std::vector<PatternParse> parses(patterns.size());
    for (auto i : parse_order(patterns)) {
        const auto nbs = gather_neighbors(patterns, neighbors[i], parses);
        parses[i] = parse_latent(patterns[i], vol.layer(patterns[i].layer_id), nbs, w);
    }
    return parses;
}

// ---------------------------------------------------------------------------
// Part templates (AND nodes)

/// S_inf = -lambda_inf * min(|P-hat + dP - P|^2, d^2).
inline double s_inf(Point template_center, Point parsed_center, Point displacement, const ScoreWeights& w) {
    const double d2 = squared_norm(parsed_center + displacement - template_center);
    return -w.lambda_inf * std::min(d2, w.d_px * w.d_px);
}

inline double s_inf(Point template_center, const PatternParse& parse, const LatentPattern& pattern,
                    const ScoreWeights& w) {
    return s_inf(template_center, parse.center_px, pattern.displacement_px, w);
}

struct CenterSearch {
    Point grid_center;
    Point center;
    double vote_score = 0.0; // sum of S_inf at `center`
};

inline double vote_score(Point c, std::span<const Point> votes, const ScoreWeights& w) {
    double s = 0.0;
    for (const auto& v : votes) {
        s += -w.lambda_inf * std::min(squared_norm(v - c), w.d_px * w.d_px);
    }
    return s;
}

/// Replaces the grid optimum by the mean of the votes within d of it when
/// that scores strictly higher.
inline CenterSearch refine_center(Point grid_center, double grid_score, std::span<const Point> votes,
                                  const ScoreWeights& w) {
    CenterSearch out{grid_center, grid_center, grid_score};
    Point sum;
    int inliers = 0;
    for (const auto& v : votes) {
        if (squared_norm(v - grid_center) <= w.d_px * w.d_px) {
            sum = sum + v;
            ++inliers;
        }
    }
    if (inliers == 0) {
        return out;
    }
    const Point mean = (1.0 / inliers) * sum;
    const double s = vote_score(mean, votes, w);
    if (s > grid_score) {
        out.center = mean;
        out.vote_score = s;
    }
    return out;
}

inline int grid_count(std::uint32_t extent_px) {
    return std::max(1, static_cast<int>(std::ceil(extent_px / kCenterGridStridePx)));
}

/// Exhaustive stride-4 grid over the image followed by inlier-mean refinement.
inline CenterSearch search_center(std::span<const Point> votes, std::uint32_t image_width,
                                  std::uint32_t image_height, const ScoreWeights& w) {
    const int nx = grid_count(image_width);
    const int ny = grid_count(image_height);
    Point best_c;
    double best = -std::numeric_limits<double>::infinity();
    for (int gy = 0; gy < ny; ++gy) {
        for (int gx = 0; gx < nx; ++gx) {
            const Point c{gx * kCenterGridStridePx, gy * kCenterGridStridePx};
            const double s = vote_score(c, votes, w);
            if (s > best) {
                best = s;
                best_c = c;
            }
        }
    }
    return refine_center(best_c, best, votes, w);
}

/// One chosen unit in a parse graph.
struct PatternRecord {
    std::size_t pattern_index = 0; // index into the template's pattern list
    std::uint32_t layer_id = 0;
    std::uint32_t slice = 0;
    UnitIndex unit;
    Point unit_center_px;
    double score = 0.0;
};

struct TemplateParse {
    int template_id = 0;
    Point grid_center;
    Region region;
    double score = 0.0;
    std::vector<PatternRecord> records;
};

inline std::vector<Point> votes_of(std::span<const LatentPattern> patterns, std::span<const PatternParse> parses) {
    std::vector<Point> votes;
    votes.reserve(patterns.size());
    for (std::size_t i = 0; i < patterns.size(); ++i) {
        votes.push_back(parses[i].center_px + patterns[i].displacement_px);
    }
    return votes;
}

inline TemplateParse assemble_template(const PartTemplate& tpl, std::span<const PatternParse> parses,
                                       const CenterSearch& cs) {
    TemplateParse out;
    out.template_id = tpl.template_id;
    out.grid_center = cs.grid_center;
    out.region = {cs.center, tpl.scale};
    double latent = 0.0;
    for (std::size_t i = 0; i < tpl.patterns.size(); ++i) {
        const auto& p = tpl.patterns[i];
        latent += parses[i].score;
        out.records.push_back({i, p.layer_id, p.slice, parses[i].unit, parses[i].center_px, parses[i].score});
    }
    out.score = latent + cs.vote_score;
    return out;
}

/// S_I(V^tmp): sum over children of S_I(V^lat) + S_inf at the best center.
inline TemplateParse parse_template(const PartTemplate& tpl, const NormalizedVolume& vol, const ScoreWeights& w) {
    if (tpl.patterns.empty()) {
        throw ParseError("template " + std::to_string(tpl.template_id) + " has no latent patterns");
    }
    const auto neighbors = neighbor_sets(tpl.patterns, w.neighbor_count);
    const auto parses = parse_patterns(tpl.patterns, vol, neighbors, w);
    const auto votes = votes_of(tpl.patterns, parses);
    const auto cs = search_center(votes, vol.image_width_px, vol.image_height_px, w);
    return assemble_template(tpl, parses, cs);
}

// ---------------------------------------------------------------------------
// Semantic part (OR node over templates)

struct ParseGraph {
    std::string image_id;
    int chosen_template_id = 0;
    Point grid_center;
    Region part_region;
    double part_score = 0.0;
    std::vector<PatternRecord> patterns;        // records of the chosen template
    std::vector<std::pair<int, double>> template_scores;
};

/// Throws LookupError listing every layer/slice the AOG needs but the volume lacks.
inline void check_requirements(const Aog& aog, const FeatureVolume& vol) {
    std::string missing;
    for (const auto& tpl : aog.templates) {
        for (const auto& p : tpl.patterns) {
            const auto* l = vol.find_layer(p.layer_id);
            if (l == nullptr) {
                missing += " layer " + std::to_string(p.layer_id) + ";";
            } else if (p.slice >= l->geom.channels) {
                missing += " layer " + std::to_string(p.layer_id) + " slice " + std::to_string(p.slice) + ";";
            }
        }
    }
    if (!missing.empty()) {
        throw LookupError("volume '" + vol.image_id + "' lacks required" + missing);
    }
}

inline ParseGraph choose_template(const std::string& image_id, std::vector<TemplateParse> parses) {
    std::sort(parses.begin(), parses.end(),
              [](const TemplateParse& a, const TemplateParse& b) { return a.template_id < b.template_id; });
    ParseGraph g;
    g.image_id = image_id;
    const TemplateParse* best = nullptr;
    for (const auto& tp : parses) {
        g.template_scores.emplace_back(tp.template_id, tp.score);
        if (best == nullptr || tp.score > best->score) {
            best = &tp;
        }
    }
    if (best == nullptr) {
        throw ParseError("graph has no templates");
    }
    g.chosen_template_id = best->template_id;
    g.grid_center = best->grid_center;
    g.part_region = best->region;
    g.part_score = best->score;
    g.patterns = best->records;
    return g;
}

/// Parses an already-normalized volume; exposed so tests can edit X directly.
inline ParseGraph parse_normalized(const Aog& aog, const NormalizedVolume& vol) {
    std::vector<TemplateParse> parses;
    for (const auto& tpl : aog.templates) {
        parses.push_back(parse_template(tpl, vol, aog.weights));
    }
    return choose_template(vol.image_id, std::move(parses));
}

inline ParseGraph parse_semantic(const Aog& aog, const FeatureVolume& vol) {
    check_requirements(aog, vol);
    return parse_normalized(aog, normalize_volume(vol));
}

inline const PartTemplate& find_template(const Aog& aog, int template_id) {
    for (const auto& t : aog.templates) {
        if (t.template_id == template_id) {
            return t;
        }
    }
    throw LookupError("graph has no template " + std::to_string(template_id));
}

/// Part score rebuilt from the leaf records alone.
inline double recompute_part_score(const Aog& aog, const ParseGraph& g) {
    const auto& tpl = find_template(aog, g.chosen_template_id);
    double s = 0.0;
    for (const auto& r : g.patterns) {
        s += r.score;
        s += s_inf(g.part_region.center, r.unit_center_px, tpl.patterns[r.pattern_index].displacement_px, aog.weights);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Exhaustive oracle

/// Enumerates every joint unit assignment and every grid center of every
/// template. Unit assignments are ranked lexicographically in parsing order
/// (score first, then smaller unit index) so upper layers are settled before
/// the pair terms of lower layers see them; among centers the best vote sum
/// wins. Refuses instances above kBruteForceLimit joint configurations.
inline ParseGraph brute_force_parse(const Aog& aog, const FeatureVolume& vol) {
    check_requirements(aog, vol);
    const auto nvol = normalize_volume(vol);
    const auto& w = aog.weights;
    const int nx = grid_count(vol.image_width_px);
    const int ny = grid_count(vol.image_height_px);

    std::vector<std::vector<std::vector<UnitIndex>>> ranges(aog.templates.size());
    double joint = 0.0;
    for (std::size_t t = 0; t < aog.templates.size(); ++t) {
        const auto& tpl = aog.templates[t];
        if (tpl.patterns.empty()) {
            throw ParseError("template " + std::to_string(tpl.template_id) + " has no latent patterns");
        }
        double assignments = 1.0;
        for (const auto& p : tpl.patterns) {
            ranges[t].push_back(units_in_range(nvol.layer(p.layer_id).geom, p.ideal_center_px, w.deform_range_px));
            if (ranges[t].back().empty()) {
                throw ParseError("empty deformation range for " + describe_pattern(p));
            }
            assignments *= static_cast<double>(ranges[t].back().size());
        }
        joint += assignments * nx * ny;
    }
    if (joint > kBruteForceLimit) {
        throw ArgumentError("instance too large for brute force: " + std::to_string(joint) +
                            " joint configurations");
    }

    std::vector<TemplateParse> results;
    for (std::size_t t = 0; t < aog.templates.size(); ++t) {
        const auto& tpl = aog.templates[t];
        const auto& pats = tpl.patterns;
        const auto neighbors = neighbor_sets(pats, w.neighbor_count);
        const auto order = parse_order(pats);
        const std::size_t n = pats.size();

        std::vector<std::size_t> digit(n, 0);
        std::vector<PatternParse> cur(n), best;
        bool have_best = false;
        for (;;) {
            for (auto i : order) {
                const auto& layer = nvol.layer(pats[i].layer_id);
                const UnitIndex u = ranges[t][i][digit[i]];
                const Point p = unit_center(layer.geom, u);
                const auto nbs = gather_neighbors(pats, neighbors[i], cur);
                cur[i] = {u, p, terminal_terms(layer.at(pats[i].slice, u), p, layer.geom.stride_px, pats[i], nbs, w).total()};
            }
            bool better = !have_best;
            if (have_best) {
                for (auto i : order) {
                    if (cur[i].score != best[i].score) {
                        better = cur[i].score > best[i].score;
                        break;
                    }
                    const auto& a = cur[i].unit;
                    const auto& b = best[i].unit;
                    if (!(a == b)) {
                        better = std::tie(a.iy, a.ix) < std::tie(b.iy, b.ix);
                        break;
                    }
                }
            }
            if (better) {
                best = cur;
                have_best = true;
            }
            std::size_t k = 0;
            while (k < n && ++digit[k] == ranges[t][k].size()) {
                digit[k] = 0;
                ++k;
            }
            if (k == n) {
                break;
            }
        }

        const auto votes = votes_of(pats, best);
        Point best_c;
        double best_s = -std::numeric_limits<double>::infinity();
        for (int gy = 0; gy < ny; ++gy) {
            for (int gx = 0; gx < nx; ++gx) {
                const Point c{gx * kCenterGridStridePx, gy * kCenterGridStridePx};
                double s = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    s += s_inf(c, best[i], pats[i], w);
                }
                if (s > best_s) {
                    best_s = s;
                    best_c = c;
                }
            }
        }
        results.push_back(assemble_template(tpl, best, refine_center(best_c, best_s, votes, w)));
    }
    return choose_template(vol.image_id, std::move(results));
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json parse_graph_to_json(const ParseGraph& g) {
    const Box b = g.part_region.box();
    nlohmann::json j;
    j["image"] = g.image_id;
    j["template"] = g.chosen_template_id;
    j["center"] = {g.part_region.center.x, g.part_region.center.y};
    j["grid_center"] = {g.grid_center.x, g.grid_center.y};
    j["bbox"] = {b.x1, b.y1, b.x2, b.y2};
    j["score"] = g.part_score;
    j["patterns"] = nlohmann::json::array();
    for (const auto& r : g.patterns) {
        j["patterns"].push_back({{"layer", r.layer_id},
                                 {"slice", r.slice},
                                 {"unit", {r.unit.ix, r.unit.iy}},
                                 {"score", r.score}});
    }
    j["template_scores"] = nlohmann::json::array();
    for (const auto& [id, s] : g.template_scores) {
        j["template_scores"].push_back({{"template", id}, {"score", s}});
    }
    return j;
}

} // namespace aogparts
