#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "aogparts/annotation.hpp"
#include "aogparts/errors.hpp"
#include "aogparts/feature_volume.hpp"
#include "aogparts/geometry.hpp"
#include "aogparts/model.hpp"
#include "aogparts/parser.hpp"

namespace aogparts {

/// One enumerated latent-pattern hypothesis of a template.
struct CandidatePattern {
    std::uint32_t layer_id = 0;
    std::uint32_t slice = 0;
    UnitIndex unit;               // unit at the ideal center
    Point ideal_center_px;
    Point displacement_px;
    double annotated_term = 0.0;
    double unannotated_term = 0.0;
    double score = -std::numeric_limits<double>::infinity();

    LatentPattern pattern() const { return {layer_id, slice, ideal_center_px, displacement_px, score}; }
};

struct MinerConfig {
    bool nk_auto = true;
    std::vector<int> nk_fixed{5}; // per layer from the top; the last entry repeats
    int fallback_nk = 5;          // used by auto mode when a layer has fewer than 8 candidates
    int epsilon_units = 2;
    int unannotated_cap = 0;      // 0 keeps every image
    std::uint64_t seed = 0;
};

/// An annotated image as seen by one template: its normalized volume, the
/// ground-truth part center, and the parses of the patterns mined so far.
struct AnnotatedImage {
    const NormalizedVolume* volume = nullptr;
    Point part_center_px;
};

/// Every (slice, unit) of the layer, in slice-major then row-major order.
inline std::vector<CandidatePattern> enumerate_candidates(const PartTemplate& tpl, const LayerGeometry& geom) {
    std::vector<CandidatePattern> out;
    out.reserve(geom.element_count());
    for (std::uint32_t s = 0; s < geom.channels; ++s) {
        for (int iy = 0; iy < static_cast<int>(geom.height); ++iy) {
            for (int ix = 0; ix < static_cast<int>(geom.width); ++ix) {
                CandidatePattern c;
                c.layer_id = geom.layer_id;
                c.slice = s;
                c.unit = {ix, iy};
                c.ideal_center_px = unit_center(geom, ix, iy);
                c.displacement_px = tpl.anchor_px - c.ideal_center_px;
                out.push_back(c);
            }
        }
    }
    return out;
}

/// Unit maximizing S_rsp + S_loc (no pair term), as used on unannotated images.
inline double best_unsupervised_unit(const LatentPattern& pattern, const NormalizedLayer& layer,
                                     const ScoreWeights& w) {
    const auto range = units_in_range(layer.geom, pattern.ideal_center_px, w.deform_range_px);
    if (range.empty()) {
        throw ParseError("empty deformation range for " + describe_pattern(pattern));
    }
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& u : range) {
        const Point p = unit_center(layer.geom, u);
        const double s = response_score(layer.at(pattern.slice, u), w) +
                         deformation_score(p, pattern.ideal_center_px, layer.geom.stride_px, w);
        best = std::max(best, s);
    }
    return best;
}

/// S_unsup = lambda_unsup * [S_rsp + S_loc - lambda_close * |dP|^2] for one image.
inline double unsupervised_score(const LatentPattern& pattern, const NormalizedLayer& layer, const ScoreWeights& w) {
    Point dp = pattern.displacement_px;
    if (w.loc_in_units) {
        dp = (1.0 / layer.geom.stride_px) * dp;
    }
    return w.lambda_unsup * (best_unsupervised_unit(pattern, layer, w) - w.lambda_close * squared_norm(dp));
}

/// Mined patterns of the next populated layer above, with their parses on
/// each annotated image (parses[image][pattern]).
struct UpperContext {
    std::vector<LatentPattern> patterns;
    std::vector<std::vector<PatternParse>> parses;
};

inline std::vector<std::size_t> nearest_upper(const LatentPattern& p, const UpperContext& upper, int k) {
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t j = 0; j < upper.patterns.size(); ++j) {
        d.emplace_back(squared_norm(p.ideal_center_px - upper.patterns[j].ideal_center_px), j);
    }
    std::sort(d.begin(), d.end());
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < d.size() && static_cast<int>(i) < k; ++i) {
        out.push_back(d[i].second);
    }
    return out;
}

struct CandidateScore {
    double annotated = 0.0;
    double unannotated = 0.0;
    double total() const { return annotated + unannotated; }
};

/// Score(V^lat): mean over this template's annotated images of
/// S_I(V^lat) + S_inf(annotated center | parse), plus mean S_unsup over the
/// unannotated pool.
inline CandidateScore score_candidate(const CandidatePattern& cand, std::span<const AnnotatedImage> annotated,
                                      std::span<const NormalizedVolume* const> unannotated,
                                      const UpperContext& upper, const ScoreWeights& w) {
    if (annotated.empty()) {
        throw ArgumentError("score_candidate needs at least one annotated image");
    }
    const LatentPattern pat = cand.pattern();
    const auto nb_ids = nearest_upper(pat, upper, w.neighbor_count);
    std::vector<NeighborParse> nbs(nb_ids.size());

    CandidateScore out;
    for (std::size_t i = 0; i < annotated.size(); ++i) {
        for (std::size_t k = 0; k < nb_ids.size(); ++k) {
            nbs[k] = {upper.patterns[nb_ids[k]].ideal_center_px, upper.parses[i][nb_ids[k]].center_px};
        }
        const auto parse = parse_latent(pat, annotated[i].volume->layer(cand.layer_id), nbs, w);
        out.annotated += parse.score + s_inf(annotated[i].part_center_px, parse, pat, w);
    }
    out.annotated /= static_cast<double>(annotated.size());

    if (!unannotated.empty()) {
        for (const auto* vol : unannotated) {
            out.unannotated += unsupervised_score(pat, vol->layer(cand.layer_id), w);
        }
        out.unannotated /= static_cast<double>(unannotated.size());
    }
    return out;
}

namespace detail {

inline bool shares_window(const CandidatePattern& a, const CandidatePattern& b, int eps) {
    return a.layer_id == b.layer_id && a.slice == b.slice && std::abs(a.unit.ix - b.unit.ix) < eps &&
           std::abs(a.unit.iy - b.unit.iy) < eps;
}

inline std::vector<std::size_t> by_score_desc(std::span<const CandidatePattern> c) {
    std::vector<std::size_t> idx(c.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return c[a].score > c[b].score; });
    return idx;
}

/// Walks candidates best-first, keeping those outside every kept window.
inline std::vector<CandidatePattern> suppress(std::span<const CandidatePattern> c, int eps, std::size_t limit) {
    std::vector<CandidatePattern> kept;
    for (auto i : by_score_desc(c)) {
        if (kept.size() >= limit) {
            break;
        }
        const bool excluded = std::any_of(kept.begin(), kept.end(),
                                          [&](const CandidatePattern& k) { return shares_window(c[i], k, eps); });
        if (!excluded) {
            kept.push_back(c[i]);
        }
    }
    return kept;
}

} // namespace detail

/// Within each conv-slice only the best candidate of any eps x eps unit window
/// survives. Result is ordered by descending score, ties by input order.
inline std::vector<CandidatePattern> spatial_nms(std::span<const CandidatePattern> candidates, int epsilon_units) {
    if (epsilon_units < 1) {
        throw ArgumentError("epsilon must be >= 1");
    }
    return detail::suppress(candidates, epsilon_units, candidates.size());
}

/// Repeatedly takes the best remaining candidate not excluded by an earlier pick.
inline std::vector<CandidatePattern> greedy_select(std::span<const CandidatePattern> candidates, int nk,
                                                   int epsilon_units) {
    if (epsilon_units < 1) {
        throw ArgumentError("epsilon must be >= 1");
    }
    return detail::suppress(candidates, epsilon_units, static_cast<std::size_t>(std::max(nk, 0)));
}

// ---------------------------------------------------------------------------
// Score-rank curve: score ~ alpha * exp(-(beta * rank)^0.5) + gamma

struct RankCurveFit {
    double alpha = 0.0;
    double beta = 0.0;
    double gamma = 0.0;
    double sse = 0.0;
    bool degenerate = false; // flat data, beta pinned to the grid maximum
};

inline constexpr double kBetaMin = 1e-4;
inline constexpr double kBetaMax = 10.0;
inline constexpr int kBetaGridPoints = 200;

namespace detail {

/// Least-squares alpha, gamma for a fixed beta.
inline RankCurveFit fit_for_beta(std::span<const double> y, double beta) {
    const std::size_t n = y.size();
    double sf = 0, sy = 0, sff = 0, sfy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double f = std::exp(-std::sqrt(beta * static_cast<double>(i + 1)));
        sf += f;
        sy += y[i];
        sff += f * f;
        sfy += f * y[i];
    }
    const double dn = static_cast<double>(n);
    const double var = sff - sf * sf / dn;
    RankCurveFit fit;
    fit.beta = beta;
    fit.alpha = var > 0 ? (sfy - sf * sy / dn) / var : 0.0;
    fit.gamma = (sy - fit.alpha * sf) / dn;
    double sse = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = y[i] - (fit.alpha * std::exp(-std::sqrt(beta * static_cast<double>(i + 1))) + fit.gamma);
        sse += r * r;
    }
    fit.sse = sse;
    return fit;
}

} // namespace detail

/// Log-spaced grid over beta with closed-form alpha/gamma, then a golden-section
/// polish of log(beta) between the grid neighbors of the best point.
inline RankCurveFit fit_rank_curve(std::span<const double> scores_desc) {
    if (scores_desc.size() < 8) {
        throw FitError("rank-curve fit needs at least 8 scores, got " + std::to_string(scores_desc.size()));
    }
    for (std::size_t i = 1; i < scores_desc.size(); ++i) {
        if (scores_desc[i] > scores_desc[i - 1]) {
            throw ArgumentError("rank-curve scores must be sorted descending");
        }
    }
    if (scores_desc.front() == scores_desc.back()) {
        return {0.0, kBetaMax, scores_desc.front(), 0.0, true};
    }

    const double lo = std::log(kBetaMin);
    const double hi = std::log(kBetaMax);
    const auto grid_at = [&](int i) { return lo + (hi - lo) * i / (kBetaGridPoints - 1); };
    int best_i = 0;
    RankCurveFit best = detail::fit_for_beta(scores_desc, std::exp(grid_at(0)));
    for (int i = 1; i < kBetaGridPoints; ++i) {
        const auto f = detail::fit_for_beta(scores_desc, std::exp(grid_at(i)));
        if (f.sse < best.sse) {
            best = f;
            best_i = i;
        }
    }

    double a = grid_at(std::max(0, best_i - 1));
    double b = grid_at(std::min(kBetaGridPoints - 1, best_i + 1));
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = b - phi * (b - a);
    double d = a + phi * (b - a);
    auto fc = detail::fit_for_beta(scores_desc, std::exp(c));
    auto fd = detail::fit_for_beta(scores_desc, std::exp(d));
    for (int it = 0; it < 100 && (b - a) > 1e-12; ++it) {
        if (fc.sse < fd.sse) {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = detail::fit_for_beta(scores_desc, std::exp(c));
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = detail::fit_for_beta(scores_desc, std::exp(d));
        }
    }
    for (const auto& f : {fc, fd}) {
        if (f.sse < best.sse) {
            best = f;
        }
    }
    return best;
}

/// n_k = ceil(0.5 / beta), clamped to [1, candidate_count].
inline int estimate_nk(double beta, std::size_t candidate_count = std::numeric_limits<int>::max()) {
    if (!(beta > 0.0)) {
        throw ArgumentError("beta must be > 0");
    }
    const double raw = std::ceil(0.5 / beta);
    const double cap = std::max<double>(1.0, static_cast<double>(candidate_count));
    return static_cast<int>(std::clamp(raw, 1.0, cap));
}

// ---------------------------------------------------------------------------
// Whole-graph mining

struct LayerMiningRecord {
    int template_id = 0;
    std::uint32_t layer_id = 0;
    std::size_t candidates = 0;
    std::size_t survivors = 0;
    int nk = 0;
    bool fitted = false;
    RankCurveFit fit;
};

struct MiningLog {
    std::vector<std::string> warnings;
    std::vector<LayerMiningRecord> layers;
};

inline MinerConfig miner_config_from_json(const nlohmann::json& j, ScoreWeights* weights = nullptr) {
    MinerConfig c;
    try {
        if (j.contains("nk")) {
            const auto& nk = j["nk"];
            if (nk.is_string()) {
                if (nk.get<std::string>() != "auto") {
                    throw FormatError("nk must be \"auto\" or a list of integers");
                }
                c.nk_auto = true;
            } else {
                c.nk_auto = false;
                c.nk_fixed = nk.get<std::vector<int>>();
                if (c.nk_fixed.empty() ||
                    std::any_of(c.nk_fixed.begin(), c.nk_fixed.end(), [](int v) { return v < 1; })) {
                    throw FormatError("fixed nk values must be >= 1");
                }
            }
        }
        c.fallback_nk = j.value("fallback_nk", c.fallback_nk);
        c.epsilon_units = j.value("epsilon", c.epsilon_units);
        c.unannotated_cap = j.value("unannotated_cap", c.unannotated_cap);
        c.seed = j.value("seed", c.seed);
        if (c.epsilon_units < 1) {
            throw FormatError("epsilon must be >= 1");
        }
        if (weights != nullptr && j.contains("weights")) {
            *weights = weights_from_json(j["weights"], *weights);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed miner config: ") + e.what());
    }
    return c;
}

inline nlohmann::json miner_config_to_json(const MinerConfig& c) {
    nlohmann::json j;
    if (c.nk_auto) {
        j["nk"] = "auto";
    } else {
        j["nk"] = c.nk_fixed;
    }
    j["fallback_nk"] = c.fallback_nk;
    j["epsilon"] = c.epsilon_units;
    j["unannotated_cap"] = c.unannotated_cap;
    j["seed"] = c.seed;
    return j;
}

/// Grows the sub-AOG of every template of `skeleton`, top layer first.
///
/// `volumes` is the whole image pool; annotated images are found by id. The
/// unannotated term averages over the pool (optionally a seeded subsample),
/// annotated images included.
inline Aog grow_aog(const Aog& skeleton, std::span<const FeatureVolume> volumes,
                    std::span<const PartAnnotation> annotations, const MinerConfig& config,
                    MiningLog* log = nullptr) {
    if (skeleton.templates.empty()) {
        throw ArgumentError("skeleton has no templates");
    }
    if (volumes.empty()) {
        throw ArgumentError("no feature volumes to mine from");
    }
    if (config.epsilon_units < 1) {
        throw ArgumentError("epsilon must be >= 1");
    }
    const auto& w = skeleton.weights;
    const auto& ref = volumes.front();
    for (const auto& v : volumes) {
        bool same = v.layers.size() == ref.layers.size() && v.image_width_px == ref.image_width_px &&
                    v.image_height_px == ref.image_height_px;
        for (std::size_t i = 0; same && i < v.layers.size(); ++i) {
            same = v.layers[i].geom == ref.layers[i].geom;
        }
        if (!same) {
            throw ArgumentError("volume '" + v.image_id + "' geometry differs from '" + ref.image_id + "'");
        }
    }

    std::vector<NormalizedVolume> normalized;
    normalized.reserve(volumes.size());
    std::map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < volumes.size(); ++i) {
        normalized.push_back(normalize_volume(volumes[i]));
        by_id[volumes[i].image_id] = i;
    }

    std::vector<std::size_t> pool(volumes.size());
    std::iota(pool.begin(), pool.end(), 0);
    if (config.unannotated_cap > 0 && static_cast<std::size_t>(config.unannotated_cap) < pool.size()) {
        std::vector<std::size_t> sample;
        std::mt19937_64 rng(config.seed);
        std::sample(pool.begin(), pool.end(), std::back_inserter(sample), config.unannotated_cap, rng);
        pool = std::move(sample);
    }
    std::vector<const NormalizedVolume*> unannotated;
    for (auto i : pool) {
        unannotated.push_back(&normalized[i]);
    }

    std::vector<LayerGeometry> layers;
    for (const auto& l : ref.layers) {
        layers.push_back(l.geom);
    }
    std::sort(layers.begin(), layers.end(),
              [](const LayerGeometry& a, const LayerGeometry& b) { return a.layer_id > b.layer_id; });

    Aog aog = skeleton;
    aog.provenance.image_width_px = ref.image_width_px;
    aog.provenance.image_height_px = ref.image_height_px;
    aog.provenance.epsilon_units = config.epsilon_units;
    aog.provenance.layers.assign(layers.rbegin(), layers.rend());

    for (auto& tpl : aog.templates) {
        tpl.patterns.clear();
        std::vector<AnnotatedImage> annotated;
        for (const auto& a : annotations) {
            if (a.template_id != tpl.template_id) {
                continue;
            }
            const auto it = by_id.find(a.image_id);
            if (it == by_id.end()) {
                throw LookupError("no feature volume for annotated image '" + a.image_id + "'");
            }
            annotated.push_back({&normalized[it->second], a.bbox.center()});
        }
        if (annotated.empty()) {
            if (log != nullptr) {
                log->warnings.push_back("template " + std::to_string(tpl.template_id) +
                                        " has no annotations; skipped");
            }
            continue;
        }

        UpperContext upper;
        int total_nk = 0;
        for (std::size_t li = 0; li < layers.size(); ++li) {
            const auto& geom = layers[li];
            auto cands = enumerate_candidates(tpl, geom);
            for (auto& c : cands) {
                const auto s = score_candidate(c, annotated, unannotated, upper, w);
                c.annotated_term = s.annotated;
                c.unannotated_term = s.unannotated;
                c.score = s.total();
            }
            const auto survivors = spatial_nms(cands, config.epsilon_units);

            LayerMiningRecord rec{tpl.template_id, geom.layer_id, cands.size(), survivors.size(), 0, false, {}};
            int nk = 0;
            if (config.nk_auto) {
                if (survivors.size() >= 8) {
                    std::vector<double> scores;
                    for (const auto& s : survivors) {
                        scores.push_back(s.score);
                    }
                    rec.fit = fit_rank_curve(scores);
                    rec.fitted = true;
                    nk = estimate_nk(rec.fit.beta, survivors.size());
                } else {
                    nk = std::clamp(config.fallback_nk, 1, static_cast<int>(std::max<std::size_t>(1, survivors.size())));
                }
            } else {
                nk = config.nk_fixed[std::min(li, config.nk_fixed.size() - 1)];
            }
            const auto chosen = greedy_select(survivors, nk, config.epsilon_units);
            rec.nk = static_cast<int>(chosen.size());
            if (log != nullptr) {
                log->layers.push_back(rec);
            }
            total_nk += rec.nk;
            aog.provenance.nk[tpl.template_id][geom.layer_id] = rec.nk;
            if (chosen.empty()) {
                continue;
            }

            // chosen patterns become the pair-term context of the next layer down
            UpperContext next;
            next.parses.resize(annotated.size());
            for (const auto& c : chosen) {
                next.patterns.push_back(c.pattern());
                tpl.patterns.push_back(c.pattern());
            }
            for (std::size_t i = 0; i < annotated.size(); ++i) {
                for (const auto& p : next.patterns) {
                    const auto nb_ids = nearest_upper(p, upper, w.neighbor_count);
                    std::vector<NeighborParse> nbs;
                    for (auto j : nb_ids) {
                        nbs.push_back({upper.patterns[j].ideal_center_px, upper.parses[i][j].center_px});
                    }
                    next.parses[i].push_back(parse_latent(p, annotated[i].volume->layer(geom.layer_id), nbs, w));
                }
            }
            upper = std::move(next);
        }
        aog.provenance.lambda_tmp[tpl.template_id] = w.lambda_inf * total_nk;
    }
    return aog;
}

} // namespace aogparts
