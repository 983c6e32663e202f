#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "aogparts.hpp"

using namespace aogparts;

namespace {

PartAnnotation ann(const std::string& id, int tpl, Box b) { return {id, "head", tpl, b}; }

Aog sample_aog() {
    Aog aog = build_skeleton({ann("a", 0, {0, 0, 40, 40}), ann("b", 1, {10, 10, 70, 50})}, ScoreWeights{});
    aog.templates[0].patterns = {{1, 2, {56.5, 24.25}, {-36.5, -4.25}, 3.0 / 7.0},
                                 {0, 0, {8, 8}, {12, 12}, -1e-17}};
    aog.templates[1].patterns = {{0, 1, {40, 32}, {0.1, 0.2}, 12.5}};
    aog.provenance.layers = {{0, 2, 8, 8, 8.0F, 16.0F, 4.0F}, {1, 3, 4, 4, 16.0F, 40.0F, 8.0F}};
    aog.provenance.image_width_px = 64;
    aog.provenance.image_height_px = 64;
    aog.provenance.epsilon_units = 2;
    aog.provenance.nk[0] = {{0, 1}, {1, 1}};
    aog.provenance.nk[1] = {{0, 1}};
    aog.provenance.lambda_tmp = {{0, 10.0}, {1, 5.0}};
    return aog;
}

} // namespace

TEST(ScoreWeights, DefaultsAreThePublishedConstants) {
    const ScoreWeights w;
    EXPECT_DOUBLE_EQ(w.lambda_rsp, 1.5);
    EXPECT_DOUBLE_EQ(w.lambda_loc, 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(w.lambda_pair, 10.0);
    EXPECT_DOUBLE_EQ(w.lambda_unsup, 5.0);
    EXPECT_DOUBLE_EQ(w.lambda_close, 0.4);
    EXPECT_DOUBLE_EQ(w.lambda_inf, 5.0);
    EXPECT_DOUBLE_EQ(w.s_none, -3.0);
    EXPECT_DOUBLE_EQ(w.d_px, 37.0);
    EXPECT_DOUBLE_EQ(w.deform_range_px, 75.0);
    EXPECT_EQ(w.neighbor_count, 15);
    EXPECT_TRUE(validate_weights(w).empty());
}

TEST(BuildSkeleton, ThreeShotUsesEachBoxAsScale) {
    const auto aog = build_skeleton(
        {ann("a", 0, {0, 0, 30, 20}), ann("b", 1, {5, 5, 45, 65}), ann("c", 2, {1, 1, 11, 21})}, {});
    ASSERT_EQ(aog.templates.size(), 3U);
    EXPECT_EQ(aog.templates[0].scale, (Scale{30, 20}));
    EXPECT_EQ(aog.templates[1].scale, (Scale{40, 60}));
    EXPECT_EQ(aog.templates[2].scale, (Scale{10, 20}));
    EXPECT_EQ(aog.templates[1].anchor_px, (Point{25, 35}));
    for (const auto& t : aog.templates) {
        EXPECT_TRUE(t.patterns.empty());
    }
}

TEST(BuildSkeleton, ScaleIsMeanOfBoxes) {
    const auto aog = build_skeleton({ann("a", 0, {0, 0, 40, 40}), ann("b", 0, {10, 10, 70, 70})}, {});
    ASSERT_EQ(aog.templates.size(), 1U);
    EXPECT_EQ(aog.templates[0].scale, (Scale{50, 50}));
}

TEST(BuildSkeleton, TwelveAnnotationsFourPerTemplate) {
    std::vector<PartAnnotation> anns;
    for (int i = 0; i < 12; ++i) {
        anns.push_back(ann("i" + std::to_string(i), i % 3, {1.0 * i, 2.0, 30.0 + i, 40.0 + 2 * i}));
    }
    const auto aog = build_skeleton(anns, {});
    ASSERT_EQ(aog.templates.size(), 3U);
    for (const auto& t : aog.templates) {
        EXPECT_EQ(t.annotation_count, 4);
    }
}

TEST(BuildSkeleton, PermutationInvariant) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 100.0);
    std::vector<PartAnnotation> anns;
    for (int i = 0; i < 9; ++i) {
        const double x = u(rng), y = u(rng);
        anns.push_back(ann("i" + std::to_string(i), i % 2, {x, y, x + 1 + u(rng), y + 1 + u(rng)}));
    }
    const auto ref = build_skeleton(anns, {});
    for (int r = 0; r < 20; ++r) {
        std::shuffle(anns.begin(), anns.end(), rng);
        EXPECT_EQ(build_skeleton(anns, {}).templates, ref.templates);
    }
}

TEST(BuildSkeleton, Errors) {
    EXPECT_THROW(build_skeleton({}, {}), ArgumentError);
    EXPECT_THROW(build_skeleton({ann("a", 0, {0, 0, 4, 4}), ann("b", 2, {0, 0, 4, 4})}, {}), ArgumentError);
}

TEST(Serialize, RoundTripPreservesEverything) {
    const auto aog = sample_aog();
    const auto back = deserialize(serialize(aog));
    EXPECT_EQ(back, aog);
    EXPECT_EQ(serialize(back), serialize(aog));
}

TEST(Serialize, MissingWeightsIsFormatError) {
    auto doc = aog_to_json(sample_aog());
    doc.erase("weights");
    EXPECT_THROW(aog_from_json(doc), FormatError);
}

TEST(Serialize, UnknownVersionAndGarbage) {
    auto doc = aog_to_json(sample_aog());
    doc["version"] = 99;
    EXPECT_THROW(aog_from_json(doc), FormatError);
    EXPECT_THROW(deserialize("{not json"), FormatError);
    EXPECT_THROW(deserialize(R"({"version":1,"weights":{"lambda_rsp":-1},"templates":[]})"), FormatError);
}

TEST(Serialize, HandWrittenMinimalGraph) {
    const auto aog = deserialize(R"({
        "version": 1, "part": "head", "weights": {},
        "templates": [{"id": 0, "scale": [40, 30],
                       "patterns": [{"layer": 0, "slice": 1, "center": [20, 20], "dp": [4, -2], "score": 1.5}]}]
    })");
    EXPECT_TRUE(validate_aog(aog).empty());
    ASSERT_EQ(aog.templates.size(), 1U);
    EXPECT_EQ(aog.templates[0].patterns[0].displacement_px, (Point{4, -2}));
    EXPECT_EQ(aog.weights, ScoreWeights{});
}

TEST(Validate, DetectsBrokenGraphs) {
    EXPECT_TRUE(validate_aog(sample_aog()).empty());
    auto aog = sample_aog();
    aog.templates[0].patterns[1].slice = 5; // layer 0 has two channels
    EXPECT_EQ(validate_aog(aog).size(), 1U);
    aog = sample_aog();
    aog.templates[1].patterns.push_back({0, 1, {48, 32}, {}, 0.0}); // one unit-stride window away... within eps
    EXPECT_EQ(validate_aog(aog).size(), 1U);
    aog = sample_aog();
    aog.templates.clear();
    EXPECT_FALSE(validate_aog(aog).empty());
}

TEST(Stats, CountsChildren) {
    Aog aog = build_skeleton({ann("a", 0, {0, 0, 40, 40}), ann("b", 1, {0, 0, 40, 40})}, {});
    aog.provenance.layers = {{0, 4, 20, 20, 16.0F, 32.0F, 8.0F}};
    for (auto& t : aog.templates) {
        for (int i = 0; i < 5; ++i) {
            t.patterns.push_back({0, static_cast<std::uint32_t>(i % 4), {168, 168}, {}, 0});
        }
    }
    const auto s = aog_stats(aog);
    EXPECT_EQ(s.template_count, 2U);
    EXPECT_DOUBLE_EQ(s.patterns_per_template, 5.0);
    // a 75 px range on a stride-16 layer away from the border holds 5 x 5 units
    EXPECT_DOUBLE_EQ(s.units_per_pattern, 25.0);
}
