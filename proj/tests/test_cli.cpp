#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "aogparts.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace aogparts;
using nlohmann::json;

namespace {

class Cli : public ::testing::Test {
protected:
    static fs::path root;

    static void SetUpTestSuite() {
        root = fs::temp_directory_path() / "aogparts_cli_test";
        fs::remove_all(root);
        fs::create_directories(root);
        auto spec = fixture::reference_spec(17, 8, 0.25);
        std::ofstream(root / "spec.json") << synth_spec_to_json(spec).dump(2);
        ASSERT_EQ(run("synth --spec " + path("spec.json") + " --out " + path("data")), 0);
    }
    static void TearDownTestSuite() { fs::remove_all(root); }

    static std::string path(const std::string& rel) { return (root / rel).string(); }

    static int run(const std::string& args) {
        const std::string cmd = std::string(AOGPARTS_CLI_PATH) + " " + args + " 2> " + (root / "stderr.txt").string();
        const int rc = std::system(cmd.c_str());
        return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    }

    static std::string stderr_text() { return slurp(root / "stderr.txt"); }

    static std::string slurp(const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        return {std::istreambuf_iterator<char>(in), {}};
    }

    static json read(const std::string& rel) { return json::parse(slurp(root / rel)); }

    static std::string learn_aog() {
        if (!fs::exists(root / "aog.json")) {
            EXPECT_EQ(run("learn --features " + path("data") + " --annotations " + path("data/annotations.json") +
                          " --limit 3 --out " + path("aog.json")),
                      0);
        }
        return path("aog.json");
    }
};

fs::path Cli::root;

} // namespace

TEST_F(Cli, SynthWritesDatasetAndManifest) {
    int fvols = 0;
    for (const auto& e : fs::directory_iterator(root / "data")) {
        fvols += e.path().extension() == ".fvol" ? 1 : 0;
    }
    EXPECT_EQ(fvols, 8);
    EXPECT_EQ(read("data/annotations.json").size(), 8U);
    const auto m = read("data/manifest.json");
    EXPECT_EQ(m["command"], "synth");
    EXPECT_EQ(m["seed"], 17);
    EXPECT_EQ(m["outputs"].size(), 10U);
    EXPECT_EQ(m["outputs"][0]["sha256"].get<std::string>().size(), 64U);
}

TEST_F(Cli, SynthIsDeterministic) {
    ASSERT_EQ(run("synth --spec " + path("spec.json") + " --out " + path("again")), 0);
    const auto a = read("data/manifest.json")["outputs"];
    const auto b = read("again/manifest.json")["outputs"];
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i]["sha256"], b[i]["sha256"]);
    }
}

TEST_F(Cli, SynthBadJsonIsUsageError) {
    std::ofstream(root / "bad.json") << "{ not json";
    EXPECT_EQ(run("synth --spec " + path("bad.json") + " --out " + path("bad")), 2);
    std::ofstream(root / "bad2.json") << R"({"images": 3})";
    EXPECT_EQ(run("synth --spec " + path("bad2.json") + " --out " + path("bad")), 2);
}

TEST_F(Cli, LearnWritesAogAndManifest) {
    const auto aog = deserialize(slurp(learn_aog()));
    EXPECT_EQ(aog.templates.size(), 3U);
    EXPECT_TRUE(validate_aog(aog).empty());
    const auto m = read("aog.json.manifest.json");
    EXPECT_EQ(m["command"], "learn");
    EXPECT_EQ(m["config"]["epsilon"], 2);
}

TEST_F(Cli, LearnIsDeterministic) {
    learn_aog();
    ASSERT_EQ(run("learn --features " + path("data") + " --annotations " + path("data/annotations.json") +
                  " --limit 3 --out " + path("aog2.json")),
              0);
    EXPECT_EQ(slurp(root / "aog.json"), slurp(root / "aog2.json"));
}

TEST_F(Cli, ConfigAndFlagPrecedence) {
    std::ofstream(root / "cfg.json") << R"({"epsilon": 3, "nk": [2], "weights": {"lambda_pair": 4}})";
    ASSERT_EQ(run("learn --features " + path("data") + " --annotations " + path("data/annotations.json") +
                  " --limit 3 --config " + path("cfg.json") + " --epsilon 1 --out " + path("cfg_aog.json")),
              0);
    const auto aog = deserialize(slurp(root / "cfg_aog.json"));
    EXPECT_EQ(aog.weights.lambda_pair, 4.0);
    EXPECT_EQ(aog.provenance.epsilon_units, 1);
    EXPECT_EQ(aog.templates[0].patterns.size(), 4U);
}

TEST_F(Cli, LearnMissingVolumesListsIds) {
    auto anns = read("data/annotations.json");
    anns[0]["image"] = "ghost_a";
    anns[2]["image"] = "ghost_b";
    std::ofstream(root / "ghost.json") << anns.dump();
    EXPECT_EQ(run("learn --features " + path("data") + " --annotations " + path("ghost.json") + " --out " +
                  path("ghost_aog.json")),
              3);
    const auto err = stderr_text();
    EXPECT_NE(err.find("ghost_a"), std::string::npos);
    EXPECT_NE(err.find("ghost_b"), std::string::npos);
}

TEST_F(Cli, LearnEmptyAnnotationsIsUsageError) {
    std::ofstream(root / "empty.json") << "[]";
    EXPECT_EQ(run("learn --features " + path("data") + " --annotations " + path("empty.json") + " --out " +
                  path("empty_aog.json")),
              2);
}

TEST_F(Cli, ParseEmitsCenter) {
    const auto aog = learn_aog();
    ASSERT_EQ(run("parse --aog " + aog + " --features " + path("data/img0005.fvol") + " --out " + path("p.json")), 0);
    const auto j = read("p.json");
    EXPECT_EQ(j["image"], "img0005");
    EXPECT_EQ(j["center"].size(), 2U);
    EXPECT_TRUE(fs::exists(root / "p.json.manifest.json"));
}

TEST_F(Cli, EvalReportsAllMetrics) {
    const auto aog = learn_aog();
    ASSERT_EQ(run("eval --aog " + aog + " --features " + path("data") + " --annotations " +
                  path("data/annotations.json") + " --out " + path("eval.json")),
              0);
    const auto j = read("eval.json");
    for (const char* k : {"detection_rate", "center_rate", "mean_normalized_distance"}) {
        ASSERT_TRUE(j.contains(k)) << k;
        EXPECT_GE(j[k].get<double>(), 0.0);
        EXPECT_LE(j[k].get<double>(), 1.0);
    }
    EXPECT_EQ(j["records"].size(), 8U);
}

TEST_F(Cli, HeatmapWritesPgm) {
    const auto aog = learn_aog();
    ASSERT_EQ(run("heatmap --aog " + aog + " --features " + path("data/img0001.fvol") + " --layer 0 --out " +
                  path("h.pgm")),
              0);
    EXPECT_EQ(slurp(root / "h.pgm").substr(0, 9), "P5\n16 16\n");
}

TEST_F(Cli, ValidateVolumes) {
    EXPECT_EQ(run("validate " + path("data/img0000.fvol")), 0);

    auto bytes = slurp(root / "data/img0000.fvol");
    std::ofstream(root / "short.fvol", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    EXPECT_EQ(run("validate " + path("short.fvol")), 2);

    auto vol = load_volume(root / "data/img0000.fvol");
    vol.layers[1].values[3] = std::numeric_limits<float>::quiet_NaN();
    save_volume(vol, root / "nan.fvol");
    EXPECT_EQ(run("validate " + path("nan.fvol") + " --out " + path("nan_report.json")), 4);
    EXPECT_EQ(read("nan_report.json")["violations"].size(), 1U);
}

TEST_F(Cli, ValidateAog) { EXPECT_EQ(run("validate " + learn_aog()), 0); }

TEST_F(Cli, UsageErrors) {
    EXPECT_EQ(run(""), 2);
    EXPECT_EQ(run("parse --aog x"), 2);
    EXPECT_EQ(run("parse --aog " + path("nope.json") + " --features x --out " + path("y.json")), 2);
    EXPECT_EQ(run("--version"), 0);
}
