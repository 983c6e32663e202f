#include <openssl/evp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "aogparts.hpp"

namespace fs = std::filesystem;
using namespace aogparts;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 2, kMissing = 3, kContract = 4 };

struct MissingData : Error {
    using Error::Error;
};

void log(const std::string& msg) { std::cerr << "[aogparts] " << msg << '\n'; }

std::string sha256_file(const fs::path& p) {
    const std::string data = read_file(p);
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr);
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i) {
        hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    }
    return hex.str();
}

void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) {
        fs::create_directories(p.parent_path());
    }
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open '" + p.string() + "' for writing");
    }
    out << text;
    if (!out) {
        throw IoError("write failed for '" + p.string() + "'");
    }
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

json read_json(const fs::path& p) {
    try {
        return json::parse(read_file(p));
    } catch (const json::exception& e) {
        throw FormatError("'" + p.string() + "' is not valid JSON: " + e.what());
    }
}

struct Manifest {
    std::string command;
    std::uint64_t seed = 0;
    json config = json::object();
    std::vector<std::string> inputs;
    std::vector<fs::path> outputs;

    void write(const fs::path& where) const {
        json j;
        j["command"] = command;
        j["version"] = AOGPARTS_VERSION;
        j["seed"] = seed;
        j["config"] = config;
        j["inputs"] = inputs;
        j["outputs"] = json::array();
        for (const auto& o : outputs) {
            j["outputs"].push_back({{"path", o.string()}, {"sha256", sha256_file(o)}});
        }
        write_json(where, j);
    }
};

fs::path manifest_for(const fs::path& out) { return fs::path(out.string() + ".manifest.json"); }

std::vector<fs::path> fvol_files(const fs::path& dir) {
    if (!fs::is_directory(dir)) {
        throw IoError("features directory '" + dir.string() + "' does not exist");
    }
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".fvol") {
            files.push_back(e.path());
        }
    }
    std::sort(files.begin(), files.end());
    return files;
}

std::vector<FeatureVolume> load_dir(const fs::path& dir) {
    std::vector<FeatureVolume> vols;
    for (const auto& f : fvol_files(dir)) {
        vols.push_back(load_volume(f));
    }
    log("loaded " + std::to_string(vols.size()) + " volumes from " + dir.string());
    return vols;
}

void require_volumes(const std::vector<FeatureVolume>& vols, const std::vector<PartAnnotation>& anns) {
    std::set<std::string> have;
    for (const auto& v : vols) {
        have.insert(v.image_id);
    }
    std::vector<std::string> missing;
    for (const auto& a : anns) {
        if (!have.count(a.image_id)) {
            missing.push_back(a.image_id);
        }
    }
    if (!missing.empty()) {
        std::string msg = "no feature volume for annotated image(s):";
        for (const auto& m : missing) {
            msg += " " + m;
        }
        throw MissingData(msg);
    }
}

Aog load_aog(const fs::path& p) {
    Aog aog = deserialize(read_file(p));
    const auto v = validate_aog(aog);
    if (!v.empty()) {
        throw ContractError("AOG '" + p.string() + "' is invalid: " + v.front().location + ": " + v.front().message);
    }
    return aog;
}

// ------------------------------------------------------------------ commands

int cmd_synth(const fs::path& spec_path, const fs::path& out_dir, std::optional<std::uint64_t> seed) {
    const json j = read_json(spec_path);
    SynthSpec spec;
    try {
        spec = synth_spec_from_json(j);
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad synth spec: ") + e.what());
    }
    if (seed) {
        spec.seed = *seed;
    }
    const auto ds = synth_generate(spec);
    fs::create_directories(out_dir);
    Manifest m{"synth", spec.seed, synth_spec_to_json(spec), {spec_path.string()}, {}};
    for (const auto& v : ds.volumes) {
        const auto p = out_dir / (v.image_id + ".fvol");
        save_volume(v, p);
        m.outputs.push_back(p);
    }
    write_json(out_dir / "annotations.json", annotations_to_json(ds.annotations));
    write_json(out_dir / "ground_truth.json", ground_truth_to_json(ds.ground_truth));
    m.outputs.push_back(out_dir / "annotations.json");
    m.outputs.push_back(out_dir / "ground_truth.json");
    m.write(out_dir / "manifest.json");
    log("wrote " + std::to_string(ds.volumes.size()) + " volumes to " + out_dir.string());
    return kOk;
}

struct LearnArgs {
    fs::path features, annotations, config, out;
    std::optional<std::uint64_t> seed;
    std::optional<int> epsilon;
    std::optional<int> limit;
};

int cmd_learn(const LearnArgs& a) {
    ScoreWeights w;
    MinerConfig cfg;
    if (!a.config.empty()) {
        cfg = miner_config_from_json(read_json(a.config), &w);
    }
    if (a.seed) {
        cfg.seed = *a.seed;
    }
    if (a.epsilon) {
        if (*a.epsilon < 1) {
            throw ArgumentError("--epsilon must be >= 1");
        }
        cfg.epsilon_units = *a.epsilon;
    }
    auto anns = load_annotations(a.annotations);
    if (a.limit) {
        anns.resize(std::min<std::size_t>(anns.size(), static_cast<std::size_t>(std::max(*a.limit, 0))));
    }
    if (anns.empty()) {
        throw ArgumentError("no annotations to learn from");
    }
    const auto vols = load_dir(a.features);
    require_volumes(vols, anns);

    MiningLog mlog;
    const Aog aog = grow_aog(build_skeleton(anns, w), vols, anns, cfg, &mlog);
    for (const auto& warn : mlog.warnings) {
        log("warning: " + warn);
    }
    for (const auto& r : mlog.layers) {
        log("template " + std::to_string(r.template_id) + " layer " + std::to_string(r.layer_id) + ": " +
            std::to_string(r.candidates) + " candidates, " + std::to_string(r.survivors) + " after nms, n_k " +
            std::to_string(r.nk) + (r.fitted ? " (beta " + std::to_string(r.fit.beta) + ")" : ""));
    }
    write_text(a.out, serialize(aog) + "\n");

    json config = miner_config_to_json(cfg);
    config["weights"] = weights_to_json(w);
    Manifest m{"learn", cfg.seed, config, {a.features.string(), a.annotations.string()}, {a.out}};
    if (!a.config.empty()) {
        m.inputs.push_back(a.config.string());
    }
    m.write(manifest_for(a.out));
    const auto st = aog_stats(aog);
    log("learned " + std::to_string(st.template_count) + " templates, " + std::to_string(st.patterns_per_template) +
        " patterns per template");
    return kOk;
}

int cmd_parse(const fs::path& aog_path, const fs::path& features, const fs::path& out) {
    const Aog aog = load_aog(aog_path);
    const auto vol = load_volume(features);
    const auto g = parse_semantic(aog, vol);
    write_json(out, parse_graph_to_json(g));
    Manifest m{"parse", 0, weights_to_json(aog.weights), {aog_path.string(), features.string()}, {out}};
    m.write(manifest_for(out));
    log("image " + g.image_id + ": template " + std::to_string(g.chosen_template_id) + ", score " +
        std::to_string(g.part_score));
    return kOk;
}

int cmd_eval(const fs::path& aog_path, const fs::path& features, const fs::path& annotations, const fs::path& out) {
    const Aog aog = load_aog(aog_path);
    const auto anns = load_annotations(annotations);
    if (anns.empty()) {
        throw ArgumentError("no annotations to evaluate against");
    }
    const auto vols = load_dir(features);
    require_volumes(vols, anns);
    std::map<std::string, const FeatureVolume*> by_id;
    for (const auto& v : vols) {
        by_id[v.image_id] = &v;
    }
    std::vector<EvalRecord> recs;
    for (const auto& a : anns) {
        const auto& v = *by_id.at(a.image_id);
        recs.push_back(evaluate_one(parse_semantic(aog, v), a, v.image_width_px, v.image_height_px));
    }
    const auto rep = summarize(std::move(recs));
    write_json(out, eval_report_to_json(rep));
    Manifest m{"eval", 0, weights_to_json(aog.weights),
               {aog_path.string(), features.string(), annotations.string()}, {out}};
    m.write(manifest_for(out));
    log("detection " + std::to_string(rep.detection_rate) + ", center " + std::to_string(rep.center_rate) +
        ", distance " + std::to_string(rep.mean_distance));
    return kOk;
}

int cmd_heatmap(const fs::path& aog_path, const fs::path& features, std::uint32_t layer, const fs::path& out) {
    const Aog aog = load_aog(aog_path);
    const auto vol = load_volume(features);
    const auto g = parse_semantic(aog, vol);
    if (out.has_parent_path()) {
        fs::create_directories(out.parent_path());
    }
    heatmap_export(g, vol, layer, out);
    Manifest m{"heatmap", 0, {{"layer", layer}}, {aog_path.string(), features.string()}, {out}};
    m.write(manifest_for(out));
    return kOk;
}

int cmd_validate(const fs::path& path, const fs::path& out) {
    std::vector<Violation> v;
    std::string kind;
    if (path.extension() == ".fvol") {
        kind = "volume";
        v = validate_volume(load_volume(path));
    } else {
        kind = "aog";
        v = validate_aog(deserialize(read_file(path)));
    }
    json report{{"path", path.string()}, {"kind", kind}, {"violations", json::array()}};
    for (const auto& x : v) {
        report["violations"].push_back({{"location", x.location}, {"message", x.message}});
        log(x.location + ": " + x.message);
    }
    if (!out.empty()) {
        write_json(out, report);
        Manifest m{"validate", 0, json::object(), {path.string()}, {out}};
        m.write(manifest_for(out));
    }
    log(path.string() + ": " + std::to_string(v.size()) + " violation(s)");
    return v.empty() ? kOk : kContract;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Few-shot part localization with and-or graphs over conv features"};
    app.set_version_flag("--version", AOGPARTS_VERSION);
    app.require_subcommand(1);

    fs::path spec, out, features, annotations, config, aog_path, path;
    std::optional<std::uint64_t> seed;
    std::optional<int> epsilon, limit;
    std::uint32_t layer = 0;

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--spec", spec, "synthetic spec JSON")->required();
    synth->add_option("--out", out, "output directory")->required();
    synth->add_option("--seed", seed, "override the seed given in --spec");

    auto* learn = app.add_subcommand("learn", "mine an AOG from annotated images");
    learn->add_option("--features", features, "directory of .fvol files")->required();
    learn->add_option("--annotations", annotations, "annotations JSON")->required();
    learn->add_option("--config", config, "miner config JSON");
    learn->add_option("--out", out, "output AOG JSON")->required();
    learn->add_option("--seed", seed, "subsampling seed");
    learn->add_option("--epsilon", epsilon, "NMS window in units");
    learn->add_option("--limit", limit, "use only the first N annotations");

    auto* parse = app.add_subcommand("parse", "parse one image");
    parse->add_option("--aog", aog_path, "AOG JSON")->required();
    parse->add_option("--features", features, ".fvol file")->required();
    parse->add_option("--out", out, "output parse JSON")->required();

    auto* eval = app.add_subcommand("eval", "evaluate part localization");
    eval->add_option("--aog", aog_path, "AOG JSON")->required();
    eval->add_option("--features", features, "directory of .fvol files")->required();
    eval->add_option("--annotations", annotations, "ground-truth annotations JSON")->required();
    eval->add_option("--out", out, "output report JSON")->required();

    auto* heat = app.add_subcommand("heatmap", "export a heat map of the chosen units");
    heat->add_option("--aog", aog_path, "AOG JSON")->required();
    heat->add_option("--features", features, ".fvol file")->required();
    heat->add_option("--layer", layer, "layer id")->required();
    heat->add_option("--out", out, "output .pgm")->required();

    auto* validate = app.add_subcommand("validate", "check a .fvol or AOG file");
    validate->add_option("path", path, "file to check")->required();
    validate->add_option("--out", out, "optional report JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*synth) {
            return cmd_synth(spec, out, seed);
        }
        if (*learn) {
            return cmd_learn({features, annotations, config, out, seed, epsilon, limit});
        }
        if (*parse) {
            return cmd_parse(aog_path, features, out);
        }
        if (*eval) {
            return cmd_eval(aog_path, features, annotations, out);
        }
        if (*heat) {
            return cmd_heatmap(aog_path, features, layer, out);
        }
        if (*validate) {
            return cmd_validate(path, out);
        }
    } catch (const MissingData& e) {
        log(std::string("error: ") + e.what());
        return kMissing;
    } catch (const LookupError& e) {
        log(std::string("error: ") + e.what());
        return kMissing;
    } catch (const ContractError& e) {
        log(std::string("contract violation: ") + e.what());
        return kContract;
    } catch (const Error& e) {
        log(std::string("error: ") + e.what());
        return kUsage;
    } catch (const std::exception& e) {
        log(std::string("internal error: ") + e.what());
        return kContract;
    }
    return kUsage;
}
