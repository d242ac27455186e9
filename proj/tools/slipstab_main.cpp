#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <future>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "slipstab/pipeline.hpp"

namespace fs = std::filesystem;
using namespace slipstab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitMismatch = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitInternal = 4;

int log_level() {
    const char* env = std::getenv("SLIPSTAB_LOG");
    if (env == nullptr) return 1;
    const std::string v = env;
    if (v == "error") return 0;
    if (v == "debug") return 2;
    return 1;
}

void log_info(const std::string& msg) {
    if (log_level() >= 1) std::fprintf(stderr, "[slipstab] %s\n", msg.c_str());
}

struct CommonOptions {
    std::string config_path;
    std::string out_dir;
    std::string bundle_dir;
    int jobs = 1;
    std::uint64_t seed = 1;
};

PipelineConfig load_config(const std::string& path) {
    if (path.empty()) return PipelineConfig{};
    return config_from_json(Json::parse(read_text_file(path)));
}

std::vector<std::string> list_scene_dirs(const std::string& bundle_dir) {
    std::vector<std::string> scenes;
    if (!fs::is_directory(bundle_dir)) throw Error("bundle directory not found: " + bundle_dir);
    for (const auto& entry : fs::directory_iterator(bundle_dir)) {
        if (entry.is_directory() && fs::exists(entry.path() / "spec.json")) {
            scenes.push_back(entry.path().filename().string());
        }
    }
    std::sort(scenes.begin(), scenes.end());
    if (scenes.empty()) throw Error("no scenes found in " + bundle_dir);
    return scenes;
}

TemplateDescriptor descriptor_for(const std::string& kind) {
    if (kind == "box") return {PrimitiveKind::box, {1.0, 0.72, 0.45}};
    if (kind == "cylinder") return {PrimitiveKind::cylinder, {0.3, 0.85}};
    if (kind == "box_cluster") {
        return {PrimitiveKind::box_cluster,
                {0.95, 0.6, 0.35, 0.42, 0.3, 0.22, 0.33, 0.1, 0.285}};
    }
    if (kind == "revolution") return {PrimitiveKind::revolution, {0.32, 0.18, 0.8}};
    throw Error("unknown template kind: " + kind);
}

int cmd_synth(const CommonOptions& opts, int n_scenes, const std::string& pool_csv,
              double noise_sigma, int max_occlusions) {
    ScenarioParams params;
    std::stringstream pool_stream(pool_csv);
    std::string kind;
    while (std::getline(pool_stream, kind, ',')) {
        if (!kind.empty()) params.pool.push_back(descriptor_for(kind));
    }
    if (params.pool.empty()) throw Error("empty template pool");
    params.noise_sigma = noise_sigma;
    params.max_occlusions = max_occlusions;
    params.min_occlusions = max_occlusions > 0 ? 1 : 0;

    fs::create_directories(opts.out_dir);
    for (int i = 0; i < n_scenes; ++i) {
        const SceneSpec spec = random_scene_spec(params, opts.seed + static_cast<std::uint64_t>(i));
        std::vector<TemplateModel> templates;
        for (const auto& obj : spec.objects) templates.push_back(make_primitive(obj.descriptor));
        auto [depth, gts] = render_scene(spec, templates);
        char name[32];
        std::snprintf(name, sizeof(name), "scene_%04d", i);
        write_scene_bundle(opts.out_dir + "/" + name, spec, depth, gts);
        log_info(std::string("wrote ") + name);
    }
    return kExitOk;
}

struct SceneArtifacts {
    std::vector<OrientedCloud> clouds;
    std::vector<std::vector<Patch>> patches;
};

SceneArtifacts segment_bundle_scene(const SceneBundle& bundle, const PipelineConfig& config) {
    SceneArtifacts artifacts;
    for (std::size_t i = 0; i < bundle.spec.objects.size(); ++i) {
        OrientedCloud cloud;
        if (i < bundle.gts.size() && !bundle.gts[i].mask.empty()) {
            cloud = unproject(bundle.depth, bundle.gts[i].mask, bundle.spec.camera.intrinsics);
        }
        artifacts.patches.push_back(cloud.empty() ? std::vector<Patch>{}
                                                  : segment_patches(cloud, config.segmentation));
        artifacts.clouds.push_back(std::move(cloud));
    }
    return artifacts;
}

int cmd_segment(const CommonOptions& opts, const PipelineConfig& config) {
    for (const auto& scene : list_scene_dirs(opts.bundle_dir)) {
        const SceneBundle bundle = read_scene_bundle(opts.bundle_dir + "/" + scene);
        const SceneArtifacts artifacts = segment_bundle_scene(bundle, config);
        Json out = Json::array();
        for (const auto& patches : artifacts.patches) {
            Json list = Json::array();
            for (const auto& p : patches) list.push_back(to_json(p));
            out.push_back(list);
        }
        fs::create_directories(opts.out_dir + "/" + scene);
        write_text_file(opts.out_dir + "/" + scene + "/patches.json", out.dump(2) + "\n");
    }
    return kExitOk;
}

std::vector<std::vector<Patch>> load_patches(const std::string& path, const SceneBundle& bundle,
                                             const SceneArtifacts& artifacts) {
    const Json j = Json::parse(read_text_file(path));
    std::vector<std::vector<Patch>> result;
    for (std::size_t i = 0; i < j.size(); ++i) {
        std::vector<Patch> list;
        for (const auto& pj : j.at(i)) {
            list.push_back(patch_from_json(pj, artifacts.clouds.at(i)));
        }
        result.push_back(std::move(list));
    }
    (void)bundle;
    return result;
}

int cmd_analyze(const CommonOptions& opts, const PipelineConfig& config) {
    for (const auto& scene : list_scene_dirs(opts.bundle_dir)) {
        const SceneBundle bundle = read_scene_bundle(opts.bundle_dir + "/" + scene);
        const SceneArtifacts artifacts = segment_bundle_scene(bundle, config);
        const std::string patches_path = opts.out_dir + "/" + scene + "/patches.json";
        const auto patches = fs::exists(patches_path)
                                 ? load_patches(patches_path, bundle, artifacts)
                                 : artifacts.patches;
        Json out = Json::array();
        for (const auto& list : patches) {
            Json groups_json = Json::array();
            for (const auto& g : enumerate_stable_groups(list, config.group_params())) {
                groups_json.push_back(to_json(g));
            }
            out.push_back(groups_json);
        }
        fs::create_directories(opts.out_dir + "/" + scene);
        write_text_file(opts.out_dir + "/" + scene + "/groups.json", out.dump(2) + "\n");
    }
    return kExitOk;
}

Json outcome_to_json(const ObjectOutcome& outcome) {
    return Json{{"object", outcome.object_index},
                {"pose", to_json(outcome.estimate.pose)},
                {"residual", outcome.estimate.residual},
                {"groups_used", outcome.estimate.groups_used},
                {"fallback", outcome.estimate.fallback}};
}

int cmd_estimate(const CommonOptions& opts, const PipelineConfig& config) {
    for (const auto& scene : list_scene_dirs(opts.bundle_dir)) {
        const SceneBundle bundle = read_scene_bundle(opts.bundle_dir + "/" + scene);
        const auto outcomes = process_scene(scene, bundle, config);
        Json out = Json::array();
        for (const auto& o : outcomes) out.push_back(outcome_to_json(o));
        fs::create_directories(opts.out_dir + "/" + scene);
        write_text_file(opts.out_dir + "/" + scene + "/poses.json", out.dump(2) + "\n");
    }
    return kExitOk;
}

std::string csv_row(const MetricReport& r, bool fallback) {
    char line[256];
    std::snprintf(line, sizeof(line), "%s,%.9g,%.9g,%.9g,%.9g,%.9g,%d,%d,%d,%d,%d",
                  r.object_id.c_str(), r.adi, r.add, r.vsd, r.r_err_deg, r.t_err, r.adi_pass,
                  r.vsd_pass, r.deg10cm10, r.iou25, fallback);
    return line;
}

int write_reports(const CommonOptions& opts, const PipelineConfig& config,
                  std::vector<ObjectOutcome> outcomes) {
    std::sort(outcomes.begin(), outcomes.end(), [](const ObjectOutcome& a, const ObjectOutcome& b) {
        return std::tie(a.scene_id, a.object_index) < std::tie(b.scene_id, b.object_index);
    });
    std::ostringstream csv;
    csv << "object_id,adi,add,vsd,r_err_deg,t_err,adi_pass,vsd_pass,deg10cm10,iou25,fallback\n";
    std::vector<MetricReport> reports;
    std::vector<double> r_errs, t_errs;
    int fallbacks = 0;
    for (const auto& o : outcomes) {
        csv << csv_row(o.report, o.estimate.fallback) << "\n";
        reports.push_back(o.report);
        r_errs.push_back(o.report.r_err_deg);
        t_errs.push_back(o.report.t_err);
        fallbacks += o.estimate.fallback;
    }
    const auto median = [](std::vector<double> v) {
        if (v.empty()) return 0.0;
        std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
        return v[v.size() / 2];
    };
    Json summary{{"objects", outcomes.size()},
                 {"adi_recall", recall(reports, RecallMetric::adi)},
                 {"vsd_recall", recall(reports, RecallMetric::vsd)},
                 {"deg10cm10_rate", recall(reports, RecallMetric::deg10cm10)},
                 {"iou25_rate", recall(reports, RecallMetric::iou25)},
                 {"median_r_err_deg", median(r_errs)},
                 {"median_t_err", median(t_errs)},
                 {"fallback_rate",
                  outcomes.empty() ? 0.0 : static_cast<double>(fallbacks) / outcomes.size()},
                 {"config", to_json(config)}};
    fs::create_directories(opts.out_dir);
    write_text_file(opts.out_dir + "/metrics.csv", csv.str());
    write_text_file(opts.out_dir + "/summary.json", summary.dump(2) + "\n");
    log_info("adi_recall " + std::to_string(summary.at("adi_recall").get<double>()));
    return kExitOk;
}

int cmd_run(const CommonOptions& opts, const PipelineConfig& config) {
    const auto scenes = list_scene_dirs(opts.bundle_dir);
    std::vector<ObjectOutcome> all;
    const int jobs = std::max(1, opts.jobs);
    std::vector<std::future<std::vector<ObjectOutcome>>> futures;
    for (int chunk = 0; chunk < jobs; ++chunk) {
        futures.push_back(std::async(std::launch::async, [&, chunk]() {
            std::vector<ObjectOutcome> part;
            for (std::size_t s = static_cast<std::size_t>(chunk); s < scenes.size();
                 s += static_cast<std::size_t>(jobs)) {
                const SceneBundle bundle = read_scene_bundle(opts.bundle_dir + "/" + scenes[s]);
                auto outcomes = process_scene(scenes[s], bundle, config);
                part.insert(part.end(), std::make_move_iterator(outcomes.begin()),
                            std::make_move_iterator(outcomes.end()));
            }
            return part;
        }));
    }
    for (auto& f : futures) {
        auto part = f.get();
        all.insert(all.end(), std::make_move_iterator(part.begin()),
                   std::make_move_iterator(part.end()));
    }

    // Also write per-scene pose reports, as `estimate` would.
    std::map<std::string, Json> per_scene;
    for (const auto& o : all) per_scene[o.scene_id].push_back(outcome_to_json(o));
    for (const auto& [scene, poses] : per_scene) {
        fs::create_directories(opts.out_dir + "/" + scene);
        write_text_file(opts.out_dir + "/" + scene + "/poses.json", poses.dump(2) + "\n");
    }
    return write_reports(opts, config, std::move(all));
}

int cmd_evaluate(const CommonOptions& opts, const PipelineConfig& config) {
    std::vector<ObjectOutcome> all;
    for (const auto& scene : list_scene_dirs(opts.bundle_dir)) {
        const SceneBundle bundle = read_scene_bundle(opts.bundle_dir + "/" + scene);
        const std::string poses_path = opts.out_dir + "/" + scene + "/poses.json";
        if (!fs::exists(poses_path)) throw Error("missing poses.json for " + scene);
        const Json poses = Json::parse(read_text_file(poses_path));
        for (const auto& entry : poses) {
            const std::size_t index = entry.at("object");
            ObjectOutcome outcome;
            outcome.scene_id = scene;
            outcome.object_index = static_cast<int>(index);
            outcome.estimate.pose = transform_from_json(entry.at("pose"));
            outcome.estimate.residual = entry.value("residual", 0.0);
            outcome.estimate.groups_used = entry.value("groups_used", 0);
            outcome.estimate.fallback = entry.value("fallback", false);
            const TemplateModel model =
                make_primitive(bundle.spec.objects.at(index).descriptor);
            outcome.report = classify(outcome.estimate.pose, bundle.gts.at(index).pose, model,
                                      &bundle.depth, config.metrics);
            outcome.report.object_id = scene + ":" + std::to_string(index);
            all.push_back(std::move(outcome));
        }
    }
    return write_reports(opts, config, std::move(all));
}

int cmd_selftest(const PipelineConfig& config) {
    const auto rows = stability_selftest(config);
    bool all_ok = true;
    std::printf("%-14s %10s %10s %8s %8s %8s\n", "shape", "slippable", "expected", "stable",
                "expect", "measure");
    for (const auto& row : rows) {
        std::printf("%-14s %10d %10d %8s %8s %8.6f\n", row.shape.c_str(), row.slippable,
                    row.expected_slippable, row.stable ? "yes" : "no",
                    row.expected_stable ? "yes" : "no", row.measure);
        all_ok = all_ok && row.ok();
    }
    std::printf("%s\n", all_ok ? "selftest: ok" : "selftest: MISMATCH");
    return all_ok ? kExitOk : kExitMismatch;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Depth-only 6D pose estimation via geometric stability analysis"};
    app.require_subcommand(1);

    CommonOptions opts;
    app.add_option("--config", opts.config_path, "Pipeline config JSON")->capture_default_str();
    app.add_option("--jobs", opts.jobs, "Scene-level parallelism")->capture_default_str();
    app.add_option("--seed", opts.seed, "Base seed")->capture_default_str();

    auto* synth = app.add_subcommand("synth", "Generate synthetic scene bundles");
    int n_scenes = 5;
    std::string pool = "box,box_cluster,cylinder";
    double noise_sigma = 0.0;
    int max_occ = 0;
    synth->add_option("--out", opts.out_dir, "Output bundle directory")->required();
    synth->add_option("--n", n_scenes, "Number of scenes")->capture_default_str();
    synth->add_option("--pool", pool, "Comma-separated template kinds")->capture_default_str();
    synth->add_option("--noise", noise_sigma, "Depth noise sigma")->capture_default_str();
    synth->add_option("--occlusions", max_occ, "Max occlusion rectangles")->capture_default_str();

    auto* segment = app.add_subcommand("segment", "Extract patches per object");
    auto* analyze = app.add_subcommand("analyze", "Enumerate stable patch groups");
    auto* estimate = app.add_subcommand("estimate", "Estimate object poses");
    auto* evaluate = app.add_subcommand("evaluate", "Score estimated poses against ground truth");
    auto* run = app.add_subcommand("run", "segment + analyze + estimate + evaluate");
    for (auto* cmd : {segment, analyze, estimate, evaluate, run}) {
        cmd->add_option("--bundle", opts.bundle_dir, "Scene bundle directory")->required();
        cmd->add_option("--out", opts.out_dir, "Report output directory")->required();
    }
    auto* selftest = app.add_subcommand("selftest", "Canonical-shape stability battery");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        const PipelineConfig config = load_config(opts.config_path);
        if (synth->parsed()) return cmd_synth(opts, n_scenes, pool, noise_sigma, max_occ);
        if (segment->parsed()) return cmd_segment(opts, config);
        if (analyze->parsed()) return cmd_analyze(opts, config);
        if (estimate->parsed()) return cmd_estimate(opts, config);
        if (evaluate->parsed()) return cmd_evaluate(opts, config);
        if (run->parsed()) return cmd_run(opts, config);
        if (selftest->parsed()) return cmd_selftest(config);
    } catch (const Json::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfig;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return kExitInternal;
    }
    return kExitConfig;
}
