#include "slipstab/io.hpp"

#include <json.hpp>

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace slipstab {

namespace {

Json vec3_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from(const Json& j) { return Vec3(j.at(0), j.at(1), j.at(2)); }

}  // namespace

Json to_json(const RigidTransform& t) {
    const Quat& q = t.rotation();
    return Json{{"q", {q.w(), q.x(), q.y(), q.z()}}, {"t", vec3_json(t.translation())}};
}

RigidTransform transform_from_json(const Json& j) {
    const auto& q = j.at("q");
    return RigidTransform(Quat(q.at(0), q.at(1), q.at(2), q.at(3)), vec3_from(j.at("t")));
}

Json to_json(const StabilityReport& report, double ratio_cut) {
    Json slippable = Json::array();
    for (const Twist& tw : slippable_motions(report, ratio_cut)) {
        slippable.push_back(Json::array({vec3_json(tw.r), vec3_json(tw.t)}));
    }
    return Json{{"eigenvalues", report.eigenvalues},
                {"measure", report.measure},
                {"stable", report.stable},
                {"slippable", slippable}};
}

Json to_json(const Patch& patch) {
    Json j;
    if (const auto* pl = std::get_if<PlanarPatch>(&patch)) {
        j["kind"] = "planar";
        j["center"] = vec3_json(pl->center);
        j["normal"] = vec3_json(pl->normal);
        j["area"] = pl->area_estimate;
        j["rms"] = pl->rms;
        j["indices"] = pl->indices;
    } else {
        const auto& cyl = std::get<CylindricalPatch>(patch);
        j["kind"] = "cylindrical";
        j["axis_point"] = vec3_json(cyl.axis_point);
        j["axis_dir"] = vec3_json(cyl.axis_dir);
        j["radius"] = cyl.radius;
        j["arc_extent"] = cyl.arc_extent;
        j["rms"] = cyl.rms;
        j["indices"] = cyl.indices;
    }
    return j;
}

Patch patch_from_json(const Json& j, const OrientedCloud& source) {
    const auto indices = j.at("indices").get<std::vector<int>>();
    OrientedCloud points;
    points.frame = source.frame;
    points.points.reserve(indices.size());
    for (int idx : indices) points.points.push_back(source.points.at(static_cast<std::size_t>(idx)));

    if (j.at("kind") == "planar") {
        PlanarPatch p;
        p.points = std::move(points);
        p.indices = indices;
        p.center = vec3_from(j.at("center"));
        p.normal = vec3_from(j.at("normal"));
        p.area_estimate = j.at("area");
        p.rms = j.at("rms");
        return p;
    }
    CylindricalPatch c;
    c.points = std::move(points);
    c.indices = indices;
    c.axis_point = vec3_from(j.at("axis_point"));
    c.axis_dir = vec3_from(j.at("axis_dir"));
    c.radius = j.at("radius");
    c.arc_extent = j.at("arc_extent");
    c.rms = j.at("rms");
    return c;
}

Json to_json(const SymmetrySpec& spec) {
    Json j;
    switch (spec.kind) {
        case SymmetryKind::none: j["kind"] = "none"; break;
        case SymmetryKind::discrete: j["kind"] = "discrete"; break;
        case SymmetryKind::continuous: j["kind"] = "continuous"; break;
    }
    if (!spec.discrete_transforms.empty()) {
        Json transforms = Json::array();
        for (const auto& t : spec.discrete_transforms) transforms.push_back(to_json(t));
        j["transforms"] = transforms;
    }
    if (spec.axis) {
        j["axis"] = Json{{"c", vec3_json(spec.axis->center)}, {"a", vec3_json(spec.axis->direction)}};
    }
    return j;
}

SymmetrySpec symmetry_from_json(const Json& j) {
    SymmetrySpec spec;
    const std::string kind = j.at("kind");
    spec.kind = kind == "none" ? SymmetryKind::none
                               : (kind == "discrete" ? SymmetryKind::discrete
                                                     : SymmetryKind::continuous);
    if (j.contains("transforms")) {
        for (const auto& t : j.at("transforms")) {
            spec.discrete_transforms.push_back(transform_from_json(t));
        }
    }
    if (j.contains("axis")) {
        spec.axis = SymmetryAxis{vec3_from(j.at("axis").at("c")), vec3_from(j.at("axis").at("a"))};
    }
    return spec;
}

Json to_json(const TemplateDescriptor& desc) {
    const char* kind = nullptr;
    switch (desc.kind) {
        case PrimitiveKind::box: kind = "box"; break;
        case PrimitiveKind::cylinder: kind = "cylinder"; break;
        case PrimitiveKind::box_cluster: kind = "box_cluster"; break;
        case PrimitiveKind::revolution: kind = "revolution"; break;
    }
    return Json{{"kind", kind}, {"params", desc.params}};
}

TemplateDescriptor descriptor_from_json(const Json& j) {
    TemplateDescriptor desc;
    const std::string kind = j.at("kind");
    if (kind == "box") {
        desc.kind = PrimitiveKind::box;
    } else if (kind == "cylinder") {
        desc.kind = PrimitiveKind::cylinder;
    } else if (kind == "box_cluster") {
        desc.kind = PrimitiveKind::box_cluster;
    } else if (kind == "revolution") {
        desc.kind = PrimitiveKind::revolution;
    } else {
        throw Error("unknown template kind: " + kind);
    }
    desc.params = j.at("params").get<std::vector<double>>();
    return desc;
}

Json to_json(const SceneSpec& spec) {
    Json objects = Json::array();
    for (const auto& obj : spec.objects) {
        objects.push_back(Json{{"template", to_json(obj.descriptor)}, {"pose", to_json(obj.pose)}});
    }
    Json occlusions = Json::array();
    for (const auto& r : spec.occlusions) {
        occlusions.push_back(Json{{"x", r.x}, {"y", r.y}, {"w", r.w}, {"h", r.h}});
    }
    return Json{{"seed", spec.seed},
                {"noise_sigma", spec.noise_sigma},
                {"quantization", spec.quantization},
                {"camera",
                 Json{{"fx", spec.camera.intrinsics.fx},
                      {"fy", spec.camera.intrinsics.fy},
                      {"cx", spec.camera.intrinsics.cx},
                      {"cy", spec.camera.intrinsics.cy},
                      {"width", spec.camera.width},
                      {"height", spec.camera.height}}},
                {"objects", objects},
                {"occlusions", occlusions}};
}

SceneSpec scene_spec_from_json(const Json& j) {
    SceneSpec spec;
    spec.seed = j.at("seed");
    spec.noise_sigma = j.at("noise_sigma");
    spec.quantization = j.at("quantization");
    const auto& cam = j.at("camera");
    spec.camera.intrinsics = {cam.at("fx"), cam.at("fy"), cam.at("cx"), cam.at("cy")};
    spec.camera.width = cam.at("width");
    spec.camera.height = cam.at("height");
    for (const auto& obj : j.at("objects")) {
        spec.objects.push_back(SceneObject{descriptor_from_json(obj.at("template")),
                                           transform_from_json(obj.at("pose"))});
    }
    for (const auto& r : j.at("occlusions")) {
        spec.occlusions.push_back(OcclusionRect{r.at("x"), r.at("y"), r.at("w"), r.at("h")});
    }
    return spec;
}

Json to_json(const StableGroup& group) {
    return Json{{"patch_ids", group.patch_ids},
                {"union_cloud_size", group.union_cloud_size},
                {"report", to_json(group.report)}};
}

StableGroup group_from_json(const Json& j) {
    StableGroup g;
    const auto ids = j.at("patch_ids").get<std::vector<int>>();
    std::copy_n(ids.begin(), 3, g.patch_ids.begin());
    g.union_cloud_size = j.at("union_cloud_size");
    const auto& report = j.at("report");
    g.report.measure = report.at("measure");
    g.report.stable = report.at("stable");
    const auto evs = report.at("eigenvalues").get<std::vector<double>>();
    std::copy_n(evs.begin(), 6, g.report.eigenvalues.begin());
    return g;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open: " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open for writing: " + path);
    out << content;
    if (!out) throw Error("short write: " + path);
}

void write_masks_rle(const std::string& path, int width, int height,
                     const std::vector<GroundTruth>& gts) {
    std::ostringstream out;
    out << "RLE " << width << " " << height << " " << gts.size() << "\n";
    for (std::size_t i = 0; i < gts.size(); ++i) {
        std::vector<std::pair<std::uint32_t, std::uint32_t>> runs;
        for (std::uint32_t pix : gts[i].mask) {
            if (!runs.empty() && runs.back().first + runs.back().second == pix) {
                ++runs.back().second;
            } else {
                runs.emplace_back(pix, 1);
            }
        }
        out << "obj " << i << " " << runs.size() << "\n";
        for (const auto& [start, len] : runs) out << start << " " << len << "\n";
    }
    write_text_file(path, out.str());
}

std::vector<std::vector<std::uint32_t>> read_masks_rle(const std::string& path, int& width,
                                                       int& height) {
    std::istringstream in(read_text_file(path));
    std::string tag;
    std::size_t n_objects = 0;
    in >> tag >> width >> height >> n_objects;
    if (tag != "RLE") throw Error("bad mask file: " + path);
    std::vector<std::vector<std::uint32_t>> masks(n_objects);
    for (std::size_t i = 0; i < n_objects; ++i) {
        std::size_t index = 0, n_runs = 0;
        in >> tag >> index >> n_runs;
        if (tag != "obj" || index >= n_objects) throw Error("bad mask file: " + path);
        for (std::size_t r = 0; r < n_runs; ++r) {
            std::uint32_t start = 0, len = 0;
            in >> start >> len;
            for (std::uint32_t p = 0; p < len; ++p) masks[index].push_back(start + p);
        }
    }
    if (!in) throw Error("truncated mask file: " + path);
    return masks;
}

void write_cloud_ply(const std::string& path, const OrientedCloud& cloud) {
    std::ostringstream out;
    out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
        << "\nproperty double x\nproperty double y\nproperty double z\n"
           "property double nx\nproperty double ny\nproperty double nz\nend_header\n";
    char line[256];
    for (const auto& p : cloud.points) {
        std::snprintf(line, sizeof(line), "%.17g %.17g %.17g %.17g %.17g %.17g\n", p.position.x(),
                      p.position.y(), p.position.z(), p.normal.x(), p.normal.y(), p.normal.z());
        out << line;
    }
    write_text_file(path, out.str());
}

OrientedCloud read_cloud_ply(const std::string& path) {
    std::istringstream in(read_text_file(path));
    std::string line;
    std::size_t count = 0;
    bool header_done = false;
    while (std::getline(in, line)) {
        if (line.rfind("element vertex", 0) == 0) {
            count = std::stoul(line.substr(15));
        } else if (line == "end_header") {
            header_done = true;
            break;
        }
    }
    if (!header_done) throw Error("bad PLY header: " + path);
    OrientedCloud cloud;
    cloud.points.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        auto& p = cloud.points[i];
        in >> p.position.x() >> p.position.y() >> p.position.z() >> p.normal.x() >>
            p.normal.y() >> p.normal.z();
    }
    if (!in) throw Error("truncated PLY: " + path);
    return cloud;
}

void write_scene_bundle(const std::string& dir, const SceneSpec& spec, const DepthImage& depth,
                        const std::vector<GroundTruth>& gts) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    write_text_file(dir + "/spec.json", to_json(spec).dump(2) + "\n");

    Json gt_json = Json::array();
    for (std::size_t i = 0; i < gts.size(); ++i) {
        gt_json.push_back(Json{{"object", i},
                               {"pose", to_json(gts[i].pose)},
                               {"visibility", gts[i].visibility},
                               {"pixels", gts[i].mask.size()}});
    }
    write_text_file(dir + "/gt.json", gt_json.dump(2) + "\n");
    save_depth(dir + "/depth.dpth", depth);
    write_masks_rle(dir + "/masks.rle", depth.width, depth.height, gts);
    for (std::size_t i = 0; i < gts.size(); ++i) {
        if (gts[i].mask.empty()) continue;
        char name[64];
        std::snprintf(name, sizeof(name), "/cloud_%03zu.ply", i);
        write_cloud_ply(dir + name,
                        unproject(depth, gts[i].mask, spec.camera.intrinsics));
    }
}

SceneBundle read_scene_bundle(const std::string& dir) {
    SceneBundle bundle;
    bundle.spec = scene_spec_from_json(Json::parse(read_text_file(dir + "/spec.json")));
    bundle.depth = load_depth(dir + "/depth.dpth");
    bundle.depth.intrinsics = bundle.spec.camera.intrinsics;
    int w = 0, h = 0;
    const auto masks = read_masks_rle(dir + "/masks.rle", w, h);
    if (w != bundle.depth.width || h != bundle.depth.height) {
        throw Error("mask raster size mismatch in " + dir);
    }
    const Json gt_json = Json::parse(read_text_file(dir + "/gt.json"));
    bundle.gts.resize(bundle.spec.objects.size());
    for (const auto& entry : gt_json) {
        const std::size_t index = entry.at("object");
        if (index >= bundle.gts.size()) throw Error("ground-truth index out of range in " + dir);
        bundle.gts[index].pose = transform_from_json(entry.at("pose"));
        bundle.gts[index].visibility = entry.at("visibility");
        if (index < masks.size()) bundle.gts[index].mask = masks[index];
    }
    return bundle;
}

}  // namespace slipstab
