#include "slipstab/synth.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "slipstab/kdtree.hpp"
#include "slipstab/rng.hpp"

namespace slipstab {

std::string TemplateDescriptor::name() const {
    std::ostringstream out;
    switch (kind) {
        case PrimitiveKind::box: out << "box"; break;
        case PrimitiveKind::cylinder: out << "cylinder"; break;
        case PrimitiveKind::box_cluster: out << "box_cluster"; break;
        case PrimitiveKind::revolution: out << "revolution"; break;
    }
    for (double p : params) out << "_" << p;
    return out.str();
}

namespace {

// Mesh triangles tagged with the analytic surface they sample.
struct TaggedMesh {
    TriangleMesh mesh;
    std::vector<int> surface_of_triangle;
};

void add_quad(TaggedMesh& m, const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d,
              int surface) {
    // CCW seen from outside; normal = (b-a) x (c-a).
    const int base = static_cast<int>(m.mesh.vertices.size());
    m.mesh.vertices.insert(m.mesh.vertices.end(), {a, b, c, d});
    m.mesh.triangles.push_back({base, base + 1, base + 2});
    m.mesh.triangles.push_back({base, base + 2, base + 3});
    m.surface_of_triangle.push_back(surface);
    m.surface_of_triangle.push_back(surface);
}

// Faces tagged 0..5: +x, -x, +y, -y, +z, -z.
void add_box(TaggedMesh& m, const Vec3& dims, const Vec3& center, int surface_base) {
    const double x = dims.x() / 2, y = dims.y() / 2, z = dims.z() / 2;
    const Vec3 c = center;
    add_quad(m, c + Vec3(x, -y, -z), c + Vec3(x, y, -z), c + Vec3(x, y, z), c + Vec3(x, -y, z),
             surface_base + 0);
    add_quad(m, c + Vec3(-x, -y, -z), c + Vec3(-x, -y, z), c + Vec3(-x, y, z), c + Vec3(-x, y, -z),
             surface_base + 1);
    add_quad(m, c + Vec3(-x, y, -z), c + Vec3(-x, y, z), c + Vec3(x, y, z), c + Vec3(x, y, -z),
             surface_base + 2);
    add_quad(m, c + Vec3(-x, -y, -z), c + Vec3(x, -y, -z), c + Vec3(x, -y, z), c + Vec3(-x, -y, z),
             surface_base + 3);
    add_quad(m, c + Vec3(-x, -y, z), c + Vec3(x, -y, z), c + Vec3(x, y, z), c + Vec3(-x, y, z),
             surface_base + 4);
    add_quad(m, c + Vec3(-x, -y, -z), c + Vec3(-x, y, -z), c + Vec3(x, y, -z), c + Vec3(x, -y, -z),
             surface_base + 5);
}

constexpr int kRadialSegments = 128;

// Lateral surface of a (truncated) cone between z0/z1 with radii r0/r1.
// Surfaces: lateral = s0, bottom cap = s0+1, top cap = s0+2.
void add_lateral_and_caps(TaggedMesh& m, double r0, double r1, double z0, double z1, int s0) {
    const int base = static_cast<int>(m.mesh.vertices.size());
    for (int i = 0; i < kRadialSegments; ++i) {
        const double a = 2.0 * M_PI * i / kRadialSegments;
        m.mesh.vertices.emplace_back(r0 * std::cos(a), r0 * std::sin(a), z0);
        m.mesh.vertices.emplace_back(r1 * std::cos(a), r1 * std::sin(a), z1);
    }
    for (int i = 0; i < kRadialSegments; ++i) {
        const int j = (i + 1) % kRadialSegments;
        const int b0 = base + 2 * i, t0 = base + 2 * i + 1;
        const int b1 = base + 2 * j, t1 = base + 2 * j + 1;
        m.mesh.triangles.push_back({b0, b1, t1});
        m.mesh.triangles.push_back({b0, t1, t0});
        m.surface_of_triangle.push_back(s0);
        m.surface_of_triangle.push_back(s0);
    }
    // Bottom cap (normal -z): fan wound clockwise seen from +z.
    if (r0 > 0.0) {
        const int c0 = static_cast<int>(m.mesh.vertices.size());
        m.mesh.vertices.emplace_back(0.0, 0.0, z0);
        for (int i = 0; i < kRadialSegments; ++i) {
            const int j = (i + 1) % kRadialSegments;
            m.mesh.triangles.push_back({c0, base + 2 * j, base + 2 * i});
            m.surface_of_triangle.push_back(s0 + 1);
        }
    }
    if (r1 > 0.0) {
        const int c1 = static_cast<int>(m.mesh.vertices.size());
        m.mesh.vertices.emplace_back(0.0, 0.0, z1);
        for (int i = 0; i < kRadialSegments; ++i) {
            const int j = (i + 1) % kRadialSegments;
            m.mesh.triangles.push_back({c1, base + 2 * i + 1, base + 2 * j + 1});
            m.surface_of_triangle.push_back(s0 + 2);
        }
    }
}

Vec3 triangle_normal(const TriangleMesh& mesh, std::size_t t) {
    const Vec3& a = mesh.vertices[static_cast<std::size_t>(mesh.triangles[t][0])];
    const Vec3& b = mesh.vertices[static_cast<std::size_t>(mesh.triangles[t][1])];
    const Vec3& c = mesh.vertices[static_cast<std::size_t>(mesh.triangles[t][2])];
    return (b - a).cross(c - a).normalized();
}

double triangle_area(const TriangleMesh& mesh, std::size_t t) {
    const Vec3& a = mesh.vertices[static_cast<std::size_t>(mesh.triangles[t][0])];
    const Vec3& b = mesh.vertices[static_cast<std::size_t>(mesh.triangles[t][1])];
    const Vec3& c = mesh.vertices[static_cast<std::size_t>(mesh.triangles[t][2])];
    return 0.5 * (b - a).cross(c - a).norm();
}

bool inside_box(const Vec3& p, const Vec3& center, const Vec3& dims, double eps) {
    return std::abs(p.x() - center.x()) < dims.x() / 2 - eps &&
           std::abs(p.y() - center.y()) < dims.y() / 2 - eps &&
           std::abs(p.z() - center.z()) < dims.z() / 2 - eps;
}

// Closure of a rotation generator set under composition.
std::vector<RigidTransform> rotation_group_closure(std::vector<RigidTransform> generators) {
    std::vector<RigidTransform> group = {RigidTransform::identity()};
    group.insert(group.end(), generators.begin(), generators.end());
    bool grew = true;
    while (grew) {
        grew = false;
        const std::size_t n = group.size();
        for (std::size_t i = 0; i < n && group.size() < 64; ++i) {
            for (std::size_t j = 0; j < n && group.size() < 64; ++j) {
                const RigidTransform prod = group[i] * group[j];
                bool known = false;
                for (const auto& g : group) {
                    if (rotation_geodesic_deg(prod, g) < 1e-7 &&
                        (prod.translation() - g.translation()).norm() < 1e-9) {
                        known = true;
                        break;
                    }
                }
                if (!known) {
                    group.push_back(prod);
                    grew = true;
                }
            }
        }
    }
    // Drop the identity: the spec stores T^S \ {I}.
    std::vector<RigidTransform> out;
    for (const auto& g : group) {
        if (rotation_geodesic_deg(g, RigidTransform::identity()) >= 1e-7 ||
            g.translation().norm() >= 1e-9) {
            out.push_back(g);
        }
    }
    return out;
}

SymmetrySpec box_symmetry(const Vec3& dims) {
    const auto eq = [](double a, double b) { return std::abs(a - b) < 1e-9; };
    std::vector<RigidTransform> generators = {RigidTransform::rot_x(M_PI),
                                              RigidTransform::rot_y(M_PI),
                                              RigidTransform::rot_z(M_PI)};
    if (eq(dims.x(), dims.y())) generators.push_back(RigidTransform::rot_z(M_PI / 2));
    if (eq(dims.y(), dims.z())) generators.push_back(RigidTransform::rot_x(M_PI / 2));
    if (eq(dims.x(), dims.z())) generators.push_back(RigidTransform::rot_y(M_PI / 2));
    SymmetrySpec spec;
    spec.kind = SymmetryKind::discrete;
    spec.discrete_transforms = rotation_group_closure(std::move(generators));
    return spec;
}

}  // namespace

TemplateModel make_primitive(const TemplateDescriptor& desc, int samples, std::uint64_t seed) {
    for (double p : desc.params) {
        if (!std::isfinite(p)) throw InvalidDimensions("non-finite dimension");
    }
    const auto need = [&](std::size_t n) {
        if (desc.params.size() != n) throw InvalidDimensions("wrong parameter count");
    };
    const auto positive = [](double v) {
        if (v <= 0.0) throw InvalidDimensions("dimensions must be positive");
    };

    TaggedMesh tagged;
    SymmetrySpec symmetry;
    // Per-surface analytic descriptions for canonical patches, filled below.
    struct SurfaceInfo {
        enum class Shape { plane, cylinder, cone };
        Shape shape = Shape::plane;
        bool emit = true;  // emitted as a canonical patch
        Vec3 center = Vec3::Zero();
        Vec3 normal = Vec3::UnitZ();
        double area = 0.0;
        Vec3 axis_point = Vec3::Zero();
        Vec3 axis_dir = Vec3::UnitZ();
        double radius = 0.0;
        double arc = 2.0 * M_PI;
        // Cone profile r(z) = r0 + (r1 - r0) (z - z0) / (z1 - z0).
        double cone_r0 = 0.0, cone_r1 = 0.0, cone_z0 = 0.0, cone_z1 = 1.0;
    };
    std::vector<SurfaceInfo> surfaces;
    // Rejection volumes for cluster sampling (points inside get re-drawn).
    std::vector<std::pair<Vec3, Vec3>> solid_boxes;  // center, dims

    switch (desc.kind) {
        case PrimitiveKind::box: {
            need(3);
            Vec3 dims(desc.params[0], desc.params[1], desc.params[2]);
            for (int i = 0; i < 3; ++i) positive(dims[i]);
            dims /= dims.maxCoeff();
            add_box(tagged, dims, Vec3::Zero(), 0);
            surfaces.resize(6);
            const Vec3 half = dims / 2;
            const Vec3 axes[3] = {Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};
            for (int a = 0; a < 3; ++a) {
                const double area = dims[(a + 1) % 3] * dims[(a + 2) % 3];
                for (int sgn = 0; sgn < 2; ++sgn) {
                    SurfaceInfo& info = surfaces[static_cast<std::size_t>(2 * a + sgn)];
                    info.normal = (sgn == 0 ? 1.0 : -1.0) * axes[a];
                    info.center = info.normal * half[a];
                    info.area = area;
                }
            }
            symmetry = box_symmetry(dims);
            break;
        }
        case PrimitiveKind::cylinder: {
            need(2);
            positive(desc.params[0]);
            positive(desc.params[1]);
            double radius = desc.params[0];
            double height = desc.params[1];
            const double scale = std::max(2.0 * radius, height);
            radius /= scale;
            height /= scale;
            add_lateral_and_caps(tagged, radius, radius, -height / 2, height / 2, 0);
            surfaces.resize(3);
            surfaces[0].shape = SurfaceInfo::Shape::cylinder;
            surfaces[0].area = 2.0 * M_PI * radius * height;
            surfaces[0].radius = radius;
            surfaces[1].center = Vec3(0, 0, -height / 2);
            surfaces[1].normal = -Vec3::UnitZ();
            surfaces[1].area = M_PI * radius * radius;
            surfaces[2].center = Vec3(0, 0, height / 2);
            surfaces[2].normal = Vec3::UnitZ();
            surfaces[2].area = M_PI * radius * radius;
            symmetry.kind = SymmetryKind::continuous;
            symmetry.axis = SymmetryAxis{Vec3::Zero(), Vec3::UnitZ()};
            symmetry.discrete_transforms = {RigidTransform::rot_x(M_PI)};  // end-over-end flip
            break;
        }
        case PrimitiveKind::box_cluster: {
            need(9);
            Vec3 dims1(desc.params[0], desc.params[1], desc.params[2]);
            Vec3 dims2(desc.params[3], desc.params[4], desc.params[5]);
            Vec3 offset(desc.params[6], desc.params[7], desc.params[8]);
            for (int i = 0; i < 3; ++i) {
                positive(dims1[i]);
                positive(dims2[i]);
            }
            // Normalize the union's bounding box to a unit box, AABB-centered.
            const Vec3 lo = (-dims1 / 2).cwiseMin(offset - dims2 / 2);
            const Vec3 hi = (dims1 / 2).cwiseMax(offset + dims2 / 2);
            const double scale = (hi - lo).maxCoeff();
            const Vec3 shift = (lo + hi) / 2;
            dims1 /= scale;
            dims2 /= scale;
            const Vec3 c1 = -shift / scale;
            const Vec3 c2 = (offset - shift) / scale;
            add_box(tagged, dims1, c1, 0);
            add_box(tagged, dims2, c2, 6);
            solid_boxes = {{c1, dims1}, {c2, dims2}};
            surfaces.resize(12);
            const Vec3 axes[3] = {Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};
            const std::pair<Vec3, Vec3> boxes[2] = {{c1, dims1}, {c2, dims2}};
            for (int b = 0; b < 2; ++b) {
                const auto& [c, dims] = boxes[b];
                for (int a = 0; a < 3; ++a) {
                    const double area = dims[(a + 1) % 3] * dims[(a + 2) % 3];
                    for (int s = 0; s < 2; ++s) {
                        const Vec3 n = (s == 0 ? 1.0 : -1.0) * axes[a];
                        SurfaceInfo info;
                        info.center = c + n * (dims[a] / 2);
                        info.normal = n;
                        info.area = area;
                        // Contact faces buried in the other box are not
                        // observable and are dropped from the patch list.
                        const auto& other = boxes[1 - b];
                        info.emit = !inside_box(info.center, other.first, other.second, -1e-6);
                        surfaces[static_cast<std::size_t>(6 * b + 2 * a + s)] = info;
                    }
                }
            }
            symmetry.kind = SymmetryKind::none;
            break;
        }
        case PrimitiveKind::revolution: {
            need(3);
            positive(desc.params[0]);
            positive(desc.params[2]);
            if (desc.params[1] < 0.0) throw InvalidDimensions("top radius must be >= 0");
            double rb = desc.params[0];
            double rt = desc.params[1];
            double height = desc.params[2];
            const double scale = std::max(2.0 * std::max(rb, rt), height);
            rb /= scale;
            rt /= scale;
            height /= scale;
            add_lateral_and_caps(tagged, rb, rt, -height / 2, height / 2, 0);
            surfaces.resize(3);
            surfaces[0].shape = SurfaceInfo::Shape::cone;
            surfaces[0].emit = false;  // slanted lateral surface: not plane, not cylinder
            surfaces[0].cone_r0 = rb;
            surfaces[0].cone_r1 = rt;
            surfaces[0].cone_z0 = -height / 2;
            surfaces[0].cone_z1 = height / 2;
            surfaces[1].emit = rb > 0.0;
            surfaces[1].center = Vec3(0, 0, -height / 2);
            surfaces[1].normal = -Vec3::UnitZ();
            surfaces[1].area = M_PI * rb * rb;
            surfaces[2].emit = rt > 0.0;
            surfaces[2].center = Vec3(0, 0, height / 2);
            surfaces[2].normal = Vec3::UnitZ();
            surfaces[2].area = M_PI * rt * rt;
            symmetry.kind = SymmetryKind::continuous;
            symmetry.axis = SymmetryAxis{Vec3::Zero(), Vec3::UnitZ()};
            break;
        }
    }

    TemplateModel model;
    model.id = desc.name();
    model.mesh = std::move(tagged.mesh);
    model.symmetry = symmetry;

    // Area-weighted surface sampling; cluster-interior points are re-drawn.
    std::vector<double> cumulative(model.mesh.triangles.size());
    double total_area = 0.0;
    for (std::size_t t = 0; t < model.mesh.triangles.size(); ++t) {
        total_area += triangle_area(model.mesh, t);
        cumulative[t] = total_area;
    }
    Rng rng(seed ^ 0x5f3759df);
    model.surface_samples.frame = FrameTag::canonical;
    std::vector<int> sample_surface;
    const auto draw_samples = [&](int count, OrientedCloud& out, std::vector<int>* tags) {
        int guard = 0;
        while (static_cast<int>(out.size()) < count && guard < count * 50) {
        ++guard;
        const double pick = rng.uniform01() * total_area;
        const std::size_t t = static_cast<std::size_t>(
            std::lower_bound(cumulative.begin(), cumulative.end(), pick) - cumulative.begin());
        const auto& tri = model.mesh.triangles[std::min(t, model.mesh.triangles.size() - 1)];
        double b0 = rng.uniform01(), b1 = rng.uniform01();
        if (b0 + b1 > 1.0) {
            b0 = 1.0 - b0;
            b1 = 1.0 - b1;
        }
        const Vec3 p = model.mesh.vertices[static_cast<std::size_t>(tri[0])] +
                       b0 * (model.mesh.vertices[static_cast<std::size_t>(tri[1])] -
                             model.mesh.vertices[static_cast<std::size_t>(tri[0])]) +
                       b1 * (model.mesh.vertices[static_cast<std::size_t>(tri[2])] -
                             model.mesh.vertices[static_cast<std::size_t>(tri[0])]);
        bool interior = false;
        const int surf = tagged.surface_of_triangle[std::min(t, model.mesh.triangles.size() - 1)];
        for (std::size_t b = 0; b < solid_boxes.size(); ++b) {
            // A sample is interior if it falls inside (or on) the other solid.
            const bool own = surf / 6 == static_cast<int>(b);
            if (!own && inside_box(p, solid_boxes[b].first, solid_boxes[b].second, -1e-9)) {
                interior = true;
                break;
            }
        }
        if (interior) continue;

        OrientedPoint sample;
        sample.position = p;
        const SurfaceInfo& info = surfaces[static_cast<std::size_t>(surf)];
        if (info.shape == SurfaceInfo::Shape::plane) {
            sample.normal = info.normal;
        } else if (info.shape == SurfaceInfo::Shape::cylinder) {
            // Snap facet samples onto the analytic cylinder.
            Vec3 radial = p - info.axis_point;
            const double height = radial.dot(info.axis_dir);
            radial -= height * info.axis_dir;
            sample.normal = radial.normalized();
            sample.position =
                info.axis_point + height * info.axis_dir + info.radius * sample.normal;
        } else {
            // Snap onto the analytic cone profile; the outward normal tilts
            // against the profile slope.
            const double z = std::clamp(p.z(), info.cone_z0, info.cone_z1);
            const double r_at = info.cone_r0 + (info.cone_r1 - info.cone_r0) *
                                                   (z - info.cone_z0) /
                                                   (info.cone_z1 - info.cone_z0);
            const double slope =
                (info.cone_r1 - info.cone_r0) / (info.cone_z1 - info.cone_z0);
            const Vec3 radial = Vec3(p.x(), p.y(), 0.0).normalized();
            sample.position = r_at * radial + Vec3(0, 0, z);
            sample.normal = (radial - slope * Vec3::UnitZ()).normalized();
        }
        out.points.push_back(sample);
        if (tags) tags->push_back(surf);
        }
        if (static_cast<int>(out.size()) < count) {
            throw InvalidDimensions("surface sampling failed; degenerate solid");
        }
    };
    draw_samples(samples, model.surface_samples, &sample_surface);
    model.dense_samples.frame = FrameTag::canonical;
    draw_samples(32 * samples, model.dense_samples, nullptr);

    // Canonical patches carry the exact analytic parameters plus their samples.
    for (std::size_t s = 0; s < surfaces.size(); ++s) {
        const SurfaceInfo& info = surfaces[s];
        if (!info.emit) continue;
        OrientedCloud members;
        members.frame = FrameTag::canonical;
        for (std::size_t i = 0; i < model.surface_samples.size(); ++i) {
            if (sample_surface[i] == static_cast<int>(s)) {
                members.points.push_back(model.surface_samples.points[i]);
            }
        }
        if (info.shape == SurfaceInfo::Shape::plane) {
            PlanarPatch patch;
            patch.points = std::move(members);
            patch.center = info.center;
            patch.normal = info.normal;
            patch.area_estimate = info.area;
            model.canonical_patches.emplace_back(std::move(patch));
        } else {
            CylindricalPatch patch;
            patch.points = std::move(members);
            patch.axis_point = info.axis_point;
            patch.axis_dir = info.axis_dir;
            patch.radius = info.radius;
            patch.arc_extent = info.arc;
            model.canonical_patches.emplace_back(std::move(patch));
        }
    }

    double diameter_sq = 0.0;
    for (std::size_t i = 0; i < model.surface_samples.size(); ++i) {
        for (std::size_t j = i + 1; j < model.surface_samples.size(); ++j) {
            diameter_sq = std::max(diameter_sq, (model.surface_samples.points[i].position -
                                                 model.surface_samples.points[j].position)
                                                    .squaredNorm());
        }
    }
    model.diameter = std::sqrt(diameter_sq);

    Vec3 lo = model.mesh.vertices.front(), hi = lo;
    for (const auto& v : model.mesh.vertices) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
    }
    model.bbox_min = lo;
    model.bbox_max = hi;
    return model;
}

std::pair<DepthImage, std::vector<GroundTruth>> render_scene(
    const SceneSpec& spec, const std::vector<TemplateModel>& templates) {
    const int w = spec.camera.width;
    const int h = spec.camera.height;
    DepthImage depth;
    depth.width = w;
    depth.height = h;
    depth.intrinsics = spec.camera.intrinsics;
    depth.values.assign(static_cast<std::size_t>(w) * h, 0.0f);
    std::vector<int> winner(static_cast<std::size_t>(w) * h, -1);

    std::vector<std::int64_t> alone_count(spec.objects.size(), 0);
    for (std::size_t i = 0; i < spec.objects.size(); ++i) {
        rasterize_mesh(templates[i].mesh, spec.objects[i].pose, spec.camera.intrinsics, w, h,
                       depth.values, winner, static_cast<int>(i));
        std::vector<float> scratch(static_cast<std::size_t>(w) * h, 0.0f);
        std::vector<int> no_winner;
        rasterize_mesh(templates[i].mesh, spec.objects[i].pose, spec.camera.intrinsics, w, h,
                       scratch, no_winner, 0);
        for (float z : scratch) alone_count[i] += z > 0.0f;
    }

    for (const auto& rect : spec.occlusions) {
        for (int y = std::max(0, rect.y); y < std::min(h, rect.y + rect.h); ++y) {
            for (int x = std::max(0, rect.x); x < std::min(w, rect.x + rect.w); ++x) {
                const std::size_t pix = static_cast<std::size_t>(y) * w + x;
                depth.values[pix] = 0.0f;
                winner[pix] = -1;
            }
        }
    }

    Rng rng(spec.seed ^ 0xd1f4c5a9ULL);
    for (auto& z : depth.values) {
        if (z <= 0.0f) continue;
        double value = z;
        if (spec.noise_sigma > 0.0) value += spec.noise_sigma * rng.normal();
        if (spec.quantization > 0.0) {
            value = std::round(value / spec.quantization) * spec.quantization;
        }
        z = static_cast<float>(std::max(value, 1e-6));
    }

    std::vector<GroundTruth> gts(spec.objects.size());
    for (std::size_t i = 0; i < spec.objects.size(); ++i) {
        gts[i].pose = spec.objects[i].pose;
        for (std::size_t pix = 0; pix < winner.size(); ++pix) {
            if (winner[pix] == static_cast<int>(i)) {
                gts[i].mask.push_back(static_cast<std::uint32_t>(pix));
            }
        }
        gts[i].visibility = alone_count[i] > 0 ? static_cast<double>(gts[i].mask.size()) /
                                                     static_cast<double>(alone_count[i])
                                               : 0.0;
    }
    return {std::move(depth), std::move(gts)};
}

OrientedCloud unproject(const DepthImage& depth, const std::vector<std::uint32_t>& mask,
                        const Intrinsics& intrinsics, int k) {
    OrientedCloud cloud;
    cloud.frame = FrameTag::camera;
    for (std::uint32_t pix : mask) {
        const int u = static_cast<int>(pix) % depth.width;
        const int v = static_cast<int>(pix) / depth.width;
        const double z = depth.at(u, v);
        if (z <= 0.0) continue;
        cloud.points.push_back(
            {Vec3((u - intrinsics.cx) * z / intrinsics.fx, (v - intrinsics.cy) * z / intrinsics.fy,
                  z),
             Vec3::UnitZ()});
    }
    if (cloud.empty()) throw EmptyMask();

    std::vector<Vec3> positions(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) positions[i] = cloud.points[i].position;
    const KdTree3 tree(positions);
    const int kk = std::min(k + 1, static_cast<int>(cloud.size()));
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto nn = tree.knn(positions[i], kk);
        Vec3 mean = Vec3::Zero();
        for (int j : nn) mean += positions[static_cast<std::size_t>(j)];
        mean /= static_cast<double>(nn.size());
        Mat3 cov = Mat3::Zero();
        for (int j : nn) {
            const Vec3 d = positions[static_cast<std::size_t>(j)] - mean;
            cov += d * d.transpose();
        }
        Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
        Vec3 normal = es.eigenvectors().col(0);
        // Camera sits at the origin: normals face it.
        if (normal.dot(positions[i]) > 0.0) normal = -normal;
        cloud.points[i].normal = normal;
    }
    return cloud;
}

SceneSpec random_scene_spec(const ScenarioParams& params, std::uint64_t seed) {
    if (params.pool.empty()) throw Error("empty template pool");
    Rng rng(seed);
    SceneSpec spec;
    spec.camera = params.camera;
    spec.seed = seed;
    spec.noise_sigma = params.noise_sigma;

    SceneObject obj;
    obj.descriptor = params.pool[static_cast<std::size_t>(seed % params.pool.size())];
    const double z = rng.uniform(params.z_min, params.z_max);
    const Vec3 t(rng.uniform(-params.xy_jitter, params.xy_jitter),
                 rng.uniform(-params.xy_jitter, params.xy_jitter), z);
    obj.pose = RigidTransform(rng.rotation(), t);
    spec.objects.push_back(obj);

    const int n_occ = params.max_occlusions > 0
                          ? rng.uniform_int(params.min_occlusions, params.max_occlusions)
                          : 0;
    if (n_occ > 0) {
        // Place rectangles over the object's silhouette bounding box.
        const TemplateModel model = make_primitive(obj.descriptor);
        auto [depth, gts] = render_scene(spec, {model});
        if (!gts[0].mask.empty()) {
            int u0 = spec.camera.width, u1 = 0, v0 = spec.camera.height, v1 = 0;
            for (std::uint32_t pix : gts[0].mask) {
                const int u = static_cast<int>(pix) % spec.camera.width;
                const int v = static_cast<int>(pix) / spec.camera.width;
                u0 = std::min(u0, u);
                u1 = std::max(u1, u);
                v0 = std::min(v0, v);
                v1 = std::max(v1, v);
            }
            for (int i = 0; i < n_occ; ++i) {
                const double frac = rng.uniform(params.occ_min_frac, params.occ_max_frac);
                const double side = std::sqrt(frac);
                OcclusionRect rect;
                rect.w = std::max(1, static_cast<int>(side * (u1 - u0 + 1)));
                rect.h = std::max(1, static_cast<int>(side * (v1 - v0 + 1)));
                rect.x = rng.uniform_int(u0, std::max(u0, u1 - rect.w));
                rect.y = rng.uniform_int(v0, std::max(v0, v1 - rect.h));
                spec.occlusions.push_back(rect);
            }
        }
    }
    return spec;
}

}  // namespace slipstab
