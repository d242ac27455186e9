#include "slipstab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "slipstab/kdtree.hpp"
#include "slipstab/rng.hpp"
#include "slipstab/symmetry.hpp"

namespace slipstab {

double adi(const RigidTransform& pose, const RigidTransform& gt, const TemplateModel& model) {
    std::vector<Vec3> gt_points;
    gt_points.reserve(model.surface_samples.size());
    for (const auto& p : model.surface_samples.points) gt_points.push_back(gt.apply(p.position));
    const KdTree3 tree(gt_points);
    double total = 0.0;
    for (const auto& p : model.surface_samples.points) {
        const auto [idx, d_sq] = tree.nearest(pose.apply(p.position));
        (void)idx;
        total += std::sqrt(d_sq);
    }
    return total / static_cast<double>(model.surface_samples.size());
}

double add(const RigidTransform& pose, const RigidTransform& gt, const TemplateModel& model) {
    double total = 0.0;
    for (const auto& p : model.surface_samples.points) {
        total += (pose.apply(p.position) - gt.apply(p.position)).norm();
    }
    return total / static_cast<double>(model.surface_samples.size());
}

void rasterize_mesh(const TriangleMesh& mesh, const RigidTransform& pose,
                    const Intrinsics& intr, int width, int height, std::vector<float>& depth,
                    std::vector<int>& winner, int object_id) {
    constexpr double kNearPlane = 1e-6;
    for (const auto& tri : mesh.triangles) {
        Vec3 v[3];
        bool behind = false;
        for (int i = 0; i < 3; ++i) {
            v[i] = pose.apply(mesh.vertices[static_cast<std::size_t>(tri[static_cast<std::size_t>(i)])]);
            behind |= v[i].z() <= kNearPlane;
        }
        if (behind) continue;

        double sx[3], sy[3], inv_z[3];
        for (int i = 0; i < 3; ++i) {
            sx[i] = intr.fx * v[i].x() / v[i].z() + intr.cx;
            sy[i] = intr.fy * v[i].y() / v[i].z() + intr.cy;
            inv_z[i] = 1.0 / v[i].z();
        }
        const double area = (sx[1] - sx[0]) * (sy[2] - sy[0]) - (sx[2] - sx[0]) * (sy[1] - sy[0]);
        if (std::abs(area) < 1e-12) continue;

        const int u0 = std::max(0, static_cast<int>(std::ceil(std::min({sx[0], sx[1], sx[2]}))));
        const int u1 = std::min(width - 1,
                                static_cast<int>(std::floor(std::max({sx[0], sx[1], sx[2]}))));
        const int v0 = std::max(0, static_cast<int>(std::ceil(std::min({sy[0], sy[1], sy[2]}))));
        const int v1 = std::min(height - 1,
                                static_cast<int>(std::floor(std::max({sy[0], sy[1], sy[2]}))));
        for (int py = v0; py <= v1; ++py) {
            for (int px = u0; px <= u1; ++px) {
                const double w0 = ((sx[1] - px) * (sy[2] - py) - (sx[2] - px) * (sy[1] - py)) / area;
                const double w1 = ((sx[2] - px) * (sy[0] - py) - (sx[0] - px) * (sy[2] - py)) / area;
                const double w2 = 1.0 - w0 - w1;
                if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
                const double z = 1.0 / (w0 * inv_z[0] + w1 * inv_z[1] + w2 * inv_z[2]);
                const std::size_t pix = static_cast<std::size_t>(py) * width + px;
                // First writer wins at exactly equal depth.
                if (depth[pix] == 0.0f || z < static_cast<double>(depth[pix])) {
                    depth[pix] = static_cast<float>(z);
                    if (!winner.empty()) winner[pix] = object_id;
                }
            }
        }
    }
}

DepthImage render_depth(const TriangleMesh& mesh, const RigidTransform& pose,
                        const Intrinsics& intrinsics, int width, int height) {
    DepthImage image;
    image.width = width;
    image.height = height;
    image.intrinsics = intrinsics;
    image.values.assign(static_cast<std::size_t>(width) * height, 0.0f);
    std::vector<int> no_winner;
    rasterize_mesh(mesh, pose, intrinsics, width, height, image.values, no_winner, 0);
    return image;
}

double vsd(const RigidTransform& pose, const RigidTransform& gt, const TemplateModel& model,
           const DepthImage& observed, double tau, double delta) {
    if (observed.width <= 0 || observed.height <= 0 ||
        static_cast<std::size_t>(observed.width) * observed.height != observed.values.size()) {
        throw IntrinsicsMismatch("observed depth image has inconsistent dimensions");
    }
    if (!(observed.intrinsics.fx > 0.0) || !(observed.intrinsics.fy > 0.0)) {
        throw IntrinsicsMismatch("observed depth image carries no valid intrinsics");
    }
    const DepthImage est =
        render_depth(model.mesh, pose, observed.intrinsics, observed.width, observed.height);
    const DepthImage ref =
        render_depth(model.mesh, gt, observed.intrinsics, observed.width, observed.height);

    std::int64_t union_count = 0;
    std::int64_t mismatch = 0;
    for (std::size_t i = 0; i < observed.values.size(); ++i) {
        const double obs = observed.values[i];
        const double de = est.values[i];
        const double dr = ref.values[i];
        const bool vis_est = de > 0.0f && obs > 0.0 && std::abs(de - obs) < delta;
        const bool vis_ref = dr > 0.0f && obs > 0.0 && std::abs(dr - obs) < delta;
        if (!vis_est && !vis_ref) continue;
        ++union_count;
        if (vis_est != vis_ref || std::abs(de - dr) >= tau) ++mismatch;
    }
    if (union_count == 0) return 0.0;
    return static_cast<double>(mismatch) / static_cast<double>(union_count);
}

double bbox_iou(const RigidTransform& pose, const RigidTransform& gt, const TemplateModel& model,
                int samples, std::uint64_t seed) {
    const Vec3 lo = model.bbox_min;
    const Vec3 hi = model.bbox_max;
    const auto inside = [&](const Vec3& p) {
        return p.x() >= lo.x() && p.x() <= hi.x() && p.y() >= lo.y() && p.y() <= hi.y() &&
               p.z() >= lo.z() && p.z() <= hi.z();
    };
    Rng rng(seed);
    const int half = samples / 2;
    // Both boxes have the same volume, so IoU = c / (2 - c) with c the overlap
    // fraction, estimated from canonical-box samples pushed through each pose.
    std::int64_t hits = 0;
    const RigidTransform gt_inv_pose = gt.inverse() * pose;
    const RigidTransform pose_inv_gt = pose.inverse() * gt;
    for (int i = 0; i < half; ++i) {
        const Vec3 p(rng.uniform(lo.x(), hi.x()), rng.uniform(lo.y(), hi.y()),
                     rng.uniform(lo.z(), hi.z()));
        if (inside(gt_inv_pose.apply(p))) ++hits;
    }
    for (int i = 0; i < samples - half; ++i) {
        const Vec3 p(rng.uniform(lo.x(), hi.x()), rng.uniform(lo.y(), hi.y()),
                     rng.uniform(lo.z(), hi.z()));
        if (inside(pose_inv_gt.apply(p))) ++hits;
    }
    const double c = static_cast<double>(hits) / static_cast<double>(samples);
    return c / (2.0 - c);
}

MetricReport classify(const RigidTransform& pose, const RigidTransform& gt,
                      const TemplateModel& model, const DepthImage* observed,
                      const MetricThresholds& thresholds) {
    MetricReport report;
    report.adi = adi(pose, gt, model);
    report.add = add(pose, gt, model);
    report.vsd = observed != nullptr
                     ? vsd(pose, gt, model, *observed, thresholds.vsd_tau, thresholds.vsd_delta)
                     : std::numeric_limits<double>::quiet_NaN();
    const auto [r_err, t_err] = symmetry_aware_pose_error(pose, gt, model.symmetry);
    report.r_err_deg = r_err;
    report.t_err = t_err;
    report.adi_pass = report.adi < thresholds.adi_frac * model.diameter;
    report.vsd_pass = observed != nullptr && report.vsd < thresholds.vsd_thresh;
    report.deg10cm10 = r_err < thresholds.rot_deg && t_err < thresholds.trans;
    report.iou25 = bbox_iou(pose, gt, model) > thresholds.iou;
    return report;
}

double recall(const std::vector<MetricReport>& reports, RecallMetric which) {
    if (reports.empty()) throw EmptySet();
    int pass = 0;
    for (const auto& r : reports) {
        switch (which) {
            case RecallMetric::adi: pass += r.adi_pass; break;
            case RecallMetric::vsd: pass += r.vsd_pass; break;
            case RecallMetric::deg10cm10: pass += r.deg10cm10; break;
            case RecallMetric::iou25: pass += r.iou25; break;
        }
    }
    return static_cast<double>(pass) / static_cast<double>(reports.size());
}

void save_depth(const std::string& path, const DepthImage& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open for writing: " + path);
    const char magic[4] = {'D', 'P', 'T', 'H'};
    const std::uint32_t w = static_cast<std::uint32_t>(image.width);
    const std::uint32_t h = static_cast<std::uint32_t>(image.height);
    const std::uint32_t reserved = 0;
    out.write(magic, 4);
    out.write(reinterpret_cast<const char*>(&w), 4);
    out.write(reinterpret_cast<const char*>(&h), 4);
    out.write(reinterpret_cast<const char*>(&reserved), 4);
    out.write(reinterpret_cast<const char*>(image.values.data()),
              static_cast<std::streamsize>(image.values.size() * sizeof(float)));
    if (!out) throw Error("short write: " + path);
}

DepthImage load_depth(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open: " + path);
    char magic[4];
    std::uint32_t w = 0, h = 0, reserved = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&w), 4);
    in.read(reinterpret_cast<char*>(&h), 4);
    in.read(reinterpret_cast<char*>(&reserved), 4);
    if (!in || std::memcmp(magic, "DPTH", 4) != 0) throw Error("bad depth raster header: " + path);
    DepthImage image;
    image.width = static_cast<int>(w);
    image.height = static_cast<int>(h);
    image.values.resize(static_cast<std::size_t>(w) * h);
    in.read(reinterpret_cast<char*>(image.values.data()),
            static_cast<std::streamsize>(image.values.size() * sizeof(float)));
    if (!in) throw Error("truncated depth raster: " + path);
    return image;
}

}  // namespace slipstab
