#include "slipstab/patches.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

#include "slipstab/kdtree.hpp"

namespace slipstab {

PatchKind patch_kind(const Patch& p) {
    return std::holds_alternative<PlanarPatch>(p) ? PatchKind::planar : PatchKind::cylindrical;
}

const OrientedCloud& patch_points(const Patch& p) {
    return std::visit([](const auto& v) -> const OrientedCloud& { return v.points; }, p);
}

const std::vector<int>& patch_indices(const Patch& p) {
    return std::visit([](const auto& v) -> const std::vector<int>& { return v.indices; }, p);
}

Vec3 patch_center(const Patch& p) {
    if (const auto* pl = std::get_if<PlanarPatch>(&p)) return pl->center;
    const auto& cyl = std::get<CylindricalPatch>(p);
    return cyl.axis_point;
}

Vec3 patch_direction(const Patch& p) {
    if (const auto* pl = std::get_if<PlanarPatch>(&p)) return pl->normal;
    return std::get<CylindricalPatch>(p).axis_dir;
}

PatchDescriptor describe(const Patch& p) {
    PatchDescriptor d;
    d.kind = patch_kind(p);
    d.point_count = static_cast<int>(patch_points(p).size());
    if (const auto* pl = std::get_if<PlanarPatch>(&p)) {
        d.area_or_arc = pl->area_estimate;
        d.radius = 0.0;
    } else {
        const auto& cyl = std::get<CylindricalPatch>(p);
        d.area_or_arc = cyl.arc_extent;
        d.radius = cyl.radius;
    }
    return d;
}

namespace {

// Deterministic sign: largest-magnitude component positive.
Vec3 canonical_sign(const Vec3& v) {
    int lead = 0;
    for (int i = 1; i < 3; ++i) {
        if (std::abs(v[i]) > std::abs(v[lead])) lead = i;
    }
    return v[lead] < 0.0 ? Vec3(-v) : v;
}

}  // namespace

PlaneFit fit_plane(const std::vector<Vec3>& points, const Vec3* camera_dir) {
    if (points.size() < 3) throw DegenerateCollinear();
    Vec3 centroid = Vec3::Zero();
    for (const auto& p : points) centroid += p;
    centroid /= static_cast<double>(points.size());

    Mat3 cov = Mat3::Zero();
    for (const auto& p : points) {
        const Vec3 d = p - centroid;
        cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    const Vec3 evals = es.eigenvalues();  // ascending
    if (evals[1] <= 1e-12 * std::max(evals[2], 1e-300)) throw DegenerateCollinear();

    PlaneFit fit;
    fit.normal = es.eigenvectors().col(0);
    if (camera_dir != nullptr) {
        if (fit.normal.dot(*camera_dir) > 0.0) fit.normal = -fit.normal;
    } else {
        fit.normal = canonical_sign(fit.normal);
    }
    fit.offset = fit.normal.dot(centroid);
    fit.rms = std::sqrt(std::max(0.0, evals[0]) / static_cast<double>(points.size()));
    return fit;
}

double point_to_axis_distance(const Vec3& x, const Vec3& axis_point, const Vec3& axis_dir) {
    return (x - axis_point).cross(axis_dir).norm();
}

namespace {

void axis_basis(const Vec3& dir, Vec3& e1, Vec3& e2) {
    e1 = std::abs(dir.z()) < 0.9 ? dir.cross(Vec3::UnitZ()).normalized()
                                 : dir.cross(Vec3::UnitX()).normalized();
    e2 = dir.cross(e1);
}

double arc_coverage(const std::vector<OrientedPoint>& points, const Vec3& axis_point,
                    const Vec3& axis_dir) {
    Vec3 e1, e2;
    axis_basis(axis_dir, e1, e2);
    std::vector<double> angles;
    angles.reserve(points.size());
    for (const auto& p : points) {
        const Vec3 q = p.position - axis_point;
        angles.push_back(std::atan2(q.dot(e2), q.dot(e1)));
    }
    std::sort(angles.begin(), angles.end());
    double max_gap = 2.0 * M_PI - (angles.back() - angles.front());
    for (std::size_t i = 1; i < angles.size(); ++i) {
        max_gap = std::max(max_gap, angles[i] - angles[i - 1]);
    }
    return 2.0 * M_PI - max_gap;
}

}  // namespace

CylinderFit fit_cylinder(const std::vector<OrientedPoint>& points, double min_arc_rad) {
    if (points.size() < 6) throw DegenerateArc();

    // Cylinder normals are perpendicular to the axis: the axis is the
    // least-variance direction of the normals' second moment.
    Mat3 nn = Mat3::Zero();
    for (const auto& p : points) nn += p.normal * p.normal.transpose();
    Eigen::SelfAdjointEigenSolver<Mat3> es(nn);
    Vec3 axis = canonical_sign(es.eigenvectors().col(0));

    Vec3 centroid = Vec3::Zero();
    for (const auto& p : points) centroid += p.position;
    centroid /= static_cast<double>(points.size());

    // Initial center and radius from an algebraic circle fit in the plane
    // perpendicular to the axis.
    Vec3 e1, e2;
    axis_basis(axis, e1, e2);
    Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
    Eigen::Vector3d atb = Eigen::Vector3d::Zero();
    for (const auto& p : points) {
        const Vec3 q = p.position - centroid;
        const double x = q.dot(e1), y = q.dot(e2);
        Eigen::Vector3d row(2.0 * x, 2.0 * y, 1.0);
        ata += row * row.transpose();
        atb += row * (x * x + y * y);
    }
    const Eigen::Vector3d sol = ata.ldlt().solve(atb);
    Vec3 center = centroid + sol[0] * e1 + sol[1] * e2;
    double radius = std::sqrt(std::max(1e-12, sol[2] + sol[0] * sol[0] + sol[1] * sol[1]));

    if (arc_coverage(points, center, axis) < min_arc_rad) throw DegenerateArc();

    // Gauss-Newton on the radius residuals d(v, axis) - r. Parameters are the
    // two transverse center offsets, two axis tilts, and the radius.
    double rms = 0.0;
    bool converged = false;
    for (int iter = 0; iter < 100; ++iter) {
        axis_basis(axis, e1, e2);
        Eigen::Matrix<double, 5, 5> h = Eigen::Matrix<double, 5, 5>::Zero();
        Eigen::Matrix<double, 5, 1> g = Eigen::Matrix<double, 5, 1>::Zero();
        double sq = 0.0;
        for (const auto& p : points) {
            const Vec3 q = p.position - center;
            const double axial = q.dot(axis);
            const Vec3 q_perp = q - axial * axis;
            const double dist = q_perp.norm();
            if (dist < 1e-12) continue;
            const Vec3 w = q_perp / dist;
            const double rho = dist - radius;
            Eigen::Matrix<double, 5, 1> jac;
            jac << -w.dot(e1), -w.dot(e2), -axial * q.dot(e1) / dist, -axial * q.dot(e2) / dist,
                -1.0;
            h += jac * jac.transpose();
            g += jac * rho;
            sq += rho * rho;
        }
        rms = std::sqrt(sq / static_cast<double>(points.size()));
        h.diagonal().array() += 1e-12 * h.trace();
        const Eigen::Matrix<double, 5, 1> delta = h.ldlt().solve(-g);
        if (!delta.allFinite()) throw NoConvergence("cylinder fit produced a non-finite update");

        center += delta[0] * e1 + delta[1] * e2;
        axis = (axis + delta[2] * e1 + delta[3] * e2).normalized();
        radius += delta[4];
        if (radius <= 0.0) throw NoConvergence("cylinder radius collapsed");
        if (delta.norm() < 1e-10 * (1.0 + radius)) {
            converged = true;
            break;
        }
    }
    if (!converged) throw NoConvergence("cylinder fit exceeded the iteration budget");

    axis = canonical_sign(axis);
    // Report the axis point nearest the data centroid.
    center += (centroid - center).dot(axis) * axis;

    CylinderFit fit;
    fit.axis_point = center;
    fit.axis_dir = axis;
    fit.radius = radius;
    fit.arc_extent = arc_coverage(points, center, axis);
    double sq = 0.0;
    for (const auto& p : points) {
        const double rho = point_to_axis_distance(p.position, center, axis) - radius;
        sq += rho * rho;
    }
    fit.rms = std::sqrt(sq / static_cast<double>(points.size()));
    return fit;
}

namespace {

struct RegionFit {
    bool is_plane = false;
    bool is_cylinder = false;
    PlaneFit plane;
    CylinderFit cylinder;
};

double estimate_spacing(const OrientedCloud& cloud, const std::vector<int>& members,
                        const KdTree3& tree) {
    // Median nearest-neighbor distance over a capped member sample.
    std::vector<double> dists;
    const std::size_t step = std::max<std::size_t>(1, members.size() / 50);
    for (std::size_t i = 0; i < members.size(); i += step) {
        const auto nn = tree.knn(cloud.points[static_cast<std::size_t>(members[i])].position, 2);
        if (nn.size() == 2) {
            const Vec3 a = cloud.points[static_cast<std::size_t>(nn[0])].position;
            const Vec3 b = cloud.points[static_cast<std::size_t>(nn[1])].position;
            dists.push_back((a - b).norm());
        }
    }
    if (dists.empty()) return 0.0;
    std::nth_element(dists.begin(), dists.begin() + dists.size() / 2, dists.end());
    return dists[dists.size() / 2];
}

}  // namespace

std::vector<Patch> segment_patches(const OrientedCloud& cloud, const SegmentationParams& params) {
    std::vector<Patch> patches;
    const int n = static_cast<int>(cloud.size());
    if (n < params.min_points) return patches;

    std::vector<Vec3> positions(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) positions[i] = cloud.points[i].position;
    KdTree3 tree(positions);

    const int k = std::min(params.knn + 1, n);
    std::vector<std::vector<int>> neighbors(cloud.size());
    std::vector<double> curvature(cloud.size(), 0.0);
    for (int i = 0; i < n; ++i) {
        auto nn = tree.knn(positions[static_cast<std::size_t>(i)], k);
        Mat3 cov = Mat3::Zero();
        Vec3 mean = Vec3::Zero();
        for (int j : nn) mean += positions[static_cast<std::size_t>(j)];
        mean /= static_cast<double>(nn.size());
        for (int j : nn) {
            const Vec3 d = positions[static_cast<std::size_t>(j)] - mean;
            cov += d * d.transpose();
        }
        Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
        const double total = es.eigenvalues().sum();
        curvature[static_cast<std::size_t>(i)] = total > 0.0 ? es.eigenvalues()[0] / total : 1.0;
        nn.erase(std::remove(nn.begin(), nn.end(), i), nn.end());
        neighbors[static_cast<std::size_t>(i)] = std::move(nn);
    }

    std::vector<int> seeds(cloud.size());
    std::iota(seeds.begin(), seeds.end(), 0);
    std::stable_sort(seeds.begin(), seeds.end(),
                     [&](int a, int b) { return curvature[static_cast<std::size_t>(a)] <
                                                curvature[static_cast<std::size_t>(b)]; });

    const double cos_tol = std::cos(params.normal_angle_tol_deg * M_PI / 180.0);
    std::vector<char> assigned(cloud.size(), 0);
    std::vector<int> visit_mark(cloud.size(), -1);
    int epoch = 0;

    for (int seed : seeds) {
        if (assigned[static_cast<std::size_t>(seed)]) continue;
        if (curvature[static_cast<std::size_t>(seed)] > params.max_curvature) break;  // sorted
        ++epoch;

        // Smoothness-constrained flood fill from the seed. High-curvature
        // points (crease and silhouette zones) are not traversable.
        std::vector<int> region;
        std::queue<int> frontier;
        frontier.push(seed);
        visit_mark[static_cast<std::size_t>(seed)] = epoch;
        while (!frontier.empty()) {
            const int cur = frontier.front();
            frontier.pop();
            region.push_back(cur);
            const OrientedPoint& pc = cloud.points[static_cast<std::size_t>(cur)];
            for (int nb : neighbors[static_cast<std::size_t>(cur)]) {
                if (assigned[static_cast<std::size_t>(nb)] ||
                    visit_mark[static_cast<std::size_t>(nb)] == epoch) {
                    continue;
                }
                if (curvature[static_cast<std::size_t>(nb)] > params.max_curvature) continue;
                const OrientedPoint& pn = cloud.points[static_cast<std::size_t>(nb)];
                if (pc.normal.dot(pn.normal) < cos_tol) continue;
                if (std::abs(pc.normal.dot(pn.position - pc.position)) > params.dist_tol) continue;
                visit_mark[static_cast<std::size_t>(nb)] = epoch;
                frontier.push(nb);
            }
        }
        if (static_cast<int>(region.size()) < params.min_points) continue;

        std::sort(region.begin(), region.end());
        std::vector<Vec3> region_pos;
        std::vector<OrientedPoint> region_pts;
        region_pos.reserve(region.size());
        region_pts.reserve(region.size());
        for (int idx : region) {
            region_pos.push_back(positions[static_cast<std::size_t>(idx)]);
            region_pts.push_back(cloud.points[static_cast<std::size_t>(idx)]);
        }

        RegionFit fit;
        try {
            fit.plane = fit_plane(region_pos);
            fit.is_plane = fit.plane.rms <= params.dist_tol;
        } catch (const DegenerateCollinear&) {
        }
        if (!fit.is_plane && fit.plane.rms > 2.0 * params.dist_tol) {
            try {
                fit.cylinder = fit_cylinder(region_pts);
                fit.is_cylinder = fit.cylinder.rms <= params.dist_tol;
            } catch (const Error&) {
            }
        }
        if (!fit.is_plane && !fit.is_cylinder) {
            // The region may have merged surfaces through a leak; keep the
            // planar core consistent with the seed's own neighborhood.
            try {
                std::vector<Vec3> seed_nb;
                seed_nb.push_back(positions[static_cast<std::size_t>(seed)]);
                for (int nb : neighbors[static_cast<std::size_t>(seed)]) {
                    seed_nb.push_back(positions[static_cast<std::size_t>(nb)]);
                }
                const PlaneFit seed_fit = fit_plane(seed_nb);
                std::vector<int> core;
                for (int idx : region) {
                    const OrientedPoint& p = cloud.points[static_cast<std::size_t>(idx)];
                    if (std::abs(seed_fit.normal.dot(p.normal)) < cos_tol) continue;
                    if (std::abs(seed_fit.normal.dot(p.position) - seed_fit.offset) >
                        3.0 * params.dist_tol) {
                        continue;
                    }
                    core.push_back(idx);
                }
                if (static_cast<int>(core.size()) >= params.min_points) {
                    std::vector<Vec3> core_pos;
                    for (int idx : core) core_pos.push_back(positions[static_cast<std::size_t>(idx)]);
                    fit.plane = fit_plane(core_pos);
                    if (fit.plane.rms <= params.dist_tol) {
                        fit.is_plane = true;
                        region = std::move(core);
                        region_pos = std::move(core_pos);
                        region_pts.clear();
                        for (int idx : region) {
                            region_pts.push_back(cloud.points[static_cast<std::size_t>(idx)]);
                        }
                    }
                }
            } catch (const Error&) {
            }
        }
        if (!fit.is_plane && !fit.is_cylinder) continue;

        // Trim members that violate the model tolerance, then refit once.
        const double member_tol = 3.0 * params.dist_tol;
        std::vector<int> kept;
        kept.reserve(region.size());
        for (std::size_t i = 0; i < region.size(); ++i) {
            double dev;
            if (fit.is_plane) {
                dev = std::abs(fit.plane.normal.dot(region_pos[i]) - fit.plane.offset);
            } else {
                dev = std::abs(point_to_axis_distance(region_pos[i], fit.cylinder.axis_point,
                                                      fit.cylinder.axis_dir) -
                               fit.cylinder.radius);
            }
            if (dev <= member_tol) kept.push_back(region[i]);
        }
        if (static_cast<int>(kept.size()) < params.min_points) continue;
        if (kept.size() != region.size()) {
            region = kept;
            region_pos.clear();
            region_pts.clear();
            for (int idx : region) {
                region_pos.push_back(positions[static_cast<std::size_t>(idx)]);
                region_pts.push_back(cloud.points[static_cast<std::size_t>(idx)]);
            }
            try {
                if (fit.is_plane) {
                    fit.plane = fit_plane(region_pos);
                } else {
                    fit.cylinder = fit_cylinder(region_pts);
                }
            } catch (const Error&) {
                continue;
            }
        }

        OrientedCloud member_cloud;
        member_cloud.frame = cloud.frame;
        member_cloud.points = region_pts;
        const double spacing = estimate_spacing(cloud, region, tree);

        if (fit.is_plane) {
            PlanarPatch patch;
            patch.points = std::move(member_cloud);
            patch.indices = region;
            Vec3 centroid = Vec3::Zero();
            for (const auto& p : region_pos) centroid += p;
            centroid /= static_cast<double>(region_pos.size());
            patch.normal = fit.plane.normal;
            // Mean member normal decides the outward orientation.
            Vec3 mean_normal = Vec3::Zero();
            for (const auto& p : region_pts) mean_normal += p.normal;
            if (patch.normal.dot(mean_normal) < 0.0) patch.normal = -patch.normal;
            patch.center =
                centroid - (patch.normal.dot(centroid) - fit.plane.offset * (fit.plane.normal.dot(patch.normal))) * patch.normal;
            patch.rms = fit.plane.rms;
            patch.area_estimate = static_cast<double>(region.size()) * spacing * spacing;
            patches.emplace_back(std::move(patch));
        } else {
            CylindricalPatch patch;
            patch.points = std::move(member_cloud);
            patch.indices = region;
            patch.axis_point = fit.cylinder.axis_point;
            patch.axis_dir = fit.cylinder.axis_dir;
            patch.radius = fit.cylinder.radius;
            patch.arc_extent = fit.cylinder.arc_extent;
            patch.rms = fit.cylinder.rms;
            patches.emplace_back(std::move(patch));
        }
        for (int idx : region) assigned[static_cast<std::size_t>(idx)] = 1;
    }
    return patches;
}

}  // namespace slipstab
