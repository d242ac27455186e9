#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "slipstab/geom.hpp"

namespace slipstab {

enum class PatchKind { planar, cylindrical };

struct PlanarPatch {
    OrientedCloud points;
    std::vector<int> indices;  // member indices into the source cloud
    Vec3 center = Vec3::Zero();
    Vec3 normal = Vec3::UnitZ();
    double area_estimate = 0.0;
    double rms = 0.0;
};

struct CylindricalPatch {
    OrientedCloud points;
    std::vector<int> indices;
    Vec3 axis_point = Vec3::Zero();
    Vec3 axis_dir = Vec3::UnitZ();
    double radius = 0.0;
    double arc_extent = 0.0;  // radians of angular coverage about the axis
    double rms = 0.0;
};

using Patch = std::variant<PlanarPatch, CylindricalPatch>;

PatchKind patch_kind(const Patch& p);
const OrientedCloud& patch_points(const Patch& p);
const std::vector<int>& patch_indices(const Patch& p);
Vec3 patch_center(const Patch& p);
/// Plane normal or cylinder axis direction.
Vec3 patch_direction(const Patch& p);

struct PatchDescriptor {
    PatchKind kind = PatchKind::planar;
    int point_count = 0;
    double area_or_arc = 0.0;
    double radius = 0.0;  // 0 for planar
};

PatchDescriptor describe(const Patch& p);

struct PlaneFit {
    Vec3 normal = Vec3::UnitZ();
    double offset = 0.0;  // plane is n . v = offset
    double rms = 0.0;
};

/// Total least squares plane through the points (3x3 covariance eigenvector).
/// When a camera direction is given the normal is oriented against it.
/// Throws DegenerateCollinear for fewer than 3 points or a collinear set.
PlaneFit fit_plane(const std::vector<Vec3>& points, const Vec3* camera_dir = nullptr);

struct CylinderFit {
    Vec3 axis_point = Vec3::Zero();
    Vec3 axis_dir = Vec3::UnitZ();
    double radius = 0.0;
    double rms = 0.0;
    double arc_extent = 0.0;
};

/// Cylinder fit: axis direction seeded from the normals' covariance (cylinder
/// normals are perpendicular to the axis), then Gauss-Newton on the
/// point-to-axis radius residuals. Throws DegenerateArc below min_arc_rad
/// coverage, NoConvergence if the iteration stalls.
CylinderFit fit_cylinder(const std::vector<OrientedPoint>& points,
                         double min_arc_rad = 20.0 * M_PI / 180.0);

double point_to_axis_distance(const Vec3& x, const Vec3& axis_point, const Vec3& axis_dir);

struct SegmentationParams {
    int min_points = 80;
    int knn = 12;
    double normal_angle_tol_deg = 12.0;
    double dist_tol = 0.005;
    double max_curvature = 0.01;  // PCA ratio gate; blocks crease/silhouette zones
    std::uint64_t seed = 0;
};

/// Greedy region growing over a k-NN graph, seeded at the lowest-curvature
/// points. Regions are accepted as planes when the plane rms passes dist_tol;
/// regions failing the plane by more than 2x are re-tested as cylinders.
/// Patches are disjoint; the result is deterministic for a fixed input order.
std::vector<Patch> segment_patches(const OrientedCloud& cloud, const SegmentationParams& params);

}  // namespace slipstab
