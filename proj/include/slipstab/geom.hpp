#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "slipstab/errors.hpp"

namespace slipstab {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Quat = Eigen::Quaterniond;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat6 = Eigen::Matrix<double, 6, 6>;

/// A surface sample: position plus unit outward normal.
struct OrientedPoint {
    Vec3 position = Vec3::Zero();
    Vec3 normal = Vec3::UnitZ();
};

enum class FrameTag { camera, canonical };

struct OrientedCloud {
    std::vector<OrientedPoint> points;
    FrameTag frame = FrameTag::camera;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

/// Linearized rigid motion: rotation part r = (alpha, beta, gamma), translation part t.
struct Twist {
    Vec3 r = Vec3::Zero();
    Vec3 t = Vec3::Zero();

    Vec6 as_vector() const {
        Vec6 x;
        x << r, t;
        return x;
    }
    static Twist from_vector(const Vec6& x) { return Twist{x.head<3>(), x.tail<3>()}; }
};

/// Rigid body pose stored as unit quaternion (w, x, y, z) plus translation.
/// The quaternion is kept normalized with w >= 0 after every operation so
/// that equal poses serialize identically.
class RigidTransform {
public:
    RigidTransform() = default;
    RigidTransform(const Quat& rotation, const Vec3& translation) : q_(rotation), t_(translation) {
        canonicalize();
    }

    static RigidTransform identity() { return RigidTransform(); }
    static RigidTransform from_rotation(const Quat& q) { return RigidTransform(q, Vec3::Zero()); }
    static RigidTransform from_translation(const Vec3& t) {
        return RigidTransform(Quat::Identity(), t);
    }
    static RigidTransform from_axis_angle(const Vec3& axis, double angle_rad,
                                          const Vec3& translation = Vec3::Zero()) {
        return RigidTransform(Quat(Eigen::AngleAxisd(angle_rad, axis.normalized())), translation);
    }
    static RigidTransform rot_x(double rad) { return from_axis_angle(Vec3::UnitX(), rad); }
    static RigidTransform rot_y(double rad) { return from_axis_angle(Vec3::UnitY(), rad); }
    static RigidTransform rot_z(double rad) { return from_axis_angle(Vec3::UnitZ(), rad); }

    const Quat& rotation() const { return q_; }
    const Vec3& translation() const { return t_; }

    Vec3 apply(const Vec3& p) const { return q_ * p + t_; }
    Vec3 rotate(const Vec3& v) const { return q_ * v; }

    RigidTransform inverse() const {
        const Quat qi = q_.conjugate();
        return RigidTransform(qi, qi * (-t_));
    }

    /// Composition: (*this) applied after rhs.
    RigidTransform operator*(const RigidTransform& rhs) const {
        return RigidTransform(q_ * rhs.q_, q_ * rhs.t_ + t_);
    }

    bool is_approx(const RigidTransform& other, double tol = 1e-9) const;

private:
    Quat q_ = Quat::Identity();
    Vec3 t_ = Vec3::Zero();

    void canonicalize();
};

inline RigidTransform compose(const RigidTransform& a, const RigidTransform& b) { return a * b; }
inline Vec3 apply(const RigidTransform& t, const Vec3& p) { return t.apply(p); }

/// Geodesic angle between two rotations, degrees in [0, 180].
double rotation_geodesic_deg(const RigidTransform& a, const RigidTransform& b);
double rotation_geodesic_rad(const Quat& a, const Quat& b);

/// Weighted rotation mean via the principal eigenvector of the weighted
/// quaternion outer-product sum. Invariant to quaternion sign flips and to
/// uniform weight scaling. Throws AllZeroWeights if no weight is positive.
Quat weighted_rotation_mean(std::span<const std::pair<Quat, double>> entries);

/// Exact exponential of a twist: axis-angle rotation exp(r), translation t.
RigidTransform twist_to_transform(const Twist& x);

/// Indexed triangle mesh, used for depth rendering.
struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> triangles;
};

}  // namespace slipstab
