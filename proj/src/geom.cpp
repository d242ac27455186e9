#include "slipstab/geom.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>

namespace slipstab {

void RigidTransform::canonicalize() {
    q_.normalize();
    // w >= 0; on the w == 0 great circle pick the first nonzero component positive.
    const double* c = q_.coeffs().data();  // (x, y, z, w)
    double lead = c[3];
    for (int i = 0; i < 3 && lead == 0.0; ++i) lead = c[i];
    if (lead < 0.0) q_.coeffs() = -q_.coeffs();
}

bool RigidTransform::is_approx(const RigidTransform& other, double tol) const {
    const double ang = rotation_geodesic_rad(q_, other.q_);
    return ang <= tol && (t_ - other.t_).norm() <= tol;
}

double rotation_geodesic_rad(const Quat& a, const Quat& b) {
    const Quat rel = a.conjugate() * b;
    return 2.0 * std::atan2(rel.vec().norm(), std::abs(rel.w()));
}

double rotation_geodesic_deg(const RigidTransform& a, const RigidTransform& b) {
    return rotation_geodesic_rad(a.rotation(), b.rotation()) * 180.0 / M_PI;
}

Quat weighted_rotation_mean(std::span<const std::pair<Quat, double>> entries) {
    Mat4 accum = Mat4::Zero();
    double weight_sum = 0.0;
    for (const auto& [q, w] : entries) {
        if (w <= 0.0) continue;
        Vec4 v;
        v << q.w(), q.x(), q.y(), q.z();
        accum += w * (v * v.transpose());
        weight_sum += w;
    }
    if (weight_sum <= 0.0) throw AllZeroWeights();

    Eigen::SelfAdjointEigenSolver<Mat4> es(accum);
    if (es.info() != Eigen::Success) throw NumericalFailure("rotation mean eigensolve failed");
    const Vec4 v = es.eigenvectors().col(3);  // largest eigenvalue
    Quat mean(v[0], v[1], v[2], v[3]);
    mean.normalize();
    return mean;
}

RigidTransform twist_to_transform(const Twist& x) {
    const double theta = x.r.norm();
    const double half = 0.5 * theta;
    double s;  // sin(theta/2) / theta, finite at zero
    if (theta > 1e-8) {
        s = std::sin(half) / theta;
    } else {
        s = 0.5 - theta * theta / 48.0;
    }
    const Quat q(std::cos(half), s * x.r.x(), s * x.r.y(), s * x.r.z());
    return RigidTransform(q, x.t);
}

}  // namespace slipstab
