#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "slipstab/geom.hpp"

namespace slipstab {

/// 6x6 covariance of the rigid transformation, accumulated as sum_i [u;n][u;n]^T
/// with u = v x n. Rows/cols 1-3 pair with the rotation part of a twist,
/// 4-6 with the translation part.
struct StabilityCovariance {
    Mat6 matrix = Mat6::Zero();
    std::int64_t sample_count = 0;
};

struct StabilityReport {
    std::array<double, 6> eigenvalues{};   // ascending
    Mat6 eigenvectors = Mat6::Identity();  // column i pairs with eigenvalues[i]
    double measure = 0.0;
    bool stable = false;
};

/// Point-to-plane alignment error: sum_i [(R v_i + t) . n_i]^2.
double point_to_plane_energy(const RigidTransform& t, const OrientedCloud& cloud);

/// Per-point linearized residual v.n + r.(v x n) + t.n.
double linearized_residual(const Twist& x, const OrientedPoint& p);

/// Center at the centroid and scale so the RMS radius is 1. Normals unchanged.
OrientedCloud normalized_for_stability(const OrientedCloud& cloud);

/// Accumulate the covariance over the cloud. Terms are summed in a canonical
/// sorted order with compensated summation, so the result is bitwise invariant
/// under point permutation.
StabilityCovariance accumulate_covariance(const OrientedCloud& cloud, bool normalize = true);

/// Eigen-decompose the covariance (cyclic Jacobi, 50-sweep budget) and fill the
/// stability measure. Throws NumericalFailure when the sweep budget is exceeded.
StabilityReport eigen_analysis(const StabilityCovariance& cov);

/// [1 + e^{0.05 (l6/l1 - 200)}]^{-1}; returns 0 when l1 <= 1e-9 * l6.
double stability_measure(double lambda_min, double lambda_max);

/// Eigenvectors whose eigenvalue is <= ratio_cut * lambda_6, as unit twists.
std::vector<Twist> slippable_motions(const StabilityReport& report, double ratio_cut = 1e-4);

/// Convenience: covariance + eigen-analysis in one call.
StabilityReport analyze_stability(const OrientedCloud& cloud, bool normalize = true);

}  // namespace slipstab
