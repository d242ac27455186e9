#include "slipstab/stability.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace slipstab {

double point_to_plane_energy(const RigidTransform& t, const OrientedCloud& cloud) {
    if (cloud.empty()) throw EmptyCloud();
    double energy = 0.0;
    for (const auto& p : cloud.points) {
        const double d = t.apply(p.position).dot(p.normal);
        energy += d * d;
    }
    return energy;
}

double linearized_residual(const Twist& x, const OrientedPoint& p) {
    return p.position.dot(p.normal) + x.r.dot(p.position.cross(p.normal)) + x.t.dot(p.normal);
}

OrientedCloud normalized_for_stability(const OrientedCloud& cloud) {
    if (cloud.empty()) throw EmptyCloud();
    // Reductions run over sorted copies so normalization, too, is
    // permutation-invariant bit for bit.
    std::vector<Vec3> sorted;
    sorted.reserve(cloud.size());
    for (const auto& p : cloud.points) sorted.push_back(p.position);
    std::sort(sorted.begin(), sorted.end(), [](const Vec3& a, const Vec3& b) {
        for (int i = 0; i < 3; ++i) {
            if (a[i] != b[i]) return a[i] < b[i];
        }
        return false;
    });
    Vec3 centroid = Vec3::Zero();
    for (const auto& p : sorted) centroid += p;
    centroid /= static_cast<double>(cloud.size());

    double sq = 0.0;
    for (const auto& p : sorted) sq += (p - centroid).squaredNorm();
    const double rms = std::sqrt(sq / static_cast<double>(cloud.size()));
    const double scale = rms > 0.0 ? rms : 1.0;

    OrientedCloud out;
    out.frame = cloud.frame;
    out.points.reserve(cloud.size());
    for (const auto& p : cloud.points) {
        out.points.push_back({(p.position - centroid) / scale, p.normal});
    }
    return out;
}

StabilityCovariance accumulate_covariance(const OrientedCloud& cloud, bool normalize) {
    if (cloud.empty()) throw EmptyCloud();
    const OrientedCloud* src = &cloud;
    OrientedCloud scratch;
    if (normalize) {
        scratch = normalized_for_stability(cloud);
        src = &scratch;
    }

    std::vector<Vec6> terms;
    terms.reserve(src->size());
    for (const auto& p : src->points) {
        Vec6 b;
        b << p.position.cross(p.normal), p.normal;
        terms.push_back(b);
    }
    // Canonical order makes the summation permutation-invariant bit for bit.
    std::sort(terms.begin(), terms.end(), [](const Vec6& a, const Vec6& b) {
        for (int i = 0; i < 6; ++i) {
            if (a[i] != b[i]) return a[i] < b[i];
        }
        return false;
    });

    // Kahan-compensated accumulation of the upper triangle.
    Mat6 sum = Mat6::Zero();
    Mat6 comp = Mat6::Zero();
    for (const Vec6& b : terms) {
        for (int i = 0; i < 6; ++i) {
            for (int j = i; j < 6; ++j) {
                const double y = b[i] * b[j] - comp(i, j);
                const double t = sum(i, j) + y;
                comp(i, j) = (t - sum(i, j)) - y;
                sum(i, j) = t;
            }
        }
    }
    for (int i = 0; i < 6; ++i) {
        for (int j = 0; j < i; ++j) sum(i, j) = sum(j, i);
    }

    StabilityCovariance cov;
    cov.matrix = sum;
    cov.sample_count = static_cast<std::int64_t>(src->size());
    return cov;
}

namespace {

constexpr int kJacobiSweepBudget = 50;

// Cyclic Jacobi for the symmetric 6x6. Deterministic and dependency-free.
void jacobi_eigen6(Mat6 a, std::array<double, 6>& values, Mat6& vectors) {
    vectors = Mat6::Identity();
    const double scale = a.cwiseAbs().maxCoeff();
    const double tol = scale > 0.0 ? 1e-15 * scale : 0.0;

    for (int sweep = 0; sweep < kJacobiSweepBudget; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < 6; ++p) {
            for (int q = p + 1; q < 6; ++q) off += std::abs(a(p, q));
        }
        if (off <= tol * 15.0) break;
        if (sweep == kJacobiSweepBudget - 1) {
            throw NumericalFailure("jacobi sweep budget exceeded");
        }

        for (int p = 0; p < 6; ++p) {
            for (int q = p + 1; q < 6; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) <= tol) continue;
                const double diff = a(q, q) - a(p, p);
                double t;
                if (std::abs(apq) < 1e-36 * std::abs(diff)) {
                    t = apq / diff;
                } else {
                    const double theta = diff / (2.0 * apq);
                    t = 1.0 / (std::abs(theta) + std::sqrt(1.0 + theta * theta));
                    if (theta < 0.0) t = -t;
                }
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;
                const double tau = s / (1.0 + c);
                const double h = t * apq;

                a(p, p) -= h;
                a(q, q) += h;
                a(p, q) = 0.0;
                a(q, p) = 0.0;
                for (int i = 0; i < 6; ++i) {
                    if (i != p && i != q) {
                        const double aip = a(i, p);
                        const double aiq = a(i, q);
                        a(i, p) = aip - s * (aiq + tau * aip);
                        a(i, q) = aiq + s * (aip - tau * aiq);
                        a(p, i) = a(i, p);
                        a(q, i) = a(i, q);
                    }
                    const double vip = vectors(i, p);
                    const double viq = vectors(i, q);
                    vectors(i, p) = vip - s * (viq + tau * vip);
                    vectors(i, q) = viq + s * (vip - tau * viq);
                }
            }
        }
    }

    std::array<int, 6> order{0, 1, 2, 3, 4, 5};
    std::array<double, 6> diag;
    for (int i = 0; i < 6; ++i) diag[i] = a(i, i);
    std::stable_sort(order.begin(), order.end(),
                     [&](int i, int j) { return diag[i] < diag[j]; });

    Mat6 sorted_vectors;
    for (int k = 0; k < 6; ++k) {
        values[k] = diag[order[k]];
        Vec6 col = vectors.col(order[k]);
        // Deterministic sign: largest-magnitude component positive.
        int lead = 0;
        for (int i = 1; i < 6; ++i) {
            if (std::abs(col[i]) > std::abs(col[lead])) lead = i;
        }
        if (col[lead] < 0.0) col = -col;
        sorted_vectors.col(k) = col;
    }
    vectors = sorted_vectors;
}

}  // namespace

double stability_measure(double lambda_min, double lambda_max) {
    if (lambda_max <= 0.0 || lambda_min <= 1e-9 * lambda_max) return 0.0;
    const double arg = 0.05 * (lambda_max / lambda_min - 200.0);
    // exp overflows to inf past ~709.8, where the quotient is exactly 0.
    if (arg > 709.8) return 0.0;
    return 1.0 / (1.0 + std::exp(arg));
}

StabilityReport eigen_analysis(const StabilityCovariance& cov) {
    StabilityReport report;
    jacobi_eigen6(cov.matrix, report.eigenvalues, report.eigenvectors);
    report.measure = stability_measure(report.eigenvalues.front(), report.eigenvalues.back());
    report.stable = report.measure > 0.5;
    return report;
}

std::vector<Twist> slippable_motions(const StabilityReport& report, double ratio_cut) {
    std::vector<Twist> motions;
    const double cut = ratio_cut * report.eigenvalues.back();
    for (int i = 0; i < 6; ++i) {
        if (report.eigenvalues[i] <= cut) {
            Vec6 x = report.eigenvectors.col(i);
            motions.push_back(Twist::from_vector(x / x.norm()));
        }
    }
    return motions;
}

StabilityReport analyze_stability(const OrientedCloud& cloud, bool normalize) {
    return eigen_analysis(accumulate_covariance(cloud, normalize));
}

}  // namespace slipstab
