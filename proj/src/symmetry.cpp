#include "slipstab/symmetry.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>

#include "slipstab/kdtree.hpp"
#include "slipstab/posesolve.hpp"
#include "slipstab/stability.hpp"

namespace slipstab {

Eigen::MatrixXd benefit_matrix(const std::vector<RigidTransform>& pred_poses,
                               const std::vector<RigidTransform>& gt_poses,
                               const TemplateModel& model) {
    if (pred_poses.size() != gt_poses.size()) throw LengthMismatch();
    const int n = static_cast<int>(pred_poses.size());
    Eigen::MatrixXd b(n, n);
    for (int m = 0; m < n; ++m) {
        for (int k = 0; k < n; ++k) {
            b(m, k) = group_pose_loss(pred_poses[static_cast<std::size_t>(m)],
                                      gt_poses[static_cast<std::size_t>(k)], model);
        }
    }
    return b;
}

AssignmentResult optimal_assignment(const Eigen::MatrixXd& cost) {
    if (cost.rows() != cost.cols()) throw Error("assignment matrix must be square");
    if (!cost.allFinite()) throw NonFiniteEntry();
    const int n = static_cast<int>(cost.rows());

    // Hungarian algorithm with potentials (shortest augmenting paths), O(n^3).
    std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
    std::vector<double> v(static_cast<std::size_t>(n) + 1, 0.0);
    std::vector<int> match(static_cast<std::size_t>(n) + 1, 0);  // match[col] = row
    std::vector<int> way(static_cast<std::size_t>(n) + 1, 0);

    for (int i = 1; i <= n; ++i) {
        match[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<std::size_t>(n) + 1,
                                 std::numeric_limits<double>::infinity());
        std::vector<char> used(static_cast<std::size_t>(n) + 1, 0);
        do {
            used[static_cast<std::size_t>(j0)] = 1;
            const int i0 = match[static_cast<std::size_t>(j0)];
            double delta = std::numeric_limits<double>::infinity();
            int j1 = 0;
            for (int j = 1; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] -
                                   v[static_cast<std::size_t>(j)];
                if (cur < minv[static_cast<std::size_t>(j)]) {
                    minv[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (minv[static_cast<std::size_t>(j)] < delta) {
                    delta = minv[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(match[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    minv[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (match[static_cast<std::size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<std::size_t>(j0)];
            match[static_cast<std::size_t>(j0)] = match[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0 != 0);
    }

    AssignmentResult result;
    result.permutation.assign(static_cast<std::size_t>(n), -1);
    for (int j = 1; j <= n; ++j) {
        result.permutation[static_cast<std::size_t>(match[static_cast<std::size_t>(j)] - 1)] =
            j - 1;
    }
    for (int m = 0; m < n; ++m) {
        result.total_cost += cost(m, result.permutation[static_cast<std::size_t>(m)]);
    }
    return result;
}

RigidTransform rotation_about_axis(const SymmetryAxis& axis, double theta) {
    const Quat q(Eigen::AngleAxisd(theta, axis.direction.normalized()));
    return RigidTransform(q, axis.center - q * axis.center);
}

namespace {

std::vector<RigidTransform> closed_symmetry_set(const SymmetrySpec& spec) {
    std::vector<RigidTransform> set;
    set.push_back(RigidTransform::identity());
    set.insert(set.end(), spec.discrete_transforms.begin(), spec.discrete_transforms.end());
    return set;
}

// Angle about `axis` that best aligns pose * R_axis(theta) with gt.
double best_axis_angle(const RigidTransform& pose, const RigidTransform& gt, const Vec3& axis) {
    const Quat rel = pose.rotation().conjugate() * gt.rotation();
    const double w = rel.w();
    const double av = axis.normalized().dot(rel.vec());
    if (std::abs(w) < 1e-300 && std::abs(av) < 1e-300) return 0.0;
    return 2.0 * std::atan2(av, w);
}

}  // namespace

double symmetry_aware_error(const RigidTransform& pose, const RigidTransform& gt,
                            const SymmetrySpec& spec, const TemplateModel& model,
                            int theta_samples) {
    double best = std::numeric_limits<double>::infinity();
    const auto discrete = closed_symmetry_set(spec);
    for (const auto& sym : discrete) {
        best = std::min(best, group_pose_loss(pose * sym, gt, model));
    }
    if (spec.kind == SymmetryKind::continuous && spec.axis) {
        std::vector<double> thetas;
        thetas.reserve(static_cast<std::size_t>(theta_samples) + 1);
        for (int k = 1; k <= theta_samples; ++k) {
            thetas.push_back(2.0 * M_PI * k / theta_samples);
        }
        thetas.push_back(best_axis_angle(pose, gt, spec.axis->direction));
        for (const double theta : thetas) {
            const RigidTransform spun = pose * rotation_about_axis(*spec.axis, theta);
            for (const auto& sym : discrete) {
                best = std::min(best, group_pose_loss(spun * sym, gt, model));
            }
        }
    }
    return best;
}

double dsym_objective(const RigidTransform& pose, const SymmetrySpec& spec,
                      const RigidTransform& gt, const TemplateModel& model,
                      const std::vector<StableGroup>& groups, const std::vector<Patch>& patches) {
    const auto set = closed_symmetry_set(spec);
    std::vector<RigidTransform> preds, gts;
    preds.reserve(set.size());
    gts.reserve(set.size());
    for (const auto& sym : set) {
        preds.push_back(pose * sym);
        gts.push_back(gt * sym);
    }
    const AssignmentResult assignment = optimal_assignment(benefit_matrix(preds, gts, model));
    double total = 0.0;
    for (std::size_t m = 0; m < preds.size(); ++m) {
        total += asym_objective(preds[m], groups, patches,
                                gts[static_cast<std::size_t>(assignment.permutation[m])], model);
    }
    return total;
}

double rotation_axis_loss(const SymmetryAxis& pred, const SymmetryAxis& gt,
                          const TemplateModel& model) {
    constexpr int kAngles = 16;
    double total = 0.0;
    for (int k = 1; k <= kAngles; ++k) {
        const double theta = k * M_PI / 8.0;
        const RigidTransform tp = rotation_about_axis(pred, theta);
        const RigidTransform tg = rotation_about_axis(gt, theta);
        for (const auto& p : model.surface_samples.points) {
            total += (tp.apply(p.position) - tg.apply(p.position)).norm();
        }
    }
    return total / kAngles;
}

namespace {

Vec3 canonical_sign3(const Vec3& v) {
    int lead = 0;
    for (int i = 1; i < 3; ++i) {
        if (std::abs(v[i]) > std::abs(v[lead])) lead = i;
    }
    return v[lead] < 0.0 ? Vec3(-v) : v;
}

}  // namespace

SymmetryAxis estimate_rotation_axis(const OrientedCloud& observed, const TemplateModel& model) {
    if (model.symmetry.kind != SymmetryKind::continuous) {
        throw Error("template does not declare a continuous symmetry");
    }
    if (observed.empty()) throw EmptyCloud();

    // A surface of revolution slips when rotated about its axis, so the axis
    // is encoded in the rotational null twist of the raw-frame covariance.
    const StabilityReport report = analyze_stability(observed, /*normalize=*/false);
    const double lambda_max = report.eigenvalues.back();
    const double cut = 10.0 * std::max(report.eigenvalues.front(), 1e-12 * lambda_max);
    std::vector<Vec6> null_basis;
    for (int i = 0; i < 6; ++i) {
        if (report.eigenvalues[static_cast<std::size_t>(i)] <= cut) {
            null_basis.push_back(report.eigenvectors.col(i));
        }
    }
    if (null_basis.size() >= 3) {
        throw DegenerateObservation("rotation axis is not identifiable");
    }

    // Pick the combination of null twists with the largest rotational part.
    Vec6 twist;
    if (null_basis.size() == 1) {
        twist = null_basis[0];
    } else {
        Eigen::Matrix2d gram;
        for (int a = 0; a < 2; ++a) {
            for (int b = 0; b < 2; ++b) {
                gram(a, b) = null_basis[static_cast<std::size_t>(a)].head<3>().dot(
                    null_basis[static_cast<std::size_t>(b)].head<3>());
            }
        }
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(gram);
        const Eigen::Vector2d coeff = es.eigenvectors().col(1);
        twist = coeff[0] * null_basis[0] + coeff[1] * null_basis[1];
    }
    const Vec3 r = twist.head<3>();
    const Vec3 t = twist.tail<3>();
    if (r.norm() < 0.05) {
        throw DegenerateObservation("slippable motion has no rotational component");
    }
    Vec3 axis_dir = r.normalized();
    Vec3 axis_point = axis_dir.cross(t / r.norm());

    Vec3 centroid = Vec3::Zero();
    for (const auto& p : observed.points) centroid += p.position;
    centroid /= static_cast<double>(observed.size());
    axis_point += (centroid - axis_point).dot(axis_dir) * axis_dir;

    // Refine by minimizing the per-height-bin variance of the radial distance.
    constexpr int kBins = 12;
    Vec3 e1, e2;
    for (int iter = 0; iter < 30; ++iter) {
        e1 = std::abs(axis_dir.z()) < 0.9 ? axis_dir.cross(Vec3::UnitZ()).normalized()
                                          : axis_dir.cross(Vec3::UnitX()).normalized();
        e2 = axis_dir.cross(e1);

        double h_min = std::numeric_limits<double>::infinity();
        double h_max = -h_min;
        for (const auto& p : observed.points) {
            const double h = (p.position - axis_point).dot(axis_dir);
            h_min = std::min(h_min, h);
            h_max = std::max(h_max, h);
        }
        const double span = std::max(h_max - h_min, 1e-9);

        // End-cap points (normals nearly parallel to the axis) carry no
        // radial profile information and would pollute the bin means.
        std::vector<char> lateral(observed.size());
        for (std::size_t i = 0; i < observed.size(); ++i) {
            lateral[i] = std::abs(observed.points[i].normal.dot(axis_dir)) < 0.9;
        }

        std::array<double, kBins> mean{};
        std::array<int, kBins> count{};
        std::vector<int> bin_of(observed.size());
        std::vector<double> dist_of(observed.size());
        for (std::size_t i = 0; i < observed.size(); ++i) {
            if (!lateral[i]) continue;
            const Vec3 q = observed.points[i].position - axis_point;
            const double h = q.dot(axis_dir);
            int bin = static_cast<int>((h - h_min) / span * kBins);
            bin = std::clamp(bin, 0, kBins - 1);
            const double d = (q - h * axis_dir).norm();
            bin_of[i] = bin;
            dist_of[i] = d;
            mean[static_cast<std::size_t>(bin)] += d;
            count[static_cast<std::size_t>(bin)] += 1;
        }
        for (int b = 0; b < kBins; ++b) {
            if (count[static_cast<std::size_t>(b)] > 0) {
                mean[static_cast<std::size_t>(b)] /= count[static_cast<std::size_t>(b)];
            }
        }

        Eigen::Matrix4d h_mat = Eigen::Matrix4d::Zero();
        Eigen::Vector4d g = Eigen::Vector4d::Zero();
        for (std::size_t i = 0; i < observed.size(); ++i) {
            if (!lateral[i]) continue;
            const Vec3 q = observed.points[i].position - axis_point;
            const double axial = q.dot(axis_dir);
            const double d = dist_of[i];
            if (d < 1e-12) continue;
            const Vec3 w = (q - axial * axis_dir) / d;
            const double rho = d - mean[static_cast<std::size_t>(bin_of[i])];
            Eigen::Vector4d jac;
            jac << -w.dot(e1), -w.dot(e2), -axial * q.dot(e1) / d, -axial * q.dot(e2) / d;
            h_mat += jac * jac.transpose();
            g += jac * rho;
        }
        h_mat.diagonal().array() += 1e-12 * h_mat.trace() + 1e-300;
        const Eigen::Vector4d delta = h_mat.ldlt().solve(-g);
        if (!delta.allFinite()) break;
        axis_point += delta[0] * e1 + delta[1] * e2;
        axis_dir = (axis_dir + delta[2] * e1 + delta[3] * e2).normalized();
        if (delta.norm() < 1e-12) break;
    }

    axis_dir = canonical_sign3(axis_dir);
    axis_point += (centroid - axis_point).dot(axis_dir) * axis_dir;
    return SymmetryAxis{axis_point, axis_dir};
}

RigidTransform pose_from_axis(const Vec3& center, const Vec3& axis_dir, double gamma) {
    const Vec3 a = axis_dir.normalized();
    const double half = 0.5 * gamma;
    const Quat q(std::cos(half), std::sin(half) * a.x(), std::sin(half) * a.y(),
                 std::sin(half) * a.z());
    return RigidTransform(q, center);
}

RigidTransform axis_alignment_pose(const SymmetryAxis& canonical, const SymmetryAxis& observed,
                                   double gamma) {
    const Vec3 a_can = canonical.direction.normalized();
    const Vec3 a_obs = observed.direction.normalized();
    const Quat swing = Quat::FromTwoVectors(a_can, a_obs);
    const Quat spin(Eigen::AngleAxisd(gamma, a_obs));
    const Quat rot = spin * swing;
    return RigidTransform(rot, observed.center - rot * canonical.center);
}

namespace {

double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
    // Ericson-style closest point on a triangle.
    const Vec3 ab = b - a, ac = c - a, ap = p - a;
    const double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0.0 && d2 <= 0.0) return (p - a).norm();
    const Vec3 bp = p - b;
    const double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0.0 && d4 <= d3) return (p - b).norm();
    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return (p - (a + (d1 / (d1 - d3)) * ab)).norm();
    const Vec3 cp = p - c;
    const double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0.0 && d5 <= d6) return (p - c).norm();
    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return (p - (a + (d2 / (d2 - d6)) * ac)).norm();
    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
        const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (p - (b + w * (c - b))).norm();
    }
    const double denom = 1.0 / (va + vb + vc);
    const Vec3 closest = a + (vb * denom) * ab + (vc * denom) * ac;
    return (p - closest).norm();
}

double point_mesh_distance(const Vec3& p, const TriangleMesh& mesh) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& tri : mesh.triangles) {
        best = std::min(best, point_triangle_distance(
                                  p, mesh.vertices[static_cast<std::size_t>(tri[0])],
                                  mesh.vertices[static_cast<std::size_t>(tri[1])],
                                  mesh.vertices[static_cast<std::size_t>(tri[2])]));
    }
    return best;
}

}  // namespace

void validate_symmetry_spec(const SymmetrySpec& spec, const TemplateModel& model) {
    if (spec.kind == SymmetryKind::continuous && !spec.axis) {
        throw Error("continuous symmetry requires an axis");
    }
    if (spec.kind == SymmetryKind::none && !spec.discrete_transforms.empty()) {
        throw Error("asymmetric spec carries discrete transforms");
    }
    if (spec.discrete_transforms.empty()) return;

    const double tol = 1e-3 * model.diameter;
    const auto self_maps = [&](const RigidTransform& t) {
        for (const auto& p : model.surface_samples.points) {
            if (point_mesh_distance(t.apply(p.position), model.mesh) >= tol) return false;
        }
        return true;
    };
    for (const auto& t : spec.discrete_transforms) {
        if (!self_maps(t)) throw Error("declared symmetry does not map the model onto itself");
    }

    const auto set = closed_symmetry_set(spec);
    const auto pose_gap = [&](const RigidTransform& a, const RigidTransform& b) {
        double worst = 0.0;
        for (const auto& p : model.surface_samples.points) {
            worst = std::max(worst, (a.apply(p.position) - b.apply(p.position)).norm());
        }
        return worst;
    };
    for (const auto& a : set) {
        for (const auto& b : set) {
            const RigidTransform prod = a * b;
            bool found = false;
            for (const auto& c : set) {
                if (pose_gap(prod, c) < tol) {
                    found = true;
                    break;
                }
            }
            if (!found) throw Error("symmetry set is not closed under composition");
        }
    }
}

std::pair<double, double> symmetry_aware_pose_error(const RigidTransform& pose,
                                                    const RigidTransform& gt,
                                                    const SymmetrySpec& spec) {
    double best_rot = std::numeric_limits<double>::infinity();
    double best_trans = std::numeric_limits<double>::infinity();
    double best_score = std::numeric_limits<double>::infinity();
    const auto consider = [&](const RigidTransform& candidate) {
        const double rot = rotation_geodesic_deg(candidate, gt);
        const double trans = (candidate.translation() - gt.translation()).norm();
        const double score = rot + trans;
        if (score < best_score) {
            best_score = score;
            best_rot = rot;
            best_trans = trans;
        }
    };

    std::vector<RigidTransform> discrete = {RigidTransform::identity()};
    discrete.insert(discrete.end(), spec.discrete_transforms.begin(),
                    spec.discrete_transforms.end());
    for (const auto& sym : discrete) {
        const RigidTransform base = pose * sym;
        consider(base);
        if (spec.kind == SymmetryKind::continuous && spec.axis) {
            const double theta = best_axis_angle(base, gt, spec.axis->direction);
            consider(base * rotation_about_axis(*spec.axis, theta));
        }
    }
    return {best_rot, best_trans};
}

}  // namespace slipstab
