#include "slipstab/posesolve.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>

namespace slipstab {

double group_pose_loss(const RigidTransform& pose, const RigidTransform& gt,
                       const TemplateModel& model) {
    double total = 0.0;
    for (const auto& p : model.surface_samples.points) {
        total += (pose.apply(p.position) - gt.apply(p.position)).norm();
    }
    return total;
}

namespace {

// Exactly min(n, cap) evenly spread indices.
std::vector<std::size_t> subsample_indices(std::size_t n, int cap) {
    const std::size_t k = std::min(n, static_cast<std::size_t>(cap));
    std::vector<std::size_t> out(k);
    for (std::size_t i = 0; i < k; ++i) out[i] = i * n / k;
    return out;
}

}  // namespace

double planar_patch_loss(const RigidTransform& pose, const PlanarPatch& patch,
                         const RigidTransform& gt, int subsample) {
    const RigidTransform pose_inv = pose.inverse();
    const RigidTransform gt_inv = gt.inverse();
    const Vec3 c = gt_inv.apply(patch.center);
    const Vec3 n = gt_inv.rotate(patch.normal);
    double total = 0.0;
    for (const std::size_t i : subsample_indices(patch.points.size(), subsample)) {
        const Vec3 y = pose_inv.apply(patch.points.points[i].position);
        total += std::abs((y - c).dot(n));
    }
    return total;
}

double cylindrical_patch_loss(const RigidTransform& pose, const CylindricalPatch& patch,
                              const RigidTransform& gt, int subsample) {
    const RigidTransform pose_inv = pose.inverse();
    const RigidTransform gt_inv = gt.inverse();
    const Vec3 axis_point = gt_inv.apply(patch.axis_point);
    const Vec3 axis_dir = gt_inv.rotate(patch.axis_dir);
    double total = 0.0;
    for (const std::size_t i : subsample_indices(patch.points.size(), subsample)) {
        const Vec3 y = pose_inv.apply(patch.points.points[i].position);
        total += std::abs(point_to_axis_distance(y, axis_point, axis_dir) - patch.radius);
    }
    return total;
}

double asym_objective(const RigidTransform& pose, const std::vector<StableGroup>& groups,
                      const std::vector<Patch>& patches, const RigidTransform& gt,
                      const TemplateModel& model) {
    double total = static_cast<double>(groups.size()) * group_pose_loss(pose, gt, model);
    for (const auto& patch : patches) {
        if (const auto* pl = std::get_if<PlanarPatch>(&patch)) {
            total += planar_patch_loss(pose, *pl, gt);
        } else {
            total += cylindrical_patch_loss(pose, std::get<CylindricalPatch>(patch), gt);
        }
    }
    return total;
}

namespace {

// One observed point constrained to a canonical plane or cylinder surface.
struct Constraint {
    Vec3 point;  // observed, camera frame
    bool planar = true;
    Vec3 anchor;     // plane point / axis point, canonical frame
    Vec3 direction;  // plane normal / axis direction, canonical frame
    double radius = 0.0;
    double weight = 1.0;
};

double constraint_residual(const Constraint& c, const Vec3& y, Vec3* gradient_dir) {
    if (c.planar) {
        if (gradient_dir) *gradient_dir = c.direction;
        return (y - c.anchor).dot(c.direction);
    }
    const Vec3 q = y - c.anchor;
    const Vec3 q_perp = q - q.dot(c.direction) * c.direction;
    const double dist = q_perp.norm();
    if (gradient_dir) *gradient_dir = dist > 1e-12 ? Vec3(q_perp / dist) : Vec3::Zero();
    return dist - c.radius;
}

struct GaussNewtonResult {
    RigidTransform pose;
    double rms = 0.0;
    bool converged = false;
};

// Gauss-Newton over the twist parameterization, re-linearized each iteration.
// least_norm controls rank-deficient handling: pseudo-inverse update versus
// SingularNormalEquations.
GaussNewtonResult gauss_newton_alignment(const std::vector<Constraint>& constraints,
                                         const RigidTransform& init, int max_iterations,
                                         double update_tol, bool least_norm) {
    RigidTransform pose = init;
    GaussNewtonResult result;
    for (int iter = 0; iter < max_iterations; ++iter) {
        const RigidTransform pose_inv = pose.inverse();
        Mat6 h = Mat6::Zero();
        Vec6 g = Vec6::Zero();
        double sq = 0.0;
        for (const auto& c : constraints) {
            const Vec3 y = pose_inv.apply(c.point);
            Vec3 dir;
            const double rho = constraint_residual(c, y, &dir);
            Vec6 jac;
            jac << -(y.cross(dir)), -dir;
            h += c.weight * (jac * jac.transpose());
            g += c.weight * (jac * rho);
            sq += c.weight * rho * rho;
        }
        result.rms = std::sqrt(sq / static_cast<double>(constraints.size()));

        Eigen::SelfAdjointEigenSolver<Mat6> es(h);
        const Vec6 evals = es.eigenvalues();
        const double rank_tol = 1e-10 * std::max(evals[5], 1e-300);
        if (evals[0] <= rank_tol && !least_norm) throw SingularNormalEquations();

        Vec6 delta = Vec6::Zero();
        const Vec6 proj = es.eigenvectors().transpose() * (-g);
        for (int i = 0; i < 6; ++i) {
            if (evals[i] > rank_tol) delta += (proj[i] / evals[i]) * es.eigenvectors().col(i);
        }
        if (!delta.allFinite()) throw NoConvergence("alignment update is non-finite");

        pose = pose * twist_to_transform(Twist::from_vector(delta));
        if (delta.norm() < update_tol) {
            result.converged = true;
            break;
        }
    }
    result.pose = pose;
    return result;
}

std::vector<Constraint> build_constraints(const std::vector<Patch>& observed,
                                          const std::vector<std::pair<int, int>>& correspondence,
                                          const TemplateModel& model, int per_patch_points,
                                          bool center_anchors = false) {
    std::vector<Constraint> constraints;
    for (const auto& [obs_id, canon_id] : correspondence) {
        const Patch& obs = observed[static_cast<std::size_t>(obs_id)];
        const Patch& canon = model.canonical_patches[static_cast<std::size_t>(canon_id)];
        const OrientedCloud& pts = patch_points(obs);
        const auto picks = subsample_indices(pts.size(), per_patch_points);
        Constraint base;
        if (const auto* pl = std::get_if<PlanarPatch>(&canon)) {
            base.planar = true;
            base.anchor = pl->center;
            base.direction = pl->normal;
        } else {
            const auto& cyl = std::get<CylindricalPatch>(canon);
            base.planar = false;
            base.anchor = cyl.axis_point;
            base.direction = cyl.axis_dir;
            base.radius = cyl.radius;
        }
        for (const std::size_t i : picks) {
            Constraint c = base;
            c.point = pts.points[i].position;
            constraints.push_back(c);
        }
        if (center_anchors) {
            // Weak patch-center to face-center anchors settle the DoFs the
            // surface constraints leave free in under-constrained solves.
            for (int k = 0; k < 3; ++k) {
                Constraint c;
                c.planar = true;
                c.point = patch_center(obs);
                c.anchor = patch_center(canon);
                c.direction = Vec3::Unit(k);
                c.weight = 10.0;
                constraints.push_back(c);
            }
        }
    }
    return constraints;
}

// Rotation seed from matched patch directions; cylinder axes get their sign
// from whichever choice aligns best.
RigidTransform initial_guess(const std::vector<Patch>& observed,
                             const std::vector<std::pair<int, int>>& correspondence,
                             const TemplateModel& model) {
    struct DirPair {
        Vec3 canon;
        Vec3 obs;
        bool sign_free = false;
    };
    std::vector<DirPair> dirs;
    std::vector<std::pair<Vec3, Vec3>> centers;  // canonical, observed
    for (const auto& [obs_id, canon_id] : correspondence) {
        const Patch& obs = observed[static_cast<std::size_t>(obs_id)];
        const Patch& canon = model.canonical_patches[static_cast<std::size_t>(canon_id)];
        DirPair d;
        d.canon = patch_direction(canon).normalized();
        d.obs = patch_direction(obs).normalized();
        d.sign_free = patch_kind(canon) == PatchKind::cylindrical;
        dirs.push_back(d);
        centers.emplace_back(patch_center(canon), patch_center(obs));
    }

    std::vector<std::size_t> free_ids;
    for (std::size_t i = 0; i < dirs.size(); ++i) {
        if (dirs[i].sign_free) free_ids.push_back(i);
    }
    const int combos = 1 << free_ids.size();
    Quat best_q = Quat::Identity();
    double best_err = std::numeric_limits<double>::infinity();
    for (int mask = 0; mask < combos; ++mask) {
        auto trial = dirs;
        for (std::size_t b = 0; b < free_ids.size(); ++b) {
            if (mask & (1 << b)) trial[free_ids[b]].obs = -trial[free_ids[b]].obs;
        }
        Mat3 m = Mat3::Zero();
        for (const auto& d : trial) m += d.obs * d.canon.transpose();
        // Cross products of pairs break the two-direction degeneracy.
        for (std::size_t i = 0; i < trial.size(); ++i) {
            for (std::size_t j = i + 1; j < trial.size(); ++j) {
                const Vec3 cc = trial[i].canon.cross(trial[j].canon);
                const Vec3 oc = trial[i].obs.cross(trial[j].obs);
                if (cc.norm() > 1e-6 && oc.norm() > 1e-6) {
                    m += oc.normalized() * cc.normalized().transpose();
                }
            }
        }
        Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
        Mat3 r = svd.matrixU() * svd.matrixV().transpose();
        if (r.determinant() < 0.0) {
            Mat3 flip = Mat3::Identity();
            flip(2, 2) = -1.0;
            r = svd.matrixU() * flip * svd.matrixV().transpose();
        }
        double err = 0.0;
        for (const auto& d : trial) {
            const Vec3 mapped = r * d.canon;
            const double a = d.sign_free ? std::min((mapped - d.obs).squaredNorm(),
                                                    (mapped + d.obs).squaredNorm())
                                         : (mapped - d.obs).squaredNorm();
            err += a;
        }
        if (err < best_err) {
            best_err = err;
            best_q = Quat(r);
        }
    }

    Vec3 canon_mean = Vec3::Zero();
    Vec3 obs_mean = Vec3::Zero();
    for (const auto& [c, o] : centers) {
        canon_mean += c;
        obs_mean += o;
    }
    canon_mean /= static_cast<double>(centers.size());
    obs_mean /= static_cast<double>(centers.size());
    return RigidTransform(best_q, obs_mean - best_q * canon_mean);
}

}  // namespace

RigidTransform solve_group_alignment(const std::vector<Patch>& observed,
                                     const std::vector<std::pair<int, int>>& correspondence,
                                     const TemplateModel& model, const SolveParams& params) {
    const auto constraints =
        build_constraints(observed, correspondence, model, params.per_patch_points);
    if (constraints.empty()) throw SingularNormalEquations();
    const RigidTransform init = initial_guess(observed, correspondence, model);
    const auto result = gauss_newton_alignment(constraints, init, params.max_iterations,
                                               params.update_tol, /*least_norm=*/false);
    if (!result.converged) throw NoConvergence("group alignment exceeded the iteration budget");
    return result.pose;
}

RigidTransform solve_group_alignment_least_norm(
    const std::vector<Patch>& observed, const std::vector<std::pair<int, int>>& correspondence,
    const TemplateModel& model, const SolveParams& params, const RigidTransform* init) {
    const auto constraints = build_constraints(observed, correspondence, model,
                                               params.per_patch_points, /*center_anchors=*/true);
    if (constraints.empty()) throw SingularNormalEquations();
    const RigidTransform seed =
        init != nullptr ? *init : initial_guess(observed, correspondence, model);
    return gauss_newton_alignment(constraints, seed, params.max_iterations, params.update_tol,
                                  /*least_norm=*/true)
        .pose;
}

double verification_residual(const RigidTransform& pose, const KdTree3& observed_tree,
                             const TemplateModel& model, const HypothesisParams& params) {
    const double trunc = params.truncation * model.diameter;
    int facing = 0;
    int retained = 0;
    double sq = 0.0;
    std::vector<Vec3> posed;
    posed.reserve(model.surface_samples.size());
    for (const auto& s : model.surface_samples.points) {
        const Vec3 p = pose.apply(s.position);
        posed.push_back(p);
        const Vec3 n = pose.rotate(s.normal);
        if (n.dot(p) >= 0.0) continue;  // back-facing for a camera at the origin
        ++facing;
        const auto [idx, d_sq] = observed_tree.nearest(p);
        (void)idx;
        const double d = std::sqrt(d_sq);
        if (d > trunc) continue;  // outside the observation: occluded or wrong
        ++retained;
        sq += d * d;
    }
    if (facing == 0 || retained < params.min_retained * facing) {
        return std::numeric_limits<double>::infinity();
    }

    // Two-sided check: most of the observed cloud must lie near the posed
    // model, or a partial overlap could verify a grossly wrong pose.
    const KdTree3 posed_tree(posed);
    const auto& cloud_points = observed_tree.points();
    const auto picks = subsample_indices(cloud_points.size(), 300);
    int explained = 0;
    for (const std::size_t i : picks) {
        const auto [idx, d_sq] = posed_tree.nearest(cloud_points[i]);
        (void)idx;
        if (std::sqrt(d_sq) <= trunc) ++explained;
    }
    if (explained < params.min_explained * static_cast<double>(picks.size())) {
        return std::numeric_limits<double>::infinity();
    }
    return std::sqrt(sq / retained);
}

namespace {

double direction_angle(const Vec3& a, const Vec3& b, bool line) {
    const double c = std::clamp(a.normalized().dot(b.normalized()), -1.0, 1.0);
    const double ang = std::acos(c);
    return line ? std::min(ang, M_PI - ang) : ang;
}

}  // namespace

bool patch_kind_compatible(const Patch& obs, const Patch& canon, const TemplateModel& model,
                           const HypothesisParams& params) {
    if (patch_kind(obs) != patch_kind(canon)) return false;
    if (patch_kind(obs) == PatchKind::cylindrical) {
        const double r_obs = std::get<CylindricalPatch>(obs).radius;
        const double r_can = std::get<CylindricalPatch>(canon).radius;
        if (std::abs(r_obs - r_can) > params.radius_tol * r_can) return false;
    } else {
        // A visible patch cannot outgrow its canonical face by much.
        const double a_obs = std::get<PlanarPatch>(obs).area_estimate;
        const double a_can = std::get<PlanarPatch>(canon).area_estimate;
        if (a_can > 0.0 && a_obs > 1.5 * a_can) return false;
    }
    (void)model;
    return true;
}

bool patch_pair_compatible(const Patch& obs_a, const Patch& obs_b, const Patch& can_a,
                           const Patch& can_b, const TemplateModel& model,
                           const HypothesisParams& params) {
    const bool line = patch_kind(obs_a) == PatchKind::cylindrical ||
                      patch_kind(obs_b) == PatchKind::cylindrical;
    const double ang_obs = direction_angle(patch_direction(obs_a), patch_direction(obs_b), line);
    const double ang_can = direction_angle(patch_direction(can_a), patch_direction(can_b), line);
    if (std::abs(ang_obs - ang_can) > params.angle_tol_deg * M_PI / 180.0) return false;

    const double d_obs = (patch_center(obs_a) - patch_center(obs_b)).norm();
    const double d_can = (patch_center(can_a) - patch_center(can_b)).norm();
    const double tol =
        std::max(params.distance_tol * d_can, params.distance_floor * model.diameter);
    return std::abs(d_obs - d_can) <= tol;
}

std::optional<PoseHypothesis> hypothesize_and_verify(const StableGroup& group,
                                                     const std::vector<Patch>& observed,
                                                     const TemplateModel& model,
                                                     const HypothesisParams& params) {
    std::vector<Vec3> obs_positions;
    // Verification compares against the union of all observed patches.
    for (const auto& patch : observed) {
        for (const auto& p : patch_points(patch).points) obs_positions.push_back(p.position);
    }
    if (obs_positions.empty()) return std::nullopt;
    const KdTree3 tree(obs_positions);

    const int n_canon = static_cast<int>(model.canonical_patches.size());
    std::array<std::vector<int>, 3> candidates;
    for (int slot = 0; slot < 3; ++slot) {
        const Patch& obs = observed[static_cast<std::size_t>(group.patch_ids[slot])];
        for (int c = 0; c < n_canon; ++c) {
            if (patch_kind_compatible(obs, model.canonical_patches[static_cast<std::size_t>(c)], model,
                                params)) {
                candidates[static_cast<std::size_t>(slot)].push_back(c);
            }
        }
    }

    std::optional<PoseHypothesis> best;
    for (int c0 : candidates[0]) {
        const Patch& obs0 = observed[static_cast<std::size_t>(group.patch_ids[0])];
        for (int c1 : candidates[1]) {
            if (c1 == c0) continue;
            const Patch& obs1 = observed[static_cast<std::size_t>(group.patch_ids[1])];
            if (!patch_pair_compatible(obs0, obs1, model.canonical_patches[static_cast<std::size_t>(c0)],
                                 model.canonical_patches[static_cast<std::size_t>(c1)], model,
                                 params)) {
                continue;
            }
            for (int c2 : candidates[2]) {
                if (c2 == c0 || c2 == c1) continue;
                const Patch& obs2 = observed[static_cast<std::size_t>(group.patch_ids[2])];
                if (!patch_pair_compatible(obs0, obs2,
                                     model.canonical_patches[static_cast<std::size_t>(c0)],
                                     model.canonical_patches[static_cast<std::size_t>(c2)], model,
                                     params) ||
                    !patch_pair_compatible(obs1, obs2,
                                     model.canonical_patches[static_cast<std::size_t>(c1)],
                                     model.canonical_patches[static_cast<std::size_t>(c2)], model,
                                     params)) {
                    continue;
                }

                const std::vector<std::pair<int, int>> correspondence = {
                    {group.patch_ids[0], c0}, {group.patch_ids[1], c1}, {group.patch_ids[2], c2}};
                RigidTransform pose;
                try {
                    pose = solve_group_alignment(observed, correspondence, model, params.solve);
                } catch (const Error&) {
                    continue;
                }
                const double residual = verification_residual(pose, tree, model, params);
                if (!best || residual < best->residual) {
                    PoseHypothesis hyp;
                    hyp.pose = pose;
                    hyp.residual = residual;
                    hyp.source_group = group;
                    hyp.correspondence = correspondence;
                    best = std::move(hyp);
                }
            }
        }
    }
    if (best && best->residual <= params.accept_rms * model.diameter) return best;
    return std::nullopt;
}

RigidTransform refine_pose(const RigidTransform& init, const OrientedCloud& observed,
                           const TemplateModel& model, const RefineParams& params) {
    if (observed.empty()) throw EmptyCloud();
    const OrientedCloud& targets =
        model.dense_samples.empty() ? model.surface_samples : model.dense_samples;
    std::vector<Vec3> sample_pos;
    sample_pos.reserve(targets.size());
    for (const auto& p : targets.points) sample_pos.push_back(p.position);
    const KdTree3 tree(sample_pos);
    const double cutoff = params.cutoff_frac * model.diameter;
    const auto picks = subsample_indices(observed.size(), params.max_cloud_points);

    // Grazing pixels sit on a stretched, strongly correlated lattice; their
    // point-term contributions would bias the slide equilibrium.
    std::vector<char> steep(observed.size(), 0);
    for (std::size_t i = 0; i < observed.size(); ++i) {
        const auto& p = observed.points[i];
        steep[i] = std::abs(p.normal.dot(p.position.normalized())) < 0.25;
    }


    // Correspondences must agree in normal direction; this rejects matches
    // that jump across creases to an adjacent surface.
    constexpr double kNormalGate = 0.7;  // cos ~45 deg
    const auto compatible = [&](const RigidTransform& inv, std::size_t i, int idx) {
        const Vec3 n_obs = inv.rotate(observed.points[i].normal);
        return n_obs.dot(targets.points[static_cast<std::size_t>(idx)].normal) > kNormalGate;
    };

    // Symmetric normal: the mean of the sample normal and the (rotated) cloud
    // normal cancels the first-order convexity bias of one-sided tangent
    // planes on curved surfaces.
    const auto effective_normal = [&](const RigidTransform& inv, std::size_t i, int idx) {
        const Vec3 n_cloud = inv.rotate(observed.points[i].normal);
        const auto& s = targets.points[static_cast<std::size_t>(idx)];
        Vec3 n = s.normal + n_cloud;
        const double len = n.norm();
        return len > 1e-9 ? Vec3(n / len) : s.normal;
    };

    // The guard metric matches the minimized objective (plane term plus the
    // weighted point term), so every accepted step is a true improvement.
    const auto eval_rms = [&](const RigidTransform& pose) {
        const RigidTransform inv = pose.inverse();
        double sq = 0.0;
        int count = 0;
        for (const std::size_t i : picks) {
            const Vec3 y = inv.apply(observed.points[i].position);
            const auto [idx, d_sq] = tree.nearest(y);
            if (std::sqrt(d_sq) > cutoff || !compatible(inv, i, idx)) continue;
            const auto& s = targets.points[static_cast<std::size_t>(idx)];
            const double rho = (y - s.position).dot(effective_normal(inv, i, idx));
            sq += rho * rho;
            if (!steep[i]) sq += params.point_weight * (y - s.position).squaredNorm();
            ++count;
        }
        return count > 0 ? std::sqrt(sq / count) : std::numeric_limits<double>::infinity();
    };

    RigidTransform pose = init;
    RigidTransform best_pose = init;
    double best_rms = eval_rms(init);
    if (!std::isfinite(best_rms)) {
        throw NoConvergence("no correspondences within the cutoff at the initial pose");
    }

    for (int iter = 0; iter < params.max_iterations; ++iter) {
        const RigidTransform inv = pose.inverse();
        Mat6 h = Mat6::Zero();
        Vec6 g = Vec6::Zero();
        int count = 0;
        for (const std::size_t i : picks) {
            const Vec3 y = inv.apply(observed.points[i].position);
            const auto [idx, d_sq] = tree.nearest(y);
            if (std::sqrt(d_sq) > cutoff || !compatible(inv, i, idx)) continue;
            const auto& s = targets.points[static_cast<std::size_t>(idx)];
            const Vec3 n = effective_normal(inv, i, idx);
            const double rho = (y - s.position).dot(n);
            Vec6 jac;
            jac << -(y.cross(n)), -n;
            h += jac * jac.transpose();
            g += jac * rho;
            // Weak point term on the same correspondence: with the dense
            // resampling its layout noise is far below the slide basins the
            // plane rows leave open.
            if (params.point_weight > 0.0 && !steep[i]) {
                const Vec3 diff = y - s.position;
                for (int k = 0; k < 3; ++k) {
                    const Vec3 e = Vec3::Unit(k);
                    Vec6 jp;
                    jp << -(y.cross(e)), -e;
                    h += params.point_weight * (jp * jp.transpose());
                    g += params.point_weight * (jp * diff[k]);
                }
            }
            ++count;
        }
        if (count < 6) break;
        h.diagonal().array() += 1e-12 * h.trace() + 1e-300;
        const Vec6 delta = h.ldlt().solve(-g);
        if (!delta.allFinite()) break;
        pose = pose * twist_to_transform(Twist::from_vector(delta));
        const double rms = eval_rms(pose);
        if (rms < best_rms) {
            best_rms = rms;
            best_pose = pose;
        }
        if (delta.norm() < params.update_tol) break;
    }
    return best_pose;
}

RigidTransform fuse_group_poses(std::span<const PoseHypothesis> hypotheses,
                                std::span<const double> weights) {
    if (hypotheses.empty()) throw EmptyHypothesisSet();
    if (hypotheses.size() != weights.size()) throw LengthMismatch();
    double weight_sum = 0.0;
    Vec3 translation = Vec3::Zero();
    std::vector<std::pair<Quat, double>> entries;
    entries.reserve(hypotheses.size());
    for (std::size_t i = 0; i < hypotheses.size(); ++i) {
        translation += weights[i] * hypotheses[i].pose.translation();
        weight_sum += weights[i];
        entries.emplace_back(hypotheses[i].pose.rotation(), weights[i]);
    }
    if (weight_sum <= 0.0) throw AllZeroWeights();
    translation /= weight_sum;
    return RigidTransform(weighted_rotation_mean(entries), translation);
}

}  // namespace slipstab
