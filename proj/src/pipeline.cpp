#include "slipstab/pipeline.hpp"

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "slipstab/symmetry.hpp"

namespace slipstab {

Json to_json(const PipelineConfig& config) {
    return Json{{"stability_threshold", config.stability_threshold},
                {"normalize", config.normalize},
                {"segmentation",
                 Json{{"min_points", config.segmentation.min_points},
                      {"knn", config.segmentation.knn},
                      {"normal_angle_tol_deg", config.segmentation.normal_angle_tol_deg},
                      {"dist_tol", config.segmentation.dist_tol},
                      {"seed", config.segmentation.seed}}},
                {"max_groups", config.max_groups},
                {"group_subsample", config.group_subsample},
                {"solver",
                 Json{{"max_iterations", config.solver.max_iterations},
                      {"update_tol", config.solver.update_tol},
                      {"per_patch_points", config.solver.per_patch_points}}},
                {"hypothesis",
                 Json{{"radius_tol", config.hypothesis.radius_tol},
                      {"angle_tol_deg", config.hypothesis.angle_tol_deg},
                      {"distance_tol", config.hypothesis.distance_tol},
                      {"distance_floor", config.hypothesis.distance_floor},
                      {"accept_rms", config.hypothesis.accept_rms},
                      {"truncation", config.hypothesis.truncation},
                      {"min_retained", config.hypothesis.min_retained}}},
                {"refine",
                 Json{{"max_iterations", config.refine.max_iterations},
                      {"cutoff_frac", config.refine.cutoff_frac},
                      {"update_tol", config.refine.update_tol},
                      {"max_cloud_points", config.refine.max_cloud_points}}},
                {"metrics",
                 Json{{"adi_frac", config.metrics.adi_frac},
                      {"vsd_thresh", config.metrics.vsd_thresh},
                      {"vsd_tau", config.metrics.vsd_tau},
                      {"vsd_delta", config.metrics.vsd_delta},
                      {"rot_deg", config.metrics.rot_deg},
                      {"trans", config.metrics.trans},
                      {"iou", config.metrics.iou}}},
                {"seed", config.seed}};
}

PipelineConfig config_from_json(const Json& j) {
    PipelineConfig c;
    c.stability_threshold = j.value("stability_threshold", c.stability_threshold);
    c.normalize = j.value("normalize", c.normalize);
    if (j.contains("segmentation")) {
        const auto& s = j.at("segmentation");
        c.segmentation.min_points = s.value("min_points", c.segmentation.min_points);
        c.segmentation.knn = s.value("knn", c.segmentation.knn);
        c.segmentation.normal_angle_tol_deg =
            s.value("normal_angle_tol_deg", c.segmentation.normal_angle_tol_deg);
        c.segmentation.dist_tol = s.value("dist_tol", c.segmentation.dist_tol);
        c.segmentation.seed = s.value("seed", c.segmentation.seed);
    }
    c.max_groups = j.value("max_groups", c.max_groups);
    c.group_subsample = j.value("group_subsample", c.group_subsample);
    if (j.contains("solver")) {
        const auto& s = j.at("solver");
        c.solver.max_iterations = s.value("max_iterations", c.solver.max_iterations);
        c.solver.update_tol = s.value("update_tol", c.solver.update_tol);
        c.solver.per_patch_points = s.value("per_patch_points", c.solver.per_patch_points);
    }
    if (j.contains("hypothesis")) {
        const auto& s = j.at("hypothesis");
        c.hypothesis.radius_tol = s.value("radius_tol", c.hypothesis.radius_tol);
        c.hypothesis.angle_tol_deg = s.value("angle_tol_deg", c.hypothesis.angle_tol_deg);
        c.hypothesis.distance_tol = s.value("distance_tol", c.hypothesis.distance_tol);
        c.hypothesis.distance_floor = s.value("distance_floor", c.hypothesis.distance_floor);
        c.hypothesis.accept_rms = s.value("accept_rms", c.hypothesis.accept_rms);
        c.hypothesis.truncation = s.value("truncation", c.hypothesis.truncation);
        c.hypothesis.min_retained = s.value("min_retained", c.hypothesis.min_retained);
    }
    if (j.contains("refine")) {
        const auto& s = j.at("refine");
        c.refine.max_iterations = s.value("max_iterations", c.refine.max_iterations);
        c.refine.cutoff_frac = s.value("cutoff_frac", c.refine.cutoff_frac);
        c.refine.update_tol = s.value("update_tol", c.refine.update_tol);
        c.refine.max_cloud_points = s.value("max_cloud_points", c.refine.max_cloud_points);
    }
    if (j.contains("metrics")) {
        const auto& s = j.at("metrics");
        c.metrics.adi_frac = s.value("adi_frac", c.metrics.adi_frac);
        c.metrics.vsd_thresh = s.value("vsd_thresh", c.metrics.vsd_thresh);
        c.metrics.vsd_tau = s.value("vsd_tau", c.metrics.vsd_tau);
        c.metrics.vsd_delta = s.value("vsd_delta", c.metrics.vsd_delta);
        c.metrics.rot_deg = s.value("rot_deg", c.metrics.rot_deg);
        c.metrics.trans = s.value("trans", c.metrics.trans);
        c.metrics.iou = s.value("iou", c.metrics.iou);
    }
    c.seed = j.value("seed", c.seed);
    return c;
}

namespace {

KdTree3 cloud_tree(const OrientedCloud& cloud) {
    std::vector<Vec3> positions;
    positions.reserve(cloud.size());
    for (const auto& p : cloud.points) positions.push_back(p.position);
    return KdTree3(positions);
}

struct Candidate {
    RigidTransform pose;
    double residual = std::numeric_limits<double>::infinity();
};

void consider(Candidate& best, const RigidTransform& pose, double residual) {
    if (residual < best.residual) {
        best.pose = pose;
        best.residual = residual;
    }
}

// Two refinement rounds: the second pass restarts the correspondences, which
// finishes off slide directions that converge only through boundary pulls.
RigidTransform refine_twice(const RigidTransform& init, const OrientedCloud& cloud,
                            const TemplateModel& model, const RefineParams& params) {
    const RigidTransform once = refine_pose(init, cloud, model, params);
    return refine_pose(once, cloud, model, params);
}

// Rendered-vs-observed depth comparison over the object's mask. The
// silhouette carries subpixel boundary information the cloud-based residuals
// cannot see, and it exposes poses whose hidden parts stick out of the mask.
struct SilhouetteContext {
    const DepthImage* observed = nullptr;
    std::vector<char> mask_bitmap;  // width*height

    bool valid() const { return observed != nullptr && !mask_bitmap.empty(); }
};

SilhouetteContext make_silhouette_context(const DepthImage* observed,
                                          const std::vector<std::uint32_t>* mask) {
    SilhouetteContext ctx;
    if (observed == nullptr || mask == nullptr || mask->empty()) return ctx;
    ctx.observed = observed;
    ctx.mask_bitmap.assign(observed->values.size(), 0);
    for (std::uint32_t pix : *mask) {
        if (pix < ctx.mask_bitmap.size()) ctx.mask_bitmap[pix] = 1;
    }
    return ctx;
}

struct SilhouetteScore {
    double cost = std::numeric_limits<double>::infinity();
    double xor_fraction = 1.0;
};

SilhouetteScore silhouette_score(const SilhouetteContext& ctx, const TemplateModel& model,
                                 const RigidTransform& pose) {
    SilhouetteScore score;
    if (!ctx.valid()) return score;
    const DepthImage& obs = *ctx.observed;
    const DepthImage render =
        render_depth(model.mesh, pose, obs.intrinsics, obs.width, obs.height);
    constexpr double kDepthCap = 0.02;
    double cost = 0.0;
    std::int64_t mismatch = 0, union_count = 0;
    for (std::size_t i = 0; i < render.values.size(); ++i) {
        const bool in_mask = ctx.mask_bitmap[i] != 0 && obs.values[i] > 0.0f;
        const bool rendered = render.values[i] > 0.0f;
        if (!in_mask && !rendered) continue;
        ++union_count;
        if (in_mask != rendered) {
            ++mismatch;
            cost += kDepthCap * kDepthCap;
            continue;
        }
        const double dz = std::min(
            std::abs(static_cast<double>(render.values[i]) - static_cast<double>(obs.values[i])),
            kDepthCap);
        cost += dz * dz;
    }
    if (union_count == 0) return score;
    score.cost = cost / static_cast<double>(union_count);
    score.xor_fraction = static_cast<double>(mismatch) / static_cast<double>(union_count);
    return score;
}

// Line-search the silhouette cost along the pose directions the point-to-plane
// system leaves soft (slides, axial shifts, spins about face normals).
RigidTransform silhouette_polish(const SilhouetteContext& ctx, const TemplateModel& model,
                                 const OrientedCloud& cloud, const RigidTransform& pose_in,
                                 const PipelineConfig& config) {
    if (!ctx.valid()) return pose_in;

    // Soft directions from the point-to-plane normal equations.
    const OrientedCloud& targets =
        model.dense_samples.empty() ? model.surface_samples : model.dense_samples;
    std::vector<Vec3> sample_pos;
    sample_pos.reserve(targets.size());
    for (const auto& p : targets.points) sample_pos.push_back(p.position);
    const KdTree3 tree(sample_pos);
    const double cutoff = config.refine.cutoff_frac * model.diameter;

    RigidTransform pose = pose_in;
    const RigidTransform inv = pose.inverse();
    Mat6 h = Mat6::Zero();
    int matched = 0;
    const std::size_t step = std::max<std::size_t>(1, cloud.size() / 600);
    for (std::size_t i = 0; i < cloud.size(); i += step) {
        const Vec3 y = inv.apply(cloud.points[i].position);
        const auto [idx, d_sq] = tree.nearest(y);
        if (std::sqrt(d_sq) > cutoff) continue;
        const Vec3 n = targets.points[static_cast<std::size_t>(idx)].normal;
        Vec6 jac;
        jac << -(y.cross(n)), -n;
        h += jac * jac.transpose();
        ++matched;
    }
    if (matched < 12) return pose_in;
    Eigen::SelfAdjointEigenSolver<Mat6> es(h);
    const double lambda_max = es.eigenvalues()[5];

    SilhouetteScore best = silhouette_score(ctx, model, pose);
    for (int d = 0; d < 6; ++d) {
        if (es.eigenvalues()[d] > 0.05 * lambda_max) break;  // stiff from here on
        const Vec6 dir = es.eigenvectors().col(d);
        // Golden-section over the soft direction.
        const double span = 0.02 * model.diameter;
        double a = -span, b = span;
        const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
        const auto eval = [&](double t) {
            return silhouette_score(ctx, model,
                                    pose * twist_to_transform(Twist::from_vector(t * dir)))
                .cost;
        };
        double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
        double f1 = eval(x1), f2 = eval(x2);
        for (int it = 0; it < 14; ++it) {
            if (f1 < f2) {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - phi * (b - a);
                f1 = eval(x1);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + phi * (b - a);
                f2 = eval(x2);
            }
        }
        const double t_star = (a + b) / 2;
        const RigidTransform polished =
            pose * twist_to_transform(Twist::from_vector(t_star * dir));
        const SilhouetteScore trial = silhouette_score(ctx, model, polished);
        if (trial.cost < best.cost) {
            best = trial;
            pose = polished;
        }
    }
    return pose;
}

Candidate axis_route(const OrientedCloud& cloud, const TemplateModel& model,
                     const KdTree3& tree, const PipelineConfig& config) {
    Candidate best;
    if (model.symmetry.kind != SymmetryKind::continuous || !model.symmetry.axis) return best;
    SymmetryAxis observed_axis;
    try {
        observed_axis = estimate_rotation_axis(cloud, model);
    } catch (const Error&) {
        return best;
    }

    // Anchor the axial translation by matching extent midpoints: the visible
    // cloud's centroid is biased toward whichever end is in view, but a
    // side-ish view always spans the full axial extent.
    const Vec3 a = observed_axis.direction;
    double obs_lo = std::numeric_limits<double>::infinity(), obs_hi = -obs_lo;
    for (const auto& p : cloud.points) {
        const double h = (p.position - observed_axis.center).dot(a);
        obs_lo = std::min(obs_lo, h);
        obs_hi = std::max(obs_hi, h);
    }
    const Vec3 obs_mid = observed_axis.center + 0.5 * (obs_lo + obs_hi) * a;
    const Vec3 a_can = model.symmetry.axis->direction;
    double can_lo = std::numeric_limits<double>::infinity(), can_hi = -can_lo;
    for (const auto& p : model.surface_samples.points) {
        const double h = (p.position - model.symmetry.axis->center).dot(a_can);
        can_lo = std::min(can_lo, h);
        can_hi = std::max(can_hi, h);
    }
    const Vec3 can_mid = model.symmetry.axis->center + 0.5 * (can_lo + can_hi) * a_can;

    for (const double sign : {1.0, -1.0}) {
        const SymmetryAxis oriented{obs_mid, sign * a};
        RigidTransform pose = axis_alignment_pose(SymmetryAxis{can_mid, a_can}, oriented);
        try {
            pose = refine_twice(pose, cloud, model, config.refine);
        } catch (const Error&) {
        }
        consider(best, pose, verification_residual(pose, tree, model, config.hypothesis));
    }
    return best;
}

// Principal in-plane direction of a planar patch's members.
Vec3 patch_inplane_axis(const PlanarPatch& patch) {
    Vec3 mean = Vec3::Zero();
    for (const auto& p : patch.points.points) mean += p.position;
    mean /= static_cast<double>(patch.points.size());
    Mat3 cov = Mat3::Zero();
    for (const auto& p : patch.points.points) {
        Vec3 d = p.position - mean;
        d -= d.dot(patch.normal) * patch.normal;
        cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    return es.eigenvectors().col(2).normalized();
}

// Canonical faces are axis-aligned rectangles; the in-plane extents give the
// principal direction exactly, where a sparse-sample PCA would jitter.
Vec3 canonical_inplane_axis(const PlanarPatch& patch) {
    Vec3 e1 = std::abs(patch.normal.z()) < 0.9 ? patch.normal.cross(Vec3::UnitZ()).normalized()
                                               : patch.normal.cross(Vec3::UnitX()).normalized();
    Vec3 e2 = patch.normal.cross(e1);
    double ext1 = 0.0, ext2 = 0.0;
    for (const auto& p : patch.points.points) {
        const Vec3 d = p.position - patch.center;
        ext1 = std::max(ext1, std::abs(d.dot(e1)));
        ext2 = std::max(ext2, std::abs(d.dot(e2)));
    }
    return ext1 >= ext2 ? e1 : e2;
}

// Segmentation trims crease and silhouette zones, which skews the member
// centroid; re-slicing the full cloud against the fitted plane recovers an
// almost unbiased face center for anchoring.
Vec3 plane_slice_center(const OrientedCloud& cloud, const PlanarPatch& patch, double dist_tol) {
    double radius_sq = 0.0;
    for (const auto& p : patch.points.points) {
        radius_sq = std::max(radius_sq, (p.position - patch.center).squaredNorm());
    }
    const double reach_sq = 2.25 * radius_sq;  // 1.5x the patch radius
    Vec3 sum = Vec3::Zero();
    double weight_sum = 0.0;
    for (const auto& p : cloud.points) {
        if (std::abs(patch.normal.dot(p.position - patch.center)) > 3.0 * dist_tol) continue;
        if ((p.position - patch.center).squaredNorm() > reach_sq) continue;
        // Keep out the coplanar rim of adjacent surfaces.
        if (p.normal.dot(patch.normal) < 0.5) continue;
        // Per-pixel surface footprint z^2 / cos(incidence): the unweighted
        // pixel centroid is skewed toward the near side of oblique faces.
        const double z = p.position.z();
        const double incidence = std::abs(patch.normal.dot(p.position.normalized()));
        if (incidence < 0.1) continue;
        const double w = z * z / incidence;
        sum += w * p.position;
        weight_sum += w;
    }
    return weight_sum > 0.0 ? Vec3(sum / weight_sum) : patch.center;
}

Candidate fallback_route(const OrientedCloud& cloud, const std::vector<Patch>& raw_patches,
                         const TemplateModel& model, const KdTree3& tree,
                         const PipelineConfig& config, const SilhouetteContext& sil) {
    Candidate best;
    // Anchor on slice-refined centers.
    std::vector<Patch> patches = raw_patches;
    for (auto& patch : patches) {
        if (auto* pl = std::get_if<PlanarPatch>(&patch)) {
            pl->center = plane_slice_center(cloud, *pl, config.segmentation.dist_tol);
        }
    }
    const int n_obs = static_cast<int>(patches.size());
    const int n_can = static_cast<int>(model.canonical_patches.size());

    // Stage one solves and pre-verifies every budgeted assignment; only the
    // best few candidates pay for refinement.
    struct Staged {
        RigidTransform pose;
        double residual;
        std::vector<std::pair<int, int>> corr;
    };
    std::vector<Staged> staged;
    const auto try_correspondence = [&](const std::vector<std::pair<int, int>>& corr,
                                        const RigidTransform* init = nullptr) {
        RigidTransform pose;
        try {
            pose = solve_group_alignment_least_norm(patches, corr, model, config.solver, init);
        } catch (const Error&) {
            return;
        }
        staged.push_back({pose, verification_residual(pose, tree, model, config.hypothesis), corr});
    };

    // Face-on views: a single planar patch plus its rectangle orientation
    // pins the pose up to the face's 180-degree ambiguity; enumerate the
    // four in-plane spins.
    const auto try_single_planar = [&](int i, int ci) {
        const auto* obs = std::get_if<PlanarPatch>(&patches[static_cast<std::size_t>(i)]);
        const auto* can =
            std::get_if<PlanarPatch>(&model.canonical_patches[static_cast<std::size_t>(ci)]);
        if (obs == nullptr || can == nullptr) {
            try_correspondence({{i, ci}});
            return;
        }
        const Vec3 u_obs = patch_inplane_axis(*obs);
        const Vec3 u_can = canonical_inplane_axis(*can);
        for (int spin = 0; spin < 4; ++spin) {
            Mat3 b_obs, b_can;
            b_obs.col(0) = obs->normal;
            b_obs.col(1) = u_obs;
            b_obs.col(2) = obs->normal.cross(u_obs);
            const Quat q_spin(Eigen::AngleAxisd(spin * M_PI / 2, can->normal));
            const Vec3 u_spun = q_spin * u_can;
            b_can.col(0) = can->normal;
            b_can.col(1) = u_spun;
            b_can.col(2) = can->normal.cross(u_spun);
            const Quat rot(b_obs * b_can.transpose());
            const RigidTransform init(rot, obs->center - rot * can->center);
            try_correspondence({{i, ci}}, &init);
        }
    };

    // Pairs first: they constrain more of the pose than single patches.
    // Larger observed pairs are tried first, with a solve budget.
    const auto& canon = model.canonical_patches;
    const auto patch_size = [&](int i) {
        return patch_points(patches[static_cast<std::size_t>(i)]).size();
    };
    std::vector<std::pair<int, int>> obs_pairs;
    for (int i = 0; i < n_obs; ++i) {
        for (int j = i + 1; j < n_obs; ++j) obs_pairs.emplace_back(i, j);
    }
    std::stable_sort(obs_pairs.begin(), obs_pairs.end(),
                     [&](const auto& a, const auto& b) {
                         return patch_size(a.first) + patch_size(a.second) >
                                patch_size(b.first) + patch_size(b.second);
                     });
    constexpr int kPairBudget = 48;
    int attempts = 0;
    for (const auto& [i, j] : obs_pairs) {
        for (int ci = 0; ci < n_can && attempts < kPairBudget; ++ci) {
            if (!patch_kind_compatible(patches[static_cast<std::size_t>(i)],
                                       canon[static_cast<std::size_t>(ci)], model,
                                       config.hypothesis)) {
                continue;
            }
            for (int cj = 0; cj < n_can && attempts < kPairBudget; ++cj) {
                if (cj == ci) continue;
                if (!patch_kind_compatible(patches[static_cast<std::size_t>(j)],
                                           canon[static_cast<std::size_t>(cj)], model,
                                           config.hypothesis) ||
                    !patch_pair_compatible(patches[static_cast<std::size_t>(i)],
                                           patches[static_cast<std::size_t>(j)],
                                           canon[static_cast<std::size_t>(ci)],
                                           canon[static_cast<std::size_t>(cj)], model,
                                           config.hypothesis)) {
                    continue;
                }
                ++attempts;
                try_correspondence({{i, ci}, {j, cj}});
            }
        }
    }
    // Refine the most promising candidates. Point-to-plane refinement walks
    // freely inside slide-direction basins, so the anchored solve is re-run
    // from the refined pose: rotation and normal directions keep the ICP
    // result, slides settle back on the anchors.
    const auto refine_staged = [&]() {
        std::stable_sort(staged.begin(), staged.end(), [](const Staged& a, const Staged& b) {
            return a.residual < b.residual;
        });
        const std::size_t top = std::min<std::size_t>(staged.size(), 3);
        for (std::size_t k = 0; k < top; ++k) {
            if (!std::isfinite(staged[k].residual)) break;
            RigidTransform pose = staged[k].pose;
            try {
                pose = refine_twice(pose, cloud, model, config.refine);
            } catch (const Error&) {
            }
            if (sil.valid() && silhouette_score(sil, model, pose).xor_fraction > 0.15) continue;
            consider(best, pose, verification_residual(pose, tree, model, config.hypothesis));
        }
        staged.clear();
    };
    refine_staged();
    if (best.residual <= config.hypothesis.accept_rms * model.diameter) return best;
    std::vector<int> singles(static_cast<std::size_t>(n_obs));
    std::iota(singles.begin(), singles.end(), 0);
    std::stable_sort(singles.begin(), singles.end(),
                     [&](int a, int b) { return patch_size(a) > patch_size(b); });
    constexpr int kSingleBudget = 12;
    attempts = 0;
    for (int i : singles) {
        for (int ci = 0; ci < n_can && attempts < kSingleBudget; ++ci) {
            if (!patch_kind_compatible(patches[static_cast<std::size_t>(i)],
                                       canon[static_cast<std::size_t>(ci)], model,
                                       config.hypothesis)) {
                continue;
            }
            ++attempts;
            try_single_planar(i, ci);
        }
    }
    refine_staged();
    return best;
}

}  // namespace

EstimateResult estimate_object_pose(const OrientedCloud& cloud, const std::vector<Patch>& patches,
                                    const std::vector<StableGroup>& groups,
                                    const TemplateModel& model, const PipelineConfig& config,
                                    const DepthImage* observed_depth,
                                    const std::vector<std::uint32_t>* mask) {
    EstimateResult result;
    if (cloud.empty()) {
        result.residual = std::numeric_limits<double>::infinity();
        result.fallback = true;
        return result;
    }
    const KdTree3 tree = cloud_tree(cloud);
    const double accept = config.hypothesis.accept_rms * model.diameter;
    const SilhouetteContext sil = make_silhouette_context(observed_depth, mask);

    // A pose whose rendering disagrees grossly with the observed mask cannot
    // be right, no matter how well the overlap region scores.
    const auto silhouette_ok = [&](const RigidTransform& pose) {
        if (!sil.valid()) return true;
        return silhouette_score(sil, model, pose).xor_fraction <= 0.15;
    };
    const auto finish = [&](RigidTransform pose) {
        pose = silhouette_polish(sil, model, cloud, pose, config);
        try {
            pose = refine_pose(pose, cloud, model, config.refine);
        } catch (const Error&) {
        }
        return pose;
    };

    // Continuous-symmetry objects go through the rotation-axis route.
    if (model.symmetry.kind == SymmetryKind::continuous) {
        const Candidate axis = axis_route(cloud, model, tree, config);
        if (axis.residual <= accept && silhouette_ok(axis.pose)) {
            result.pose = finish(axis.pose);
            result.residual = verification_residual(result.pose, tree, model, config.hypothesis);
            return result;
        }
    }

    std::vector<PoseHypothesis> hypotheses;
    std::vector<double> weights;
    HypothesisParams hp = config.hypothesis;
    hp.solve = config.solver;
    for (const auto& group : groups) {
        if (auto hyp = hypothesize_and_verify(group, patches, model, hp)) {
            if (!silhouette_ok(hyp->pose)) continue;
            weights.push_back(group_weight(group));
            hypotheses.push_back(std::move(*hyp));
        }
    }
    if (!hypotheses.empty()) {
        RigidTransform fused = fuse_group_poses(hypotheses, weights);
        try {
            fused = refine_twice(fused, cloud, model, config.refine);
        } catch (const Error&) {
        }
        result.pose = finish(fused);
        result.residual = verification_residual(result.pose, tree, model, config.hypothesis);
        result.groups_used = static_cast<int>(hypotheses.size());
        return result;
    }

    const Candidate fallback = fallback_route(cloud, patches, model, tree, config, sil);
    result.fallback = true;
    if (std::isfinite(fallback.residual)) {
        result.pose = finish(fallback.pose);
        result.residual = verification_residual(result.pose, tree, model, config.hypothesis);
        return result;
    }

    // Nothing usable: report the centroid so downstream metrics stay defined.
    Vec3 centroid = Vec3::Zero();
    for (const auto& p : cloud.points) centroid += p.position;
    result.pose = RigidTransform::from_translation(centroid / static_cast<double>(cloud.size()));
    result.residual = std::numeric_limits<double>::infinity();
    return result;
}

std::vector<ObjectOutcome> process_scene(const std::string& scene_id, const SceneBundle& bundle,
                                         const PipelineConfig& config) {
    std::vector<ObjectOutcome> outcomes;
    for (std::size_t i = 0; i < bundle.spec.objects.size(); ++i) {
        ObjectOutcome outcome;
        outcome.scene_id = scene_id;
        outcome.object_index = static_cast<int>(i);

        const TemplateModel model = make_primitive(bundle.spec.objects[i].descriptor);
        OrientedCloud cloud;
        if (i < bundle.gts.size() && !bundle.gts[i].mask.empty()) {
            cloud = unproject(bundle.depth, bundle.gts[i].mask, bundle.spec.camera.intrinsics);
        }
        std::vector<Patch> patches;
        std::vector<StableGroup> groups;
        if (!cloud.empty()) {
            patches = segment_patches(cloud, config.segmentation);
            groups = enumerate_stable_groups(patches, config.group_params());
        }
        const std::vector<std::uint32_t>* mask =
            i < bundle.gts.size() ? &bundle.gts[i].mask : nullptr;
        outcome.estimate =
            estimate_object_pose(cloud, patches, groups, model, config, &bundle.depth, mask);
        outcome.report = classify(outcome.estimate.pose, bundle.gts[i].pose, model, &bundle.depth,
                                  config.metrics);
        outcome.report.object_id = scene_id + ":" + std::to_string(i);
        outcomes.push_back(std::move(outcome));
    }
    return outcomes;
}

OrientedCloud sampled_plane(int per_side) {
    OrientedCloud cloud;
    for (int i = 0; i < per_side; ++i) {
        for (int j = 0; j < per_side; ++j) {
            const double x = -1.0 + 2.0 * i / (per_side - 1);
            const double y = -1.0 + 2.0 * j / (per_side - 1);
            cloud.points.push_back({Vec3(x, y, 0.0), Vec3::UnitZ()});
        }
    }
    return cloud;
}

OrientedCloud sampled_sphere(int count) {
    // Antipodal pairs keep the centroid exactly at the origin.
    OrientedCloud cloud;
    const int half = count / 2;
    const double golden = M_PI * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < half; ++i) {
        const double z = 1.0 - 2.0 * (i + 0.5) / (2.0 * half);
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double a = golden * i;
        const Vec3 p(r * std::cos(a), r * std::sin(a), z);
        cloud.points.push_back({p, p.normalized()});
        cloud.points.push_back({-p, (-p).normalized()});
    }
    return cloud;
}

OrientedCloud sampled_cylinder(int per_ring, int rings) {
    OrientedCloud cloud;
    const double radius = 0.5;
    for (int ri = 0; ri < rings; ++ri) {
        const double z = -0.8 + 1.6 * ri / (rings - 1);
        for (int i = 0; i < per_ring; ++i) {
            const double a = 2.0 * M_PI * i / per_ring;
            const Vec3 n(std::cos(a), std::sin(a), 0.0);
            cloud.points.push_back({Vec3(radius * n.x(), radius * n.y(), z), n});
        }
    }
    return cloud;
}

OrientedCloud sampled_orthogonal_planes(int per_side) {
    OrientedCloud cloud;
    for (int i = 0; i < per_side; ++i) {
        for (int j = 0; j < per_side; ++j) {
            const double a = (i + 0.5) / per_side;
            const double b = (j + 0.5) / per_side;
            cloud.points.push_back({Vec3(a, b, 0.0), Vec3::UnitZ()});
            cloud.points.push_back({Vec3(0.0, a, b), Vec3::UnitX()});
            cloud.points.push_back({Vec3(a, 0.0, b), Vec3::UnitY()});
        }
    }
    return cloud;
}

std::vector<SelftestRow> stability_selftest(const PipelineConfig& config) {
    struct Shape {
        const char* name;
        OrientedCloud cloud;
        int expected_slippable;
        bool expected_stable;
    };
    const std::vector<Shape> shapes = {
        {"plane", sampled_plane(), 3, false},
        {"sphere", sampled_sphere(), 3, false},
        {"cylinder", sampled_cylinder(), 2, false},
        {"three_planes", sampled_orthogonal_planes(), 0, true},
    };
    std::vector<SelftestRow> rows;
    for (const auto& shape : shapes) {
        const StabilityReport report = analyze_stability(shape.cloud, config.normalize);
        SelftestRow row;
        row.shape = shape.name;
        row.slippable = static_cast<int>(slippable_motions(report).size());
        row.expected_slippable = shape.expected_slippable;
        row.measure = report.measure;
        row.stable = report.measure > config.stability_threshold;
        row.expected_stable = shape.expected_stable;
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace slipstab
