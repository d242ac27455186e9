#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "slipstab/posesolve.hpp"
#include "slipstab/synth.hpp"

using namespace slipstab;

namespace {

TemplateModel box_model() { return make_primitive({PrimitiveKind::box, {1.0, 0.72, 0.45}}); }

TemplateModel cluster_model() {
    return make_primitive(
        {PrimitiveKind::box_cluster, {0.95, 0.6, 0.35, 0.42, 0.3, 0.22, 0.33, 0.1, 0.285}});
}

// Observed patch: canonical patch points carried to the camera frame by gt.
Patch observe_patch(const Patch& canonical, const RigidTransform& gt) {
    if (const auto* pl = std::get_if<PlanarPatch>(&canonical)) {
        PlanarPatch obs;
        obs.points.frame = FrameTag::camera;
        for (const auto& p : pl->points.points) {
            obs.points.points.push_back({gt.apply(p.position), gt.rotate(p.normal)});
        }
        obs.center = gt.apply(pl->center);
        obs.normal = gt.rotate(pl->normal);
        obs.area_estimate = pl->area_estimate;
        return obs;
    }
    const auto& cyl = std::get<CylindricalPatch>(canonical);
    CylindricalPatch obs;
    obs.points.frame = FrameTag::camera;
    for (const auto& p : cyl.points.points) {
        obs.points.points.push_back({gt.apply(p.position), gt.rotate(p.normal)});
    }
    obs.axis_point = gt.apply(cyl.axis_point);
    obs.axis_dir = gt.rotate(cyl.axis_dir);
    obs.radius = cyl.radius;
    obs.arc_extent = cyl.arc_extent;
    return obs;
}

// The camera-facing canonical faces, observed at gt, with their canonical ids.
std::vector<Patch> observed_box_corner(const TemplateModel& model, const RigidTransform& gt,
                                       std::vector<int>* canon_ids = nullptr) {
    std::vector<Patch> observed;
    for (std::size_t c = 0; c < model.canonical_patches.size(); ++c) {
        const Patch& patch = model.canonical_patches[c];
        const Vec3 n_obs = gt.rotate(patch_direction(patch));
        const Vec3 c_obs = gt.apply(patch_center(patch));
        if (n_obs.dot(c_obs) < 0.0) {
            observed.push_back(observe_patch(patch, gt));
            if (canon_ids) canon_ids->push_back(static_cast<int>(c));
        }
    }
    return observed;
}

StableGroup trivial_group() {
    StableGroup g;
    g.patch_ids = {0, 1, 2};
    g.report.measure = 0.9;
    g.report.stable = true;
    return g;
}

}  // namespace

TEST_CASE("group pose loss") {
    Rng rng(61);
    const TemplateModel model = box_model();
    const RigidTransform gt = oracles::random_transform(rng, 0.3);
    CHECK(group_pose_loss(gt, gt, model) == doctest::Approx(0.0));

    const double delta = 0.013;
    const RigidTransform shifted =
        RigidTransform::from_translation(Vec3(delta, 0, 0)) * gt;
    CHECK(group_pose_loss(shifted, gt, model) ==
          doctest::Approx(500.0 * delta).epsilon(1e-9));

    const RigidTransform t = oracles::random_transform(rng, 0.3);
    double expected = 0.0;
    for (const auto& p : model.surface_samples.points) {
        expected += (t.apply(p.position) - gt.apply(p.position)).norm();
    }
    CHECK(group_pose_loss(t, gt, model) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("planar patch loss") {
    Rng rng(62);
    const TemplateModel model = box_model();
    const RigidTransform gt = oracles::random_transform(rng, 0.3);
    const Patch* canonical = nullptr;
    for (const auto& p : model.canonical_patches) {
        if (patch_kind(p) == PatchKind::planar && patch_direction(p).z() > 0.5) canonical = &p;
    }
    REQUIRE(canonical != nullptr);
    const auto observed = std::get<PlanarPatch>(observe_patch(*canonical, gt));
    const Vec3 n_can = patch_direction(*canonical);

    CHECK(planar_patch_loss(gt, observed, gt) < 1e-9);

    // In-plane translation and about-normal rotation are slippable.
    const Vec3 in_plane = Vec3(1, 0, 0) - Vec3(1, 0, 0).dot(n_can) * n_can;
    const RigidTransform slid = gt * RigidTransform::from_translation(0.2 * in_plane.normalized());
    CHECK(planar_patch_loss(slid, observed, gt) < 1e-9);
    const Vec3 c_can = patch_center(*canonical);
    const RigidTransform spin_about_normal =
        gt * RigidTransform(Quat(Eigen::AngleAxisd(0.7, n_can)), c_can - Quat(Eigen::AngleAxisd(0.7, n_can)) * c_can);
    CHECK(planar_patch_loss(spin_about_normal, observed, gt) < 1e-9);

    // Normal-direction offset h: 100 subsampled residuals of h each.
    const double h = 0.017;
    const RigidTransform lifted = gt * RigidTransform::from_translation(h * n_can);
    CHECK(planar_patch_loss(lifted, observed, gt) == doctest::Approx(100.0 * h).epsilon(1e-9));
}

TEST_CASE("cylindrical patch loss") {
    Rng rng(63);
    const TemplateModel model = make_primitive({PrimitiveKind::cylinder, {0.3, 0.85}});
    const RigidTransform gt = oracles::random_transform(rng, 0.3);
    const Patch* canonical = nullptr;
    for (const auto& p : model.canonical_patches) {
        if (patch_kind(p) == PatchKind::cylindrical) canonical = &p;
    }
    REQUIRE(canonical != nullptr);
    const auto observed = std::get<CylindricalPatch>(observe_patch(*canonical, gt));

    CHECK(cylindrical_patch_loss(gt, observed, gt) < 1e-9);

    // Rotation about the cylinder axis is slippable.
    const RigidTransform spun = gt * RigidTransform::rot_z(1.1);
    CHECK(cylindrical_patch_loss(spun, observed, gt) < 1e-9);
    // So is translation along the axis (point-to-axis ignores height).
    const RigidTransform slid = gt * RigidTransform::from_translation(Vec3(0, 0, 0.1));
    CHECK(cylindrical_patch_loss(slid, observed, gt) < 1e-9);

    // Small radial offset matches the brute-force sum.
    const Vec3 offset(0.004, -0.003, 0.0);
    const RigidTransform shifted = gt * RigidTransform::from_translation(offset);
    const RigidTransform inv = shifted.inverse();
    const RigidTransform gt_inv = gt.inverse();
    double expected = 0.0;
    int counted = 0;
    const std::size_t n = observed.points.size();
    for (std::size_t i = 0; counted < 100 && i < n; ++i) {
        const std::size_t pick = i * n / std::min<std::size_t>(n, 100);
        (void)pick;
        ++counted;
    }
    // Brute force over the same 100-point subsample rule.
    const std::size_t k = std::min<std::size_t>(n, 100);
    for (std::size_t i = 0; i < k; ++i) {
        const Vec3 x = observed.points.points[i * n / k].position;
        const double d = point_to_axis_distance(inv.apply(x), gt_inv.apply(observed.axis_point),
                                                gt_inv.rotate(observed.axis_dir));
        expected += std::abs(d - observed.radius);
    }
    CHECK(cylindrical_patch_loss(shifted, observed, gt) ==
          doctest::Approx(expected).epsilon(1e-12));
    CHECK(cylindrical_patch_loss(shifted, observed, gt) > 0.0);
}

TEST_CASE("asym objective") {
    Rng rng(64);
    const TemplateModel model = cluster_model();
    const RigidTransform gt = oracles::random_transform(rng, 0.3);
    std::vector<Patch> observed;
    for (const auto& p : model.canonical_patches) observed.push_back(observe_patch(p, gt));
    const std::vector<StableGroup> groups = {trivial_group(), trivial_group()};

    CHECK(asym_objective(gt, groups, observed, gt, model) < 1e-7);

    const RigidTransform t = gt * RigidTransform::rot_x(0.04);
    double parts = 2.0 * group_pose_loss(t, gt, model);
    for (const auto& p : observed) {
        if (const auto* pl = std::get_if<PlanarPatch>(&p)) {
            parts += planar_patch_loss(t, *pl, gt);
        } else {
            parts += cylindrical_patch_loss(t, std::get<CylindricalPatch>(p), gt);
        }
    }
    CHECK(asym_objective(t, groups, observed, gt, model) == doctest::Approx(parts).epsilon(1e-12));

    // Strictly positive away from gt on an asymmetric model.
    for (int i = 0; i < 10; ++i) {
        const RigidTransform off = gt * RigidTransform(rng.rotation(), 0.01 * rng.normal_vec3());
        if (rotation_geodesic_deg(off, gt) < 0.1) continue;
        CHECK(asym_objective(off, groups, observed, gt, model) > 1e-6);
    }
}

TEST_CASE("point-to-plane and point-to-axis jacobians match central differences") {
    // The solver linearizes rho(T * exp(delta)) around delta = 0 with rows
    // [-(y x dir); -dir]; check both residual families at random points.
    Rng rng(65);
    const double step = 1e-6;
    int checked = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const RigidTransform pose = oracles::random_transform(rng, 0.5);
        const Vec3 x = rng.normal_vec3();
        const Vec3 anchor = 0.3 * rng.normal_vec3();
        const Vec3 dir = rng.unit_vec3();
        const double radius = rng.uniform(0.1, 0.6);
        const bool planar = trial % 2 == 0;

        const auto residual = [&](const RigidTransform& t) {
            const Vec3 y = t.inverse().apply(x);
            if (planar) return (y - anchor).dot(dir);
            return point_to_axis_distance(y, anchor, dir) - radius;
        };

        const Vec3 y0 = pose.inverse().apply(x);
        Vec3 grad_dir;
        if (planar) {
            grad_dir = dir;
        } else {
            const Vec3 q = y0 - anchor;
            const Vec3 q_perp = q - q.dot(dir) * dir;
            if (q_perp.norm() < 1e-6) continue;  // on-axis: gradient undefined
            grad_dir = q_perp.normalized();
        }
        Vec6 analytic;
        analytic << -(y0.cross(grad_dir)), -grad_dir;

        for (int k = 0; k < 6; ++k) {
            Vec6 delta = Vec6::Zero();
            delta[k] = step;
            const double plus = residual(pose * twist_to_transform(Twist::from_vector(delta)));
            delta[k] = -step;
            const double minus = residual(pose * twist_to_transform(Twist::from_vector(delta)));
            const double fd = (plus - minus) / (2.0 * step);
            CHECK(analytic[k] == doctest::Approx(fd).epsilon(1e-4).scale(1.0 + std::abs(fd)));
        }
        ++checked;
    }
    CHECK(checked >= 90);
}

TEST_CASE("group alignment recovers the identity on exact correspondences") {
    const TemplateModel model = box_model();
    std::vector<Patch> observed;
    std::vector<std::pair<int, int>> corr;
    int slot = 0;
    for (std::size_t c = 0; c < model.canonical_patches.size(); ++c) {
        const Vec3 n = patch_direction(model.canonical_patches[c]);
        if (n.x() > 0.5 || n.y() > 0.5 || n.z() > 0.5) {
            observed.push_back(observe_patch(model.canonical_patches[c],
                                             RigidTransform::identity()));
            corr.push_back({slot++, static_cast<int>(c)});
        }
    }
    REQUIRE(observed.size() == 3);
    const RigidTransform pose = solve_group_alignment(observed, corr, model);
    CHECK(pose.is_approx(RigidTransform::identity(), 1e-9));
}

TEST_CASE("group alignment recovers random ground-truth poses") {
    Rng rng(66);
    const TemplateModel model = box_model();
    for (int trial = 0; trial < 20; ++trial) {
        const RigidTransform gt(rng.rotation(), Vec3(0.2, -0.1, 2.0) + 0.1 * rng.normal_vec3());
        std::vector<Patch> observed;
        std::vector<std::pair<int, int>> corr;
        int slot = 0;
        for (std::size_t c = 0; c < model.canonical_patches.size(); ++c) {
            const Vec3 n = patch_direction(model.canonical_patches[c]);
            if (n.x() > 0.5 || n.y() > 0.5 || n.z() > 0.5) {
                observed.push_back(observe_patch(model.canonical_patches[c], gt));
                corr.push_back({slot++, static_cast<int>(c)});
            }
        }
        const RigidTransform pose = solve_group_alignment(observed, corr, model);
        CHECK(rotation_geodesic_deg(pose, gt) * M_PI / 180.0 < 1e-6);
        CHECK((pose.translation() - gt.translation()).norm() < 1e-8);
    }
}

TEST_CASE("group alignment is equivariant") {
    Rng rng(67);
    const TemplateModel model = box_model();
    const RigidTransform gt(rng.rotation(), Vec3(0, 0, 2.0));
    std::vector<Patch> observed;
    std::vector<std::pair<int, int>> corr;
    int slot = 0;
    for (std::size_t c = 0; c < model.canonical_patches.size(); ++c) {
        const Vec3 n = patch_direction(model.canonical_patches[c]);
        if (n.x() > 0.5 || n.y() > 0.5 || n.z() > 0.5) {
            observed.push_back(observe_patch(model.canonical_patches[c], gt));
            corr.push_back({slot++, static_cast<int>(c)});
        }
    }
    const RigidTransform base = solve_group_alignment(observed, corr, model);

    const RigidTransform s = oracles::random_transform(rng, 0.2);
    std::vector<Patch> moved;
    for (const auto& p : observed) {
        moved.push_back(observe_patch(p, s));
    }
    const RigidTransform shifted = solve_group_alignment(moved, corr, model);
    CHECK(shifted.is_approx(s * base, 1e-8));
}

TEST_CASE("two parallel planes leave the solve singular") {
    const TemplateModel model = box_model();
    // Faces +z and -z are parallel; adding +z twice is degenerate anyway, so
    // use +z, -z and nothing else: 4 DoFs stay loose.
    std::vector<Patch> observed;
    std::vector<std::pair<int, int>> corr;
    int slot = 0;
    for (std::size_t c = 0; c < model.canonical_patches.size(); ++c) {
        const Vec3 n = patch_direction(model.canonical_patches[c]);
        if (std::abs(n.z()) > 0.5) {
            observed.push_back(observe_patch(model.canonical_patches[c],
                                             RigidTransform::identity()));
            corr.push_back({slot++, static_cast<int>(c)});
        }
    }
    REQUIRE(corr.size() == 2);
    CHECK_THROWS_AS(solve_group_alignment(observed, corr, model), SingularNormalEquations);

    // The least-norm variant settles the constrained directions instead.
    CHECK_NOTHROW(solve_group_alignment_least_norm(observed, corr, model));
}

TEST_CASE("hypothesize-and-verify finds the box corner pose") {
    Rng rng(68);
    const TemplateModel model = box_model();
    for (int trial = 0; trial < 5; ++trial) {
        RigidTransform gt(rng.rotation(), Vec3(0.05, -0.08, 2.1));
        auto observed = observed_box_corner(model, gt);
        while (observed.size() != 3) {  // grazing view: redraw
            gt = RigidTransform(rng.rotation(), Vec3(0.05, -0.08, 2.1));
            observed = observed_box_corner(model, gt);
        }
        const auto hyp = hypothesize_and_verify(trivial_group(), observed, model);
        REQUIRE(hyp.has_value());
        // Correct up to a declared box symmetry.
        double best = 1e9;
        std::vector<RigidTransform> set = {RigidTransform::identity()};
        for (const auto& s : model.symmetry.discrete_transforms) set.push_back(s);
        for (const auto& s : set) {
            best = std::min(best, rotation_geodesic_deg(hyp->pose * s, gt));
        }
        CHECK(best < 1e-4);
        CHECK(hyp->residual < 0.02 * model.diameter);
    }
}

TEST_CASE("hypothesize-and-verify rejects the wrong template") {
    Rng rng(69);
    const TemplateModel box = box_model();
    const TemplateModel wrong =
        make_primitive({PrimitiveKind::box, {1.0, 0.31, 0.17}});
    RigidTransform gt(rng.rotation(), Vec3(0, 0, 2.0));
    auto observed = observed_box_corner(box, gt);
    while (observed.size() != 3) {
        gt = RigidTransform(rng.rotation(), Vec3(0, 0, 2.0));
        observed = observed_box_corner(box, gt);
    }
    const auto hyp = hypothesize_and_verify(trivial_group(), observed, wrong);
    CHECK(!hyp.has_value());
}

TEST_CASE("refine_pose is a fixed point at gt") {
    Rng rng(70);
    const TemplateModel model = box_model();
    const RigidTransform gt(rng.rotation(), Vec3(0, 0, 2.0));
    OrientedCloud observed;
    for (const auto& p : model.surface_samples.points) {
        observed.points.push_back({gt.apply(p.position), gt.rotate(p.normal)});
    }
    const RigidTransform refined = refine_pose(gt, observed, model);
    CHECK(refined.is_approx(gt, 1e-9));
}

TEST_CASE("refine_pose pulls a perturbed pose back") {
    Rng rng(71);
    const TemplateModel model = box_model();
    int wins = 0;
    for (int trial = 0; trial < 10; ++trial) {
        const RigidTransform gt(rng.rotation(), Vec3(0, 0, 2.0));
        OrientedCloud observed;
        for (const auto& p : model.surface_samples.points) {
            observed.points.push_back({gt.apply(p.position), gt.rotate(p.normal)});
        }
        const RigidTransform start =
            gt * RigidTransform::from_axis_angle(rng.unit_vec3(), 3.0 * M_PI / 180.0,
                                                 0.01 * model.diameter * rng.unit_vec3());
        const RigidTransform refined = refine_pose(start, observed, model);
        if (rotation_geodesic_deg(refined, gt) < 0.1) ++wins;
    }
    CHECK(wins >= 9);
}

TEST_CASE("refine_pose never returns a worse pose") {
    Rng rng(72);
    const TemplateModel model = box_model();
    const RigidTransform gt(rng.rotation(), Vec3(0, 0, 2.0));
    OrientedCloud observed;
    for (const auto& p : model.surface_samples.points) {
        observed.points.push_back({gt.apply(p.position), gt.rotate(p.normal)});
    }
    // Far initialization: > 30 degrees off. The returned pose never scores
    // worse than the input under the refinement's own residual rule.
    const RefineParams params;
    const auto residual_rms = [&](const RigidTransform& pose) {
        std::vector<Vec3> sample_pos;
        for (const auto& p : model.surface_samples.points) sample_pos.push_back(p.position);
        const KdTree3 tree(sample_pos);
        const RigidTransform inv = pose.inverse();
        double sq = 0.0;
        int count = 0;
        for (const auto& o : observed.points) {
            const Vec3 y = inv.apply(o.position);
            const auto [idx, d_sq] = tree.nearest(y);
            if (std::sqrt(d_sq) > params.cutoff_frac * model.diameter) continue;
            const auto& s = model.surface_samples.points[static_cast<std::size_t>(idx)];
            sq += std::pow((y - s.position).dot(s.normal), 2);
            ++count;
        }
        return count > 0 ? std::sqrt(sq / count) : std::numeric_limits<double>::infinity();
    };

    const RigidTransform start = gt * RigidTransform::rot_x(40.0 * M_PI / 180.0);
    try {
        const RigidTransform refined = refine_pose(start, observed, model, params);
        CHECK(residual_rms(refined) <= residual_rms(start) + 1e-12);
    } catch (const NoConvergence&) {
        // Acceptable contract outcome.
    }
}

TEST_CASE("fusion basics") {
    Rng rng(73);
    PoseHypothesis a;
    a.pose = oracles::random_transform(rng, 0.5);
    const std::vector<PoseHypothesis> single = {a};
    const std::vector<double> w1 = {0.7};
    CHECK(fuse_group_poses(single, w1).is_approx(a.pose, 1e-12));

    PoseHypothesis b = a;
    const std::vector<PoseHypothesis> twice = {a, b};
    const std::vector<double> w2 = {0.3, 0.9};
    CHECK(fuse_group_poses(twice, w2).is_approx(a.pose, 1e-12));

    CHECK_THROWS_AS(fuse_group_poses({}, {}), EmptyHypothesisSet);
}

TEST_CASE("fusion matches the geodesic mean oracle") {
    PoseHypothesis a, b;
    a.pose = RigidTransform(RigidTransform::rot_z(10.0 * M_PI / 180.0).rotation(), Vec3(1, 0, 0));
    b.pose = RigidTransform(RigidTransform::rot_z(20.0 * M_PI / 180.0).rotation(), Vec3(0, 1, 0));
    const std::vector<PoseHypothesis> hyps = {a, b};
    const std::vector<double> weights = {1.0, 1.0};
    const RigidTransform fused = fuse_group_poses(hyps, weights);
    CHECK(rotation_geodesic_deg(fused, RigidTransform::rot_z(15.0 * M_PI / 180.0)) < 1e-6);
    CHECK((fused.translation() - Vec3(0.5, 0.5, 0)).norm() < 1e-12);

    // Degenerate weights: (1, 0) returns the first pose.
    const std::vector<double> degenerate = {1.0, 0.0};
    CHECK(fuse_group_poses(hyps, degenerate).is_approx(a.pose, 1e-12));
}
