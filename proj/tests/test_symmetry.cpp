#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "slipstab/posesolve.hpp"
#include "slipstab/symmetry.hpp"
#include "slipstab/synth.hpp"

using namespace slipstab;

namespace {

TemplateModel box_model() {
    return make_primitive({PrimitiveKind::box, {1.0, 0.72, 0.45}});
}

TemplateModel cylinder_model() {
    return make_primitive({PrimitiveKind::cylinder, {0.3, 0.85}});
}

TemplateModel cone_model() {
    return make_primitive({PrimitiveKind::revolution, {0.32, 0.12, 0.8}});
}

OrientedCloud transformed_samples(const TemplateModel& model, const RigidTransform& pose) {
    OrientedCloud out;
    out.frame = FrameTag::camera;
    for (const auto& p : model.surface_samples.points) {
        out.points.push_back({pose.apply(p.position), pose.rotate(p.normal)});
    }
    return out;
}

}  // namespace

TEST_CASE("benefit matrix basics") {
    Rng rng(41);
    const TemplateModel model = box_model();
    std::vector<RigidTransform> poses;
    for (int i = 0; i < 3; ++i) poses.push_back(oracles::random_transform(rng, 0.2));

    const Eigen::MatrixXd b = benefit_matrix(poses, poses, model);
    for (int i = 0; i < 3; ++i) CHECK(b(i, i) == doctest::Approx(0.0));

    // Entries match the brute-force per-point sums.
    for (int m = 0; m < 3; ++m) {
        for (int k = 0; k < 3; ++k) {
            double expected = 0.0;
            for (const auto& p : model.surface_samples.points) {
                expected += (poses[static_cast<std::size_t>(m)].apply(p.position) -
                             poses[static_cast<std::size_t>(k)].apply(p.position))
                                .norm();
            }
            CHECK(b(m, k) == doctest::Approx(expected).epsilon(1e-12));
        }
    }

    // Swapping the two argument lists transposes the matrix.
    std::vector<RigidTransform> others;
    for (int i = 0; i < 3; ++i) others.push_back(oracles::random_transform(rng, 0.2));
    const Eigen::MatrixXd ab = benefit_matrix(poses, others, model);
    const Eigen::MatrixXd ba = benefit_matrix(others, poses, model);
    CHECK((ab - ba.transpose()).cwiseAbs().maxCoeff() < 1e-9);

    auto short_list = others;
    short_list.pop_back();
    CHECK_THROWS_AS(benefit_matrix(poses, short_list, model), LengthMismatch);
}

TEST_CASE("hungarian on 2x2 edge cases") {
    Eigen::MatrixXd diag_zero(2, 2);
    diag_zero << 0, 5, 5, 0;
    auto r = optimal_assignment(diag_zero);
    CHECK(r.permutation == std::vector<int>{0, 1});
    CHECK(r.total_cost == doctest::Approx(0.0));

    Eigen::MatrixXd anti(2, 2);
    anti << 5, 0, 0, 5;
    r = optimal_assignment(anti);
    CHECK(r.permutation == std::vector<int>{1, 0});
    CHECK(r.total_cost == doctest::Approx(0.0));
}

TEST_CASE("hungarian equals exhaustive search on random matrices") {
    Rng rng(42);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 2 + static_cast<int>(rng.next_u64() % 5);  // up to 6x6
        Eigen::MatrixXd cost(n, n);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) cost(i, j) = rng.uniform(-3.0, 10.0);
        }
        const auto result = optimal_assignment(cost);
        CHECK(result.total_cost == doctest::Approx(oracles::brute_assignment_cost(cost)).epsilon(1e-12));
        // Valid permutation.
        std::vector<char> seen(static_cast<std::size_t>(n), 0);
        for (int c : result.permutation) {
            CHECK(!seen[static_cast<std::size_t>(c)]);
            seen[static_cast<std::size_t>(c)] = 1;
        }
    }
}

TEST_CASE("hungarian rejects non-finite entries") {
    Eigen::MatrixXd bad(2, 2);
    bad << 0, 1, std::numeric_limits<double>::infinity(), 0;
    CHECK_THROWS_AS(optimal_assignment(bad), NonFiniteEntry);
}

TEST_CASE("symmetry-aware error vanishes on declared symmetries") {
    Rng rng(43);
    const TemplateModel model = box_model();
    const RigidTransform gt = oracles::random_transform(rng, 0.3);
    CHECK(symmetry_aware_error(gt, gt, model.symmetry, model) < 1e-9 * model.diameter);
    for (const auto& sym : model.symmetry.discrete_transforms) {
        CHECK(symmetry_aware_error(gt * sym, gt, model.symmetry, model) < 1e-9 * model.diameter);
    }
}

TEST_CASE("asymmetric spec reduces to the plain dense loss") {
    Rng rng(44);
    const TemplateModel model = make_primitive(
        {PrimitiveKind::box_cluster, {0.95, 0.6, 0.35, 0.42, 0.3, 0.22, 0.33, 0.1, 0.285}});
    CHECK(model.symmetry.kind == SymmetryKind::none);
    const RigidTransform gt = oracles::random_transform(rng, 0.3);
    const RigidTransform off = gt * RigidTransform::rot_z(0.2);
    CHECK(symmetry_aware_error(off, gt, model.symmetry, model) ==
          doctest::Approx(group_pose_loss(off, gt, model)));
    CHECK(symmetry_aware_error(off, gt, model.symmetry, model) > 0.0);
}

TEST_CASE("continuous symmetry absorbs arbitrary axis spins") {
    Rng rng(45);
    const TemplateModel model = cylinder_model();
    const RigidTransform gt = oracles::random_transform(rng, 0.3);
    for (const double theta : {0.123, 1.9, 3.7, 5.5}) {
        const RigidTransform spun = gt * rotation_about_axis(*model.symmetry.axis, theta);
        CHECK(symmetry_aware_error(spun, gt, model.symmetry, model) < 1e-7 * model.diameter);
    }
    // The flip, too.
    const RigidTransform flipped = gt * model.symmetry.discrete_transforms[0];
    CHECK(symmetry_aware_error(flipped, gt, model.symmetry, model) < 1e-9 * model.diameter);
}

TEST_CASE("group closure makes the error invariant over cosets") {
    Rng rng(46);
    const TemplateModel model = box_model();
    const RigidTransform gt = oracles::random_transform(rng, 0.3);
    const RigidTransform pose = gt * RigidTransform::rot_x(0.07);
    const double base = symmetry_aware_error(pose, gt, model.symmetry, model);
    for (const auto& sym : model.symmetry.discrete_transforms) {
        CHECK(symmetry_aware_error(pose * sym, gt, model.symmetry, model) ==
              doctest::Approx(base).epsilon(1e-9));
    }
}

TEST_CASE("dsym objective") {
    Rng rng(47);
    const TemplateModel model = box_model();
    const RigidTransform gt = oracles::random_transform(rng, 0.3);
    const std::vector<StableGroup> no_groups;
    const std::vector<Patch> no_patches;

    CHECK(dsym_objective(gt, model.symmetry, gt, model, no_groups, no_patches) < 1e-9);

    // Degenerate spec of identity duplicates: (M+1) copies of the plain loss.
    SymmetrySpec duplicates;
    duplicates.kind = SymmetryKind::discrete;
    duplicates.discrete_transforms = {RigidTransform::identity(), RigidTransform::identity()};
    const RigidTransform off = gt * RigidTransform::rot_z(0.1);
    std::vector<StableGroup> one_group(1);
    const double plain = asym_objective(off, one_group, no_patches, gt, model);
    CHECK(dsym_objective(off, duplicates, gt, model, one_group, no_patches) ==
          doctest::Approx(3.0 * plain).epsilon(1e-9));

    // Random case: matches brute-force assignment + summation.
    const RigidTransform pred = gt * RigidTransform::rot_x(0.05);
    const auto set = [&] {
        std::vector<RigidTransform> s = {RigidTransform::identity()};
        for (const auto& t : model.symmetry.discrete_transforms) s.push_back(t);
        return s;
    }();
    Eigen::MatrixXd cost(set.size(), set.size());
    for (std::size_t m = 0; m < set.size(); ++m) {
        for (std::size_t k = 0; k < set.size(); ++k) {
            cost(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k)) =
                group_pose_loss(pred * set[m], gt * set[k], model);
        }
    }
    // Brute force over permutations of the benefit matrix, then sum the
    // matched losses.
    std::vector<int> perm(set.size());
    std::iota(perm.begin(), perm.end(), 0);
    double best_cost = std::numeric_limits<double>::infinity();
    std::vector<int> best_perm;
    do {
        double total = 0.0;
        for (std::size_t m = 0; m < set.size(); ++m) {
            total += cost(static_cast<Eigen::Index>(m), perm[m]);
        }
        if (total < best_cost) {
            best_cost = total;
            best_perm = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    double expected = 0.0;
    for (std::size_t m = 0; m < set.size(); ++m) {
        expected += asym_objective(pred * set[m], one_group, no_patches,
                                   gt * set[static_cast<std::size_t>(best_perm[m])], model);
    }
    CHECK(dsym_objective(pred, model.symmetry, gt, model, one_group, no_patches) ==
          doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("rotation axis loss") {
    const TemplateModel model = cylinder_model();
    const SymmetryAxis gt_axis{Vec3(0.1, -0.2, 1.8), Vec3(0.3, 0.1, 0.94).normalized()};
    CHECK(rotation_axis_loss(gt_axis, gt_axis, model) == doctest::Approx(0.0));

    // Symmetric in its arguments.
    const SymmetryAxis other{Vec3(0.15, -0.1, 1.7), Vec3(0.2, 0.2, 0.95).normalized()};
    CHECK(rotation_axis_loss(gt_axis, other, model) ==
          doctest::Approx(rotation_axis_loss(other, gt_axis, model)).epsilon(1e-12));

    // Flipped direction sweeps the rotations the other way; nonzero for an
    // asymmetric sample set, and it matches the direct evaluation.
    const SymmetryAxis flipped{gt_axis.center, -gt_axis.direction};
    const double loss = rotation_axis_loss(gt_axis, flipped, model);
    double expected = 0.0;
    for (int k = 1; k <= 16; ++k) {
        const double theta = k * M_PI / 8.0;
        const RigidTransform tp = rotation_about_axis(gt_axis, theta);
        const RigidTransform tg = rotation_about_axis(flipped, theta);
        for (const auto& p : model.surface_samples.points) {
            expected += (tp.apply(p.position) - tg.apply(p.position)).norm();
        }
    }
    CHECK(loss == doctest::Approx(expected / 16.0).epsilon(1e-12));
    CHECK(loss > 0.0);
}

TEST_CASE("rotation axis loss: pi-term offset displaces points by 2 delta") {
    // Axis offset delta perpendicular to the direction: the theta = pi term
    // displaces every point by exactly 2*delta.
    const TemplateModel model = cylinder_model();
    const Vec3 dir = Vec3::UnitZ();
    const Vec3 delta(0.03, -0.04, 0.0);
    const SymmetryAxis a{Vec3::Zero(), dir};
    const SymmetryAxis b{delta, dir};
    const RigidTransform ta = rotation_about_axis(a, M_PI);
    const RigidTransform tb = rotation_about_axis(b, M_PI);
    for (const auto& p : model.surface_samples.points) {
        CHECK((ta.apply(p.position) - tb.apply(p.position)).norm() ==
              doctest::Approx(2.0 * delta.norm()).epsilon(1e-9));
    }
}

TEST_CASE("rotation axis estimation on a posed cylinder") {
    Rng rng(48);
    const TemplateModel model = cylinder_model();
    for (int trial = 0; trial < 5; ++trial) {
        const RigidTransform pose(rng.rotation(), Vec3(0.1, -0.1, 2.0));
        const OrientedCloud cloud = transformed_samples(model, pose);
        const SymmetryAxis est = estimate_rotation_axis(cloud, model);
        const Vec3 expected_dir = pose.rotate(model.symmetry.axis->direction);
        const double angle =
            std::acos(std::min(1.0, std::abs(est.direction.dot(expected_dir))));
        CHECK(angle < 0.5 * M_PI / 180.0);
        // The estimated center lies on the true axis.
        CHECK(point_to_axis_distance(est.center, pose.apply(model.symmetry.axis->center),
                                     expected_dir) < 0.005);
    }
}

TEST_CASE("rotation axis estimation on a posed cone") {
    Rng rng(49);
    const TemplateModel model = cone_model();
    const RigidTransform pose(rng.rotation(), Vec3(-0.05, 0.12, 2.2));
    const OrientedCloud cloud = transformed_samples(model, pose);
    const SymmetryAxis est = estimate_rotation_axis(cloud, model);
    const Vec3 expected_dir = pose.rotate(model.symmetry.axis->direction);
    CHECK(std::abs(est.direction.dot(expected_dir)) > std::cos(0.5 * M_PI / 180.0));
    CHECK(point_to_axis_distance(est.center, pose.apply(model.symmetry.axis->center),
                                 expected_dir) < 0.005);
}

TEST_CASE("rotation axis estimation rejects spheres") {
    OrientedCloud sphere;
    const double golden = M_PI * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < 600; ++i) {
        const double z = 1.0 - 2.0 * (i + 0.5) / 600;
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        const Vec3 p(0.4 * r * std::cos(golden * i), 0.4 * r * std::sin(golden * i), 0.4 * z);
        sphere.points.push_back({p + Vec3(0, 0, 2.0), p.normalized()});
    }
    const TemplateModel model = cylinder_model();
    CHECK_THROWS_AS(estimate_rotation_axis(sphere, model), DegenerateObservation);
}

TEST_CASE("pose_from_axis closed form") {
    const RigidTransform t = pose_from_axis(Vec3(1, 2, 3), Vec3::UnitZ(), M_PI / 2);
    CHECK(t.rotation().w() == doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));
    CHECK(t.rotation().x() == doctest::Approx(0.0));
    CHECK(t.rotation().y() == doctest::Approx(0.0));
    CHECK(t.rotation().z() == doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));
    CHECK((t.translation() - Vec3(1, 2, 3)).norm() == 0.0);
    CHECK(rotation_geodesic_deg(t, RigidTransform::rot_z(M_PI / 2)) < 1e-9);

    const RigidTransform id = pose_from_axis(Vec3(0.5, 0, 0), Vec3::UnitX(), 0.0);
    CHECK(rotation_geodesic_deg(id, RigidTransform::identity()) < 1e-12);
    CHECK((id.translation() - Vec3(0.5, 0, 0)).norm() == 0.0);
}

TEST_CASE("pose_from_axis rotation has angle gamma about axis a") {
    Rng rng(50);
    for (int i = 0; i < 20; ++i) {
        const Vec3 a = rng.unit_vec3();
        const double gamma = rng.uniform(0.05, M_PI - 0.05);
        const RigidTransform t = pose_from_axis(rng.normal_vec3(), a, gamma);
        const Eigen::AngleAxisd aa(t.rotation());
        CHECK(aa.angle() == doctest::Approx(gamma).epsilon(1e-12));
        CHECK(std::abs(std::abs(aa.axis().dot(a)) - 1.0) < 1e-12);
    }
}

TEST_CASE("axis alignment pose conjugates the canonical axis onto the estimate") {
    Rng rng(51);
    const TemplateModel model = cylinder_model();
    const SymmetryAxis canonical = *model.symmetry.axis;
    for (int i = 0; i < 10; ++i) {
        const SymmetryAxis observed{rng.normal_vec3(), rng.unit_vec3()};
        const RigidTransform t = axis_alignment_pose(canonical, observed, M_PI / 2);
        CHECK((t.rotate(canonical.direction) - observed.direction).norm() < 1e-9);
        CHECK((t.apply(canonical.center) - observed.center).norm() < 1e-9);
    }
}

TEST_CASE("symmetry spec validation") {
    const TemplateModel model = box_model();
    CHECK_NOTHROW(validate_symmetry_spec(model.symmetry, model));

    // A non-closed set is rejected.
    SymmetrySpec broken;
    broken.kind = SymmetryKind::discrete;
    broken.discrete_transforms = {RigidTransform::rot_z(M_PI / 2)};
    CHECK_THROWS_AS(validate_symmetry_spec(broken, model), Error);

    // A transform that is not a self-map is rejected.
    SymmetrySpec wrong;
    wrong.kind = SymmetryKind::discrete;
    wrong.discrete_transforms = {RigidTransform::rot_z(0.5)};
    CHECK_THROWS_AS(validate_symmetry_spec(wrong, model), Error);

    SymmetrySpec missing_axis;
    missing_axis.kind = SymmetryKind::continuous;
    CHECK_THROWS_AS(validate_symmetry_spec(missing_axis, model), Error);
}

TEST_CASE("symmetry-aware pose error modulo the axis") {
    Rng rng(52);
    const TemplateModel model = cylinder_model();
    const RigidTransform gt = oracles::random_transform(rng, 0.3);
    const RigidTransform spun = gt * rotation_about_axis(*model.symmetry.axis, 1.23);
    const auto [r_err, t_err] = symmetry_aware_pose_error(spun, gt, model.symmetry);
    CHECK(r_err < 1e-9);
    CHECK(t_err < 1e-9);

    const RigidTransform tilted = spun * RigidTransform::rot_x(2.0 * M_PI / 180.0);
    const auto [r_err2, t_err2] = symmetry_aware_pose_error(tilted, gt, model.symmetry);
    CHECK(r_err2 == doctest::Approx(2.0).epsilon(0.02));
}
