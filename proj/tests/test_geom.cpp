#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "slipstab/geom.hpp"

using namespace slipstab;

namespace {
const double kDeg = M_PI / 180.0;
}

TEST_CASE("compose identity and inverse") {
    Rng rng(11);
    const RigidTransform t = oracles::random_transform(rng);
    CHECK(compose(t, RigidTransform::identity()).is_approx(t, 1e-12));
    CHECK(compose(RigidTransform::identity(), t).is_approx(t, 1e-12));
    CHECK(compose(t, t.inverse()).is_approx(RigidTransform::identity(), 1e-9));
}

TEST_CASE("rotation composition adds angles on a fixed axis") {
    const RigidTransform r90 = RigidTransform::rot_z(90.0 * kDeg);
    const RigidTransform r180 = compose(r90, r90);
    CHECK(rotation_geodesic_deg(r180, RigidTransform::rot_z(180.0 * kDeg)) < 1e-9);
}

TEST_CASE("compose is associative on random triples") {
    Rng rng(12);
    for (int i = 0; i < 50; ++i) {
        const RigidTransform a = oracles::random_transform(rng);
        const RigidTransform b = oracles::random_transform(rng);
        const RigidTransform c = oracles::random_transform(rng);
        CHECK(compose(compose(a, b), c).is_approx(compose(a, compose(b, c)), 1e-9));
    }
}

TEST_CASE("apply basics") {
    CHECK((apply(RigidTransform::identity(), Vec3(1, 2, 3)) - Vec3(1, 2, 3)).norm() == 0.0);
    CHECK((apply(RigidTransform::rot_z(90.0 * kDeg), Vec3(1, 0, 0)) - Vec3(0, 1, 0)).norm() <
          1e-9);
    CHECK((apply(RigidTransform::from_translation(Vec3(0, 0, 5)), Vec3(1, 1, 1)) - Vec3(1, 1, 6))
              .norm() == 0.0);
}

TEST_CASE("apply distributes over composition") {
    Rng rng(13);
    for (int i = 0; i < 50; ++i) {
        const RigidTransform a = oracles::random_transform(rng);
        const RigidTransform b = oracles::random_transform(rng);
        const Vec3 p = rng.normal_vec3();
        CHECK((apply(compose(a, b), p) - apply(a, apply(b, p))).norm() < 1e-9);
    }
}

TEST_CASE("rotation geodesic") {
    CHECK(rotation_geodesic_deg(RigidTransform::identity(), RigidTransform::identity()) ==
          doctest::Approx(0.0).epsilon(1e-12));
    CHECK(rotation_geodesic_deg(RigidTransform::identity(), RigidTransform::rot_z(10.0 * kDeg)) ==
          doctest::Approx(10.0).epsilon(1e-9));
    CHECK(rotation_geodesic_deg(RigidTransform::rot_x(30.0 * kDeg),
                                RigidTransform::rot_x(-30.0 * kDeg)) ==
          doctest::Approx(60.0).epsilon(1e-9));
}

TEST_CASE("rotation geodesic is a metric on random samples") {
    Rng rng(14);
    for (int i = 0; i < 30; ++i) {
        const RigidTransform a = oracles::random_transform(rng);
        const RigidTransform b = oracles::random_transform(rng);
        const RigidTransform c = oracles::random_transform(rng);
        const double ab = rotation_geodesic_deg(a, b);
        const double ba = rotation_geodesic_deg(b, a);
        CHECK(ab == doctest::Approx(ba).epsilon(1e-12));
        CHECK(ab >= 0.0);
        CHECK(rotation_geodesic_deg(a, a) < 1e-9);
        CHECK(ab <= rotation_geodesic_deg(a, c) + rotation_geodesic_deg(c, b) + 1e-9);
    }
}

TEST_CASE("weighted rotation mean: single element and sign invariance") {
    Rng rng(15);
    const Quat q = rng.rotation();
    std::vector<std::pair<Quat, double>> entries = {{q, 1.0}};
    CHECK(rotation_geodesic_rad(weighted_rotation_mean(entries), q) < 1e-12);

    const Quat neg(-q.w(), -q.x(), -q.y(), -q.z());
    entries = {{q, 1.0}, {neg, 1.0}};
    CHECK(rotation_geodesic_rad(weighted_rotation_mean(entries), q) < 1e-12);
}

TEST_CASE("weighted rotation mean matches 1-D geodesic oracle") {
    const Quat a = RigidTransform::rot_z(10.0 * kDeg).rotation();
    const Quat b = RigidTransform::rot_z(20.0 * kDeg).rotation();
    // Oracle: minimize summed squared geodesic distance over the z angle.
    const double best_angle = oracles::minimize_scalar(
        [&](double theta) {
            const Quat q = RigidTransform::rot_z(theta).rotation();
            const double da = rotation_geodesic_rad(q, a);
            const double db = rotation_geodesic_rad(q, b);
            return da * da + db * db;
        },
        5.0 * kDeg, 25.0 * kDeg);
    CHECK(best_angle == doctest::Approx(15.0 * kDeg).epsilon(1e-6));

    const std::vector<std::pair<Quat, double>> entries = {{a, 1.0}, {b, 1.0}};
    const Quat mean = weighted_rotation_mean(entries);
    CHECK(rotation_geodesic_rad(mean, RigidTransform::rot_z(best_angle).rotation()) < 1e-6);
}

TEST_CASE("weighted rotation mean invariances") {
    Rng rng(16);
    std::vector<std::pair<Quat, double>> entries;
    for (int i = 0; i < 5; ++i) entries.emplace_back(rng.rotation(), rng.uniform(0.1, 2.0));
    const Quat base = weighted_rotation_mean(entries);

    auto flipped = entries;
    flipped[2].first.coeffs() = -flipped[2].first.coeffs();
    CHECK(rotation_geodesic_rad(weighted_rotation_mean(flipped), base) < 1e-12);

    auto scaled = entries;
    for (auto& [q, w] : scaled) w *= 7.25;
    CHECK(rotation_geodesic_rad(weighted_rotation_mean(scaled), base) < 1e-12);
}

TEST_CASE("weighted rotation mean rejects all-zero weights") {
    const std::vector<std::pair<Quat, double>> entries = {{Quat::Identity(), 0.0}};
    CHECK_THROWS_AS(weighted_rotation_mean(entries), AllZeroWeights);
}

TEST_CASE("twist exponential") {
    CHECK(twist_to_transform(Twist{}).is_approx(RigidTransform::identity(), 1e-15));
    CHECK(twist_to_transform(Twist{Vec3(0, 0, M_PI / 2), Vec3::Zero()})
              .is_approx(RigidTransform::rot_z(M_PI / 2), 1e-12));
}

TEST_CASE("twist linearization agrees with the exact map to second order") {
    // The first-order rotation displacement r x v + t matches the exact
    // exponential to O(|r|^2).
    Rng rng(17);
    const Vec3 dir = rng.unit_vec3();
    const Vec3 p = rng.normal_vec3();
    double prev_err = -1.0;
    for (const double mag : {1e-2, 1e-3}) {
        const Twist x{mag * dir, Vec3(0.01 * mag, 0, 0)};
        const Vec3 exact = twist_to_transform(x).apply(p);
        const Vec3 linear = p + x.r.cross(p) + x.t;
        const double err = (exact - linear).norm();
        CHECK(err < 10.0 * mag * mag * (1.0 + p.norm()));
        if (prev_err > 0.0) CHECK(prev_err / err > 50.0);  // ~quadratic decay
        prev_err = err;
    }
}

TEST_CASE("quaternion canonicalization keeps w nonnegative") {
    Rng rng(18);
    for (int i = 0; i < 100; ++i) {
        const RigidTransform t = oracles::random_transform(rng);
        CHECK(t.rotation().w() >= 0.0);
        CHECK(std::abs(t.rotation().norm() - 1.0) < 1e-12);
    }
}
