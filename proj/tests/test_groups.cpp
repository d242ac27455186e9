#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "oracles.hpp"
#include "slipstab/groups.hpp"

using namespace slipstab;

namespace {

PlanarPatch make_plane_patch(const Vec3& origin, const Vec3& u_dir, const Vec3& v_dir,
                             const Vec3& normal, int per_side = 12) {
    PlanarPatch patch;
    for (int i = 0; i < per_side; ++i) {
        for (int j = 0; j < per_side; ++j) {
            const double a = (i + 0.5) / per_side;
            const double b = (j + 0.5) / per_side;
            patch.points.points.push_back({origin + a * u_dir + b * v_dir, normal});
        }
    }
    patch.center = origin + 0.5 * u_dir + 0.5 * v_dir;
    patch.normal = normal;
    patch.area_estimate = u_dir.cross(v_dir).norm();
    return patch;
}

// Three mutually orthogonal unit squares around a box corner.
std::vector<Patch> orthogonal_triplet() {
    return {
        make_plane_patch(Vec3(0, 0, 0), Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()),
        make_plane_patch(Vec3(0, 0, 0), Vec3::UnitY(), Vec3::UnitZ(), Vec3::UnitX()),
        make_plane_patch(Vec3(0, 0, 0), Vec3::UnitZ(), Vec3::UnitX(), Vec3::UnitY()),
    };
}

// Three disjoint pieces of the single plane z = 0.
std::vector<Patch> coplanar_triplet() {
    return {
        make_plane_patch(Vec3(0, 0, 0), Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()),
        make_plane_patch(Vec3(2, 0, 0), Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()),
        make_plane_patch(Vec3(0, 2, 0), Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()),
    };
}

}  // namespace

TEST_CASE("C(5,3) candidate triplets are scored") {
    // Five patches, all orthogonal-ish so several groups pass: count candidates
    // through the emitted + rejected split by using a zero threshold.
    auto patches = orthogonal_triplet();
    patches.push_back(make_plane_patch(Vec3(2, 0, 0), Vec3::UnitY(), Vec3::UnitZ(), Vec3::UnitX()));
    patches.push_back(make_plane_patch(Vec3(0, 2, 0), Vec3::UnitZ(), Vec3::UnitX(), Vec3::UnitY()));
    GroupParams params;
    params.threshold = -1.0;  // keep everything
    params.max_groups = 1000;
    const auto groups = enumerate_stable_groups(patches, params);
    CHECK(groups.size() == 10);
}

TEST_CASE("three orthogonal planes form one stable group") {
    const auto groups = enumerate_stable_groups(orthogonal_triplet(), GroupParams{});
    REQUIRE(groups.size() == 1);
    CHECK(groups[0].report.stable);
    CHECK(groups[0].report.measure > 0.5);
    CHECK(groups[0].patch_ids == std::array<int, 3>{0, 1, 2});
}

TEST_CASE("coplanar patches never form a stable group") {
    const auto groups = enumerate_stable_groups(coplanar_triplet(), GroupParams{});
    CHECK(groups.empty());
    // Eigen-oracle: the union stays plane-slippable (3 near-zero eigenvalues).
    OrientedCloud cloud;
    for (const auto& p : coplanar_triplet()) {
        for (const auto& pt : patch_points(p).points) cloud.points.push_back(pt);
    }
    const auto report = analyze_stability(cloud, true);
    CHECK(report.eigenvalues[0] < 1e-9 * report.eigenvalues[5]);
}

TEST_CASE("fewer than three patches yields no groups") {
    std::vector<Patch> two = {orthogonal_triplet()[0], orthogonal_triplet()[1]};
    CHECK(enumerate_stable_groups(two, GroupParams{}).empty());
    CHECK(enumerate_stable_groups({}, GroupParams{}).empty());
}

TEST_CASE("group weight is the stability measure") {
    const auto groups = enumerate_stable_groups(orthogonal_triplet(), GroupParams{});
    REQUIRE(!groups.empty());
    CHECK(group_weight(groups[0]) == groups[0].report.measure);
}

TEST_CASE("output sorted by measure descending and stable under permutation") {
    auto patches = orthogonal_triplet();
    // A skewed fourth patch creates multiple stable triplet mixes.
    patches.push_back(make_plane_patch(Vec3(1.5, 0, 0), Vec3(0, 1, 0),
                                       Vec3(-0.6, 0, 0.8), Vec3(0.8, 0, 0.6)));
    GroupParams params;
    params.threshold = 0.1;
    const auto base = enumerate_stable_groups(patches, params);
    REQUIRE(base.size() >= 2);
    for (std::size_t i = 1; i < base.size(); ++i) {
        CHECK(base[i - 1].report.measure >= base[i].report.measure);
    }

    // Permute the input; groups must carry the same measures.
    std::vector<Patch> permuted = {patches[2], patches[0], patches[3], patches[1]};
    const auto moved = enumerate_stable_groups(permuted, params);
    REQUIRE(moved.size() == base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
        CHECK(base[i].report.measure == doctest::Approx(moved[i].report.measure).epsilon(1e-12));
    }
}

TEST_CASE("every emitted group passes the threshold and has sorted ids") {
    auto patches = orthogonal_triplet();
    patches.push_back(make_plane_patch(Vec3(1.5, 0, 0), Vec3(0, 1, 0),
                                       Vec3(-0.6, 0, 0.8), Vec3(0.8, 0, 0.6)));
    GroupParams params;
    params.threshold = 0.3;
    for (const auto& g : enumerate_stable_groups(patches, params)) {
        CHECK(g.report.measure > params.threshold);
        CHECK(g.patch_ids[0] < g.patch_ids[1]);
        CHECK(g.patch_ids[1] < g.patch_ids[2]);
    }
}

TEST_CASE("max_groups truncates after sorting") {
    auto patches = orthogonal_triplet();
    patches.push_back(make_plane_patch(Vec3(2, 0, 0), Vec3::UnitY(), Vec3::UnitZ(), Vec3::UnitX()));
    patches.push_back(make_plane_patch(Vec3(0, 2, 0), Vec3::UnitZ(), Vec3::UnitX(), Vec3::UnitY()));
    GroupParams loose;
    loose.threshold = 0.1;
    const auto all = enumerate_stable_groups(patches, loose);
    REQUIRE(all.size() > 1);
    GroupParams capped = loose;
    capped.max_groups = 1;
    const auto top = enumerate_stable_groups(patches, capped);
    REQUIRE(top.size() == 1);
    CHECK(top[0].report.measure == doctest::Approx(all[0].report.measure));
}

TEST_CASE("subsampling caps the union size") {
    auto patches = orthogonal_triplet();  // 144 points each
    GroupParams params;
    params.per_patch_subsample = 30;
    const auto groups = enumerate_stable_groups(patches, params);
    REQUIRE(!groups.empty());
    CHECK(groups[0].union_cloud_size <= 90);
}

TEST_CASE("a fourth orthogonal patch does not weaken the best containing triplet") {
    // Monotonicity spot check on a constructed scene.
    auto patches = orthogonal_triplet();
    GroupParams params;
    const double base_best = enumerate_stable_groups(patches, params)[0].report.measure;
    patches.push_back(
        make_plane_patch(Vec3(0, 0, 1.5), Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()));
    const auto groups = enumerate_stable_groups(patches, params);
    double best_with_new = 0.0;
    for (const auto& g : groups) {
        if (std::find(g.patch_ids.begin(), g.patch_ids.end(), 3) != g.patch_ids.end()) {
            best_with_new = std::max(best_with_new, g.report.measure);
        }
    }
    CHECK(best_with_new >= 0.0);
    CHECK(enumerate_stable_groups(patches, params)[0].report.measure >= base_best - 1e-12);
}
