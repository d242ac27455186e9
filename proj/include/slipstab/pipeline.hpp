#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "slipstab/io.hpp"
#include "slipstab/posesolve.hpp"

namespace slipstab {

struct PipelineConfig {
    double stability_threshold = 0.5;
    bool normalize = true;
    SegmentationParams segmentation;
    int max_groups = 32;
    int group_subsample = 200;  // per patch, caps the union at 3x
    SolveParams solver;
    HypothesisParams hypothesis;
    RefineParams refine;
    MetricThresholds metrics;
    std::uint64_t seed = 0;

    GroupParams group_params() const {
        GroupParams g;
        g.threshold = stability_threshold;
        g.max_groups = max_groups;
        g.per_patch_subsample = group_subsample;
        g.normalize = normalize;
        return g;
    }
};

Json to_json(const PipelineConfig& config);
PipelineConfig config_from_json(const Json& j);

struct EstimateResult {
    RigidTransform pose;
    double residual = 0.0;  // verification rms, scene units
    int groups_used = 0;
    bool fallback = false;
};

/// Full per-object estimation: group hypotheses -> stability-weighted fusion ->
/// refinement, with the continuous-symmetry axis route for revolute templates
/// and an under-constrained patch-pair/single-patch ladder as fallback.
/// When the observed depth image and object mask are given, candidates are
/// additionally screened against the observed silhouette and the pose is
/// polished along its low-stiffness directions with a rendered-depth cost.
EstimateResult estimate_object_pose(const OrientedCloud& cloud, const std::vector<Patch>& patches,
                                    const std::vector<StableGroup>& groups,
                                    const TemplateModel& model, const PipelineConfig& config,
                                    const DepthImage* observed_depth = nullptr,
                                    const std::vector<std::uint32_t>* mask = nullptr);

struct ObjectOutcome {
    std::string scene_id;
    int object_index = 0;
    EstimateResult estimate;
    MetricReport report;
};

/// Run segmentation -> grouping -> estimation -> metrics for every object of a
/// bundle scene.
std::vector<ObjectOutcome> process_scene(const std::string& scene_id, const SceneBundle& bundle,
                                         const PipelineConfig& config);

struct SelftestRow {
    std::string shape;
    int slippable = 0;
    int expected_slippable = 0;
    bool stable = false;
    bool expected_stable = false;
    double measure = 0.0;

    bool ok() const { return slippable == expected_slippable && stable == expected_stable; }
};

/// Canonical-shape stability battery: plane, sphere, cylinder, three
/// orthogonal planes.
std::vector<SelftestRow> stability_selftest(const PipelineConfig& config);

/// Sampled canonical clouds used by the battery (exposed for tests).
OrientedCloud sampled_plane(int per_side = 40);
OrientedCloud sampled_sphere(int count = 1500);
OrientedCloud sampled_cylinder(int per_ring = 48, int rings = 30);
OrientedCloud sampled_orthogonal_planes(int per_side = 20);

}  // namespace slipstab
