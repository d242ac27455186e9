#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "slipstab/groups.hpp"
#include "slipstab/kdtree.hpp"
#include "slipstab/template_model.hpp"

namespace slipstab {

struct PoseHypothesis {
    RigidTransform pose;
    double residual = 0.0;  // verification rms
    StableGroup source_group;
    std::vector<std::pair<int, int>> correspondence;  // observed patch id -> canonical patch id
};

/// Dense-point pose discrepancy: sum_j ||T x_j - gt x_j|| over the template samples.
double group_pose_loss(const RigidTransform& pose, const RigidTransform& gt,
                       const TemplateModel& model);

/// Point-to-plane patch pose loss, summed over up to `subsample` member points.
double planar_patch_loss(const RigidTransform& pose, const PlanarPatch& patch,
                         const RigidTransform& gt, int subsample = 100);

/// Point-to-axis patch pose loss for cylindrical patches.
double cylindrical_patch_loss(const RigidTransform& pose, const CylindricalPatch& patch,
                              const RigidTransform& gt, int subsample = 100);

/// Combined objective for asymmetric objects: per-group dense losses plus all
/// patch losses, evaluated at the single pose.
double asym_objective(const RigidTransform& pose, const std::vector<StableGroup>& groups,
                      const std::vector<Patch>& patches, const RigidTransform& gt,
                      const TemplateModel& model);

struct SolveParams {
    int max_iterations = 30;
    double update_tol = 1e-10;
    int per_patch_points = 200;
};

/// Align the observed patches of a stable group to their corresponding
/// canonical patches: Gauss-Newton on the twist parameterization over squared
/// point-to-plane and point-to-axis residuals. Throws SingularNormalEquations
/// when the correspondences leave the pose under-determined, NoConvergence
/// when the iteration budget runs out.
RigidTransform solve_group_alignment(const std::vector<Patch>& observed,
                                     const std::vector<std::pair<int, int>>& correspondence,
                                     const TemplateModel& model, const SolveParams& params = {});

/// Same residuals, but rank-deficient directions are handled with a
/// least-norm update instead of an error, for under-constrained
/// correspondences (fewer than three patches). The unresolved freedoms are
/// left at the initial guess.
RigidTransform solve_group_alignment_least_norm(
    const std::vector<Patch>& observed, const std::vector<std::pair<int, int>>& correspondence,
    const TemplateModel& model, const SolveParams& params = {},
    const RigidTransform* init = nullptr);

struct HypothesisParams {
    double radius_tol = 0.10;      // relative cylinder radius gate
    double angle_tol_deg = 10.0;   // pairwise direction-angle gate
    double distance_tol = 0.10;    // pairwise center-distance gate, relative
    double distance_floor = 0.08;  // absolute floor, fraction of diameter
    double accept_rms = 0.02;      // acceptance threshold, fraction of diameter
    double truncation = 0.10;      // correspondence cutoff, fraction of diameter
    double min_retained = 0.45;    // minimum fraction of front-facing samples kept
    double min_explained = 0.92;   // minimum fraction of the cloud near the posed model
    SolveParams solve;
};

/// Descriptor gates used for correspondence pruning; exposed for the
/// under-constrained fallback enumeration.
bool patch_kind_compatible(const Patch& observed, const Patch& canonical,
                           const TemplateModel& model, const HypothesisParams& params = {});
bool patch_pair_compatible(const Patch& obs_a, const Patch& obs_b, const Patch& can_a,
                           const Patch& can_b, const TemplateModel& model,
                           const HypothesisParams& params = {});

/// RMS nearest-neighbor distance from the posed, camera-facing template
/// samples to the observed cloud; samples beyond the truncation radius are
/// dropped as unobserved. Returns +inf when too few samples remain.
double verification_residual(const RigidTransform& pose, const KdTree3& observed_tree,
                             const TemplateModel& model, const HypothesisParams& params = {});

/// Enumerate descriptor-compatible canonical assignments for the group's
/// patches, solve each, and return the best verified hypothesis if any passes
/// the acceptance threshold.
std::optional<PoseHypothesis> hypothesize_and_verify(const StableGroup& group,
                                                     const std::vector<Patch>& observed,
                                                     const TemplateModel& model,
                                                     const HypothesisParams& params = {});

struct RefineParams {
    int max_iterations = 20;
    double cutoff_frac = 0.05;  // correspondence cutoff, fraction of diameter
    double update_tol = 1e-10;
    int max_cloud_points = 1500;
    // Weak point-to-point blend: settles directions the tangent planes leave
    // free (in-plane slides, axial slides) at the sample-density level.
    double point_weight = 0.05;
};

/// Nearest-neighbor point-to-plane refinement of a verified pose against the
/// template samples. The returned pose never scores worse than the input;
/// throws NoConvergence if no usable correspondences exist.
RigidTransform refine_pose(const RigidTransform& init, const OrientedCloud& observed,
                           const TemplateModel& model, const RefineParams& params = {});

/// Stability-weighted fusion: arithmetic-mean translation, eigenvector-mean
/// rotation. Throws EmptyHypothesisSet.
RigidTransform fuse_group_poses(std::span<const PoseHypothesis> hypotheses,
                                std::span<const double> weights);

}  // namespace slipstab
