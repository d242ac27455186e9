#pragma once

#include <Eigen/Core>

#include <utility>
#include <vector>

#include "slipstab/template_model.hpp"

namespace slipstab {

struct AssignmentResult {
    std::vector<int> permutation;  // permutation[m] = matched column of row m
    double total_cost = 0.0;
};

/// Pairwise pose discrepancy matrix: entry (m, k) sums ||T_m x_j - T_k x_j||
/// over the template surface samples. Throws LengthMismatch.
Eigen::MatrixXd benefit_matrix(const std::vector<RigidTransform>& pred_poses,
                               const std::vector<RigidTransform>& gt_poses,
                               const TemplateModel& model);

/// Hungarian algorithm; minimizes the summed cost of the matching.
/// Throws NonFiniteEntry.
AssignmentResult optimal_assignment(const Eigen::MatrixXd& cost);

/// Rotation by theta about the axis line (center, direction).
RigidTransform rotation_about_axis(const SymmetryAxis& axis, double theta);

/// Minimum dense-point pose discrepancy over the symmetry set {I, T1^S, ...};
/// continuous specs additionally sweep sampled angles about the axis.
double symmetry_aware_error(const RigidTransform& pose, const RigidTransform& gt,
                            const SymmetrySpec& spec, const TemplateModel& model,
                            int theta_samples = 16);

/// Combined pose objective accumulated over all M+1 symmetry-replaced poses,
/// each paired to its ground-truth counterpart by optimal assignment.
double dsym_objective(const RigidTransform& pose, const SymmetrySpec& spec,
                      const RigidTransform& gt, const TemplateModel& model,
                      const std::vector<struct StableGroup>& groups,
                      const std::vector<Patch>& patches);

/// Mean over theta in {k*pi/8, k=1..16} of the dense-point discrepancy between
/// rotations about the predicted and ground-truth axes.
double rotation_axis_loss(const SymmetryAxis& pred, const SymmetryAxis& gt,
                          const TemplateModel& model);

/// Recover the rotation axis of a surface of revolution from a single-view
/// cloud: seed from the rotational null twist of the slippage covariance, then
/// minimize the per-height-bin variance of the point-to-axis distance.
/// Throws DegenerateObservation when the axis is not identifiable (sphere-like
/// or non-revolute observations).
SymmetryAxis estimate_rotation_axis(const OrientedCloud& observed, const TemplateModel& model);

/// Literal axis pose: rotation = (cos g/2, sin g/2 * a), translation = c.
RigidTransform pose_from_axis(const Vec3& center, const Vec3& axis_dir, double gamma = M_PI / 2);

/// Full pose mapping the template's canonical axis onto the observed axis,
/// with a free spin of gamma about the observed axis.
RigidTransform axis_alignment_pose(const SymmetryAxis& canonical, const SymmetryAxis& observed,
                                   double gamma = M_PI / 2);

/// Rejects symmetry sets that are not closed or do not map the template onto
/// itself within 1e-3 * diameter. Throws Error on violation.
void validate_symmetry_spec(const SymmetrySpec& spec, const TemplateModel& model);

/// Rotation angle (degrees) between the poses modulo the declared symmetries;
/// continuous specs minimize over the axis angle in closed form. Also reports
/// the translation gap at the minimizing symmetry element.
std::pair<double, double> symmetry_aware_pose_error(const RigidTransform& pose,
                                                    const RigidTransform& gt,
                                                    const SymmetrySpec& spec);

}  // namespace slipstab
