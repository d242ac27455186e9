#pragma once

#include <optional>
#include <string>
#include <vector>

#include "slipstab/geom.hpp"
#include "slipstab/patches.hpp"

namespace slipstab {

enum class SymmetryKind { none, discrete, continuous };

struct SymmetryAxis {
    Vec3 center = Vec3::Zero();
    Vec3 direction = Vec3::UnitZ();
};

/// Object self-symmetries. discrete_transforms lists the proper symmetries
/// excluding identity; a continuous spec carries the rotation axis and may
/// also carry discrete transforms (e.g. a cylinder's end-over-end flip).
struct SymmetrySpec {
    SymmetryKind kind = SymmetryKind::none;
    std::vector<RigidTransform> discrete_transforms;
    std::optional<SymmetryAxis> axis;
};

/// Canonical-pose object template: sampled surface, analytic patches,
/// symmetry description, mesh for depth rendering.
struct TemplateModel {
    std::string id;
    OrientedCloud surface_samples;  // canonical frame; drives losses and metrics
    OrientedCloud dense_samples;    // denser resampling for ICP refinement
    std::vector<Patch> canonical_patches;
    double diameter = 0.0;
    SymmetrySpec symmetry;
    TriangleMesh mesh;
    Vec3 bbox_min = Vec3::Zero();
    Vec3 bbox_max = Vec3::Zero();
};

}  // namespace slipstab
