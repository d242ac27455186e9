#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "slipstab/metrics.hpp"
#include "slipstab/template_model.hpp"

namespace slipstab {

enum class PrimitiveKind { box, cylinder, box_cluster, revolution };

/// Recipe for a procedural template; serializable, so scenes can rebuild
/// their templates deterministically.
///   box:        {a, b, c}
///   cylinder:   {radius, height}
///   box_cluster:{a1,b1,c1, a2,b2,c2, ox,oy,oz}
///   revolution: {r_bottom, r_top, height}
struct TemplateDescriptor {
    PrimitiveKind kind = PrimitiveKind::box;
    std::vector<double> params;

    std::string name() const;
};

/// Build a canonical-pose template: mesh, area-weighted surface samples with
/// outward normals, analytic patches, symmetry spec, diameter. Dimensions are
/// scaled uniformly so the model fits a unit box, centered at the origin.
/// Throws InvalidDimensions.
TemplateModel make_primitive(const TemplateDescriptor& desc, int samples = 500,
                             std::uint64_t seed = 7);

struct OcclusionRect {
    int x = 0, y = 0, w = 0, h = 0;
};

struct SceneObject {
    TemplateDescriptor descriptor;
    RigidTransform pose;  // canonical -> camera
};

struct CameraSpec {
    Intrinsics intrinsics{400.0, 400.0, 240.0, 180.0};
    int width = 480;
    int height = 360;
};

struct SceneSpec {
    std::vector<SceneObject> objects;
    CameraSpec camera;
    std::vector<OcclusionRect> occlusions;
    double noise_sigma = 0.0;
    double quantization = 1e-4;
    std::uint64_t seed = 0;
};

struct GroundTruth {
    RigidTransform pose;
    double visibility = 0.0;
    std::vector<std::uint32_t> mask;  // row-major pixel indices, ascending
};

/// Z-buffered multi-object depth render with per-object masks. Occlusion
/// rectangles zero the depth and shrink the masks; Gaussian depth noise and
/// grid quantization are applied last. Bit-reproducible for a fixed spec.
std::pair<DepthImage, std::vector<GroundTruth>> render_scene(
    const SceneSpec& spec, const std::vector<TemplateModel>& templates);

/// Back-project masked pixels into a camera-frame cloud with k-NN PCA normals
/// oriented toward the camera. Throws EmptyMask.
OrientedCloud unproject(const DepthImage& depth, const std::vector<std::uint32_t>& mask,
                        const Intrinsics& intrinsics, int k = 12);

struct ScenarioParams {
    std::vector<TemplateDescriptor> pool;  // cycled by scene index
    CameraSpec camera;
    double z_min = 1.9;
    double z_max = 2.5;
    double xy_jitter = 0.22;
    double noise_sigma = 0.0;
    int min_occlusions = 0;
    int max_occlusions = 0;
    double occ_min_frac = 0.05;  // of the object's screen bounding box
    double occ_max_frac = 0.20;
};

/// One-object random scene: random rotation, bounded translation, optional
/// occlusion rectangles placed over the object's silhouette.
SceneSpec random_scene_spec(const ScenarioParams& params, std::uint64_t seed);

}  // namespace slipstab
