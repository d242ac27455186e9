#pragma once

#include <json.hpp>

#include <string>
#include <vector>

#include "slipstab/groups.hpp"
#include "slipstab/metrics.hpp"
#include "slipstab/synth.hpp"

namespace slipstab {

using Json = nlohmann::json;

Json to_json(const RigidTransform& t);
RigidTransform transform_from_json(const Json& j);

Json to_json(const StabilityReport& report, double ratio_cut = 1e-4);

Json to_json(const Patch& patch);
Patch patch_from_json(const Json& j, const OrientedCloud& source);

Json to_json(const SymmetrySpec& spec);
SymmetrySpec symmetry_from_json(const Json& j);

Json to_json(const TemplateDescriptor& desc);
TemplateDescriptor descriptor_from_json(const Json& j);

Json to_json(const SceneSpec& spec);
SceneSpec scene_spec_from_json(const Json& j);

Json to_json(const StableGroup& group);
StableGroup group_from_json(const Json& j);

/// Scene bundle directory: spec.json, gt.json, depth.dpth, masks.rle and one
/// ASCII PLY cloud per object.
void write_scene_bundle(const std::string& dir, const SceneSpec& spec, const DepthImage& depth,
                        const std::vector<GroundTruth>& gts);

struct SceneBundle {
    SceneSpec spec;
    DepthImage depth;
    std::vector<GroundTruth> gts;
};

SceneBundle read_scene_bundle(const std::string& dir);

void write_masks_rle(const std::string& path, int width, int height,
                     const std::vector<GroundTruth>& gts);
std::vector<std::vector<std::uint32_t>> read_masks_rle(const std::string& path, int& width,
                                                       int& height);

void write_cloud_ply(const std::string& path, const OrientedCloud& cloud);
OrientedCloud read_cloud_ply(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace slipstab
