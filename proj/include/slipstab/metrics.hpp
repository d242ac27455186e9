#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "slipstab/template_model.hpp"

namespace slipstab {

struct Intrinsics {
    double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;

    bool operator==(const Intrinsics&) const = default;
};

/// Per-pixel depth in scene units; 0 marks an empty pixel. Pixel (u, v) maps
/// to the camera ray ((u - cx)/fx, (v - cy)/fy, 1).
struct DepthImage {
    int width = 0;
    int height = 0;
    std::vector<float> values;  // row-major
    Intrinsics intrinsics;

    float at(int u, int v) const { return values[static_cast<std::size_t>(v) * width + u]; }
    float& at(int u, int v) { return values[static_cast<std::size_t>(v) * width + u]; }
};

struct MetricThresholds {
    double adi_frac = 0.1;     // ADI recall at 0.1 d
    double vsd_thresh = 0.3;   // VSD recall at 0.3
    double vsd_tau = 0.020;    // 20 mm in 1 m units
    double vsd_delta = 0.015;  // 15 mm
    double rot_deg = 10.0;     // 10deg10cm rotation gate
    double trans = 0.10;       // 10 cm in 1 m units
    double iou = 0.25;
};

struct MetricReport {
    std::string object_id;
    double adi = 0.0;
    double add = 0.0;
    double vsd = 0.0;
    double r_err_deg = 0.0;
    double t_err = 0.0;
    bool adi_pass = false;
    bool vsd_pass = false;
    bool deg10cm10 = false;
    bool iou25 = false;
};

/// Mean closest-point distance between the two posed sample sets.
double adi(const RigidTransform& pose, const RigidTransform& gt, const TemplateModel& model);

/// Mean corresponding-point distance.
double add(const RigidTransform& pose, const RigidTransform& gt, const TemplateModel& model);

/// Z-buffered perspective rasterization of the posed mesh. Empty pixels are 0.
DepthImage render_depth(const TriangleMesh& mesh, const RigidTransform& pose,
                        const Intrinsics& intrinsics, int width, int height);

/// Rasterize into shared depth/winner buffers (nearer surface wins, first
/// writer wins at equal depth). Pass an empty winner vector to skip id
/// tracking.
void rasterize_mesh(const TriangleMesh& mesh, const RigidTransform& pose, const Intrinsics& intr,
                    int width, int height, std::vector<float>& depth, std::vector<int>& winner,
                    int object_id);

/// Visible surface discrepancy in [0, 1]: over pixels visible in either render
/// (rendered depth within delta of the observed depth), the fraction where the
/// two renders disagree by at least tau or only one of them covers the pixel.
double vsd(const RigidTransform& pose, const RigidTransform& gt, const TemplateModel& model,
           const DepthImage& observed, double tau = 0.020, double delta = 0.015);

/// Axis-aligned-in-canonical-frame bounding box IoU of the two posed boxes,
/// by seeded Monte-Carlo volume sampling.
double bbox_iou(const RigidTransform& pose, const RigidTransform& gt, const TemplateModel& model,
                int samples = 200000, std::uint64_t seed = 12345);

/// Full per-object report; rotation/translation errors are taken modulo the
/// model's declared symmetries. Pass observed == nullptr to skip VSD.
MetricReport classify(const RigidTransform& pose, const RigidTransform& gt,
                      const TemplateModel& model, const DepthImage* observed,
                      const MetricThresholds& thresholds = {});

enum class RecallMetric { adi, vsd, deg10cm10, iou25 };

/// Fraction of reports passing the chosen criterion. Throws EmptySet.
double recall(const std::vector<MetricReport>& reports, RecallMetric which);

/// Raster file IO: 16-byte header (magic "DPTH", u32 width, u32 height,
/// u32 reserved) followed by row-major little-endian float32 depths.
void save_depth(const std::string& path, const DepthImage& image);
DepthImage load_depth(const std::string& path);

}  // namespace slipstab
