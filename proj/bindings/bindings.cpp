#include <pybind11/eigen.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "slipstab/pipeline.hpp"
#include "slipstab/symmetry.hpp"

namespace py = pybind11;
using namespace slipstab;

namespace {

OrientedCloud cloud_from_arrays(const Eigen::MatrixXd& positions, const Eigen::MatrixXd& normals) {
    if (positions.cols() != 3 || normals.cols() != 3 || positions.rows() != normals.rows()) {
        throw std::invalid_argument("expected matching Nx3 position and normal arrays");
    }
    OrientedCloud cloud;
    cloud.points.reserve(static_cast<std::size_t>(positions.rows()));
    for (Eigen::Index i = 0; i < positions.rows(); ++i) {
        cloud.points.push_back({positions.row(i).transpose(), normals.row(i).transpose()});
    }
    return cloud;
}

Eigen::MatrixXd cloud_positions(const OrientedCloud& cloud) {
    Eigen::MatrixXd out(cloud.size(), 3);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = cloud.points[i].position.transpose();
    }
    return out;
}

Eigen::MatrixXd cloud_normals(const OrientedCloud& cloud) {
    Eigen::MatrixXd out(cloud.size(), 3);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = cloud.points[i].normal.transpose();
    }
    return out;
}

Vec4 quat_wxyz(const RigidTransform& t) {
    return Vec4(t.rotation().w(), t.rotation().x(), t.rotation().y(), t.rotation().z());
}

}  // namespace

PYBIND11_MODULE(_slipstab, m) {
    m.doc() = "Depth-only 6D pose estimation via geometric stability analysis";

    py::register_exception<Error>(m, "SlipstabError");

    py::class_<RigidTransform>(m, "RigidTransform")
        .def(py::init<>())
        .def(py::init([](const Vec4& q_wxyz, const Vec3& t) {
                 return RigidTransform(Quat(q_wxyz[0], q_wxyz[1], q_wxyz[2], q_wxyz[3]), t);
             }),
             py::arg("q_wxyz"), py::arg("t"))
        .def_static("identity", &RigidTransform::identity)
        .def_static("from_axis_angle", &RigidTransform::from_axis_angle, py::arg("axis"),
                    py::arg("angle_rad"), py::arg("translation") = Vec3::Zero())
        .def_static("from_translation", &RigidTransform::from_translation)
        .def_static("rot_x", &RigidTransform::rot_x)
        .def_static("rot_y", &RigidTransform::rot_y)
        .def_static("rot_z", &RigidTransform::rot_z)
        .def_property_readonly("q", &quat_wxyz)
        .def_property_readonly("t", &RigidTransform::translation)
        .def("apply", &RigidTransform::apply)
        .def("rotate", &RigidTransform::rotate)
        .def("inverse", &RigidTransform::inverse)
        .def(py::self * py::self)
        .def("__repr__", [](const RigidTransform& t) {
            const Vec4 q = quat_wxyz(t);
            char buf[160];
            std::snprintf(buf, sizeof(buf),
                          "RigidTransform(q=[%g, %g, %g, %g], t=[%g, %g, %g])", q[0], q[1], q[2],
                          q[3], t.translation().x(), t.translation().y(), t.translation().z());
            return std::string(buf);
        });

    py::class_<OrientedCloud>(m, "OrientedCloud")
        .def(py::init(&cloud_from_arrays), py::arg("positions"), py::arg("normals"))
        .def_property_readonly("positions", &cloud_positions)
        .def_property_readonly("normals", &cloud_normals)
        .def("__len__", &OrientedCloud::size);

    py::class_<Twist>(m, "Twist")
        .def(py::init([](const Vec3& r, const Vec3& t) { return Twist{r, t}; }), py::arg("r"),
             py::arg("t"))
        .def_readwrite("r", &Twist::r)
        .def_readwrite("t", &Twist::t);

    m.def("compose", &compose);
    m.def("rotation_geodesic_deg", &rotation_geodesic_deg);
    m.def("twist_to_transform", &twist_to_transform);
    m.def(
        "weighted_rotation_mean",
        [](const std::vector<std::pair<Vec4, double>>& entries) {
            std::vector<std::pair<Quat, double>> converted;
            converted.reserve(entries.size());
            for (const auto& [q, w] : entries) {
                converted.emplace_back(Quat(q[0], q[1], q[2], q[3]), w);
            }
            const Quat mean = weighted_rotation_mean(converted);
            return Vec4(mean.w(), mean.x(), mean.y(), mean.z());
        },
        py::arg("entries"), "Weighted quaternion mean; entries are (wxyz, weight) pairs");

    py::class_<StabilityReport>(m, "StabilityReport")
        .def_property_readonly("eigenvalues",
                               [](const StabilityReport& r) {
                                   return Vec6(Eigen::Map<const Vec6>(r.eigenvalues.data()));
                               })
        .def_readonly("measure", &StabilityReport::measure)
        .def_readonly("stable", &StabilityReport::stable)
        .def_property_readonly("eigenvectors",
                               [](const StabilityReport& r) { return Mat6(r.eigenvectors); });

    m.def("point_to_plane_energy", &point_to_plane_energy);
    m.def(
        "accumulate_covariance",
        [](const OrientedCloud& cloud, bool normalize) {
            return Mat6(accumulate_covariance(cloud, normalize).matrix);
        },
        py::arg("cloud"), py::arg("normalize") = true);
    m.def("analyze_stability", &analyze_stability, py::arg("cloud"), py::arg("normalize") = true);
    m.def("stability_measure", &stability_measure);
    m.def(
        "slippable_motions",
        [](const StabilityReport& report, double ratio_cut) {
            std::vector<std::pair<Vec3, Vec3>> out;
            for (const auto& tw : slippable_motions(report, ratio_cut)) {
                out.emplace_back(tw.r, tw.t);
            }
            return out;
        },
        py::arg("report"), py::arg("ratio_cut") = 1e-4);

    py::class_<PlanarPatch>(m, "PlanarPatch")
        .def_readonly("center", &PlanarPatch::center)
        .def_readonly("normal", &PlanarPatch::normal)
        .def_readonly("area_estimate", &PlanarPatch::area_estimate)
        .def_readonly("rms", &PlanarPatch::rms)
        .def_readonly("indices", &PlanarPatch::indices)
        .def_property_readonly("size", [](const PlanarPatch& p) { return p.points.size(); });

    py::class_<CylindricalPatch>(m, "CylindricalPatch")
        .def_readonly("axis_point", &CylindricalPatch::axis_point)
        .def_readonly("axis_dir", &CylindricalPatch::axis_dir)
        .def_readonly("radius", &CylindricalPatch::radius)
        .def_readonly("arc_extent", &CylindricalPatch::arc_extent)
        .def_readonly("rms", &CylindricalPatch::rms)
        .def_readonly("indices", &CylindricalPatch::indices)
        .def_property_readonly("size", [](const CylindricalPatch& p) { return p.points.size(); });

    py::class_<SegmentationParams>(m, "SegmentationParams")
        .def(py::init<>())
        .def_readwrite("min_points", &SegmentationParams::min_points)
        .def_readwrite("knn", &SegmentationParams::knn)
        .def_readwrite("normal_angle_tol_deg", &SegmentationParams::normal_angle_tol_deg)
        .def_readwrite("dist_tol", &SegmentationParams::dist_tol);

    m.def("segment_patches", &segment_patches, py::arg("cloud"),
          py::arg("params") = SegmentationParams{});
    m.def(
        "fit_plane",
        [](const std::vector<Vec3>& points) {
            const PlaneFit fit = fit_plane(points);
            return py::make_tuple(fit.normal, fit.offset, fit.rms);
        },
        py::arg("points"), "Returns (normal, offset, rms)");
    m.def(
        "fit_cylinder",
        [](const Eigen::MatrixXd& positions, const Eigen::MatrixXd& normals) {
            const OrientedCloud cloud = cloud_from_arrays(positions, normals);
            const CylinderFit fit = fit_cylinder(cloud.points);
            return py::make_tuple(fit.axis_point, fit.axis_dir, fit.radius, fit.rms);
        },
        py::arg("positions"), py::arg("normals"),
        "Returns (axis_point, axis_dir, radius, rms)");
    m.def("point_to_axis_distance", &point_to_axis_distance);

    py::class_<StableGroup>(m, "StableGroup")
        .def_readonly("patch_ids", &StableGroup::patch_ids)
        .def_readonly("report", &StableGroup::report)
        .def_readonly("union_cloud_size", &StableGroup::union_cloud_size);

    py::class_<GroupParams>(m, "GroupParams")
        .def(py::init<>())
        .def_readwrite("threshold", &GroupParams::threshold)
        .def_readwrite("max_groups", &GroupParams::max_groups)
        .def_readwrite("per_patch_subsample", &GroupParams::per_patch_subsample)
        .def_readwrite("normalize", &GroupParams::normalize);

    m.def("enumerate_stable_groups", &enumerate_stable_groups, py::arg("patches"),
          py::arg("params") = GroupParams{});
    m.def("group_weight", &group_weight);

    py::enum_<PrimitiveKind>(m, "PrimitiveKind")
        .value("box", PrimitiveKind::box)
        .value("cylinder", PrimitiveKind::cylinder)
        .value("box_cluster", PrimitiveKind::box_cluster)
        .value("revolution", PrimitiveKind::revolution);

    py::class_<TemplateDescriptor>(m, "TemplateDescriptor")
        .def(py::init([](PrimitiveKind kind, const std::vector<double>& params) {
                 return TemplateDescriptor{kind, params};
             }),
             py::arg("kind"), py::arg("params"))
        .def_readonly("kind", &TemplateDescriptor::kind)
        .def_readonly("params", &TemplateDescriptor::params)
        .def("name", &TemplateDescriptor::name);

    py::class_<SymmetryAxis>(m, "SymmetryAxis")
        .def(py::init([](const Vec3& c, const Vec3& a) { return SymmetryAxis{c, a}; }),
             py::arg("center"), py::arg("direction"))
        .def_readonly("center", &SymmetryAxis::center)
        .def_readonly("direction", &SymmetryAxis::direction);

    py::class_<TemplateModel>(m, "TemplateModel")
        .def_readonly("id", &TemplateModel::id)
        .def_readonly("diameter", &TemplateModel::diameter)
        .def_readonly("canonical_patches", &TemplateModel::canonical_patches)
        .def_property_readonly("samples",
                               [](const TemplateModel& t) {
                                   return cloud_positions(t.surface_samples);
                               })
        .def_property_readonly("symmetry_count", [](const TemplateModel& t) {
            return t.symmetry.discrete_transforms.size();
        });

    m.def("make_primitive", &make_primitive, py::arg("descriptor"), py::arg("samples") = 500,
          py::arg("seed") = 7);

    py::class_<Intrinsics>(m, "Intrinsics")
        .def(py::init([](double fx, double fy, double cx, double cy) {
                 return Intrinsics{fx, fy, cx, cy};
             }),
             py::arg("fx"), py::arg("fy"), py::arg("cx"), py::arg("cy"))
        .def_readwrite("fx", &Intrinsics::fx)
        .def_readwrite("fy", &Intrinsics::fy)
        .def_readwrite("cx", &Intrinsics::cx)
        .def_readwrite("cy", &Intrinsics::cy);

    py::class_<DepthImage>(m, "DepthImage")
        .def_readonly("width", &DepthImage::width)
        .def_readonly("height", &DepthImage::height)
        .def_readonly("intrinsics", &DepthImage::intrinsics)
        .def_property_readonly("values", [](const DepthImage& d) {
            Eigen::MatrixXf out(d.height, d.width);
            for (int v = 0; v < d.height; ++v) {
                for (int u = 0; u < d.width; ++u) out(v, u) = d.at(u, v);
            }
            return out;
        });

    m.def(
        "render_template_depth",
        [](const TemplateModel& model, const RigidTransform& pose, const Intrinsics& intr,
           int width, int height) {
            return render_depth(model.mesh, pose, intr, width, height);
        },
        py::arg("model"), py::arg("pose"), py::arg("intrinsics"), py::arg("width"),
        py::arg("height"));
    m.def("adi", &adi);
    m.def("add", &add);
    m.def("vsd", &vsd, py::arg("pose"), py::arg("gt"), py::arg("model"), py::arg("observed"),
          py::arg("tau") = 0.020, py::arg("delta") = 0.015);
    m.def("bbox_iou", &bbox_iou, py::arg("pose"), py::arg("gt"), py::arg("model"),
          py::arg("samples") = 200000, py::arg("seed") = 12345);

    m.def(
        "unproject",
        [](const DepthImage& depth, const std::vector<std::uint32_t>& mask, const Intrinsics& intr,
           int k) { return unproject(depth, mask, intr, k); },
        py::arg("depth"), py::arg("mask"), py::arg("intrinsics"), py::arg("k") = 12);

    py::class_<SolveParams>(m, "SolveParams").def(py::init<>());
    py::class_<RefineParams>(m, "RefineParams").def(py::init<>());

    m.def("group_pose_loss", &group_pose_loss);
    m.def("planar_patch_loss", &planar_patch_loss, py::arg("pose"), py::arg("patch"),
          py::arg("gt"), py::arg("subsample") = 100);
    m.def("cylindrical_patch_loss", &cylindrical_patch_loss, py::arg("pose"), py::arg("patch"),
          py::arg("gt"), py::arg("subsample") = 100);
    m.def("solve_group_alignment", &solve_group_alignment, py::arg("observed"),
          py::arg("correspondence"), py::arg("model"), py::arg("params") = SolveParams{});
    m.def("refine_pose", &refine_pose, py::arg("init"), py::arg("observed"), py::arg("model"),
          py::arg("params") = RefineParams{});

    m.def(
        "optimal_assignment",
        [](const Eigen::MatrixXd& cost) {
            const AssignmentResult r = optimal_assignment(cost);
            return py::make_tuple(r.permutation, r.total_cost);
        },
        py::arg("cost"), "Hungarian matching; returns (permutation, total_cost)");
    m.def("benefit_matrix", &benefit_matrix);
    m.def("symmetry_aware_error",
          [](const RigidTransform& pose, const RigidTransform& gt, const TemplateModel& model) {
              return symmetry_aware_error(pose, gt, model.symmetry, model);
          });
    m.def("rotation_axis_loss", &rotation_axis_loss);
    m.def("estimate_rotation_axis", &estimate_rotation_axis);
    m.def("pose_from_axis", &pose_from_axis, py::arg("center"), py::arg("axis_dir"),
          py::arg("gamma") = M_PI / 2);

    py::class_<SceneSpec>(m, "SceneSpec").def_readonly("seed", &SceneSpec::seed);
    py::class_<GroundTruth>(m, "GroundTruth")
        .def_readonly("pose", &GroundTruth::pose)
        .def_readonly("visibility", &GroundTruth::visibility)
        .def_readonly("mask", &GroundTruth::mask);

    py::class_<ScenarioParams>(m, "ScenarioParams")
        .def(py::init<>())
        .def_readwrite("pool", &ScenarioParams::pool)
        .def_readwrite("noise_sigma", &ScenarioParams::noise_sigma)
        .def_readwrite("min_occlusions", &ScenarioParams::min_occlusions)
        .def_readwrite("max_occlusions", &ScenarioParams::max_occlusions);

    m.def("random_scene_spec", &random_scene_spec, py::arg("params"), py::arg("seed"));
    m.def(
        "render_scene",
        [](const SceneSpec& spec) {
            std::vector<TemplateModel> templates;
            for (const auto& obj : spec.objects) templates.push_back(make_primitive(obj.descriptor));
            return render_scene(spec, templates);
        },
        py::arg("spec"), "Render a scene spec; returns (DepthImage, [GroundTruth])");

    py::class_<PipelineConfig>(m, "PipelineConfig")
        .def(py::init<>())
        .def_readwrite("stability_threshold", &PipelineConfig::stability_threshold)
        .def_readwrite("normalize", &PipelineConfig::normalize)
        .def_readwrite("segmentation", &PipelineConfig::segmentation)
        .def_readwrite("max_groups", &PipelineConfig::max_groups);

    py::class_<EstimateResult>(m, "EstimateResult")
        .def_readonly("pose", &EstimateResult::pose)
        .def_readonly("residual", &EstimateResult::residual)
        .def_readonly("groups_used", &EstimateResult::groups_used)
        .def_readonly("fallback", &EstimateResult::fallback);

    m.def(
        "estimate_object_pose",
        [](const OrientedCloud& cloud, const TemplateModel& model, const PipelineConfig& config) {
            const auto patches = segment_patches(cloud, config.segmentation);
            const auto groups = enumerate_stable_groups(patches, config.group_params());
            return estimate_object_pose(cloud, patches, groups, model, config);
        },
        py::arg("cloud"), py::arg("model"), py::arg("config") = PipelineConfig{},
        "Segment, group, and estimate the object pose from an oriented cloud");

    py::class_<MetricReport>(m, "MetricReport")
        .def_readonly("adi", &MetricReport::adi)
        .def_readonly("add", &MetricReport::add)
        .def_readonly("vsd", &MetricReport::vsd)
        .def_readonly("r_err_deg", &MetricReport::r_err_deg)
        .def_readonly("t_err", &MetricReport::t_err)
        .def_readonly("adi_pass", &MetricReport::adi_pass)
        .def_readonly("vsd_pass", &MetricReport::vsd_pass)
        .def_readonly("deg10cm10", &MetricReport::deg10cm10)
        .def_readonly("iou25", &MetricReport::iou25);

    m.def(
        "classify",
        [](const RigidTransform& pose, const RigidTransform& gt, const TemplateModel& model,
           const DepthImage* observed) { return classify(pose, gt, model, observed); },
        py::arg("pose"), py::arg("gt"), py::arg("model"), py::arg("observed") = nullptr);
}
