#include "slipstab/groups.hpp"

#include <algorithm>

namespace slipstab {

namespace {

void append_subsampled(const OrientedCloud& src, int cap, OrientedCloud& dst) {
    const std::size_t n = src.size();
    const std::size_t step = n > static_cast<std::size_t>(cap) ? (n + cap - 1) / cap : 1;
    for (std::size_t i = 0; i < n; i += step) dst.points.push_back(src.points[i]);
}

}  // namespace

std::vector<StableGroup> enumerate_stable_groups(const std::vector<Patch>& patches,
                                                 const GroupParams& params) {
    std::vector<StableGroup> groups;
    const int n = static_cast<int>(patches.size());
    if (n < 3) return groups;

    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            for (int k = j + 1; k < n; ++k) {
                OrientedCloud cloud;
                cloud.frame = patch_points(patches[static_cast<std::size_t>(i)]).frame;
                append_subsampled(patch_points(patches[static_cast<std::size_t>(i)]),
                                  params.per_patch_subsample, cloud);
                append_subsampled(patch_points(patches[static_cast<std::size_t>(j)]),
                                  params.per_patch_subsample, cloud);
                append_subsampled(patch_points(patches[static_cast<std::size_t>(k)]),
                                  params.per_patch_subsample, cloud);
                const StabilityReport report = analyze_stability(cloud, params.normalize);
                if (report.measure > params.threshold) {
                    StableGroup g;
                    g.patch_ids = {i, j, k};
                    g.report = report;
                    g.union_cloud_size = static_cast<int>(cloud.size());
                    groups.push_back(std::move(g));
                }
            }
        }
    }

    std::stable_sort(groups.begin(), groups.end(), [](const StableGroup& a, const StableGroup& b) {
        if (a.report.measure != b.report.measure) return a.report.measure > b.report.measure;
        return a.patch_ids < b.patch_ids;
    });
    if (static_cast<int>(groups.size()) > params.max_groups) {
        groups.resize(static_cast<std::size_t>(params.max_groups));
    }
    return groups;
}

}  // namespace slipstab
