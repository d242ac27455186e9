#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "slipstab/patches.hpp"
#include "slipstab/stability.hpp"

namespace slipstab {

struct StableGroup {
    std::array<int, 3> patch_ids{};  // distinct, ascending
    StabilityReport report;
    int union_cloud_size = 0;
};

struct GroupParams {
    double threshold = 0.5;
    int max_groups = 32;
    int per_patch_subsample = 200;  // caps the union at 3x this
    bool normalize = true;
};

/// Score every patch triplet by the stability of its member-point union
/// (each patch stride-subsampled), keep those whose measure passes the
/// threshold, sorted by descending measure and truncated to max_groups.
/// Returns an empty list for fewer than three patches.
std::vector<StableGroup> enumerate_stable_groups(const std::vector<Patch>& patches,
                                                 const GroupParams& params = {});

inline double group_weight(const StableGroup& g) { return g.report.measure; }

}  // namespace slipstab
