#pragma once

#include <cmath>
#include <cstdint>

#include "slipstab/geom.hpp"

namespace slipstab {

/// splitmix64-based generator; byte-reproducible across platforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1) with 53 bits.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Inclusive integer range.
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
    }

    /// Standard normal via Box-Muller.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double u2 = uniform01();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        cached_ = radius * std::sin(2.0 * M_PI * u2);
        has_cached_ = true;
        return radius * std::cos(2.0 * M_PI * u2);
    }

    Vec3 normal_vec3() { return Vec3(normal(), normal(), normal()); }

    /// Uniform random rotation.
    Quat rotation() {
        Quat q(normal(), normal(), normal(), normal());
        q.normalize();
        return q;
    }

    Vec3 unit_vec3() {
        Vec3 v = normal_vec3();
        while (v.norm() < 1e-12) v = normal_vec3();
        return v.normalized();
    }

private:
    std::uint64_t state_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace slipstab
