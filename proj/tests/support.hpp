// Copyright Contributors to the BloomGS Project
// SPDX-License-Identifier: Apache-2.0
//
// Small fixtures shared by the unit and acceptance tests.
#pragma once

#include "bloomgs/core.hpp"
#include "bloomgs/rng.hpp"

#include <cmath>
#include <filesystem>
#include <string>

namespace bloomgs::testing {

inline Camera simple_camera(int w = 64, int h = 64, double f = 55.4) {
    return Camera(Intrinsics{f, f, w / 2.0, h / 2.0}, Mat3::Identity(), Vec3::Zero(), w, h);
}

/// Camera with a random orientation and position.
inline Camera random_camera(Rng& rng, int w, int h) {
    Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    q.normalize();
    const Vec3 t(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    const double f = rng.uniform(40.0, 80.0);
    return Camera(Intrinsics{f, f * rng.uniform(0.9, 1.1), w * rng.uniform(0.4, 0.6), h * rng.uniform(0.4, 0.6)},
                  q.toRotationMatrix(), t, w, h);
}

inline ColorImage random_image(Rng& rng, int w, int h) {
    ColorImage img(w, h);
    for (double& v : img.data()) v = rng.uniform();
    return img;
}

/// Depths representable in float32, as stored by the depth file format.
inline DepthMap random_depth(Rng& rng, int w, int h, double lo = 0.5, double hi = 5.0) {
    DepthMap d(w, h);
    for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u) d.set(u, v, static_cast<float>(rng.uniform(lo, hi)));
    return d;
}

inline Mask full_mask(int w, int h) { return Mask(w, h, 1); }

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("bloomgs_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline double rel_diff(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

}  // namespace bloomgs::testing
