// Copyright Contributors to the BloomGS Project
// SPDX-License-Identifier: Apache-2.0
//
// Point-cloud construction primitives for progressive scene generation.
#pragma once

#include "bloomgs/core.hpp"

#include <optional>
#include <vector>

namespace bloomgs::geometry {

struct TrajectoryConfig {
    int num_cameras = 7;
    double rotation_step = 0.63;  // radians between neighbouring yaw stops
    std::optional<Vec3> pivot;    // defaults to the initial camera center
    int support_count = 14;
    double support_shift_degrees = 5.0;
    bool support_elevation = false;  // displace support views in elevation instead of azimuth

    void validate() const;
};

/// Yaw offsets 0, +d, -d, +2d, -2d, ... truncated to `count` entries.
std::vector<double> trajectory_yaws(int count, double step);

/// Cameras rotated about the initial camera's up axis through the pivot.
std::vector<Camera> build_trajectory(const Camera& initial, const TrajectoryConfig& config);

/// Camera obtained by yawing `initial` by `yaw` radians about its up axis through `pivot`.
Camera yawed_camera(const Camera& initial, double yaw, const Vec3& pivot);

/// One point per selected pixel: R^T (z K^-1 (u+0.5, v+0.5, 1) - t).
PointCloud unproject(const ColorImage& image, const DepthMap& depth, const Camera& camera,
                     const Mask& select, int frame_index = 0);

struct Projection {
    ColorImage image;  // unmasked pixels hold kFillColor
    Mask mask;         // 1 where at least one point landed in front of the camera
    DepthMap depth;    // camera-z of the winning point
};

inline constexpr double kFillColor = 0.5;

/// 1-pixel z-buffer splatting; nearest camera-z wins, ties go to the lower point index.
/// Stored depths are rounded to float32 precision, the precision of the depth file
/// format, which makes project(unproject(.)) reproduce float32 depths bit-exactly.
Projection project(const PointCloud& cloud, const Camera& camera);

struct AlignResult {
    DepthMap depth;
    double scale = 1.0;
    double shift = 0.0;
    bool shift_only = false;  // overlap depth was constant; only a shift was fitted
    std::size_t overlap_count = 0;
};

struct AlignmentFailed : std::runtime_error {
    AlignmentFailed(const std::string& what, std::size_t count)
        : std::runtime_error(what), overlap_count(count) {}
    std::size_t overlap_count;
};

/// Least-squares scale and shift mapping `new_depth` onto `reference` over `overlap`,
/// applied to every valid pixel of `new_depth`. The scale is clamped to [1e-3, 1e3].
AlignResult align_depth(const DepthMap& new_depth, const DepthMap& reference, const Mask& overlap,
                        std::size_t min_overlap = 16);

/// existing followed by the unprojection of pixels with inpaint_mask == 0 and valid depth.
PointCloud merge_cloud(const PointCloud& existing, const ColorImage& image, const DepthMap& aligned,
                       const Camera& camera, const Mask& inpaint_mask, int frame_index);

/// Two cameras per base camera, displaced by +/- shift_degrees on the sphere whose
/// radius is the base camera's center depth, re-aimed at the sphere center.
/// Output order: base0+, base0-, base1+, base1-, ...
std::vector<Camera> support_cameras(const std::vector<Camera>& base,
                                    const std::vector<double>& center_depths,
                                    double shift_degrees, bool elevation = false);

/// Per-camera projections of the cloud.
std::vector<Projection> render_training_set(const PointCloud& cloud,
                                            const std::vector<Camera>& cameras);

}  // namespace bloomgs::geometry
