// Copyright Contributors to the BloomGS Project
// SPDX-License-Identifier: Apache-2.0

#include "bloomgs/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace bloomgs::geometry {

void TrajectoryConfig::validate() const {
    if (num_cameras < 1) throw ConfigError("trajectory needs at least one camera");
    if (!(rotation_step > 0.0 && rotation_step < std::numbers::pi))
        throw ConfigError("rotation_step must lie in (0, pi)");
    if (support_count < 0) throw ConfigError("support_count must be non-negative");
    if (support_count > 2 * num_cameras)
        throw ConfigError("support_count may not exceed two per trajectory camera");
    if (!std::isfinite(support_shift_degrees)) throw ConfigError("support_shift must be finite");
}

std::vector<double> trajectory_yaws(int count, double step) {
    std::vector<double> yaws;
    yaws.reserve(static_cast<std::size_t>(std::max(count, 0)));
    for (int i = 0; i < count; ++i) {
        const int ring = (i + 1) / 2;
        const double sign = (i % 2 == 1) ? 1.0 : -1.0;
        yaws.push_back(i == 0 ? 0.0 : sign * ring * step);
    }
    return yaws;
}

Camera yawed_camera(const Camera& initial, double yaw, const Vec3& pivot) {
    const Mat3 c2w = initial.cam_to_world();
    const Vec3 up = c2w.col(1);
    const Mat3 q = Eigen::AngleAxisd(yaw, up).toRotationMatrix();
    const Vec3 center = pivot + q * (initial.center() - pivot);
    return Camera::from_pose(initial.intrinsics(), q * c2w, center, initial.width(), initial.height());
}

std::vector<Camera> build_trajectory(const Camera& initial, const TrajectoryConfig& config) {
    config.validate();
    const Vec3 pivot = config.pivot.value_or(initial.center());
    std::vector<Camera> cameras;
    for (double yaw : trajectory_yaws(config.num_cameras, config.rotation_step))
        cameras.push_back(yaw == 0.0 ? initial : yawed_camera(initial, yaw, pivot));
    return cameras;
}

PointCloud unproject(const ColorImage& image, const DepthMap& depth, const Camera& camera,
                     const Mask& select, int frame_index) {
    const int w = camera.width(), h = camera.height();
    if (image.width() != w || image.height() != h || depth.width() != w || depth.height() != h ||
        !select.same_shape(w, h))
        throw InvalidArgument("unproject: image, depth, mask and camera shapes disagree");
    std::size_t bad = 0;
    for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u)
            if (select(u, v) && !depth.valid(u, v)) ++bad;
    if (bad > 0) {
        std::ostringstream msg;
        msg << "unproject: " << bad << " selected pixel(s) have invalid depth";
        throw InvalidArgument(msg.str());
    }
    PointCloud cloud;
    for (int v = 0; v < h; ++v) {
        for (int u = 0; u < w; ++u) {
            if (!select(u, v)) continue;
            cloud.positions.push_back(camera.camera_to_world(camera.pixel_ray_point(u, v, depth.value(u, v))));
            cloud.colors.push_back(image.pixel(u, v));
            cloud.source_frame.push_back(frame_index);
        }
    }
    return cloud;
}

Projection project(const PointCloud& cloud, const Camera& camera) {
    const int w = camera.width(), h = camera.height();
    const auto& k = camera.intrinsics();
    Projection out{ColorImage(w, h, kFillColor), Mask(w, h, 0), DepthMap(w, h)};
    Grid2<double> zbuf(w, h, std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Vec3 pc = camera.world_to_camera(cloud.positions[i]);
        if (!(pc.z() > 0.0)) continue;
        const double x = k.fx * pc.x() / pc.z() + k.cx;
        const double y = k.fy * pc.y() / pc.z() + k.cy;
        if (!(x >= 0.0 && y >= 0.0 && x < w && y < h)) continue;
        const int u = static_cast<int>(std::floor(x));
        const int v = static_cast<int>(std::floor(y));
        if (pc.z() < zbuf(u, v)) {
            zbuf(u, v) = pc.z();
            out.image.set_pixel(u, v, cloud.colors[i]);
            out.mask(u, v) = 1;
            out.depth.set(u, v, static_cast<double>(static_cast<float>(pc.z())));
        }
    }
    return out;
}

AlignResult align_depth(const DepthMap& new_depth, const DepthMap& reference, const Mask& overlap,
                        std::size_t min_overlap) {
    const int w = new_depth.width(), h = new_depth.height();
    if (reference.width() != w || reference.height() != h || !overlap.same_shape(w, h))
        throw InvalidArgument("align_depth: shapes disagree");

    std::size_t n = 0;
    double mean_new = 0.0, mean_ref = 0.0;
    for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u)
            if (overlap(u, v) && new_depth.valid(u, v) && reference.valid(u, v)) {
                ++n;
                mean_new += new_depth.value(u, v);
                mean_ref += reference.value(u, v);
            }
    if (n < min_overlap || n == 0) {
        std::ostringstream msg;
        msg << "depth alignment failed: " << n << " overlapping pixel(s), need " << min_overlap;
        throw AlignmentFailed(msg.str(), n);
    }
    mean_new /= static_cast<double>(n);
    mean_ref /= static_cast<double>(n);

    // Centered sums keep the normal equations well conditioned.
    double sxx = 0.0, sxy = 0.0;
    for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u)
            if (overlap(u, v) && new_depth.valid(u, v) && reference.valid(u, v)) {
                const double dx = new_depth.value(u, v) - mean_new;
                sxx += dx * dx;
                sxy += dx * (reference.value(u, v) - mean_ref);
            }

    AlignResult result;
    result.overlap_count = n;
    if (sxx <= 1e-12 * std::max(1.0, mean_new * mean_new) * static_cast<double>(n)) {
        result.shift_only = true;
        result.scale = 1.0;
    } else {
        result.scale = std::clamp(sxy / sxx, 1e-3, 1e3);
    }
    result.shift = mean_ref - result.scale * mean_new;

    result.depth = DepthMap(w, h);
    for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u)
            if (new_depth.valid(u, v)) result.depth.set(u, v, result.scale * new_depth.value(u, v) + result.shift);
    return result;
}

PointCloud merge_cloud(const PointCloud& existing, const ColorImage& image, const DepthMap& aligned,
                       const Camera& camera, const Mask& inpaint_mask, int frame_index) {
    if (!inpaint_mask.same_shape(aligned.width(), aligned.height()))
        throw InvalidArgument("merge_cloud: mask and depth shapes disagree");
    Mask select(inpaint_mask.width(), inpaint_mask.height(), 0);
    for (int v = 0; v < select.height(); ++v)
        for (int u = 0; u < select.width(); ++u)
            select(u, v) = !inpaint_mask(u, v) && aligned.valid(u, v);
    PointCloud merged = existing;
    merged.append(unproject(image, aligned, camera, select, frame_index));
    return merged;
}

std::vector<Camera> support_cameras(const std::vector<Camera>& base,
                                    const std::vector<double>& center_depths,
                                    double shift_degrees, bool elevation) {
    if (base.size() != center_depths.size())
        throw InvalidArgument("support_cameras: camera and depth lists differ in length");
    const double angle = shift_degrees * std::numbers::pi / 180.0;
    std::vector<Camera> out;
    out.reserve(2 * base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
        const double radius = center_depths[i];
        if (!(radius > 0.0) || !std::isfinite(radius))
            throw InvalidArgument("support_cameras: center depth must be positive");
        const Camera& cam = base[i];
        const Mat3 c2w = cam.cam_to_world();
        const Vec3 pivot = cam.center() + radius * c2w.col(2);
        const Vec3 axis = elevation ? Vec3(c2w.col(0)) : Vec3(c2w.col(1));
        for (double sign : {1.0, -1.0}) {
            if (angle == 0.0) {
                out.push_back(cam);
                continue;
            }
            const Mat3 q = Eigen::AngleAxisd(sign * angle, axis).toRotationMatrix();
            const Vec3 center = pivot + q * (cam.center() - pivot);
            out.push_back(Camera::from_pose(cam.intrinsics(), q * c2w, center, cam.width(), cam.height()));
        }
    }
    return out;
}

std::vector<Projection> render_training_set(const PointCloud& cloud,
                                            const std::vector<Camera>& cameras) {
    std::vector<Projection> views;
    views.reserve(cameras.size());
    for (const auto& cam : cameras) views.push_back(project(cloud, cam));
    return views;
}

}  // namespace bloomgs::geometry
