// Copyright Contributors to the BloomGS Project
// SPDX-License-Identifier: Apache-2.0

#include "bloomgs/core.hpp"

#include <cmath>
#include <sstream>

namespace bloomgs {

Mat3 Intrinsics::matrix() const {
    Mat3 k;
    k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
}

Camera::Camera(Intrinsics intrinsics, Mat3 rotation, Vec3 translation, int width, int height)
    : intrinsics_(intrinsics), rotation_(std::move(rotation)), translation_(std::move(translation)),
      width_(width), height_(height) {
    validate();
}

Camera Camera::from_pose(Intrinsics intrinsics, const Mat3& cam_to_world, const Vec3& center,
                         int width, int height) {
    const Mat3 r = cam_to_world.transpose();
    return Camera(intrinsics, r, -r * center, width, height);
}

void Camera::validate() const {
    if (width_ <= 0 || height_ <= 0) throw InvalidArgument("camera resolution must be positive");
    if (!(intrinsics_.fx > 0.0) || !(intrinsics_.fy > 0.0))
        throw InvalidArgument("camera focal lengths must be positive");
    if (intrinsics_.cx < 0.0 || intrinsics_.cx >= width_ || intrinsics_.cy < 0.0 ||
        intrinsics_.cy >= height_)
        throw InvalidArgument("principal point outside the image");
    const double ortho = (rotation_.transpose() * rotation_ - Mat3::Identity()).cwiseAbs().maxCoeff();
    if (!(ortho <= 1e-9) || std::abs(rotation_.determinant() - 1.0) > 1e-9)
        throw InvalidArgument("camera rotation is not a proper rotation");
    if (!translation_.allFinite()) throw InvalidArgument("camera translation is not finite");
}

Vec3 Camera::pixel_ray_point(int u, int v, double depth) const {
    const double x = (u + 0.5 - intrinsics_.cx) / intrinsics_.fx;
    const double y = (v + 0.5 - intrinsics_.cy) / intrinsics_.fy;
    return {x * depth, y * depth, depth};
}

void DepthMap::set(int u, int v, double z) {
    if (std::isfinite(z) && z > 0.0) {
        values_(u, v) = z;
        valid_(u, v) = 1;
    } else {
        invalidate(u, v);
    }
}

std::size_t DepthMap::valid_count() const {
    std::size_t n = 0;
    for (auto f : valid_.data()) n += f != 0;
    return n;
}

void PointCloud::append(const PointCloud& other) {
    positions.insert(positions.end(), other.positions.begin(), other.positions.end());
    colors.insert(colors.end(), other.colors.begin(), other.colors.end());
    source_frame.insert(source_frame.end(), other.source_frame.begin(), other.source_frame.end());
}

void PointCloud::validate() const {
    if (colors.size() != positions.size() || source_frame.size() != positions.size())
        throw InvalidArgument("point cloud arrays have different lengths");
    for (std::size_t i = 0; i < positions.size(); ++i) {
        if (!positions[i].allFinite()) {
            std::ostringstream msg;
            msg << "point " << i << " has a non-finite position";
            throw InvalidArgument(msg.str());
        }
        if ((colors[i].array() < 0.0).any() || (colors[i].array() > 1.0).any())
            throw InvalidArgument("point color outside [0, 1]");
    }
}

Mat3 rotation_from_quat(const Quat& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

Mat3 covariance_from_factors(const Vec3& scale, const Quat& rotation) {
    if (!((scale.array() > 0.0).all())) throw InvalidArgument("Gaussian scales must be positive");
    const Mat3 m = rotation_from_quat(rotation) * scale.asDiagonal();
    Mat3 sigma = m * m.transpose();
    // Exact symmetry regardless of summation order.
    sigma = 0.5 * (sigma + sigma.transpose()).eval();
    return sigma;
}

Mat3 yaw_rotation(double angle) {
    return Eigen::AngleAxisd(angle, Vec3::UnitY()).toRotationMatrix();
}

}  // namespace bloomgs
