// Copyright Contributors to the BloomGS Project
// SPDX-License-Identifier: Apache-2.0
//
// Shared domain types and coordinate conventions.
//
// Conventions used everywhere in the library:
//  - right-handed world and camera frames; the camera looks down +z,
//    x points right and y points down in the image;
//  - image origin is the top-left corner, pixel (u, v) has its center at
//    (u + 0.5, v + 0.5) and maps to the camera ray K^-1 (u + 0.5, v + 0.5, 1);
//  - depth always means z-depth (distance along the optical axis);
//  - all arithmetic is double precision.
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace bloomgs {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Errors. The CLI maps each family onto a distinct exit code.
struct InvalidArgument : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ProviderError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Pinhole intrinsics.
struct Intrinsics {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;

    Mat3 matrix() const;
};

/// Pinhole camera with a world-to-camera rigid transform x_cam = R x_world + t.
class Camera {
public:
    Camera() = default;
    Camera(Intrinsics intrinsics, Mat3 rotation, Vec3 translation, int width, int height);

    /// Camera at `center` whose camera-to-world rotation is `cam_to_world`.
    static Camera from_pose(Intrinsics intrinsics, const Mat3& cam_to_world, const Vec3& center,
                            int width, int height);

    const Intrinsics& intrinsics() const { return intrinsics_; }
    const Mat3& rotation() const { return rotation_; }
    const Vec3& translation() const { return translation_; }
    int width() const { return width_; }
    int height() const { return height_; }

    Vec3 center() const { return -rotation_.transpose() * translation_; }
    Mat3 cam_to_world() const { return rotation_.transpose(); }

    Vec3 world_to_camera(const Vec3& p) const { return rotation_ * p + translation_; }
    Vec3 camera_to_world(const Vec3& p) const { return rotation_.transpose() * (p - translation_); }

    /// Camera-space point at z-depth `depth` on the ray through pixel (u, v).
    Vec3 pixel_ray_point(int u, int v, double depth) const;

private:
    void validate() const;

    Intrinsics intrinsics_;
    Mat3 rotation_ = Mat3::Identity();
    Vec3 translation_ = Vec3::Zero();
    int width_ = 1;
    int height_ = 1;
};

/// Row-major H x W grid.
template <typename T>
class Grid2 {
public:
    Grid2() = default;
    Grid2(int width, int height, T fill = T{})
        : width_(width), height_(height),
          data_(static_cast<std::size_t>(checked(width) * checked(height)), fill) {}

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t size() const { return data_.size(); }
    bool same_shape(int w, int h) const { return w == width_ && h == height_; }

    T& operator()(int u, int v) { return data_[index(u, v)]; }
    const T& operator()(int u, int v) const { return data_[index(u, v)]; }
    std::size_t index(int u, int v) const {
        return static_cast<std::size_t>(v) * static_cast<std::size_t>(width_) +
               static_cast<std::size_t>(u);
    }

    std::vector<T>& data() { return data_; }
    const std::vector<T>& data() const { return data_; }

    bool operator==(const Grid2&) const = default;

private:
    static long checked(int n) {
        if (n < 0) throw InvalidArgument("negative grid dimension");
        return n;
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<T> data_;
};

/// Boolean mask. 1 = covered by projection, 0 = to be inpainted.
using Mask = Grid2<std::uint8_t>;

/// H x W x 3 image with channels in [0, 1], stored interleaved.
class ColorImage {
public:
    ColorImage() = default;
    ColorImage(int width, int height, double fill = 0.0)
        : width_(width), height_(height),
          data_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3, fill) {}

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }

    double& at(int u, int v, int c) { return data_[(static_cast<std::size_t>(v) * width_ + u) * 3 + c]; }
    double at(int u, int v, int c) const { return data_[(static_cast<std::size_t>(v) * width_ + u) * 3 + c]; }
    Vec3 pixel(int u, int v) const { return {at(u, v, 0), at(u, v, 1), at(u, v, 2)}; }
    void set_pixel(int u, int v, const Vec3& c) {
        at(u, v, 0) = c.x();
        at(u, v, 1) = c.y();
        at(u, v, 2) = c.z();
    }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool operator==(const ColorImage&) const = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<double> data_;
};

/// z-depth with a per-pixel validity flag. Valid entries are finite and > 0.
class DepthMap {
public:
    DepthMap() = default;
    DepthMap(int width, int height) : values_(width, height, 0.0), valid_(width, height, 0) {}

    int width() const { return values_.width(); }
    int height() const { return values_.height(); }

    double value(int u, int v) const { return values_(u, v); }
    bool valid(int u, int v) const { return valid_(u, v) != 0; }

    /// Stores `z`; the pixel becomes valid iff z is finite and positive.
    void set(int u, int v, double z);
    void invalidate(int u, int v) {
        values_(u, v) = 0.0;
        valid_(u, v) = 0;
    }

    const Grid2<double>& values() const { return values_; }
    const Mask& validity() const { return valid_; }
    std::size_t valid_count() const;

    bool operator==(const DepthMap&) const = default;

private:
    Grid2<double> values_;
    Mask valid_;
};

struct PointCloud {
    std::vector<Vec3> positions;
    std::vector<Vec3> colors;
    std::vector<int> source_frame;

    std::size_t size() const { return positions.size(); }
    bool empty() const { return positions.empty(); }
    void append(const PointCloud& other);
    /// Throws InvalidArgument if the three arrays disagree or values are out of range.
    void validate() const;
};

/// Unit quaternion stored as (w, x, y, z).
using Quat = std::array<double, 4>;

struct Gaussian3D {
    Vec3 mean = Vec3::Zero();
    Vec3 scale = Vec3::Ones();
    Quat rotation{1.0, 0.0, 0.0, 0.0};
    double opacity = 0.5;
    Vec3 color = Vec3::Constant(0.5);
};

/// Rotation matrix of a unit quaternion (w, x, y, z).
Mat3 rotation_from_quat(const Quat& q);

/// Sigma = R S S^T R^T for scale s and rotation q.
Mat3 covariance_from_factors(const Vec3& scale, const Quat& rotation);

/// Rotation about the +y axis (image-down axis) by `angle` radians.
Mat3 yaw_rotation(double angle);

}  // namespace bloomgs
