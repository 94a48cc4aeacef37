// Copyright Contributors to the BloomGS Project
// SPDX-License-Identifier: Apache-2.0

#include "bloomgs/geometry.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace bloomgs;
using namespace bloomgs::geometry;

namespace {

// Signed yaw of `cam` relative to `ref` about ref's camera y axis.
double relative_yaw(const Camera& ref, const Camera& cam) {
    const Mat3 rel = cam.cam_to_world() * ref.rotation();
    return Eigen::AngleAxisd(rel).angle() * (Eigen::AngleAxisd(rel).axis().dot(ref.cam_to_world().col(1)) >= 0 ? 1 : -1);
}

}  // namespace

TEST_CASE("trajectory yaw sequence alternates sides") {
    CHECK(trajectory_yaws(1, 0.63) == std::vector<double>{0.0});
    const auto three = trajectory_yaws(3, 0.63);
    REQUIRE(three.size() == 3);
    CHECK(three[0] == 0.0);
    CHECK(three[1] == doctest::Approx(0.63));
    CHECK(three[2] == doctest::Approx(-0.63));
    const auto five = trajectory_yaws(5, 0.1);
    const double expect[5] = {0.0, 0.1, -0.1, 0.2, -0.2};
    for (int i = 0; i < 5; ++i) CHECK(five[i] == doctest::Approx(expect[i]).epsilon(1e-15));
    auto seven = trajectory_yaws(7, 0.3);
    std::sort(seven.begin(), seven.end());
    for (int i = 0; i < 7; ++i) CHECK(seven[i] == doctest::Approx(-seven[6 - i]));
}

TEST_CASE("build_trajectory yaws cameras about the pivot") {
    const Camera cam = testing::simple_camera();
    TrajectoryConfig cfg;
    cfg.num_cameras = 1;
    cfg.support_count = 2;
    const auto one = build_trajectory(cam, cfg);
    REQUIRE(one.size() == 1);
    CHECK(one[0].rotation() == cam.rotation());

    cfg.num_cameras = 3;
    cfg.support_count = 6;
    const auto three = build_trajectory(cam, cfg);
    REQUIRE(three.size() == 3);
    CHECK(relative_yaw(cam, three[1]) == doctest::Approx(0.63));
    CHECK(relative_yaw(cam, three[2]) == doctest::Approx(-0.63));
    for (const auto& c : three) {
        CHECK(c.intrinsics().fx == cam.intrinsics().fx);
        CHECK((c.center() - cam.center()).norm() < 1e-12);
    }
    cfg.pivot = Vec3(0, 0, 2);
    const auto orbit = build_trajectory(cam, cfg);
    CHECK((orbit[1].center() - Vec3(0, 0, 2)).norm() == doctest::Approx(2.0));
}

TEST_CASE("trajectory config validation") {
    TrajectoryConfig cfg;
    cfg.num_cameras = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.num_cameras = 3;
    cfg.rotation_step = 4.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("unproject principal ray and hand-computed pixel") {
    const Camera cam(Intrinsics{100, 100, 16, 16}, Mat3::Identity(), Vec3::Zero(), 32, 32);
    ColorImage img(32, 32, 0.25);
    DepthMap depth(32, 32);
    depth.set(10, 20, 2.0);
    depth.set(15, 15, 3.0);
    Mask sel(32, 32, 0);
    sel(10, 20) = 1;
    sel(15, 15) = 1;
    const auto cloud = unproject(img, depth, cam, sel);
    REQUIRE(cloud.size() == 2);
    // Row-major order: (15, 15) comes first.
    CHECK(cloud.positions[0].x() == doctest::Approx(3.0 * -0.5 / 100));
    CHECK(cloud.positions[0].z() == doctest::Approx(3.0));
    // x = z (u + 0.5 - cx) / fx, y = z (v + 0.5 - cy) / fy.
    CHECK(cloud.positions[1].x() == doctest::Approx(2.0 * (10.5 - 16.0) / 100.0).epsilon(1e-14));
    CHECK(cloud.positions[1].y() == doctest::Approx(2.0 * (20.5 - 16.0) / 100.0).epsilon(1e-14));
    CHECK(cloud.positions[1].z() == doctest::Approx(2.0));
    CHECK(cloud.colors[1] == Vec3::Constant(0.25));
}

TEST_CASE("unproject at the principal point with odd size") {
    const Camera cam(Intrinsics{50, 50, 2.5, 2.5}, Mat3::Identity(), Vec3::Zero(), 5, 5);
    ColorImage img(5, 5);
    DepthMap depth(5, 5);
    depth.set(2, 2, 1.75);
    Mask sel(5, 5, 0);
    sel(2, 2) = 1;
    const auto cloud = unproject(img, depth, cam, sel);
    REQUIRE(cloud.size() == 1);
    CHECK(cloud.positions[0] == Vec3(0, 0, 1.75));
}

TEST_CASE("unproject edge cases") {
    const Camera cam = testing::simple_camera(8, 8);
    ColorImage img(8, 8);
    DepthMap depth(8, 8);
    CHECK(unproject(img, depth, cam, Mask(8, 8, 0)).empty());
    CHECK_THROWS_AS(unproject(img, depth, cam, Mask(8, 8, 1)), InvalidArgument);
    CHECK_THROWS_AS(unproject(ColorImage(4, 8), depth, cam, Mask(8, 8, 0)), InvalidArgument);
}

TEST_CASE("project inverts unproject bit-exactly") {
    Rng rng(21);
    for (int trial = 0; trial < 5; ++trial) {
        const Camera cam = testing::random_camera(rng, 64, 64);
        const auto img = testing::random_image(rng, 64, 64);
        const auto depth = testing::random_depth(rng, 64, 64);
        const auto cloud = unproject(img, depth, cam, testing::full_mask(64, 64));
        const auto p = project(cloud, cam);
        CHECK(p.image == img);
        CHECK(p.depth == depth);
        CHECK(p.mask == testing::full_mask(64, 64));
    }
}

TEST_CASE("project culls points behind the camera and fills gray") {
    PointCloud c;
    c.positions.push_back(Vec3(0, 0, -1));
    c.colors.push_back(Vec3(1, 0, 0));
    c.source_frame.push_back(0);
    const auto p = project(c, testing::simple_camera(8, 8));
    for (auto m : p.mask.data()) CHECK(m == 0);
    CHECK(p.depth.valid_count() == 0);
    CHECK(p.image.at(3, 3, 1) == kFillColor);
}

TEST_CASE("z-buffer keeps the nearest point and breaks ties by index") {
    const Camera cam = testing::simple_camera(8, 8, 10.0);
    PointCloud c;
    const Vec3 dir = cam.pixel_ray_point(5, 2, 1.0);
    c.positions = {2.0 * dir, dir, 1.0 * dir};
    c.colors = {Vec3(0, 0, 1), Vec3(1, 0, 0), Vec3(0, 1, 0)};
    c.source_frame = {0, 0, 0};
    const auto p = project(c, cam);
    CHECK(p.mask(5, 2) == 1);
    CHECK(p.image.pixel(5, 2) == Vec3(1, 0, 0));
    CHECK(p.depth.value(5, 2) == doctest::Approx(1.0));
}

TEST_CASE("align_depth recovers affine maps") {
    Rng rng(4);
    const auto ref = testing::random_depth(rng, 16, 16);
    const Mask overlap = testing::full_mask(16, 16);

    const auto same = align_depth(ref, ref, overlap);
    CHECK(std::abs(same.scale - 1.0) < 1e-12);
    CHECK(std::abs(same.shift) < 1e-12);

    DepthMap warped(16, 16);
    for (int v = 0; v < 16; ++v)
        for (int u = 0; u < 16; ++u) warped.set(u, v, 2.0 * ref.value(u, v) + 0.5);
    const auto r = align_depth(warped, ref, overlap);
    CHECK(std::abs(r.scale - 0.5) < 1e-9);
    CHECK(std::abs(r.shift + 0.25) < 1e-9);
    CHECK_FALSE(r.shift_only);
    CHECK(r.overlap_count == 256);
    for (int v = 0; v < 16; ++v)
        for (int u = 0; u < 16; ++u) CHECK(std::abs(r.depth.value(u, v) - ref.value(u, v)) < 1e-9);
}

TEST_CASE("align_depth failure and constant fallback") {
    Rng rng(5);
    const auto ref = testing::random_depth(rng, 8, 8);
    try {
        align_depth(ref, ref, Mask(8, 8, 0));
        FAIL("expected AlignmentFailed");
    } catch (const AlignmentFailed& e) {
        CHECK(e.overlap_count == 0);
    }
    DepthMap flat(8, 8);
    for (int v = 0; v < 8; ++v)
        for (int u = 0; u < 8; ++u) flat.set(u, v, 2.0);
    const auto r = align_depth(flat, ref, testing::full_mask(8, 8));
    CHECK(r.shift_only);
    CHECK(r.scale == 1.0);
    double mean = 0;
    for (int v = 0; v < 8; ++v)
        for (int u = 0; u < 8; ++u) mean += ref.value(u, v);
    CHECK(r.depth.value(0, 0) == doctest::Approx(mean / 64));
}

TEST_CASE("merge_cloud adds exactly the inpainted pixels and keeps the prefix") {
    Rng rng(8);
    const Camera cam = testing::simple_camera(16, 16);
    const auto img = testing::random_image(rng, 16, 16);
    auto depth = testing::random_depth(rng, 16, 16);
    depth.invalidate(0, 0);

    const auto first = merge_cloud({}, img, depth, cam, Mask(16, 16, 0), 0);
    CHECK(first.size() == 255);
    const auto none = merge_cloud(first, img, depth, cam, testing::full_mask(16, 16), 1);
    CHECK(none.size() == first.size());

    Mask m = testing::full_mask(16, 16);
    std::size_t k = 0;
    for (int i = 0; i < 40; ++i) {
        const int u = static_cast<int>(rng.below(16)), v = static_cast<int>(rng.below(16));
        if (m(u, v) && depth.valid(u, v)) ++k;
        m(u, v) = 0;
    }
    const auto merged = merge_cloud(first, img, depth, cam, m, 2);
    REQUIRE(merged.size() == first.size() + k);
    for (std::size_t i = 0; i < first.size(); ++i) CHECK(merged.positions[i] == first.positions[i]);
    CHECK(merged.source_frame.back() == 2);
}

TEST_CASE("support cameras move on the depth sphere") {
    const Camera cam = testing::simple_camera();
    const auto dup = support_cameras({cam}, {2.0}, 0.0);
    REQUIRE(dup.size() == 2);
    CHECK(dup[0].rotation() == cam.rotation());
    CHECK(dup[1].translation() == cam.translation());

    const double r = 2.0;
    const auto s = support_cameras({cam}, {r}, 5.0);
    REQUIRE(s.size() == 2);
    const double a = 5.0 * std::numbers::pi / 180.0;
    const Vec3 pivot(0, 0, r);
    for (int i = 0; i < 2; ++i) {
        const Vec3 c = s[i].center();
        // Rotation about the camera y axis through the pivot.
        CHECK(std::abs(c.y()) < 1e-12);
        CHECK(std::abs(std::abs(c.x()) - r * std::sin(a)) < 1e-12);
        CHECK(std::abs(c.z() - r * (1.0 - std::cos(a))) < 1e-12);
        CHECK((c - pivot).norm() == doctest::Approx(r));
        // Optical axis still passes through the pivot.
        const Vec3 pc = s[i].world_to_camera(pivot);
        CHECK(std::abs(pc.x()) < 1e-12);
        CHECK(std::abs(pc.y()) < 1e-12);
    }
    CHECK(s[0].center().x() * s[1].center().x() < 0.0);
    CHECK_THROWS_AS(support_cameras({cam}, {0.0}, 5.0), InvalidArgument);
    CHECK_THROWS_AS(support_cameras({cam, cam}, {1.0}, 5.0), InvalidArgument);

    const auto e = support_cameras({cam}, {r}, 5.0, true);
    CHECK(std::abs(e[0].center().x()) < 1e-12);
    CHECK(std::abs(std::abs(e[0].center().y()) - r * std::sin(a)) < 1e-12);
}

TEST_CASE("render_training_set arity and consistency") {
    Rng rng(10);
    const Camera cam = testing::simple_camera(16, 16);
    const auto img = testing::random_image(rng, 16, 16);
    const auto depth = testing::random_depth(rng, 16, 16);
    const auto cloud = unproject(img, depth, cam, testing::full_mask(16, 16));
    CHECK(render_training_set(cloud, {}).empty());
    const auto extra = support_cameras({cam}, {2.0}, 5.0);
    const auto views = render_training_set(cloud, {cam, extra[0], extra[1]});
    REQUIRE(views.size() == 3);
    CHECK(views[0].image == img);
}
