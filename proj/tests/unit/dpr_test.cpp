// Copyright Contributors to the BloomGS Project
// SPDX-License-Identifier: Apache-2.0

#include "bloomgs/dpr.hpp"
#include "bloomgs/optim.hpp"
#include "oracles.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace bloomgs;
using namespace bloomgs::dpr;

TEST_CASE("gradient weight is one on a constant image") {
    const auto w = gradient_weight(ColorImage(6, 5, 0.4));
    for (double x : w.data()) CHECK(x == 1.0);
}

TEST_CASE("gradient weight at a unit luma step") {
    ColorImage img(6, 4, 0.0);
    for (int v = 0; v < 4; ++v)
        for (int u = 3; u < 6; ++u) img.set_pixel(u, v, Vec3(1, 1, 1));
    const auto w = gradient_weight(img);
    for (int v = 0; v < 4; ++v) {
        CHECK(w(2, v) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
        CHECK(w(3, v) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
        CHECK(w(0, v) == 1.0);
        CHECK(w(5, v) == 1.0);
    }
    Rng rng(3);
    const auto random_weight = gradient_weight(testing::random_image(rng, 9, 9));
    for (double x : random_weight.data()) {
        CHECK(x > 0.0);
        CHECK(x <= 1.0);
    }
}

TEST_CASE("pixel loss of two residuals") {
    const std::vector<double> prior{2.0, 1.1}, rendered{1.0, 1.0}, g{1.0, 1.0};
    const auto out = pixel_depth_loss(prior, rendered, g, Mask(2, 1, 1));
    CHECK(out.value == doctest::Approx(0.5625).epsilon(1e-14));
    CHECK(pixel_depth_loss(prior, prior, g, Mask(2, 1, 1)).value == 0.0);
    const auto empty = pixel_depth_loss(prior, rendered, g, Mask(2, 1, 0));
    CHECK(empty.value == 0.0);
    CHECK(empty.degenerate);
}

TEST_CASE("huber branches meet at the threshold") {
    // Residuals {1, 0.2}: the second sits exactly on delta = 0.2 where both branches equal delta.
    const std::vector<double> g{1.0, 1.0}, rendered{0.0, 0.0};
    const double at = pixel_depth_loss(std::vector<double>{1.0, 0.2}, rendered, g, Mask(2, 1, 1)).value;
    const double below = pixel_depth_loss(std::vector<double>{1.0, 0.2 - 1e-9}, rendered, g, Mask(2, 1, 1)).value;
    const double above = pixel_depth_loss(std::vector<double>{1.0, 0.2 + 1e-9}, rendered, g, Mask(2, 1, 1)).value;
    CHECK(at == doctest::Approx(0.6).epsilon(1e-14));
    CHECK(std::abs(below - at) < 1e-8);
    CHECK(std::abs(above - at) < 1e-8);
}

TEST_CASE("central moments") {
    const std::vector<double> pair{0.0, 2.0}, flat{3.0, 3.0, 3.0};
    CHECK(central_moment(pair, 1) == 0.0);
    CHECK(central_moment(pair, 2) == doctest::Approx(1.0));
    for (int k = 1; k <= 5; ++k) CHECK(central_moment(flat, k) == 0.0);
    CHECK_THROWS_AS(central_moment(std::vector<double>{}, 2), InvalidArgument);
}

TEST_CASE("cmd of a two-point and a point mass") {
    const std::vector<double> p{0, 0, 1, 1}, q{0.5, 0.5, 0.5, 0.5};
    // Means agree, variances 0.25 vs 0, third moments both vanish.
    CHECK(cmd_distance(p, q, 3) == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(std::abs(cmd_distance(p, q, 3) - testing::oracle::cmd(p, q, 3)) < 1e-12);
    CHECK_THROWS_AS(cmd_distance(p, std::vector<double>{}, 3), InvalidArgument);
}

TEST_CASE("cmd matches the moment oracle and is symmetric") {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> p(1 + rng.below(40)), q(1 + rng.below(40));
        for (double& x : p) x = rng.uniform(-3, 5);
        for (double& x : q) x = rng.normal() * 2.0;
        const int k = 1 + static_cast<int>(rng.below(6));
        CHECK(std::abs(cmd_distance(p, q, k) - testing::oracle::cmd(p, q, k)) < 1e-12);
        CHECK(cmd_distance(p, q, k) == cmd_distance(q, p, k));
        CHECK(cmd_distance(p, p, k) == 0.0);
    }
}

TEST_CASE("strict first moment drops the mean term") {
    const std::vector<double> p{0.0, 1.0}, q{1.0, 2.0};
    CHECK(cmd_distance(p, q, 1) == doctest::Approx(0.5));
    CHECK(cmd_distance(p, q, 1, true) == 0.0);
}

TEST_CASE("shifted rendering leaves only the mean term") {
    Rng rng(5);
    const int w = 6, h = 5;
    std::vector<double> prior(w * h), shifted(w * h);
    for (std::size_t i = 0; i < prior.size(); ++i) {
        prior[i] = rng.uniform(1.0, 3.0);
        shifted[i] = prior[i] + 0.4;
    }
    const Mask valid = testing::full_mask(w, h);
    const auto out = dist_depth_loss(prior, shifted, valid, 5);
    double lo = 1e9, hi = -1e9;
    for (std::size_t i = 0; i < prior.size(); ++i) lo = std::min(lo, prior[i]), hi = std::max(hi, shifted[i]);
    CHECK(out.value == doctest::Approx(0.4 / (hi - lo)).epsilon(1e-10));
    CHECK(dist_depth_loss(prior, prior, valid, 5).value == 0.0);
}

TEST_CASE("masked pixels never influence the distribution loss") {
    Rng rng(6);
    std::vector<double> prior(16), rendered(16);
    for (std::size_t i = 0; i < 16; ++i) prior[i] = rng.uniform(1, 2), rendered[i] = rng.uniform(1, 2);
    Mask valid = testing::full_mask(4, 4);
    valid(1, 1) = 0;
    valid(3, 2) = 0;
    const double base = dist_depth_loss(prior, rendered, valid, 4).value;
    rendered[valid.index(1, 1)] = 100.0;
    prior[valid.index(3, 2)] = -50.0;
    CHECK(dist_depth_loss(prior, rendered, valid, 4).value == base);
    Mask one(4, 4, 0);
    one(0, 0) = 1;
    CHECK(dist_depth_loss(prior, rendered, one, 4).degenerate);
}

TEST_CASE("smoothness on a 3x3 bump") {
    const std::vector<double> d{1, 1, 1, 1, 2, 1, 1, 1, 1};
    DprConfig cfg;
    cfg.sigma_spatial = 1.0;
    cfg.sigma_color = 1.0;
    cfg.window = 3;
    const double e1 = std::exp(-1.0), e15 = std::exp(-1.5);
    // Center sees 8 differing neighbors, each edge pixel 1 of 5, each corner 1 of 3.
    const double expected = (0.5 * e1 + 0.5 * e15 + 4.0 * e1 / 5.0 + 4.0 * e15 / 3.0) / 9.0;
    CHECK(smooth_depth_loss(d, testing::full_mask(3, 3), cfg).value == doctest::Approx(expected).epsilon(1e-14));
    std::vector<double> shifted = d;
    for (double& x : shifted) x += 7.25;
    CHECK(smooth_depth_loss(shifted, testing::full_mask(3, 3), cfg).value ==
          doctest::Approx(expected).epsilon(1e-12));
    Mask single(3, 3, 0);
    single(1, 1) = 1;
    CHECK(smooth_depth_loss(d, single, cfg).value == 0.0);
    CHECK(smooth_depth_loss(std::vector<double>(9, 2.0), testing::full_mask(3, 3), cfg).value == 0.0);
}

TEST_CASE("weighted combination") {
    DprConfig cfg;
    CHECK(cfg.lambda_pixel == 0.7);
    CHECK(cfg.lambda_dist == 0.1);
    CHECK(cfg.lambda_smooth == 1.0);
    CHECK(cfg.combine(0.5625, 0.2, 0.1) == doctest::Approx(0.513750).epsilon(1e-14));
    CHECK(cfg.combine(0, 0, 0) == 0.0);
}

TEST_CASE("config validation") {
    DprConfig cfg;
    cfg.window = 4;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = DprConfig{};
    cfg.lambda_dist = -1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = DprConfig{};
    cfg.cmd_order = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

namespace {

struct Instance {
    std::vector<double> prior, rendered, weight;
    Mask valid{8, 8, 1};
    ColorImage image;
};

Instance random_instance(Rng& rng) {
    Instance in;
    in.image = testing::random_image(rng, 8, 8);
    for (int i = 0; i < 64; ++i) {
        in.prior.push_back(rng.uniform(1.0, 3.0));
        in.rendered.push_back(in.prior.back() + rng.uniform(-0.5, 0.5));
        in.weight.push_back(rng.uniform(0.2, 1.0));
    }
    for (int i = 0; i < 6; ++i) in.valid(static_cast<int>(rng.below(8)), static_cast<int>(rng.below(8))) = 0;
    return in;
}

optim::GradCheckReport check(const Instance& in, const std::function<LossGrad(std::span<const double>)>& f) {
    return optim::grad_check(
        [&](ad::Tape&, std::span<const ad::Var> x) { return as_node(x[0], f(x[0].value())); }, {in.rendered});
}

}  // namespace

TEST_CASE("loss gradients match finite differences") {
    Rng rng(7);
    for (int trial = 0; trial < 5; ++trial) {
        const Instance in = random_instance(rng);
        DprConfig cfg;
        cfg.sigma_color = 0.5;
        const auto pixel = check(in, [&](std::span<const double> d) {
            return pixel_depth_loss(in.prior, d, in.weight, in.valid);
        });
        const auto dist = check(in, [&](std::span<const double> d) {
            return dist_depth_loss(in.prior, d, in.valid, 5);
        });
        const auto smooth = check(in, [&](std::span<const double> d) { return smooth_depth_loss(d, in.valid, cfg); });
        const auto total = check(in, [&](std::span<const double> d) {
            return dpr_loss(in.prior, d, in.image, in.valid, cfg);
        });
        CHECK(pixel.max_relative_error < 1e-4);
        CHECK(dist.max_relative_error < 1e-4);
        CHECK(smooth.max_relative_error < 1e-4);
        CHECK(total.max_relative_error < 1e-4);
    }
}

TEST_CASE("breakdown is reported and non-negative") {
    Rng rng(8);
    const Instance in = random_instance(rng);
    DprBreakdown b;
    const auto out = dpr_loss(in.prior, in.rendered, in.image, in.valid, DprConfig{}, &b);
    CHECK(b.pixel >= 0.0);
    CHECK(b.dist >= 0.0);
    CHECK(b.smooth >= 0.0);
    CHECK(out.value == doctest::Approx(DprConfig{}.combine(b.pixel, b.dist, b.smooth)));
}
