// Copyright Contributors to the BloomGS Project
// SPDX-License-Identifier: Apache-2.0

#include "bloomgs/autodiff.hpp"
#include "bloomgs/core.hpp"
#include "bloomgs/optim.hpp"
#include "bloomgs/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace bloomgs;
using ad::Tape;
using ad::Var;

TEST_CASE("square has derivative 2x") {
    Tape t;
    const Var x = t.leaf({3.0});
    const auto g = t.backward(ad::square(x));
    CHECK(g.of(x)[0] == doctest::Approx(6.0));
}

TEST_CASE("hand chain rule for x y + tanh x") {
    Tape t;
    const Var x = t.leaf({1.0});
    const Var y = t.leaf({2.0});
    const Var f = x * y + ad::tanh(x);
    const auto g = t.backward(f);
    const double sech = 1.0 / std::cosh(1.0);
    CHECK(g.of(x)[0] == doctest::Approx(2.0 + sech * sech).epsilon(1e-14));
    CHECK(g.of(y)[0] == doctest::Approx(1.0));
}

TEST_CASE("constants and unused leaves get zero gradient") {
    Tape t;
    const Var x = t.leaf({1.0, 2.0});
    const Var unused = t.leaf({5.0});
    const Var c = t.constant(4.0);
    const auto g = t.backward(ad::sum(ad::mul(c, c)));
    CHECK(g.of(x) == std::vector<double>{0.0, 0.0});
    CHECK(g.of(unused) == std::vector<double>{0.0});
    CHECK_FALSE(t.requires_grad(c));
}

TEST_CASE("backward needs a scalar output") {
    Tape t;
    const Var x = t.leaf({1.0, 2.0});
    CHECK_THROWS_AS(t.backward(ad::exp(x)), InvalidArgument);
}

TEST_CASE("size-one operands broadcast") {
    Tape t;
    const Var x = t.leaf({1.0, 2.0, 3.0});
    const Var s = t.leaf({2.0});
    const auto g = t.backward(ad::sum(ad::mul(x, s)));
    CHECK(g.of(s)[0] == doctest::Approx(6.0));
    CHECK(g.of(x) == std::vector<double>{2.0, 2.0, 2.0});
    CHECK_THROWS_AS(ad::add(x, t.leaf({1.0, 2.0})), InvalidArgument);
}

TEST_CASE("primitive derivatives match symbolic forms") {
    const double x0 = 0.7;
    struct Case {
        const char* name;
        std::function<Var(const Var&)> f;
        double deriv;
    };
    const double pi = 3.14159265358979323846;
    const std::vector<Case> cases = {
        {"exp", [](const Var& x) { return ad::exp(x); }, std::exp(x0)},
        {"log", [](const Var& x) { return ad::log(x); }, 1.0 / x0},
        {"tanh", [](const Var& x) { return ad::tanh(x); }, 1.0 - std::tanh(x0) * std::tanh(x0)},
        {"sigmoid", [](const Var& x) { return ad::sigmoid(x); },
         std::exp(-x0) / ((1 + std::exp(-x0)) * (1 + std::exp(-x0)))},
        {"softplus", [](const Var& x) { return ad::softplus(x); }, 1.0 / (1.0 + std::exp(-x0))},
        {"erf", [](const Var& x) { return ad::erf(x); }, 2.0 / std::sqrt(pi) * std::exp(-x0 * x0)},
        {"cdf", [](const Var& x) { return ad::normal_cdf(x); }, std::exp(-0.5 * x0 * x0) / std::sqrt(2 * pi)},
        {"pow", [](const Var& x) { return ad::pow(x, 3.5); }, 3.5 * std::pow(x0, 2.5)},
        {"abs", [](const Var& x) { return ad::abs(ad::neg(x)); }, 1.0},
        {"div", [](const Var& x) { return ad::div(x.tape()->constant(2.0), x); }, -2.0 / (x0 * x0)},
        {"clamp", [](const Var& x) { return ad::clamp_min(x, 1.0); }, 0.0},
    };
    for (const auto& c : cases) {
        CAPTURE(c.name);
        Tape t;
        const Var x = t.leaf({x0});
        const auto g = t.backward(c.f(x));
        CHECK(g.of(x)[0] == doctest::Approx(c.deriv).epsilon(1e-12));
    }
}

TEST_CASE("normal mass is accurate in both tails") {
    CHECK(ad::normal_mass(-0.5, 0.5) == doctest::Approx(0.382924922548026).epsilon(1e-12));
    // Upper tail far from the center, where 1 - Phi cancels catastrophically.
    const double upper = 0.5 * std::erfc(9.0 / std::sqrt(2.0)) - 0.5 * std::erfc(9.5 / std::sqrt(2.0));
    CHECK(ad::normal_mass(9.0, 9.5) == doctest::Approx(upper).epsilon(1e-10));
    CHECK(ad::normal_mass(-9.5, -9.0) == doctest::Approx(upper).epsilon(1e-10));
}

TEST_CASE("composite functions pass the gradient check") {
    Rng rng(1);
    std::vector<double> a(6), b(6), w(6), bias(2);
    for (auto* v : {&a, &b, &w, &bias})
        for (double& x : *v) x = rng.uniform(0.2, 1.5);
    const auto report = optim::grad_check(
        [](Tape& t, std::span<const Var> in) {
            const Var h = ad::linear(in[0], in[2], in[3], 3, 2);
            const Var m = ad::normal_mass(ad::neg(in[1]), ad::gather(in[0], {0, 1, 2, 3, 4, 5}));
            const Var s = ad::select({1, 0, 1, 0, 1, 0}, ad::sigmoid(in[0]), ad::pow(in[1], 2.0));
            const Var c = ad::concat({h, m, s});
            return ad::mean(ad::log(ad::add_scalar(ad::square(c), 1.0))) + ad::sum(ad::div(in[0], in[1])) +
                   ad::scale(ad::sum(ad::softplus(ad::erf(ad::abs(ad::sub(in[0], in[1]))))), 0.3) +
                   ad::sum(ad::clamp_min(in[1], 1.0)) * t.constant(0.5);
        },
        {a, b, w, bias});
    CHECK(report.passed);
    CHECK(report.max_relative_error < 1e-6);
}

TEST_CASE("linear functions check at machine precision") {
    const auto report = optim::grad_check(
        [](Tape&, std::span<const Var> in) { return ad::sum(ad::scale(in[0], 3.0)) + ad::sum(in[1]); },
        {{1.0, -2.0, 3.0}, {0.5}});
    CHECK(report.max_relative_error < 1e-8);
}

TEST_CASE("identical inputs give bit-identical gradients") {
    auto run = [] {
        Tape t;
        const Var x = t.leaf({0.1, 0.2, 0.3, 0.4});
        const Var y = ad::sum(ad::tanh(ad::mul(x, ad::exp(x))));
        return t.backward(y).of(x);
    };
    CHECK(run() == run());
}

TEST_CASE("adam leaves parameters alone on zero gradient") {
    optim::Adam adam({0.9, 0.999, 1e-8, {{"p", 0.1}}});
    optim::Parameter p{"p", {1.0, 2.0}};
    optim::Parameter* ps[] = {&p};
    const std::vector<std::vector<double>> g = {{0.0, 0.0}};
    adam.step(ps, g);
    CHECK(p.value == std::vector<double>{1.0, 2.0});
}

TEST_CASE("adam descends and converges on a quadratic") {
    optim::Adam one({0.9, 0.999, 1e-8, {{"x", 0.1}}});
    optim::Parameter x{"x", {1.0}};
    optim::Parameter* px[] = {&x};
    const std::vector<std::vector<double>> gx = {{2.0 * x.value[0]}};
    one.step(px, gx);
    CHECK(x.value[0] < 1.0);

    optim::Adam adam({0.9, 0.999, 1e-8, {{"q", 0.05}}});
    optim::Parameter q{"q", {2.0, -1.5}};
    optim::Parameter* pq[] = {&q};
    for (int i = 0; i < 200; ++i) {
        // f = (x - 1)^2 + 3 (y + 0.5)^2
        const std::vector<std::vector<double>> g = {{2.0 * (q.value[0] - 1.0), 6.0 * (q.value[1] + 0.5)}};
        adam.step(pq, g);
    }
    CHECK(std::abs(q.value[0] - 1.0) < 1e-3);
    CHECK(std::abs(q.value[1] + 0.5) < 1e-3);
}

TEST_CASE("adam rejects NaN gradients by group before updating") {
    optim::Adam adam({0.9, 0.999, 1e-8, {{"good", 0.1}, {"grid", 0.1}}});
    optim::Parameter a{"good", {1.0}};
    optim::Parameter b{"grid", {1.0}};
    optim::Parameter* ps[] = {&a, &b};
    const std::vector<std::vector<double>> g = {{1.0}, {std::nan("")}};
    try {
        adam.step(ps, g);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("grid") != std::string::npos);
    }
    CHECK(a.value[0] == 1.0);
    CHECK(adam.step_count() == 0);
}

TEST_CASE("adam state survives save and load") {
    optim::AdamConfig cfg{0.9, 0.999, 1e-8, {{"p", 0.01}}};
    optim::Adam a(cfg), b(cfg);
    optim::Parameter pa{"p", {1.0, -1.0}}, pb = pa;
    optim::Parameter* la[] = {&pa};
    optim::Parameter* lb[] = {&pb};
    const std::vector<std::vector<double>> g = {{0.3, -0.2}};
    a.step(la, g);
    std::stringstream ss;
    a.save(ss);
    b.load(ss);
    pb = pa;
    a.step(la, g);
    b.step(lb, g);
    CHECK(pa.value == pb.value);
    CHECK(b.step_count() == 2);
}
