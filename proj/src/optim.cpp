// Copyright Contributors to the BloomGS Project
// SPDX-License-Identifier: Apache-2.0

#include "bloomgs/optim.hpp"

#include "bloomgs/core.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

namespace bloomgs::optim {

void Adam::step(std::span<Parameter* const> params, std::span<const std::vector<double>> grads) {
    if (params.size() != grads.size()) throw InvalidArgument("Adam: parameter and gradient counts differ");
    for (std::size_t p = 0; p < params.size(); ++p) {
        if (grads[p].size() != params[p]->value.size())
            throw InvalidArgument("Adam: gradient shape mismatch in group " + params[p]->group);
        for (double g : grads[p])
            if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter group '" + params[p]->group + "'");
    }
    if (first_.empty()) {
        for (auto* p : params) {
            first_.emplace_back(p->value.size(), 0.0);
            second_.emplace_back(p->value.size(), 0.0);
        }
    }
    if (first_.size() != params.size()) throw InvalidArgument("Adam: parameter list changed between steps");

    ++steps_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto it = config_.learning_rates.find(params[p]->group);
        if (it == config_.learning_rates.end())
            throw InvalidArgument("Adam: no learning rate for group '" + params[p]->group + "'");
        const double lr = it->second;
        auto& m = first_[p];
        auto& v = second_[p];
        auto& x = params[p]->value;
        const auto& g = grads[p];
        for (std::size_t i = 0; i < x.size(); ++i) {
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            x[i] -= lr * mhat / (std::sqrt(vhat) + config_.epsilon);
        }
    }
}

namespace {

void write_vec(std::ostream& out, const std::vector<double>& v) {
    const std::uint64_t n = v.size();
    out.write(reinterpret_cast<const char*>(&n), sizeof n);
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
}

std::vector<double> read_vec(std::istream& in) {
    std::uint64_t n = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof n);
    if (!in || n > (1ULL << 32)) throw IoError("corrupt optimizer state");
    std::vector<double> v(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw IoError("truncated optimizer state");
    return v;
}

}  // namespace

void Adam::save(std::ostream& out) const {
    const std::int64_t steps = steps_;
    const std::uint64_t count = first_.size();
    out.write(reinterpret_cast<const char*>(&steps), sizeof steps);
    out.write(reinterpret_cast<const char*>(&count), sizeof count);
    for (std::size_t i = 0; i < first_.size(); ++i) {
        write_vec(out, first_[i]);
        write_vec(out, second_[i]);
    }
}

void Adam::load(std::istream& in) {
    std::int64_t steps = 0;
    std::uint64_t count = 0;
    in.read(reinterpret_cast<char*>(&steps), sizeof steps);
    in.read(reinterpret_cast<char*>(&count), sizeof count);
    if (!in || count > 4096) throw IoError("corrupt optimizer state");
    steps_ = steps;
    first_.clear();
    second_.clear();
    for (std::uint64_t i = 0; i < count; ++i) {
        first_.push_back(read_vec(in));
        second_.push_back(read_vec(in));
    }
}

GradCheckReport grad_check(const TapeFunction& fn, const std::vector<std::vector<double>>& point,
                           double tolerance) {
    auto evaluate = [&](const std::vector<std::vector<double>>& x) {
        ad::Tape tape;
        std::vector<ad::Var> leaves;
        for (const auto& v : x) leaves.push_back(tape.leaf(v));
        return fn(tape, leaves).scalar();
    };

    std::vector<std::vector<double>> analytic;
    {
        ad::Tape tape;
        std::vector<ad::Var> leaves;
        for (const auto& v : point) leaves.push_back(tape.leaf(v));
        const auto out = fn(tape, leaves);
        const auto grads = tape.backward(out);
        for (const auto& l : leaves) analytic.push_back(grads.of(l));
    }

    std::vector<std::vector<double>> numeric(point.size());
    double scale = 0.0;
    auto x = point;
    for (std::size_t k = 0; k < point.size(); ++k) {
        numeric[k].resize(point[k].size());
        for (std::size_t i = 0; i < point[k].size(); ++i) {
            const double x0 = point[k][i];
            const double h = 1e-5 * std::max(1.0, std::abs(x0));
            x[k][i] = x0 + h;
            const double fp = evaluate(x);
            x[k][i] = x0 - h;
            const double fm = evaluate(x);
            x[k][i] = x0;
            numeric[k][i] = (fp - fm) / (2.0 * h);
            scale = std::max(scale, std::abs(numeric[k][i]));
        }
    }

    GradCheckReport report;
    const double floor = 1e-3 * scale + 1e-12;
    for (std::size_t k = 0; k < point.size(); ++k) {
        for (std::size_t i = 0; i < point[k].size(); ++i) {
            const double a = analytic[k][i], n = numeric[k][i];
            const double err = std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
            if (err > report.max_relative_error || (k == 0 && i == 0)) {
                report.max_relative_error = err;
                report.worst_input = k;
                report.worst_index = i;
                report.analytic = a;
                report.numeric = n;
            }
        }
    }
    report.passed = report.max_relative_error < tolerance;
    return report;
}

}  // namespace bloomgs::optim
