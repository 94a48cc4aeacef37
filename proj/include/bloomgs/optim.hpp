// Copyright Contributors to the BloomGS Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "bloomgs/autodiff.hpp"

#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace bloomgs::optim {

/// A trainable buffer tagged with its learning-rate group.
struct Parameter {
    std::string group;
    std::vector<double> value;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::map<std::string, double> learning_rates;
};

/// Adam with bias correction and per-group learning rates.
class Adam {
public:
    explicit Adam(AdamConfig config) : config_(std::move(config)) {}

    /// Applies one update. `grads[i]` pairs with `params[i]`; the parameter list must
    /// keep the same order and shapes between calls. Throws NumericError naming the
    /// group of the first non-finite gradient, before touching any parameter.
    void step(std::span<Parameter* const> params, std::span<const std::vector<double>> grads);

    long step_count() const { return steps_; }
    const AdamConfig& config() const { return config_; }

    void save(std::ostream& out) const;
    void load(std::istream& in);

private:
    AdamConfig config_;
    long steps_ = 0;
    std::vector<std::vector<double>> first_;
    std::vector<std::vector<double>> second_;
};

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::size_t worst_input = 0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    bool passed = false;
};

/// Scalar function of tape leaves, one leaf per entry of the evaluation point.
using TapeFunction = std::function<ad::Var(ad::Tape&, std::span<const ad::Var>)>;

/// Compares tape gradients with central differences (step 1e-5 * max(1, |x|)).
///
/// The relative error of an entry is |a - n| / max(|a|, |n|, floor) where floor is
/// 1e-3 times the largest numeric gradient magnitude (plus 1e-12), so entries far
/// below the gradient's scale are judged against that scale rather than against
/// their own rounding noise. Randomness and quantization must be frozen by the caller.
GradCheckReport grad_check(const TapeFunction& fn, const std::vector<std::vector<double>>& point,
                           double tolerance = 1e-4);

}  // namespace bloomgs::optim
