// Copyright Contributors to the BloomGS Project
// SPDX-License-Identifier: Apache-2.0
//
// Depth-prior regularization: a gradient-aware Huber loss, a central moment
// discrepancy between depth distributions, and a bilateral smoothness term.
// Each loss reports its value and, on request, its exact gradient w.r.t. the
// rendered depth.
#pragma once

#include "bloomgs/autodiff.hpp"
#include "bloomgs/core.hpp"

#include <span>
#include <vector>

namespace bloomgs::dpr {

struct DprConfig {
    double lambda_pixel = 0.7;
    double lambda_dist = 0.1;
    double lambda_smooth = 1.0;
    int cmd_order = 5;
    double sigma_spatial = 2.0;
    double sigma_color = 0.1;
    int window = 5;
    /// Huber threshold as a fraction of the largest residual. Fixed by the method.
    double huber_fraction = 0.2;
    /// Use the literal k=1 term (identically zero) instead of the mean difference.
    bool strict_first_moment = false;

    void validate() const;
    /// lambda_pixel * pixel + lambda_dist * dist + lambda_smooth * smooth.
    double combine(double pixel, double dist, double smooth) const {
        return lambda_pixel * pixel + lambda_dist * dist + lambda_smooth * smooth;
    }
};

/// A scalar loss with its gradient w.r.t. the rendered depth (row-major, H*W).
struct LossGrad {
    double value = 0.0;
    std::vector<double> grad;
    /// Set when the loss had no support (empty mask, too few pixels).
    bool degenerate = false;
};

/// exp(-|grad luma|) with central differences and replicated borders; values in (0, 1].
Grid2<double> gradient_weight(const ColorImage& image);

/// Mean over valid pixels of g * rho(D - D_hat) with per-pixel Huber branch
/// rho(r) = |r| if |r| > delta else (r^2 + delta^2) / (2 delta),
/// delta = fraction * max |r| over valid pixels.
LossGrad pixel_depth_loss(std::span<const double> prior, std::span<const double> rendered,
                          std::span<const double> weight, const Mask& valid, double huber_fraction = 0.2);

/// Mean of (x - mean(x))^k.
double central_moment(std::span<const double> samples, int k);

/// sum_{k=1..K} |mu_k(P) - mu_k(Q)| after joint min-max normalization; the k=1
/// term is the mean difference unless `strict_first_moment`.
double cmd_distance(std::span<const double> p, std::span<const double> q, int order,
                    bool strict_first_moment = false);

/// CMD between valid prior depths and valid rendered depths; gradient w.r.t. rendered.
LossGrad dist_depth_loss(std::span<const double> prior, std::span<const double> rendered, const Mask& valid,
                         int order, bool strict_first_moment = false);

/// Bilateral smoothness over valid pixels of the rendered depth.
LossGrad smooth_depth_loss(std::span<const double> rendered, const Mask& valid, const DprConfig& config);

struct DprBreakdown {
    double pixel = 0.0;
    double dist = 0.0;
    double smooth = 0.0;
    double total = 0.0;
};

/// lambda_pixel * pixel + lambda_dist * dist + lambda_smooth * smooth.
LossGrad dpr_loss(std::span<const double> prior, std::span<const double> rendered, const ColorImage& image,
                  const Mask& valid, const DprConfig& config, DprBreakdown* breakdown = nullptr);

/// Convenience overload for depth maps; `valid` is intersected with both validity masks.
LossGrad dpr_loss(const DepthMap& prior, const DepthMap& rendered, const ColorImage& image, const Mask& valid,
                  const DprConfig& config, DprBreakdown* breakdown = nullptr);

/// Wraps a LossGrad computed on `rendered_depth`'s value as a tape node.
ad::Var as_node(const ad::Var& rendered_depth, LossGrad loss);

}  // namespace bloomgs::dpr
