// Copyright Contributors to the BloomGS Project
// SPDX-License-Identifier: Apache-2.0
//
// CPU Gaussian splatting with alpha-blended color and z-depth.
#pragma once

#include "bloomgs/autodiff.hpp"
#include "bloomgs/core.hpp"

#include <vector>

namespace bloomgs::render {

struct SplatScene {
    std::vector<Gaussian3D> gaussians;
    Vec3 background = Vec3::Zero();
};

struct RenderSettings {
    double alpha_cap = 0.999;
    /// Isotropic screen-space variance (pixels^2) added to every projected covariance.
    double dilation = 0.3;
    /// Gaussians whose center is at or below this camera-z are skipped.
    double near = 0.01;
    /// Footprint cutoff in standard deviations (Mahalanobis radius).
    double cutoff_sigma = 3.0;
    /// The projection Jacobian is evaluated with x/z and y/z clamped to this
    /// multiple of the half field of view, so Gaussians grazing the near plane
    /// far off screen keep bounded footprints. Zero keeps the exact Jacobian.
    double fov_clamp = 0.0;
    /// Pixels whose transmittance fell below this value take no further splats.
    /// Zero keeps the blend exact.
    double min_transmittance = 0.0;
};

struct RenderOutput {
    ColorImage color;
    /// Unnormalized blended z-depth; valid where any splat contributed.
    DepthMap depth;
    Grid2<double> alpha;
};

/// Number of doubles per Gaussian in the flat parameter layout:
/// mean(3) scale(3) quaternion w,x,y,z(4) opacity(1) color(3).
inline constexpr std::size_t kGaussianStride = 14;

std::vector<double> flatten(const std::vector<Gaussian3D>& gaussians);

/// Sorted front to back by camera-z of the mean (ties by index); per pixel
/// C = sum c_i a_i T_i + T_end * background, D = sum d_i a_i T_i with
/// a_i = min(cap, opacity_i * G2D_i(pixel)). Quaternions are normalized internally.
RenderOutput render(const SplatScene& scene, const Camera& camera, const RenderSettings& settings = {});

/// Differentiable render over flat Gaussian parameters. The output node holds
/// [color (H*W*3, interleaved) | depth (H*W) | alpha (H*W)].
ad::Var render(const ad::Var& gaussians, const Camera& camera, const Vec3& background,
               const RenderSettings& settings = {});

struct RenderSlices {
    ad::Var color;
    ad::Var depth;
    ad::Var alpha;
};
RenderSlices split(const ad::Var& rendered, int width, int height);

/// (1 - lambda) * L1 + lambda * (1 - SSIM) over valid pixels, with an 11x11
/// Gaussian window (sigma 1.5) evaluated on mask-multiplied images. Zero for an
/// empty mask.
double photometric_loss(const ColorImage& rendered, const ColorImage& target, const Mask& valid,
                        double lambda_ssim = 0.2);

/// Value and gradient w.r.t. the interleaved rendered buffer.
double photometric_loss(std::span<const double> rendered, const ColorImage& target, const Mask& valid,
                        double lambda_ssim, std::vector<double>* grad);

ad::Var photometric_loss(const ad::Var& rendered_color, const ColorImage& target, const Mask& valid,
                         double lambda_ssim = 0.2);

/// Mean SSIM over valid pixels (same window as the loss).
double ssim(const ColorImage& a, const ColorImage& b, const Mask& valid);

}  // namespace bloomgs::render
