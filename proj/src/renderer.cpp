// Copyright Contributors to the BloomGS Project
// SPDX-License-Identifier: Apache-2.0

#include "bloomgs/renderer.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <numeric>

namespace bloomgs::render {

using Mat23 = Eigen::Matrix<double, 2, 3>;
using Mat2 = Eigen::Matrix2d;
using Vec2 = Eigen::Vector2d;

std::vector<double> flatten(const std::vector<Gaussian3D>& gaussians) {
    std::vector<double> flat;
    flat.reserve(gaussians.size() * kGaussianStride);
    for (const auto& g : gaussians) {
        flat.insert(flat.end(), {g.mean.x(), g.mean.y(), g.mean.z(), g.scale.x(), g.scale.y(), g.scale.z(),
                                 g.rotation[0], g.rotation[1], g.rotation[2], g.rotation[3], g.opacity,
                                 g.color.x(), g.color.y(), g.color.z()});
    }
    return flat;
}

namespace {

// Per-Gaussian screen-space quantities kept for the backward pass.
struct Projected {
    bool visible = false;
    Vec3 cam = Vec3::Zero();  // camera-space mean
    Vec2 mean2 = Vec2::Zero();
    Mat2 cov2 = Mat2::Zero();
    Mat2 conic = Mat2::Zero();
    Mat23 t = Mat23::Zero();  // J * W
    Mat3 rot = Mat3::Identity();
    Mat3 sigma = Mat3::Zero();
    std::array<double, 4> qn{};  // normalized quaternion
    double qnorm = 1.0;
    Vec2 jxy = Vec2::Zero();  // camera x, y used by the Jacobian (clamped)
    bool clamp_x = false;
    bool clamp_y = false;
};

struct Contribution {
    std::uint32_t gaussian;
    std::uint32_t pixel;
    double alpha;  // blended alpha after the cap
    double g;      // 2D Gaussian value
    double t;      // transmittance before this splat
    bool capped;
};

struct ForwardCache {
    int width = 0;
    int height = 0;
    std::vector<Projected> proj;
    std::vector<Contribution> contribs;  // Gaussian-major in blend order
    std::vector<double> final_t;
};

Projected project_gaussian(const double* p, const Camera& camera, const RenderSettings& s) {
    Projected out;
    const Vec3 mean(p[0], p[1], p[2]);
    out.cam = camera.world_to_camera(mean);
    const double z = out.cam.z();
    if (!(z > s.near)) return out;
    const double qn = std::sqrt(p[6] * p[6] + p[7] * p[7] + p[8] * p[8] + p[9] * p[9]);
    if (!(qn > 0.0)) return out;
    out.qnorm = qn;
    out.qn = {p[6] / qn, p[7] / qn, p[8] / qn, p[9] / qn};
    out.rot = rotation_from_quat(out.qn);
    const Vec3 scale(p[3], p[4], p[5]);
    const Mat3 m = out.rot * scale.asDiagonal();
    out.sigma = m * m.transpose();

    const auto& k = camera.intrinsics();
    const double w = camera.width(), h = camera.height();
    const double tx = out.cam.x() / z, ty = out.cam.y() / z;
    const double pad = 0.5 * (s.fov_clamp - 1.0);
    const bool clamp = s.fov_clamp > 0.0;
    const double ctx = !clamp ? tx : std::clamp(tx, (-pad * w - k.cx) / k.fx, ((1.0 + pad) * w - k.cx) / k.fx);
    const double cty = !clamp ? ty : std::clamp(ty, (-pad * h - k.cy) / k.fy, ((1.0 + pad) * h - k.cy) / k.fy);
    out.clamp_x = ctx != tx;
    out.clamp_y = cty != ty;
    const double x = out.clamp_x ? ctx * z : out.cam.x(), y = out.clamp_y ? cty * z : out.cam.y();
    out.jxy = Vec2(x, y);
    Mat23 j;
    j << k.fx / z, 0.0, -k.fx * x / (z * z), 0.0, k.fy / z, -k.fy * y / (z * z);
    out.t = j * camera.rotation();
    out.cov2 = out.t * out.sigma * out.t.transpose();
    out.cov2(0, 0) += s.dilation;
    out.cov2(1, 1) += s.dilation;
    out.cov2(0, 1) = out.cov2(1, 0) = 0.5 * (out.cov2(0, 1) + out.cov2(1, 0));
    const double det = out.cov2.determinant();
    if (!(det > 0.0)) return out;
    out.conic << out.cov2(1, 1) / det, -out.cov2(0, 1) / det, -out.cov2(1, 0) / det, out.cov2(0, 0) / det;
    out.mean2 = Vec2(k.fx * tx + k.cx, k.fy * ty + k.cy);
    out.visible = true;
    return out;
}

std::vector<std::uint32_t> depth_order(const std::vector<Projected>& proj) {
    std::vector<std::uint32_t> order;
    for (std::uint32_t i = 0; i < proj.size(); ++i)
        if (proj[i].visible) order.push_back(i);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return proj[a].cam.z() < proj[b].cam.z(); });
    return order;
}

// Forward pass; writes [color | depth | alpha] into `out`.
std::shared_ptr<ForwardCache> forward(std::span<const double> params, const Camera& camera,
                                      const Vec3& background, const RenderSettings& s,
                                      std::vector<double>& out, bool keep) {
    if (params.size() % kGaussianStride != 0) throw InvalidArgument("render: parameter buffer size");
    const int w = camera.width(), h = camera.height();
    const std::size_t npix = static_cast<std::size_t>(w) * h;
    const std::size_t n = params.size() / kGaussianStride;

    auto cache = std::make_shared<ForwardCache>();
    cache->width = w;
    cache->height = h;
    cache->proj.resize(n);
    for (std::size_t i = 0; i < n; ++i) cache->proj[i] = project_gaussian(params.data() + i * kGaussianStride, camera, s);

    out.assign(npix * 5, 0.0);
    double* color = out.data();
    double* depth = color + npix * 3;
    double* alpha = depth + npix;
    std::vector<double> trans(npix, 1.0);
    const double cut2 = s.cutoff_sigma * s.cutoff_sigma;
    if (keep) cache->contribs.reserve(n * 16);

    for (std::uint32_t gi : depth_order(cache->proj)) {
        const Projected& pr = cache->proj[gi];
        const double* p = params.data() + gi * kGaussianStride;
        const double opacity = p[10];
        const double ru = s.cutoff_sigma * std::sqrt(pr.cov2(0, 0));
        const double rv = s.cutoff_sigma * std::sqrt(pr.cov2(1, 1));
        const int u0 = std::max(0, static_cast<int>(std::ceil(pr.mean2.x() - ru - 0.5)));
        const int u1 = std::min(w - 1, static_cast<int>(std::floor(pr.mean2.x() + ru - 0.5)));
        const int v0 = std::max(0, static_cast<int>(std::ceil(pr.mean2.y() - rv - 0.5)));
        const int v1 = std::min(h - 1, static_cast<int>(std::floor(pr.mean2.y() + rv - 0.5)));
        for (int v = v0; v <= v1; ++v) {
            for (int u = u0; u <= u1; ++u) {
                const double dx = u + 0.5 - pr.mean2.x();
                const double dy = v + 0.5 - pr.mean2.y();
                const double maha = pr.conic(0, 0) * dx * dx + 2.0 * pr.conic(0, 1) * dx * dy + pr.conic(1, 1) * dy * dy;
                if (maha > cut2) continue;
                const std::size_t pix = static_cast<std::size_t>(v) * w + u;
                const double t = trans[pix];
                if (t < s.min_transmittance) continue;
                const double g = std::exp(-0.5 * maha);
                const double raw = opacity * g;
                const bool capped = raw > s.alpha_cap;
                const double a = capped ? s.alpha_cap : raw;
                const double wgt = a * t;
                color[pix * 3 + 0] += p[11] * wgt;
                color[pix * 3 + 1] += p[12] * wgt;
                color[pix * 3 + 2] += p[13] * wgt;
                depth[pix] += pr.cam.z() * wgt;
                trans[pix] = t * (1.0 - a);
                if (keep) cache->contribs.push_back({gi, static_cast<std::uint32_t>(pix), a, g, t, capped});
            }
        }
    }
    for (std::size_t pix = 0; pix < npix; ++pix) {
        for (int c = 0; c < 3; ++c) color[pix * 3 + c] += trans[pix] * background[c];
        alpha[pix] = 1.0 - trans[pix];
    }
    cache->final_t = std::move(trans);
    return cache;
}

// d R(q) / d q for each quaternion component, contracted with dL/dR.
std::array<double, 4> rotation_backward(const std::array<double, 4>& q, const Mat3& gr) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    std::array<double, 4> g{};
    g[0] = 2.0 * (-z * gr(0, 1) + y * gr(0, 2) + z * gr(1, 0) - x * gr(1, 2) - y * gr(2, 0) + x * gr(2, 1));
    g[1] = 2.0 * (y * gr(0, 1) + z * gr(0, 2) + y * gr(1, 0) - w * gr(1, 2) + z * gr(2, 0) + w * gr(2, 1)) -
           4.0 * x * (gr(1, 1) + gr(2, 2));
    g[2] = 2.0 * (x * gr(0, 1) + w * gr(0, 2) + x * gr(1, 0) + z * gr(1, 2) - w * gr(2, 0) + z * gr(2, 1)) -
           4.0 * y * (gr(0, 0) + gr(2, 2));
    g[3] = 2.0 * (-w * gr(0, 1) + x * gr(0, 2) + w * gr(1, 0) + y * gr(1, 2) + x * gr(2, 0) + y * gr(2, 1)) -
           4.0 * z * (gr(0, 0) + gr(1, 1));
    return g;
}

void backward(const ForwardCache& cache, std::span<const double> params, const Camera& camera,
              const Vec3& background, std::span<const double> grad_out, std::span<double> grad_params) {
    const int w = cache.width, h = cache.height;
    const std::size_t npix = static_cast<std::size_t>(w) * h;
    const double* g_color = grad_out.data();
    const double* g_depth = g_color + npix * 3;
    const double* g_alpha = g_depth + npix;

    const std::size_t n = cache.proj.size();
    // Screen-space gradients per Gaussian.
    std::vector<Vec2> g_mean2(n, Vec2::Zero());
    std::vector<Mat2> g_conic(n, Mat2::Zero());
    std::vector<double> g_z(n, 0.0);

    // Suffix sums after the current splat, seeded with what follows the last one.
    std::vector<double> suffix(npix * 4);
    for (std::size_t pix = 0; pix < npix; ++pix) {
        for (int c = 0; c < 3; ++c) suffix[pix * 4 + c] = cache.final_t[pix] * background[c];
        suffix[pix * 4 + 3] = 0.0;
    }

    for (auto it = cache.contribs.rbegin(); it != cache.contribs.rend(); ++it) {
        const Contribution& ct = *it;
        const std::size_t gi = ct.gaussian;
        const std::size_t pix = ct.pixel;
        const double* p = params.data() + gi * kGaussianStride;
        double* gp = grad_params.data() + gi * kGaussianStride;
        const Projected& pr = cache.proj[gi];
        const double wgt = ct.alpha * ct.t;
        const double d = pr.cam.z();
        double* suf = suffix.data() + pix * 4;

        double d_alpha = 0.0;
        for (int c = 0; c < 3; ++c) {
            gp[11 + c] += g_color[pix * 3 + c] * wgt;
            d_alpha += g_color[pix * 3 + c] * (p[11 + c] * ct.t - suf[c] / (1.0 - ct.alpha));
        }
        d_alpha += g_depth[pix] * (d * ct.t - suf[3] / (1.0 - ct.alpha));
        d_alpha += g_alpha[pix] * cache.final_t[pix] / (1.0 - ct.alpha);
        g_z[gi] += g_depth[pix] * wgt;

        for (int c = 0; c < 3; ++c) suf[c] += p[11 + c] * wgt;
        suf[3] += d * wgt;

        if (ct.capped) continue;
        gp[10] += d_alpha * ct.g;
        const double d_maha = d_alpha * p[10] * ct.g * -0.5;
        const double dx = static_cast<double>(pix % w) + 0.5 - pr.mean2.x();
        const double dy = static_cast<double>(pix / w) + 0.5 - pr.mean2.y();
        // maha = dx^T Q dx; dmaha/dQ = d d^T, dmaha/dmean2 = -2 Q d.
        g_conic[gi](0, 0) += d_maha * dx * dx;
        g_conic[gi](0, 1) += d_maha * dx * dy;
        g_conic[gi](1, 0) += d_maha * dx * dy;
        g_conic[gi](1, 1) += d_maha * dy * dy;
        g_mean2[gi].x() += d_maha * -2.0 * (pr.conic(0, 0) * dx + pr.conic(0, 1) * dy);
        g_mean2[gi].y() += d_maha * -2.0 * (pr.conic(1, 0) * dx + pr.conic(1, 1) * dy);
    }

    const auto& k = camera.intrinsics();
    const Mat3& wrot = camera.rotation();
    for (std::size_t gi = 0; gi < n; ++gi) {
        const Projected& pr = cache.proj[gi];
        if (!pr.visible) continue;
        const double* p = params.data() + gi * kGaussianStride;
        double* gp = grad_params.data() + gi * kGaussianStride;

        const Mat2 g_cov2 = -pr.conic * g_conic[gi] * pr.conic;
        const Mat23 g_t = 2.0 * g_cov2 * pr.t * pr.sigma;
        const Mat3 g_sigma = pr.t.transpose() * g_cov2 * pr.t;
        const Mat23 g_j = g_t * wrot.transpose();

        const double x = pr.cam.x(), y = pr.cam.y(), z = pr.cam.z();
        const double z2 = z * z, z3 = z2 * z;
        Vec3 g_cam = Vec3::Zero();
        g_cam.x() += g_mean2[gi].x() * k.fx / z;
        g_cam.y() += g_mean2[gi].y() * k.fy / z;
        g_cam.z() += -g_mean2[gi].x() * k.fx * x / z2 - g_mean2[gi].y() * k.fy * y / z2;
        g_cam.z() += g_z[gi];
        // A clamped coordinate enters the Jacobian as (x/z) z with x/z constant.
        const double jx = pr.jxy.x(), jy = pr.jxy.y();
        g_cam.z() += g_j(0, 0) * -k.fx / z2 + g_j(1, 1) * -k.fy / z2;
        g_cam.z() += g_j(0, 2) * (pr.clamp_x ? 1.0 : 2.0) * k.fx * jx / z3;
        g_cam.z() += g_j(1, 2) * (pr.clamp_y ? 1.0 : 2.0) * k.fy * jy / z3;
        if (!pr.clamp_x) g_cam.x() += g_j(0, 2) * -k.fx / z2;
        if (!pr.clamp_y) g_cam.y() += g_j(1, 2) * -k.fy / z2;
        const Vec3 g_mean = wrot.transpose() * g_cam;
        for (int c = 0; c < 3; ++c) gp[c] += g_mean[c];

        const Vec3 scale(p[3], p[4], p[5]);
        const Mat3 m = pr.rot * scale.asDiagonal();
        const Mat3 g_m = 2.0 * g_sigma * m;
        const Mat3 rt_gm = pr.rot.transpose() * g_m;
        for (int c = 0; c < 3; ++c) gp[3 + c] += rt_gm(c, c);
        const Mat3 g_r = g_m * scale.asDiagonal();
        const auto g_qn = rotation_backward(pr.qn, g_r);
        double dot = 0.0;
        for (int c = 0; c < 4; ++c) dot += pr.qn[c] * g_qn[c];
        for (int c = 0; c < 4; ++c) gp[6 + c] += (g_qn[c] - pr.qn[c] * dot) / pr.qnorm;
    }
}

}  // namespace

RenderOutput render(const SplatScene& scene, const Camera& camera, const RenderSettings& settings) {
    const auto params = flatten(scene.gaussians);
    std::vector<double> out;
    forward(params, camera, scene.background, settings, out, false);
    const int w = camera.width(), h = camera.height();
    const std::size_t npix = static_cast<std::size_t>(w) * h;
    RenderOutput r{ColorImage(w, h), DepthMap(w, h), Grid2<double>(w, h, 0.0)};
    std::copy(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(npix * 3), r.color.data().begin());
    for (int v = 0; v < h; ++v) {
        for (int u = 0; u < w; ++u) {
            const std::size_t pix = static_cast<std::size_t>(v) * w + u;
            r.alpha(u, v) = out[npix * 4 + pix];
            if (r.alpha(u, v) > 0.0) r.depth.set(u, v, out[npix * 3 + pix]);
        }
    }
    return r;
}

ad::Var render(const ad::Var& gaussians, const Camera& camera, const Vec3& background,
               const RenderSettings& settings) {
    std::vector<double> out;
    ad::Tape* tape = gaussians.tape();
    auto cache = forward(gaussians.value(), camera, background, settings, out, tape->requires_grad(gaussians));
    return tape->custom(std::move(out), {gaussians},
                        [cache, tape, idx = gaussians.index(), camera, background](
                            std::span<const double> g, std::span<std::span<double>> gin) {
                            backward(*cache, tape->value(idx), camera, background, g, gin[0]);
                        });
}

RenderSlices split(const ad::Var& rendered, int width, int height) {
    const std::uint32_t npix = static_cast<std::uint32_t>(width) * static_cast<std::uint32_t>(height);
    if (rendered.size() != static_cast<std::size_t>(npix) * 5) throw InvalidArgument("split: render size mismatch");
    auto range = [](std::uint32_t begin, std::uint32_t count) {
        std::vector<std::uint32_t> idx(count);
        std::iota(idx.begin(), idx.end(), begin);
        return idx;
    };
    return {ad::gather(rendered, range(0, npix * 3)), ad::gather(rendered, range(npix * 3, npix)),
            ad::gather(rendered, range(npix * 4, npix))};
}

// ---------------------------------------------------------------------------
// Photometric loss

namespace {

constexpr int kWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kWindow> ssim_kernel() {
    std::array<double, kWindow> k{};
    double total = 0.0;
    for (int i = 0; i < kWindow; ++i) {
        const double x = i - kWindow / 2;
        k[i] = std::exp(-x * x / (2.0 * kSsimSigma * kSsimSigma));
        total += k[i];
    }
    for (auto& v : k) v /= total;
    return k;
}

// Separable zero-padded "same" filtering of a single-channel plane. The kernel is
// symmetric, so this operator is its own adjoint.
std::vector<double> blur(const std::vector<double>& in, int w, int h) {
    static const auto k = ssim_kernel();
    constexpr int r = kWindow / 2;
    std::vector<double> tmp(in.size(), 0.0), out(in.size(), 0.0);
    for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u) {
            double s = 0.0;
            for (int i = -r; i <= r; ++i) {
                const int uu = u + i;
                if (uu >= 0 && uu < w) s += k[i + r] * in[static_cast<std::size_t>(v) * w + uu];
            }
            tmp[static_cast<std::size_t>(v) * w + u] = s;
        }
    for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u) {
            double s = 0.0;
            for (int i = -r; i <= r; ++i) {
                const int vv = v + i;
                if (vv >= 0 && vv < h) s += k[i + r] * tmp[static_cast<std::size_t>(vv) * w + u];
            }
            out[static_cast<std::size_t>(v) * w + u] = s;
        }
    return out;
}

// Mean SSIM over valid pixels and channels; optionally the gradient w.r.t. `x`
// scaled by `upstream`.
double ssim_impl(std::span<const double> x_in, std::span<const double> y_in, const Mask& valid, int w, int h,
                 double upstream, std::vector<double>* grad) {
    const std::size_t npix = static_cast<std::size_t>(w) * h;
    std::size_t nvalid = 0;
    for (auto m : valid.data()) nvalid += m != 0;
    if (nvalid == 0) return 0.0;
    const double norm = 1.0 / (3.0 * static_cast<double>(nvalid));
    double total = 0.0;
    for (int c = 0; c < 3; ++c) {
        std::vector<double> x(npix), y(npix), xx(npix), yy(npix), xy(npix);
        for (std::size_t i = 0; i < npix; ++i) {
            const double m = valid.data()[i] ? 1.0 : 0.0;
            x[i] = x_in[i * 3 + c] * m;
            y[i] = y_in[i * 3 + c] * m;
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mx = blur(x, w, h), my = blur(y, w, h);
        const auto exx = blur(xx, w, h), eyy = blur(yy, w, h), exy = blur(xy, w, h);
        std::vector<double> g_mx, g_exx, g_exy;
        if (grad) {
            g_mx.assign(npix, 0.0);
            g_exx.assign(npix, 0.0);
            g_exy.assign(npix, 0.0);
        }
        for (std::size_t i = 0; i < npix; ++i) {
            if (!valid.data()[i]) continue;
            const double a1 = 2.0 * mx[i] * my[i] + kC1;
            const double a2 = 2.0 * (exy[i] - mx[i] * my[i]) + kC2;
            const double b1 = mx[i] * mx[i] + my[i] * my[i] + kC1;
            const double b2 = exx[i] - mx[i] * mx[i] + eyy[i] - my[i] * my[i] + kC2;
            const double s = a1 * a2 / (b1 * b2);
            total += s;
            if (grad) {
                const double ws = upstream * norm;
                g_mx[i] = ws * (s / a1 * 2.0 * my[i] - s / a2 * 2.0 * my[i] - s / b1 * 2.0 * mx[i] + s / b2 * 2.0 * mx[i]);
                g_exx[i] = ws * (-s / b2);
                g_exy[i] = ws * (2.0 * s / a2);
            }
        }
        if (grad) {
            const auto b_mx = blur(g_mx, w, h), b_exx = blur(g_exx, w, h), b_exy = blur(g_exy, w, h);
            for (std::size_t i = 0; i < npix; ++i) {
                if (!valid.data()[i]) continue;
                (*grad)[i * 3 + c] += b_mx[i] + 2.0 * x[i] * b_exx[i] + y[i] * b_exy[i];
            }
        }
    }
    return total * norm;
}

}  // namespace

double photometric_loss(std::span<const double> rendered, const ColorImage& target, const Mask& valid,
                        double lambda_ssim, std::vector<double>* grad) {
    const int w = target.width(), h = target.height();
    const std::size_t npix = static_cast<std::size_t>(w) * h;
    if (rendered.size() != npix * 3 || !valid.same_shape(w, h))
        throw InvalidArgument("photometric_loss: shape mismatch");
    if (grad) grad->assign(npix * 3, 0.0);
    std::size_t nvalid = 0;
    for (auto m : valid.data()) nvalid += m != 0;
    if (nvalid == 0) return 0.0;

    const double l1_norm = 1.0 / (3.0 * static_cast<double>(nvalid));
    double l1 = 0.0;
    for (std::size_t i = 0; i < npix; ++i) {
        if (!valid.data()[i]) continue;
        for (int c = 0; c < 3; ++c) {
            const double r = rendered[i * 3 + c] - target.data()[i * 3 + c];
            l1 += std::abs(r);
            if (grad && r != 0.0) (*grad)[i * 3 + c] += (1.0 - lambda_ssim) * l1_norm * (r > 0.0 ? 1.0 : -1.0);
        }
    }
    l1 *= l1_norm;
    const double s = ssim_impl(rendered, target.data(), valid, w, h, -lambda_ssim, grad);
    return (1.0 - lambda_ssim) * l1 + lambda_ssim * (1.0 - s);
}

double photometric_loss(const ColorImage& rendered, const ColorImage& target, const Mask& valid,
                        double lambda_ssim) {
    if (rendered.width() != target.width() || rendered.height() != target.height())
        throw InvalidArgument("photometric_loss: image shapes differ");
    return photometric_loss(rendered.data(), target, valid, lambda_ssim, nullptr);
}

ad::Var photometric_loss(const ad::Var& rendered_color, const ColorImage& target, const Mask& valid,
                         double lambda_ssim) {
    std::vector<double> grad;
    const double value = photometric_loss(rendered_color.value(), target, valid, lambda_ssim, &grad);
    return rendered_color.tape()->custom(
        {value}, {rendered_color}, [grad = std::move(grad)](std::span<const double> g, std::span<std::span<double>> gin) {
            for (std::size_t i = 0; i < grad.size(); ++i) gin[0][i] += g[0] * grad[i];
        });
}

double ssim(const ColorImage& a, const ColorImage& b, const Mask& valid) {
    if (a.width() != b.width() || a.height() != b.height() || !valid.same_shape(a.width(), a.height()))
        throw InvalidArgument("ssim: shape mismatch");
    return ssim_impl(a.data(), b.data(), valid, a.width(), a.height(), 0.0, nullptr);
}

}  // namespace bloomgs::render
