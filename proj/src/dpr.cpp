// Copyright Contributors to the BloomGS Project
// SPDX-License-Identifier: Apache-2.0

#include "bloomgs/dpr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace bloomgs::dpr {

void DprConfig::validate() const {
    if (!(lambda_pixel >= 0.0 && lambda_dist >= 0.0 && lambda_smooth >= 0.0))
        throw ConfigError("dpr weights must be non-negative");
    if (cmd_order < 1) throw ConfigError("cmd_order must be positive");
    if (!(sigma_spatial > 0.0) || !(sigma_color > 0.0)) throw ConfigError("bilateral sigmas must be positive");
    if (window < 3 || window % 2 == 0) throw ConfigError("bilateral window must be odd and >= 3");
    if (!(huber_fraction > 0.0)) throw ConfigError("huber fraction must be positive");
}

Grid2<double> gradient_weight(const ColorImage& image) {
    const int w = image.width(), h = image.height();
    Grid2<double> luma(w, h);
    for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u)
            luma(u, v) = 0.299 * image.at(u, v, 0) + 0.587 * image.at(u, v, 1) + 0.114 * image.at(u, v, 2);
    Grid2<double> weight(w, h, 1.0);
    for (int v = 0; v < h; ++v) {
        for (int u = 0; u < w; ++u) {
            const double gx = 0.5 * (luma(std::min(u + 1, w - 1), v) - luma(std::max(u - 1, 0), v));
            const double gy = 0.5 * (luma(u, std::min(v + 1, h - 1)) - luma(u, std::max(v - 1, 0)));
            weight(u, v) = std::exp(-std::sqrt(gx * gx + gy * gy));
        }
    }
    return weight;
}

LossGrad pixel_depth_loss(std::span<const double> prior, std::span<const double> rendered,
                          std::span<const double> weight, const Mask& valid, double huber_fraction) {
    const std::size_t n = valid.size();
    if (prior.size() != n || rendered.size() != n || weight.size() != n)
        throw InvalidArgument("pixel_depth_loss: shape mismatch");
    LossGrad out;
    out.grad.assign(n, 0.0);
    std::size_t count = 0;
    std::size_t argmax = n;
    double max_abs = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!valid.data()[i]) continue;
        ++count;
        const double r = std::abs(prior[i] - rendered[i]);
        if (r > max_abs) {
            max_abs = r;
            argmax = i;
        }
    }
    if (count == 0) {
        out.degenerate = true;
        return out;
    }
    if (max_abs == 0.0) return out;

    const double delta = huber_fraction * max_abs;
    const double inv_n = 1.0 / static_cast<double>(count);
    double d_delta = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!valid.data()[i]) continue;
        const double r = prior[i] - rendered[i];
        const double g = weight[i];
        if (std::abs(r) > delta) {
            out.value += g * std::abs(r);
            out.grad[i] += -inv_n * g * (r > 0.0 ? 1.0 : -1.0);
        } else {
            out.value += g * (r * r + delta * delta) / (2.0 * delta);
            out.grad[i] += -inv_n * g * r / delta;
            d_delta += inv_n * g * (0.5 - r * r / (2.0 * delta * delta));
        }
    }
    out.value *= inv_n;
    // delta = fraction * |prior - rendered| at the arg-max pixel.
    const double rm = prior[argmax] - rendered[argmax];
    out.grad[argmax] += d_delta * huber_fraction * (rm > 0.0 ? -1.0 : 1.0);
    return out;
}

double central_moment(std::span<const double> samples, int k) {
    if (samples.empty()) throw InvalidArgument("central_moment of an empty sample");
    if (k < 1) throw InvalidArgument("central moment order must be positive");
    double mean = 0.0;
    for (double x : samples) mean += x;
    mean /= static_cast<double>(samples.size());
    double m = 0.0;
    for (double x : samples) m += std::pow(x - mean, k);
    return m / static_cast<double>(samples.size());
}

namespace {

struct Moments {
    double mean = 0.0;
    std::vector<double> central;  // central[k] for k = 0..order
};

Moments moments_of(std::span<const double> x, int order) {
    Moments m;
    for (double v : x) m.mean += v;
    m.mean /= static_cast<double>(x.size());
    m.central.assign(static_cast<std::size_t>(order) + 1, 0.0);
    for (double v : x) {
        const double d = v - m.mean;
        double p = 1.0;
        for (int k = 0; k <= order; ++k) {
            m.central[k] += p;
            p *= d;
        }
    }
    for (auto& c : m.central) c /= static_cast<double>(x.size());
    return m;
}

// CMD on already-normalized samples, with gradients w.r.t. each normalized sample.
double cmd_normalized(std::span<const double> p, std::span<const double> q, int order, bool strict,
                      std::vector<double>* gp, std::vector<double>* gq) {
    const Moments mp = moments_of(p, order);
    const Moments mq = moments_of(q, order);
    double total = 0.0;
    std::vector<double> sgn(static_cast<std::size_t>(order) + 1, 0.0);
    for (int k = 1; k <= order; ++k) {
        double diff;
        if (k == 1)
            diff = strict ? 0.0 : mp.mean - mq.mean;
        else
            diff = mp.central[k] - mq.central[k];
        total += std::abs(diff);
        sgn[k] = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    }
    auto fill = [&](std::span<const double> x, const Moments& m, double side, std::vector<double>* g) {
        if (!g) return;
        const double inv_n = 1.0 / static_cast<double>(x.size());
        g->assign(x.size(), 0.0);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double d = x[i] - m.mean;
            double acc = sgn[1] * inv_n;
            double dpow = 1.0;  // d^(k-1)
            for (int k = 2; k <= order; ++k) {
                dpow *= d;
                acc += sgn[k] * k * inv_n * (dpow - m.central[k - 1]);
            }
            (*g)[i] = side * acc;
        }
    };
    fill(p, mp, 1.0, gp);
    fill(q, mq, -1.0, gq);
    return total;
}

}  // namespace

double cmd_distance(std::span<const double> p, std::span<const double> q, int order, bool strict_first_moment) {
    if (p.empty() || q.empty()) throw InvalidArgument("cmd_distance needs non-empty samples");
    if (order < 1) throw InvalidArgument("cmd order must be positive");
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (double x : p) lo = std::min(lo, x), hi = std::max(hi, x);
    for (double x : q) lo = std::min(lo, x), hi = std::max(hi, x);
    const double width = hi - lo;
    if (!(width > 0.0)) return 0.0;
    std::vector<double> pn(p.size()), qn(q.size());
    for (std::size_t i = 0; i < p.size(); ++i) pn[i] = (p[i] - lo) / width;
    for (std::size_t i = 0; i < q.size(); ++i) qn[i] = (q[i] - lo) / width;
    return cmd_normalized(pn, qn, order, strict_first_moment, nullptr, nullptr);
}

LossGrad dist_depth_loss(std::span<const double> prior, std::span<const double> rendered, const Mask& valid,
                         int order, bool strict_first_moment) {
    const std::size_t n = valid.size();
    if (prior.size() != n || rendered.size() != n) throw InvalidArgument("dist_depth_loss: shape mismatch");
    LossGrad out;
    out.grad.assign(n, 0.0);
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < n; ++i)
        if (valid.data()[i]) idx.push_back(i);
    if (idx.size() < 2) {
        out.degenerate = true;
        return out;
    }
    // Joint range; ties resolve to the first occurrence, prior samples first.
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    std::size_t arg_lo = 0, arg_hi = 0;
    bool lo_rendered = false, hi_rendered = false;
    for (std::size_t i : idx) {
        if (prior[i] < lo) lo = prior[i], arg_lo = i, lo_rendered = false;
        if (prior[i] > hi) hi = prior[i], arg_hi = i, hi_rendered = false;
    }
    for (std::size_t i : idx) {
        if (rendered[i] < lo) lo = rendered[i], arg_lo = i, lo_rendered = true;
        if (rendered[i] > hi) hi = rendered[i], arg_hi = i, hi_rendered = true;
    }
    const double width = hi - lo;
    if (!(width > 0.0)) return out;

    std::vector<double> pn(idx.size()), qn(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) {
        pn[j] = (prior[idx[j]] - lo) / width;
        qn[j] = (rendered[idx[j]] - lo) / width;
    }
    std::vector<double> gp, gq;
    out.value = cmd_normalized(pn, qn, order, strict_first_moment, &gp, &gq);

    // x' = (x - lo) / w: dx'/dx = 1/w, dx'/dlo = (x' - 1)/w, dx'/dhi = -x'/w.
    double g_lo = 0.0, g_hi = 0.0;
    for (std::size_t j = 0; j < idx.size(); ++j) {
        out.grad[idx[j]] += gq[j] / width;
        g_lo += (gp[j] * (pn[j] - 1.0) + gq[j] * (qn[j] - 1.0)) / width;
        g_hi += (gp[j] * -pn[j] + gq[j] * -qn[j]) / width;
    }
    if (lo_rendered) out.grad[arg_lo] += g_lo;
    if (hi_rendered) out.grad[arg_hi] += g_hi;
    return out;
}

LossGrad smooth_depth_loss(std::span<const double> rendered, const Mask& valid, const DprConfig& config) {
    config.validate();
    const int w = valid.width(), h = valid.height();
    const std::size_t n = valid.size();
    if (rendered.size() != n) throw InvalidArgument("smooth_depth_loss: shape mismatch");
    LossGrad out;
    out.grad.assign(n, 0.0);
    std::size_t count = 0;
    for (auto m : valid.data()) count += m != 0;
    if (count == 0) {
        out.degenerate = true;
        return out;
    }
    const int r = config.window / 2;
    const double inv_ss = 1.0 / (2.0 * config.sigma_spatial * config.sigma_spatial);
    const double inv_sc = 1.0 / (2.0 * config.sigma_color * config.sigma_color);
    const double inv_count = 1.0 / static_cast<double>(count);

    for (int v = 0; v < h; ++v) {
        for (int u = 0; u < w; ++u) {
            const std::size_t p = valid.index(u, v);
            if (!valid.data()[p]) continue;
            int neighbours = 0;
            for (int dv = -r; dv <= r; ++dv)
                for (int du = -r; du <= r; ++du) {
                    const int uu = u + du, vv = v + dv;
                    if ((du || dv) && uu >= 0 && vv >= 0 && uu < w && vv < h && valid(uu, vv)) ++neighbours;
                }
            if (neighbours == 0) continue;
            const double c = inv_count / neighbours;
            for (int dv = -r; dv <= r; ++dv) {
                for (int du = -r; du <= r; ++du) {
                    const int uu = u + du, vv = v + dv;
                    if (!(du || dv) || uu < 0 || vv < 0 || uu >= w || vv >= h || !valid(uu, vv)) continue;
                    const std::size_t q = valid.index(uu, vv);
                    const double gs = std::exp(-(du * du + dv * dv) * inv_ss);
                    const double d = rendered[p] - rendered[q];
                    const double gc = std::exp(-d * d * inv_sc);
                    out.value += c * gs * gc * d * d;
                    // d/dd [exp(-d^2 a) d^2] = exp(-d^2 a) (2d - 2a d^3)
                    const double dd = c * gs * gc * (2.0 * d - 2.0 * inv_sc * d * d * d);
                    out.grad[p] += dd;
                    out.grad[q] -= dd;
                }
            }
        }
    }
    return out;
}

LossGrad dpr_loss(std::span<const double> prior, std::span<const double> rendered, const ColorImage& image,
                  const Mask& valid, const DprConfig& config, DprBreakdown* breakdown) {
    config.validate();
    const auto weight = gradient_weight(image);
    const auto pixel = pixel_depth_loss(prior, rendered, weight.data(), valid, config.huber_fraction);
    const auto dist = dist_depth_loss(prior, rendered, valid, config.cmd_order, config.strict_first_moment);
    const auto smooth = smooth_depth_loss(rendered, valid, config);
    LossGrad out;
    out.value = config.combine(pixel.value, dist.value, smooth.value);
    out.grad.resize(rendered.size());
    for (std::size_t i = 0; i < out.grad.size(); ++i)
        out.grad[i] = config.lambda_pixel * pixel.grad[i] + config.lambda_dist * dist.grad[i] +
                      config.lambda_smooth * smooth.grad[i];
    out.degenerate = pixel.degenerate || dist.degenerate;
    if (breakdown) *breakdown = {pixel.value, dist.value, smooth.value, out.value};
    return out;
}

LossGrad dpr_loss(const DepthMap& prior, const DepthMap& rendered, const ColorImage& image, const Mask& valid,
                  const DprConfig& config, DprBreakdown* breakdown) {
    const int w = prior.width(), h = prior.height();
    if (rendered.width() != w || rendered.height() != h || !valid.same_shape(w, h) || image.width() != w ||
        image.height() != h)
        throw InvalidArgument("dpr_loss: shape mismatch");
    Mask both(w, h, 0);
    for (std::size_t i = 0; i < both.size(); ++i)
        both.data()[i] = valid.data()[i] && prior.validity().data()[i] && rendered.validity().data()[i];
    return dpr_loss(prior.values().data(), rendered.values().data(), image, both, config, breakdown);
}

ad::Var as_node(const ad::Var& rendered_depth, LossGrad loss) {
    if (loss.grad.size() != rendered_depth.size()) throw InvalidArgument("as_node: gradient size mismatch");
    return rendered_depth.tape()->custom(
        {loss.value}, {rendered_depth},
        [grad = std::move(loss.grad)](std::span<const double> g, std::span<std::span<double>> gin) {
            for (std::size_t i = 0; i < grad.size(); ++i) gin[0][i] += g[0] * grad[i];
        });
}

}  // namespace bloomgs::dpr
