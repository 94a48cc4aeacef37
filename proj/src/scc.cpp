// Copyright Contributors to the BloomGS Project
// SPDX-License-Identifier: Apache-2.0

#include "bloomgs/scc.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace bloomgs::scc {
namespace {

void check_finite(const std::vector<double>& v, const char* what) {
    for (double x : v)
        if (!std::isfinite(x)) throw InvalidArgument(std::string("non-finite anchor ") + what);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double inverse_softplus(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

std::vector<double> tanh_all(std::vector<double> v) {
    for (double& x : v) x = std::tanh(x);
    return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// AnchorSet

AnchorSet::AnchorSet(int feature_dim_, int k_, std::size_t count)
    : feature_dim(feature_dim_), k(k_), locations(count * 3, 0.0),
      features(count * static_cast<std::size_t>(feature_dim_), 0.0), scaling(count * 6, 0.0),
      offsets(count * 3 * static_cast<std::size_t>(k_), 0.0) {
    if (feature_dim_ <= 0 || k_ <= 0) throw InvalidArgument("anchor dimensions must be positive");
}

std::pair<Group, int> AnchorSet::split_dim(int j) const {
    if (j < feature_dim) return {Group::Feature, j};
    if (j < feature_dim + 6) return {Group::Scaling, j - feature_dim};
    return {Group::Offset, j - feature_dim - 6};
}

double AnchorSet::attribute(std::size_t anchor, int j) const {
    return const_cast<AnchorSet*>(this)->attribute(anchor, j);
}

double& AnchorSet::attribute(std::size_t anchor, int j) {
    auto [group, idx] = split_dim(j);
    switch (group) {
        case Group::Feature: return features[anchor * feature_dim + idx];
        case Group::Scaling: return scaling[anchor * 6 + idx];
        default: return offsets[anchor * 3 * k + idx];
    }
}

AnchorSet AnchorSet::subset(std::span<const std::uint32_t> indices) const {
    AnchorSet out(feature_dim, k, indices.size());
    const std::size_t fd = feature_dim, od = 3 * static_cast<std::size_t>(k);
    for (std::size_t n = 0; n < indices.size(); ++n) {
        const std::size_t i = indices[n];
        if (i >= size()) throw InvalidArgument("anchor index out of range");
        std::copy_n(locations.begin() + 3 * i, 3, out.locations.begin() + 3 * n);
        std::copy_n(features.begin() + fd * i, fd, out.features.begin() + fd * n);
        std::copy_n(scaling.begin() + 6 * i, 6, out.scaling.begin() + 6 * n);
        std::copy_n(offsets.begin() + od * i, od, out.offsets.begin() + od * n);
    }
    return out;
}

void AnchorSet::validate() const {
    if (feature_dim <= 0 || k <= 0) throw InvalidArgument("anchor dimensions must be positive");
    if (locations.size() % 3 != 0) throw InvalidArgument("location array is not N x 3");
    const std::size_t n = size();
    if (features.size() != n * feature_dim) throw InvalidArgument("feature array is not N x feature_dim");
    if (scaling.size() != n * 6) throw InvalidArgument("scaling array is not N x 6");
    if (offsets.size() != n * 3 * k) throw InvalidArgument("offset array is not N x 3K");
    check_finite(locations, "location");
    check_finite(features, "feature");
    check_finite(scaling, "scaling");
    check_finite(offsets, "offset");
}

// ---------------------------------------------------------------------------
// Hash grid

Bounds Bounds::of(std::span<const double> locations) {
    Bounds b;
    if (locations.size() < 3) return b;
    b.lo = b.hi = Vec3(locations[0], locations[1], locations[2]);
    for (std::size_t i = 3; i + 2 < locations.size(); i += 3) {
        const Vec3 p(locations[i], locations[i + 1], locations[i + 2]);
        b.lo = b.lo.cwiseMin(p);
        b.hi = b.hi.cwiseMax(p);
    }
    return b;
}

Vec3 Bounds::normalize(const Vec3& p) const {
    Vec3 out;
    for (int a = 0; a < 3; ++a) {
        const double extent = hi[a] - lo[a];
        out[a] = extent > 0.0 ? std::clamp((p[a] - lo[a]) / extent, 0.0, 1.0) : 0.0;
    }
    return out;
}

HashGrid::HashGrid(std::vector<HashLevel> levels) : levels_(std::move(levels)) {
    if (levels_.empty()) throw InvalidArgument("hash grid needs at least one level");
    std::size_t offset = 0;
    for (std::size_t l = 0; l < levels_.size(); ++l) {
        const auto& lv = levels_[l];
        if (lv.resolution <= 0 || lv.table_size == 0 || lv.features <= 0)
            throw InvalidArgument("hash level sizes must be positive");
        if (l > 0 && lv.resolution <= levels_[l - 1].resolution)
            throw InvalidArgument("hash grid resolutions must be strictly increasing");
        row_offset_.push_back(offset);
        offset += static_cast<std::size_t>(lv.table_size) * lv.features;
        output_dim_ += lv.features;
    }
    table_.assign(offset, 0.0);
}

std::vector<HashLevel> HashGrid::default_levels() {
    return {{16, 1u << 13, 4}, {32, 1u << 13, 4}, {64, 1u << 13, 4}, {128, 1u << 13, 4}};
}

HashGrid HashGrid::create(std::vector<HashLevel> levels, Rng& rng) {
    HashGrid g(std::move(levels));
    for (double& v : g.table_) v = rng.uniform(-1e-4, 1e-4);
    return g;
}

std::uint32_t HashGrid::hash(std::int64_t x, std::int64_t y, std::int64_t z, std::uint32_t table_size) {
    const auto ux = static_cast<std::uint32_t>(x);
    const auto uy = static_cast<std::uint32_t>(y);
    const auto uz = static_cast<std::uint32_t>(z);
    return ((ux * 1u) ^ (uy * 2654435761u) ^ (uz * 805459861u)) % table_size;
}

HashLookup HashGrid::lookup(std::span<const double> locations, const Bounds& bounds) const {
    if (locations.size() % 3 != 0) throw InvalidArgument("positions are not N x 3");
    HashLookup lk;
    lk.count = locations.size() / 3;
    const std::size_t per = levels_.size() * 8;
    lk.rows.resize(lk.count * per);
    lk.weights.resize(lk.count * per);
    for (std::size_t i = 0; i < lk.count; ++i) {
        const Vec3 p(locations[3 * i], locations[3 * i + 1], locations[3 * i + 2]);
        if (!p.allFinite()) throw InvalidArgument("non-finite hash grid position");
        const Vec3 n = bounds.normalize(p);
        for (std::size_t l = 0; l < levels_.size(); ++l) {
            const auto& lv = levels_[l];
            std::int64_t base[3];
            double frac[3];
            for (int a = 0; a < 3; ++a) {
                const double x = n[a] * lv.resolution;
                auto i0 = static_cast<std::int64_t>(std::floor(x));
                i0 = std::min<std::int64_t>(i0, lv.resolution - 1);
                base[a] = i0;
                frac[a] = x - static_cast<double>(i0);
            }
            for (int c = 0; c < 8; ++c) {
                const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
                const double w = (dx ? frac[0] : 1.0 - frac[0]) * (dy ? frac[1] : 1.0 - frac[1]) *
                                 (dz ? frac[2] : 1.0 - frac[2]);
                const std::uint32_t h = hash(base[0] + dx, base[1] + dy, base[2] + dz, lv.table_size);
                const std::size_t slot = i * per + l * 8 + c;
                lk.rows[slot] = static_cast<std::uint32_t>(row_offset_[l] + static_cast<std::size_t>(h) * lv.features);
                lk.weights[slot] = w;
            }
        }
    }
    return lk;
}

std::vector<double> HashGrid::interpolate(const HashLookup& lk) const {
    const std::size_t per = levels_.size() * 8;
    std::vector<double> out(lk.count * output_dim_, 0.0);
    for (std::size_t i = 0; i < lk.count; ++i) {
        std::size_t col = 0;
        for (std::size_t l = 0; l < levels_.size(); ++l) {
            const int f = levels_[l].features;
            double* o = out.data() + i * output_dim_ + col;
            for (int c = 0; c < 8; ++c) {
                const std::size_t slot = i * per + l * 8 + c;
                const double w = lk.weights[slot];
                const double* row = table_.data() + lk.rows[slot];
                for (int j = 0; j < f; ++j) o[j] += w * row[j];
            }
            col += f;
        }
    }
    return out;
}

std::vector<double> HashGrid::feature(const Vec3& position, const Bounds& bounds) const {
    const double p[3] = {position.x(), position.y(), position.z()};
    return interpolate(lookup(p, bounds));
}

ad::Var hash_features(const ad::Var& table, const HashGrid& grid, const HashLookup& lookup) {
    if (table.size() != grid.table().size()) throw InvalidArgument("hash table node has the wrong size");
    HashGrid probe = grid;
    probe.table() = table.value();
    std::vector<double> out = probe.interpolate(lookup);

    std::vector<int> feats;
    for (const auto& lv : grid.levels()) feats.push_back(lv.features);
    const int dim = grid.output_dim();
    return table.tape()->custom(
        std::move(out), {table},
        [lk = lookup, feats, dim](std::span<const double> g, std::span<std::span<double>> gin) {
            const std::size_t per = feats.size() * 8;
            for (std::size_t i = 0; i < lk.count; ++i) {
                std::size_t col = 0;
                for (std::size_t l = 0; l < feats.size(); ++l) {
                    const double* go = g.data() + i * dim + col;
                    for (int c = 0; c < 8; ++c) {
                        const std::size_t slot = i * per + l * 8 + c;
                        const double w = lk.weights[slot];
                        if (w == 0.0) continue;
                        double* row = gin[0].data() + lk.rows[slot];
                        for (int j = 0; j < feats[l]; ++j) row[j] += w * go[j];
                    }
                    col += feats[l];
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Neural maps

Dense Dense::create(std::size_t in, std::size_t out, Rng& rng) {
    Dense d;
    d.in = in;
    d.out = out;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    d.weight.resize(in * out);
    for (double& w : d.weight) w = rng.uniform(-bound, bound);
    d.bias.assign(out, 0.0);
    return d;
}

std::vector<double> Dense::forward(std::span<const double> x) const {
    if (in == 0 || x.size() % in != 0) throw InvalidArgument("dense input size mismatch");
    const std::size_t rows = x.size() / in;
    std::vector<double> y(rows * out);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * in;
        for (std::size_t o = 0; o < out; ++o) {
            const double* wo = weight.data() + o * in;
            double s = bias[o];
            for (std::size_t i = 0; i < in; ++i) s += wo[i] * xr[i];
            y[r * out + o] = s;
        }
    }
    return y;
}

ContextModel ContextModel::create(int hash_dim, int attribute_dim, Rng& rng) {
    ContextModel m;
    m.trunk = Dense::create(hash_dim, kHiddenWidth, rng);
    m.quant_head = Dense::create(kHiddenWidth, 3, rng);
    m.gauss_head = Dense::create(kHiddenWidth, 2 * static_cast<std::size_t>(attribute_dim), rng);
    // Start every deviation at 1 so no symbol sits on the probability floor.
    for (int j = 0; j < attribute_dim; ++j) m.gauss_head.bias[attribute_dim + j] = inverse_softplus(1.0);
    return m;
}

void ContextModel::fit_prior(const AnchorSet& anchors) {
    const int d = anchors.attribute_dim();
    if (d != attribute_dim()) throw InvalidArgument("context model does not match the anchor layout");
    const std::size_t n = anchors.size();
    if (n == 0) return;
    for (int j = 0; j < d; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += anchors.attribute(i, j);
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += (anchors.attribute(i, j) - mean) * (anchors.attribute(i, j) - mean);
        var /= static_cast<double>(n);
        const double eta = kEta[static_cast<int>(anchors.split_dim(j).first)];
        gauss_head.bias[j] = mean;
        gauss_head.bias[d + j] = inverse_softplus(std::sqrt(var) + eta);
    }
}

GaussianDecoder GaussianDecoder::create(int feature_dim, int k, Rng& rng, double opacity_bias) {
    GaussianDecoder d;
    d.hidden = Dense::create(feature_dim, kHiddenWidth, rng);
    d.output = Dense::create(kHiddenWidth, 11 * static_cast<std::size_t>(k), rng);
    for (int i = 0; i < k; ++i) d.output.bias[i] = opacity_bias;
    return d;
}

// ---------------------------------------------------------------------------
// Context evaluation and quantization

ContextOutputs evaluate_context(const AnchorSet& anchors, const HashGrid& grid, const ContextModel& model) {
    const int d = anchors.attribute_dim();
    if (model.attribute_dim() != d) throw InvalidArgument("context model does not match the anchor layout");
    if (model.trunk.in != static_cast<std::size_t>(grid.output_dim()))
        throw InvalidArgument("context model input does not match the hash grid");
    ContextOutputs ctx;
    ctx.count = anchors.size();
    ctx.attribute_dim = d;
    const auto h = grid.interpolate(grid.lookup(anchors.locations, Bounds::of(anchors.locations)));
    const auto t = tanh_all(model.trunk.forward(h));
    const auto q = model.quant_head.forward(t);
    const auto g = model.gauss_head.forward(t);
    ctx.step.resize(ctx.count * 3);
    ctx.mean.resize(ctx.count * d);
    ctx.sigma.resize(ctx.count * d);
    for (std::size_t i = 0; i < ctx.count; ++i) {
        for (int grp = 0; grp < 3; ++grp) ctx.step[i * 3 + grp] = quant_step(q[i * 3 + grp], static_cast<Group>(grp));
        for (int j = 0; j < d; ++j) {
            ctx.mean[i * d + j] = g[i * 2 * d + j];
            ctx.sigma[i * d + j] = softplus(g[i * 2 * d + d + j]) + kSigmaFloor;
        }
    }
    return ctx;
}

double quant_step(double modifier, Group group) {
    return kEta[static_cast<int>(group)] * (1.0 + std::tanh(modifier));
}

double quantize_train(double f, double step, Rng& rng) {
    if (!(step > 0.0)) throw InvalidArgument("quantization step must be positive");
    return f + step * rng.normal();
}

std::int64_t lattice_index(double f, double step) {
    if (!(step > 0.0)) throw InvalidArgument("quantization step must be positive");
    return static_cast<std::int64_t>(std::round(f / step));
}

double quantize_infer(double f, double step, double tau) {
    if (!(tau > 0.0)) throw InvalidArgument("rounding temperature must be positive");
    const double center = static_cast<double>(lattice_index(f, step)) * step;
    return center + tau * std::tanh((f - center) / tau) * step;
}

double feature_probability(double value, double step, double mean, double sigma) {
    if (!(sigma > 0.0) || !(step > 0.0)) throw InvalidArgument("probability needs positive step and deviation");
    const double lo = (value - 0.5 * step - mean) / sigma;
    const double hi = (value + 0.5 * step - mean) / sigma;
    return std::max(ad::normal_mass(lo, hi), kProbabilityFloor);
}

// ---------------------------------------------------------------------------
// Entropy

EntropyResult entropy_loss(const ModelVars& v, const AnchorSet& layout, const HashGrid& grid,
                           const HashLookup& lookup, QuantMode mode, std::span<const double> noise) {
    const std::size_t n = lookup.count;
    const std::size_t fd = layout.feature_dim, od = 3 * static_cast<std::size_t>(layout.k);
    const std::size_t d = fd + 6 + od;
    if (n == 0) throw InvalidArgument("entropy of an empty anchor batch");
    if (v.features.size() != n * fd || v.scaling.size() != n * 6 || v.offsets.size() != n * od)
        throw InvalidArgument("anchor attribute nodes do not match the lookup batch");
    if (mode == QuantMode::Noise && noise.size() != n * d) throw InvalidArgument("noise must cover every attribute");
    const std::size_t hidden = kHiddenWidth;

    const auto h = hash_features(v.grid_table, grid, lookup);
    const auto t = ad::tanh(ad::linear(h, v.trunk_w, v.trunk_b, grid.output_dim(), hidden));
    const auto q = ad::linear(t, v.quant_w, v.quant_b, hidden, 3);
    const auto g = ad::linear(t, v.gauss_w, v.gauss_b, hidden, 2 * d);

    ad::Tape& tape = *v.features.tape();
    std::vector<double> eta(n * 3);
    for (std::size_t i = 0; i < n; ++i)
        for (int grp = 0; grp < 3; ++grp) eta[i * 3 + grp] = kEta[grp];
    const auto step3 = ad::mul(ad::add_scalar(ad::tanh(q), 1.0), tape.constant(std::move(eta)));

    // Group-major position p -> (anchor, per-anchor attribute index).
    std::vector<std::uint32_t> step_idx(n * d), mean_idx(n * d), sigma_idx(n * d);
    std::size_t p = 0;
    auto emit = [&](std::size_t width, std::size_t first, int grp) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < width; ++j, ++p) {
                step_idx[p] = static_cast<std::uint32_t>(i * 3 + grp);
                mean_idx[p] = static_cast<std::uint32_t>(i * 2 * d + first + j);
                sigma_idx[p] = static_cast<std::uint32_t>(i * 2 * d + d + first + j);
            }
    };
    emit(fd, 0, 0);
    emit(6, fd, 1);
    emit(od, fd + 6, 2);

    const auto step = ad::gather(step3, std::move(step_idx));
    const auto mu = ad::gather(g, std::move(mean_idx));
    const auto sigma = ad::add_scalar(ad::softplus(ad::gather(g, std::move(sigma_idx))), kSigmaFloor);

    auto attrs = ad::concat({v.features, v.scaling, v.offsets});
    if (mode == QuantMode::Noise)
        attrs = ad::add(attrs, ad::mul(step, tape.constant(std::vector<double>(noise.begin(), noise.end()))));

    const auto half = ad::scale(step, 0.5);
    const auto centered = ad::sub(attrs, mu);
    const auto lo = ad::div(ad::sub(centered, half), sigma);
    const auto hi = ad::div(ad::add(centered, half), sigma);
    const auto prob = ad::clamp_min(ad::normal_mass(lo, hi), kProbabilityFloor);
    const double beta = 1.0 / static_cast<double>(n * d);

    EntropyResult r;
    r.bits_per_parameter = ad::scale(ad::sum(ad::log(prob)), -beta / std::numbers::ln2);
    r.quantized = attrs;
    auto range = [](std::size_t first, std::size_t count) {
        std::vector<std::uint32_t> idx(count);
        for (std::size_t i = 0; i < count; ++i) idx[i] = static_cast<std::uint32_t>(first + i);
        return idx;
    };
    r.features_hat = ad::gather(attrs, range(0, n * fd));
    r.scaling_hat = ad::gather(attrs, range(n * fd, n * 6));
    r.offsets_hat = ad::gather(attrs, range(n * (fd + 6), n * od));
    return r;
}

double entropy_bits(const AnchorSet& quantized, const ContextOutputs& ctx) {
    const int d = quantized.attribute_dim();
    if (ctx.count != quantized.size() || ctx.attribute_dim != d)
        throw InvalidArgument("context does not match the anchor set");
    double bits = 0.0;
    for (std::size_t i = 0; i < ctx.count; ++i)
        for (int j = 0; j < d; ++j) {
            const double p = feature_probability(quantized.attribute(i, j), ctx.step_for(i, quantized, j),
                                                 ctx.mean[i * d + j], ctx.sigma[i * d + j]);
            bits -= std::log2(p);
        }
    return bits;
}

double entropy_loss(const AnchorSet& quantized, const ContextOutputs& ctx) {
    if (quantized.size() == 0) throw InvalidArgument("entropy of an empty anchor set");
    return entropy_bits(quantized, ctx) / (static_cast<double>(quantized.size()) * quantized.attribute_dim());
}

double scc_loss(double entropy, double volume, double lambda_vol, double lambda_entropy) {
    return lambda_vol * volume + lambda_entropy * entropy;
}

// ---------------------------------------------------------------------------
// Anchor decoding

namespace {

// Per-anchor raw decoder output layout.
struct RawLayout {
    std::size_t k;
    std::size_t opacity(std::size_t j) const { return j; }
    std::size_t color(std::size_t j, int c) const { return k + 3 * j + c; }
    std::size_t rot(std::size_t j, int c) const { return 4 * k + 4 * j + c; }
    std::size_t scale(std::size_t j, int c) const { return 8 * k + 3 * j + c; }
    std::size_t width() const { return 11 * k; }
};

std::vector<double> assemble(std::span<const double> raw, std::span<const double> scaling,
                             std::span<const double> offsets, std::span<const double> locations, std::size_t k) {
    const std::size_t n = locations.size() / 3;
    const RawLayout L{k};
    std::vector<double> out(n * k * render::kGaussianStride);
    for (std::size_t i = 0; i < n; ++i) {
        const double* r = raw.data() + i * L.width();
        const double* l = scaling.data() + i * 6;
        const double* o = offsets.data() + i * 3 * k;
        for (std::size_t j = 0; j < k; ++j) {
            double* g = out.data() + (i * k + j) * render::kGaussianStride;
            for (int c = 0; c < 3; ++c) {
                g[c] = locations[3 * i + c] + o[3 * j + c] * l[c];
                g[3 + c] = std::abs(l[3 + c]) * sigmoid(r[L.scale(j, c)]);
            }
            double q[4];
            double norm = 0.0;
            for (int c = 0; c < 4; ++c) {
                q[c] = r[L.rot(j, c)] + (c == 0 ? 1.0 : 0.0);
                norm += q[c] * q[c];
            }
            norm = std::sqrt(norm);
            for (int c = 0; c < 4; ++c) g[6 + c] = norm > 1e-12 ? q[c] / norm : (c == 0 ? 1.0 : 0.0);
            g[10] = sigmoid(r[L.opacity(j)]);
            for (int c = 0; c < 3; ++c) g[11 + c] = sigmoid(r[L.color(j, c)]);
        }
    }
    return out;
}

void check_decoder_shapes(std::size_t n, int feature_dim, int k, std::size_t features, std::size_t scaling,
                          std::size_t offsets) {
    if (feature_dim <= 0 || k <= 0) throw InvalidArgument("anchor dimensions must be positive");
    if (features != n * feature_dim || scaling != n * 6 || offsets != n * 3 * static_cast<std::size_t>(k))
        throw InvalidArgument("anchor attributes do not match the location count");
}

}  // namespace

ad::Var anchors_to_gaussians(const ad::Var& features, const ad::Var& scaling, const ad::Var& offsets,
                             std::span<const double> locations, int feature_dim, int k, const ad::Var& hidden_w,
                             const ad::Var& hidden_b, const ad::Var& out_w, const ad::Var& out_b) {
    if (locations.size() % 3 != 0) throw InvalidArgument("locations are not N x 3");
    const std::size_t n = locations.size() / 3;
    check_decoder_shapes(n, feature_dim, k, features.size(), scaling.size(), offsets.size());
    const std::size_t kk = k;
    const auto hidden = ad::tanh(ad::linear(features, hidden_w, hidden_b, feature_dim, kHiddenWidth));
    const auto raw = ad::linear(hidden, out_w, out_b, kHiddenWidth, 11 * kk);
    std::vector<double> loc(locations.begin(), locations.end());
    auto value = assemble(raw.value(), scaling.value(), offsets.value(), loc, kk);

    ad::Tape* tape = features.tape();
    return tape->custom(
        std::move(value), {raw, scaling, offsets},
        [tape, ir = raw.index(), il = scaling.index(), io = offsets.index(), n, kk](
            std::span<const double> g, std::span<std::span<double>> gin) {
            const auto& raw = tape->value(ir);
            const auto& sc = tape->value(il);
            const auto& off = tape->value(io);
            const RawLayout L{kk};
            for (std::size_t i = 0; i < n; ++i) {
                const double* r = raw.data() + i * L.width();
                const double* l = sc.data() + i * 6;
                const double* o = off.data() + i * 3 * kk;
                for (std::size_t j = 0; j < kk; ++j) {
                    const double* go = g.data() + (i * kk + j) * render::kGaussianStride;
                    double* gr = gin[0].empty() ? nullptr : gin[0].data() + i * L.width();
                    double* gl = gin[1].empty() ? nullptr : gin[1].data() + i * 6;
                    double* gof = gin[2].empty() ? nullptr : gin[2].data() + i * 3 * kk;
                    for (int c = 0; c < 3; ++c) {
                        if (gof) gof[3 * j + c] += go[c] * l[c];
                        if (gl) gl[c] += go[c] * o[3 * j + c];
                        const double s = sigmoid(r[L.scale(j, c)]);
                        const double a = l[3 + c];
                        if (gl) gl[3 + c] += go[3 + c] * (a > 0.0 ? 1.0 : (a < 0.0 ? -1.0 : 0.0)) * s;
                        if (gr) gr[L.scale(j, c)] += go[3 + c] * std::abs(a) * s * (1.0 - s);
                    }
                    if (!gr) continue;
                    double q[4];
                    double norm = 0.0;
                    for (int c = 0; c < 4; ++c) {
                        q[c] = r[L.rot(j, c)] + (c == 0 ? 1.0 : 0.0);
                        norm += q[c] * q[c];
                    }
                    norm = std::sqrt(norm);
                    if (norm > 1e-12) {
                        double dot = 0.0;
                        for (int c = 0; c < 4; ++c) dot += go[6 + c] * q[c] / norm;
                        for (int c = 0; c < 4; ++c) gr[L.rot(j, c)] += (go[6 + c] - dot * q[c] / norm) / norm;
                    }
                    const double so = sigmoid(r[L.opacity(j)]);
                    gr[L.opacity(j)] += go[10] * so * (1.0 - so);
                    for (int c = 0; c < 3; ++c) {
                        const double sc_ = sigmoid(r[L.color(j, c)]);
                        gr[L.color(j, c)] += go[11 + c] * sc_ * (1.0 - sc_);
                    }
                }
            }
        });
}

render::SplatScene anchors_to_gaussians(const AnchorSet& anchors, const GaussianDecoder& decoder,
                                        const Vec3& background) {
    anchors.validate();
    if (decoder.hidden.in != static_cast<std::size_t>(anchors.feature_dim) ||
        decoder.output.out != 11 * static_cast<std::size_t>(anchors.k) || decoder.hidden.out != decoder.output.in)
        throw InvalidArgument("decoder does not match the anchor layout");
    const auto raw = decoder.output.forward(tanh_all(decoder.hidden.forward(anchors.features)));
    const auto flat = assemble(raw, anchors.scaling, anchors.offsets, anchors.locations, anchors.k);
    render::SplatScene scene;
    scene.background = background;
    const std::size_t count = flat.size() / render::kGaussianStride;
    scene.gaussians.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double* g = flat.data() + i * render::kGaussianStride;
        auto& out = scene.gaussians[i];
        out.mean = {g[0], g[1], g[2]};
        out.scale = {g[3], g[4], g[5]};
        out.rotation = {g[6], g[7], g[8], g[9]};
        out.opacity = g[10];
        out.color = {g[11], g[12], g[13]};
    }
    return scene;
}

ad::Var volume_loss(const ad::Var& gaussians) {
    const std::size_t count = gaussians.size() / render::kGaussianStride;
    if (count == 0 || gaussians.size() % render::kGaussianStride != 0)
        throw InvalidArgument("volume of a malformed Gaussian buffer");
    std::vector<std::uint32_t> ix(count), iy(count), iz(count);
    for (std::size_t i = 0; i < count; ++i) {
        const auto base = static_cast<std::uint32_t>(i * render::kGaussianStride + 3);
        ix[i] = base;
        iy[i] = base + 1;
        iz[i] = base + 2;
    }
    return ad::mean(ad::mul(ad::mul(ad::gather(gaussians, std::move(ix)), ad::gather(gaussians, std::move(iy))),
                            ad::gather(gaussians, std::move(iz))));
}

double volume_loss(const render::SplatScene& scene) {
    if (scene.gaussians.empty()) return 0.0;
    double s = 0.0;
    for (const auto& g : scene.gaussians) s += std::abs(g.scale.x() * g.scale.y() * g.scale.z());
    return s / static_cast<double>(scene.gaussians.size());
}

AnchorSet quantize_infer(const AnchorSet& anchors, const ContextOutputs& ctx, double tau) {
    AnchorSet out = anchors;
    const int d = anchors.attribute_dim();
    if (ctx.count != anchors.size()) throw InvalidArgument("context does not match the anchor set");
    for (std::size_t i = 0; i < anchors.size(); ++i)
        for (int j = 0; j < d; ++j)
            out.attribute(i, j) = quantize_infer(anchors.attribute(i, j), ctx.step_for(i, anchors, j), tau);
    return out;
}

AnchorSet snap_to_lattice(const AnchorSet& anchors, const ContextOutputs& ctx) {
    AnchorSet out = anchors;
    const int d = anchors.attribute_dim();
    if (ctx.count != anchors.size()) throw InvalidArgument("context does not match the anchor set");
    for (std::size_t i = 0; i < anchors.size(); ++i)
        for (int j = 0; j < d; ++j) {
            const double step = ctx.step_for(i, anchors, j);
            out.attribute(i, j) = static_cast<double>(lattice_index(anchors.attribute(i, j), step)) * step;
        }
    return out;
}

// ---------------------------------------------------------------------------
// Storage precision

std::vector<double> narrow(std::span<const double> values) {
    std::vector<double> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = static_cast<double>(static_cast<float>(values[i]));
    return out;
}

void narrow_in_place(std::vector<double>& values) {
    for (double& v : values) v = static_cast<double>(static_cast<float>(v));
}

void narrow_in_place(Dense& d) {
    narrow_in_place(d.weight);
    narrow_in_place(d.bias);
}

void narrow_in_place(ContextModel& m) {
    narrow_in_place(m.trunk);
    narrow_in_place(m.quant_head);
    narrow_in_place(m.gauss_head);
}

void narrow_in_place(GaussianDecoder& d) {
    narrow_in_place(d.hidden);
    narrow_in_place(d.output);
}

void narrow_in_place(HashGrid& g) { narrow_in_place(g.table()); }

}  // namespace bloomgs::scc
