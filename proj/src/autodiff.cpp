// Copyright Contributors to the BloomGS Project
// SPDX-License-Identifier: Apache-2.0

#include "bloomgs/autodiff.hpp"

#include "bloomgs/core.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace bloomgs::ad {

std::size_t Var::size() const { return value().size(); }

const std::vector<double>& Var::value() const {
    if (!tape_) throw InvalidArgument("undefined autodiff variable");
    return tape_->value(index_);
}

double Var::scalar() const {
    const auto& v = value();
    if (v.size() != 1) throw InvalidArgument("scalar() on a node of size " + std::to_string(v.size()));
    return v[0];
}

std::vector<double> Gradients::of(const Var& v) const {
    const auto g = view(v);
    if (!g.empty()) return {g.begin(), g.end()};
    return std::vector<double>(v.size(), 0.0);
}

std::span<const double> Gradients::view(const Var& v) const {
    if (v.index() >= grads_.size()) return {};
    return grads_[v.index()];
}

Var Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

void Tape::check(const Var& v) const {
    if (v.tape() != this || v.index() >= nodes_.size())
        throw InvalidArgument("autodiff variable belongs to another tape");
}

Var Tape::leaf(std::vector<double> value) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = true;
    return push(std::move(n));
}

Var Tape::constant(std::vector<double> value) {
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Tape::custom(std::vector<double> value, std::vector<Var> inputs, Backward backward) {
    Node n;
    n.value = std::move(value);
    for (const auto& in : inputs) {
        check(in);
        n.inputs.push_back(in.index());
        n.requires_grad = n.requires_grad || nodes_[in.index()].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(backward);
    return push(std::move(n));
}

Gradients Tape::backward(const Var& output) const {
    check(output);
    if (nodes_[output.index()].value.size() != 1)
        throw InvalidArgument("backward() needs a scalar output, got size " +
                              std::to_string(nodes_[output.index()].value.size()));
    Gradients result;
    auto& grads = result.grads_;
    grads.resize(output.index() + 1);
    grads[output.index()] = {1.0};

    std::vector<std::span<double>> slots;
    for (std::int64_t i = output.index(); i >= 0; --i) {
        const Node& node = nodes_[static_cast<std::size_t>(i)];
        if (grads[i].empty() || !node.backward) continue;
        slots.clear();
        for (auto in : node.inputs) {
            if (!nodes_[in].requires_grad) {
                slots.emplace_back();
                continue;
            }
            if (grads[in].empty()) grads[in].assign(nodes_[in].value.size(), 0.0);
            slots.emplace_back(grads[in]);
        }
        node.backward(grads[i], slots);
    }
    return result;
}

namespace {

std::size_t broadcast_size(const Var& a, const Var& b, const char* op) {
    const std::size_t na = a.size(), nb = b.size();
    if (na == nb || nb == 1) return na;
    if (na == 1) return nb;
    std::ostringstream msg;
    msg << op << ": incompatible sizes " << na << " and " << nb;
    throw InvalidArgument(msg.str());
}

inline double at(const std::vector<double>& v, std::size_t i) { return v.size() == 1 ? v[0] : v[i]; }
inline void acc(std::span<double> g, std::size_t i, double x) {
    if (g.empty()) return;
    if (g.size() == 1)
        g[0] += x;
    else
        g[i] += x;
}

template <typename F, typename DA, typename DB>
Var binary(const Var& a, const Var& b, const char* name, F f, DA da, DB db) {
    const std::size_t n = broadcast_size(a, b, name);
    const auto& va = a.value();
    const auto& vb = b.value();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = f(at(va, i), at(vb, i));
    Tape* tape = a.tape();
    return tape->custom(std::move(out), {a, b},
                        [tape, ia = a.index(), ib = b.index(), n, da, db](std::span<const double> g,
                                                                           std::span<std::span<double>> gin) {
                            const auto& va = tape->value(ia);
                            const auto& vb = tape->value(ib);
                            for (std::size_t i = 0; i < n; ++i) {
                                const double x = at(va, i), y = at(vb, i);
                                acc(gin[0], i, g[i] * da(x, y));
                                acc(gin[1], i, g[i] * db(x, y));
                            }
                        });
}

// Unary op whose derivative is expressed through input x and output y.
template <typename F, typename D>
Var unary(const Var& a, F f, D d) {
    const auto& va = a.value();
    std::vector<double> out(va.size());
    for (std::size_t i = 0; i < va.size(); ++i) out[i] = f(va[i]);
    Tape* tape = a.tape();
    const std::uint32_t self = static_cast<std::uint32_t>(tape->node_count());
    return tape->custom(std::move(out), {a},
                        [tape, ia = a.index(), self, d](std::span<const double> g,
                                                        std::span<std::span<double>> gin) {
                            const auto& x = tape->value(ia);
                            const auto& y = tape->value(self);
                            for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * d(x[i], y[i]);
                        });
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

double normal_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }
double normal_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

double normal_mass(double lo, double hi) {
    if (lo > 0.0) return normal_cdf(-lo) - normal_cdf(-hi);
    return normal_cdf(hi) - normal_cdf(lo);
}

Var add(const Var& a, const Var& b) {
    return binary(
        a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
    return binary(
        a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

Var mul(const Var& a, const Var& b) {
    return binary(
        a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

Var div(const Var& a, const Var& b) {
    return binary(
        a, b, "div", [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
        [](double x, double y) { return -x / (y * y); });
}

Var neg(const Var& a) {
    return unary(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var scale(const Var& a, double c) {
    return unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var add_scalar(const Var& a, double c) {
    return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var exp(const Var& a) {
    return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
    return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var tanh(const Var& a) {
    return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& a) {
    return unary(
        a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

Var softplus(const Var& a) {
    return unary(
        a, [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
        [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Var erf(const Var& a) {
    return unary(
        a, [](double x) { return std::erf(x); },
        [](double x, double) { return 2.0 / std::sqrt(std::numbers::pi) * std::exp(-x * x); });
}

Var normal_cdf(const Var& a) {
    return unary(
        a, [](double x) { return normal_cdf(x); }, [](double x, double) { return normal_pdf(x); });
}

Var normal_mass(const Var& lo, const Var& hi) {
    return binary(
        lo, hi, "normal_mass", [](double l, double h) { return normal_mass(l, h); },
        [](double l, double) { return -normal_pdf(l); }, [](double, double h) { return normal_pdf(h); });
}

Var pow(const Var& a, double exponent) {
    return unary(
        a, [exponent](double x) { return std::pow(x, exponent); },
        [exponent](double x, double) { return exponent * std::pow(x, exponent - 1.0); });
}

Var square(const Var& a) {
    return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var abs(const Var& a) {
    return unary(
        a, [](double x) { return std::abs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var clamp_min(const Var& a, double floor) {
    return unary(
        a, [floor](double x) { return std::max(x, floor); },
        [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

Var select(const std::vector<std::uint8_t>& mask, const Var& a, const Var& b) {
    const std::size_t n = broadcast_size(a, b, "select");
    if (mask.size() != n) throw InvalidArgument("select: mask size mismatch");
    const auto& va = a.value();
    const auto& vb = b.value();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = mask[i] ? at(va, i) : at(vb, i);
    return a.tape()->custom(std::move(out), {a, b},
                            [mask](std::span<const double> g, std::span<std::span<double>> gin) {
                                for (std::size_t i = 0; i < g.size(); ++i) acc(gin[mask[i] ? 0 : 1], i, g[i]);
                            });
}

Var sum(const Var& a) {
    double s = 0.0;
    for (double x : a.value()) s += x;
    return a.tape()->custom({s}, {a}, [](std::span<const double> g, std::span<std::span<double>> gin) {
        for (double& x : gin[0]) x += g[0];
    });
}

Var mean(const Var& a) {
    const std::size_t n = a.size();
    if (n == 0) throw InvalidArgument("mean of an empty node");
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var gather(const Var& a, std::vector<std::uint32_t> indices) {
    const auto& va = a.value();
    std::vector<double> out(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= va.size()) throw InvalidArgument("gather: index out of range");
        out[i] = va[indices[i]];
    }
    return a.tape()->custom(std::move(out), {a},
                            [idx = std::move(indices)](std::span<const double> g,
                                                       std::span<std::span<double>> gin) {
                                for (std::size_t i = 0; i < idx.size(); ++i) gin[0][idx[i]] += g[i];
                            });
}

Var concat(const std::vector<Var>& parts) {
    if (parts.empty()) throw InvalidArgument("concat of nothing");
    std::vector<double> out;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        offsets.push_back(out.size());
        out.insert(out.end(), p.value().begin(), p.value().end());
    }
    return parts.front().tape()->custom(
        std::move(out), parts, [offsets](std::span<const double> g, std::span<std::span<double>> gin) {
            for (std::size_t k = 0; k < gin.size(); ++k)
                for (std::size_t i = 0; i < gin[k].size(); ++i) gin[k][i] += g[offsets[k] + i];
        });
}

Var linear(const Var& x, const Var& weight, const Var& bias, std::size_t in, std::size_t out) {
    if (in == 0 || x.size() % in != 0) throw InvalidArgument("linear: input size is not a multiple of in");
    if (weight.size() != in * out || bias.size() != out) throw InvalidArgument("linear: parameter shape mismatch");
    const std::size_t rows = x.size() / in;
    const auto& vx = x.value();
    const auto& vw = weight.value();
    const auto& vb = bias.value();
    std::vector<double> y(rows * out);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = vx.data() + r * in;
        for (std::size_t o = 0; o < out; ++o) {
            const double* wo = vw.data() + o * in;
            double s = vb[o];
            for (std::size_t i = 0; i < in; ++i) s += wo[i] * xr[i];
            y[r * out + o] = s;
        }
    }
    Tape* tape = x.tape();
    return tape->custom(std::move(y), {x, weight, bias},
                        [tape, ix = x.index(), iw = weight.index(), rows, in, out](
                            std::span<const double> g, std::span<std::span<double>> gin) {
                            const auto& vx = tape->value(ix);
                            const auto& vw = tape->value(iw);
                            for (std::size_t r = 0; r < rows; ++r) {
                                const double* xr = vx.data() + r * in;
                                const double* gr = g.data() + r * out;
                                for (std::size_t o = 0; o < out; ++o) {
                                    const double go = gr[o];
                                    if (go == 0.0) continue;
                                    if (!gin[0].empty()) {
                                        double* gx = gin[0].data() + r * in;
                                        const double* wo = vw.data() + o * in;
                                        for (std::size_t i = 0; i < in; ++i) gx[i] += go * wo[i];
                                    }
                                    if (!gin[1].empty()) {
                                        double* gw = gin[1].data() + o * in;
                                        for (std::size_t i = 0; i < in; ++i) gw[i] += go * xr[i];
                                    }
                                    if (!gin[2].empty()) gin[2][o] += go;
                                }
                            }
                        });
}

}  // namespace bloomgs::ad
