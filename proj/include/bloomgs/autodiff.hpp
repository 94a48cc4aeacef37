// Copyright Contributors to the BloomGS Project
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over vector-valued nodes.
//
// A Tape is an append-only list of nodes. Every node owns its value buffer and
// refers to its inputs by index, so the graph is acyclic by construction.
// Elementwise binary primitives broadcast an operand of size 1. Kernels with a
// hand-written adjoint (rendering, losses, hash-grid lookups) enter the tape
// through Tape::custom.
#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace bloomgs::ad {

class Tape;

/// Handle to a tape node.
class Var {
public:
    Var() = default;

    Tape* tape() const { return tape_; }
    std::uint32_t index() const { return index_; }
    bool defined() const { return tape_ != nullptr; }

    std::size_t size() const;
    const std::vector<double>& value() const;
    /// Value of a size-1 node.
    double scalar() const;

private:
    friend class Tape;
    Var(Tape* tape, std::uint32_t index) : tape_(tape), index_(index) {}

    Tape* tape_ = nullptr;
    std::uint32_t index_ = 0;
};

/// Adjoint callback: receives d(out)/d(node output) and accumulates into the
/// gradient buffers of the inputs. A buffer is empty when that input does not
/// require a gradient.
using Backward = std::function<void(std::span<const double> grad_out,
                                    std::span<std::span<double>> grad_in)>;

class Gradients {
public:
    /// Gradient w.r.t. `v`; zeros when `v` did not influence the output.
    std::vector<double> of(const Var& v) const;
    std::span<const double> view(const Var& v) const;

private:
    friend class Tape;
    std::vector<std::vector<double>> grads_;
    std::vector<std::size_t> sizes_;
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Differentiable input.
    Var leaf(std::vector<double> value);
    Var constant(std::vector<double> value);
    Var constant(double value) { return constant(std::vector<double>{value}); }

    Var custom(std::vector<double> value, std::vector<Var> inputs, Backward backward);

    /// Exact reverse accumulation from a size-1 node.
    Gradients backward(const Var& output) const;

    std::size_t node_count() const { return nodes_.size(); }
    const std::vector<double>& value(std::uint32_t index) const { return nodes_[index].value; }
    bool requires_grad(const Var& v) const { return nodes_[v.index()].requires_grad; }

private:
    struct Node {
        std::vector<double> value;
        std::vector<std::uint32_t> inputs;
        Backward backward;
        bool requires_grad = false;
    };

    Var push(Node node);
    void check(const Var& v) const;

    std::vector<Node> nodes_;
};

// Elementwise binary ops broadcast operands of size 1.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

Var neg(const Var& a);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var exp(const Var& a);
Var log(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
Var erf(const Var& a);
/// Standard normal CDF.
Var normal_cdf(const Var& a);
/// Phi(hi) - Phi(lo), evaluated through the upper tail when both limits are positive.
Var normal_mass(const Var& lo, const Var& hi);
Var pow(const Var& a, double exponent);
Var square(const Var& a);
Var abs(const Var& a);
/// max(a, floor); the gradient is zero where the floor is active.
Var clamp_min(const Var& a, double floor);
/// mask[i] ? a[i] : b[i]; both branches broadcast.
Var select(const std::vector<std::uint8_t>& mask, const Var& a, const Var& b);

Var sum(const Var& a);
Var mean(const Var& a);
/// out[i] = a[indices[i]]; the adjoint scatter-adds.
Var gather(const Var& a, std::vector<std::uint32_t> indices);
Var concat(const std::vector<Var>& parts);
/// Row-major x (rows x in) times weight^T (weight is out x in) plus bias (out).
Var linear(const Var& x, const Var& weight, const Var& bias, std::size_t in, std::size_t out);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(const Var& a, double c) { return scale(a, c); }
inline Var operator*(double c, const Var& a) { return scale(a, c); }
inline Var operator+(const Var& a, double c) { return add_scalar(a, c); }
inline Var operator+(double c, const Var& a) { return add_scalar(a, c); }
inline Var operator-(const Var& a, double c) { return add_scalar(a, -c); }

/// Standard normal CDF, 0.5 * erfc(-x / sqrt(2)) using the C library erfc
/// (correctly rounded to within a few ulp, far below the 1e-9 budget).
double normal_cdf(double x);
double normal_pdf(double x);
/// Phi(hi) - Phi(lo) without cancellation in the upper tail.
double normal_mass(double lo, double hi);

}  // namespace bloomgs::ad
