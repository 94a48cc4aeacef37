// Copyright Contributors to the BloomGS Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>

namespace bloomgs {

/// Deterministic random stream.
///
/// Bits come from std::mt19937_64, whose output sequence is fixed by the C++
/// standard. The standard library distributions are implementation-defined, so
/// uniform and normal variates are derived here: uniform() takes the top 53
/// bits, normal() is the Box-Muller transform (both outputs are used in turn).
/// The same seed therefore yields the same stream on every conforming platform
/// with an IEEE libm.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Independent child stream; does not advance this stream.
    Rng fork(std::uint64_t stream) const;

    void save(std::ostream& out) const;
    void load(std::istream& in);

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace bloomgs
