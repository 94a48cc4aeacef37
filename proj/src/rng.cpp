// Copyright Contributors to the BloomGS Project
// SPDX-License-Identifier: Apache-2.0

#include "bloomgs/rng.hpp"

#include <cmath>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>

namespace bloomgs {

double Rng::uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t n) {
    if (n == 0) return 0;
    // Rejection sampling keeps the result unbiased.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return x % n;
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

Rng Rng::fork(std::uint64_t stream) const {
    // SplitMix64 finalizer decorrelates neighbouring stream ids.
    std::uint64_t z = seed_ + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return Rng(z);
}

void Rng::save(std::ostream& out) const {
    out << seed_ << ' ' << engine_ << ' ' << has_spare_ << ' ';
    out.write(reinterpret_cast<const char*>(&spare_), sizeof spare_);
}

void Rng::load(std::istream& in) {
    in >> seed_ >> engine_ >> has_spare_;
    in.get();
    in.read(reinterpret_cast<char*>(&spare_), sizeof spare_);
}

}  // namespace bloomgs
