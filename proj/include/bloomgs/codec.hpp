// Copyright Contributors to the BloomGS Project
// SPDX-License-Identifier: Apache-2.0
//
// Range coder and the BLMS container for anchor scenes.
//
// Layout, little-endian:
//   "BLMS" | version u16 | flags u16 | anchor count u32 | feature dim u16 | K u16
//   | level count u8, per level (resolution u16, T u32, F u8)
//   | weight blob length u32 (bytes) + float32 values
//   | locations N x 3 float32
//   | payload length u64 + range-coded bytes
//
// The weight blob holds the hash tables, then the context model (trunk, quant
// head, Gaussian head; weights before biases), then the Gaussian decoder when
// flag bit 0 is set. Attribute symbols are coded anchor by anchor in
// [feature | scaling | offsets] order; each symbol k reconstructs to k * step.
#pragma once

#include "bloomgs/scc.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bloomgs::codec {

inline constexpr std::uint16_t kVersion = 1;
inline constexpr std::uint16_t kFlagDecoder = 1;
inline constexpr std::int32_t kSymbolMin = -(1 << 15);
inline constexpr std::int32_t kSymbolMax = (1 << 15) - 1;

enum class FormatErrorKind { BadMagic, UnsupportedVersion, Truncated, SymbolOutOfRange, Malformed };

class FormatError : public std::runtime_error {
public:
    FormatError(FormatErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    FormatErrorKind kind() const { return kind_; }

private:
    FormatErrorKind kind_;
};

/// Carry-propagating range encoder: 64-bit low, 32-bit range, byte-wise output.
class RangeEncoder {
public:
    /// Codes the interval [start, start + size) out of `total`; total <= 2^16.
    void encode(std::uint32_t start, std::uint32_t size, std::uint32_t total);
    /// Sixteen raw bits at uniform probability.
    void encode_raw16(std::uint32_t value);
    std::vector<std::uint8_t> finish();

private:
    void shift_low();

    std::uint64_t low_ = 0;
    std::uint32_t range_ = 0xFFFFFFFFu;
    std::uint8_t cache_ = 0;
    std::uint64_t cache_size_ = 1;
    std::vector<std::uint8_t> out_;
};

class RangeDecoder {
public:
    explicit RangeDecoder(std::span<const std::uint8_t> data);

    /// Scaled target within [0, total); throws SymbolOutOfRange on corrupt input.
    std::uint32_t target(std::uint32_t total);
    void consume(std::uint32_t start, std::uint32_t size);
    std::uint32_t decode_raw16();
    /// True once every input byte has been read.
    bool exhausted() const { return pos_ == data_.size(); }

private:
    std::uint8_t next();

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
    std::uint32_t code_ = 0;
    std::uint32_t range_ = 0xFFFFFFFFu;
};

/// Frequency table of one symbol. Lattice indices are grouped into buckets of
/// 2^shift consecutive values starting at `first`, a window of about eight
/// deviations around the predicted mean; the bucket is range coded and the
/// position inside it is sent as raw bits. The last slot is an escape followed
/// by a raw 16-bit index.
struct SymbolTable {
    std::int32_t first = 0;
    int shift = 0;
    std::vector<std::uint32_t> cumulative;  // bucket count + 2 entries
    std::uint32_t total() const { return cumulative.back(); }
    std::size_t buckets() const { return cumulative.size() - 2; }
};

/// Discretized N(mean, sigma^2) over lattice indices with bin width `step`.
SymbolTable build_table(double mean, double sigma, double step);

/// Everything the container stores.
struct SceneModel {
    scc::AnchorSet anchors;
    scc::HashGrid grid;
    scc::ContextModel model;
    std::optional<scc::GaussianDecoder> decoder;
};

/// Narrows all stored values to float32 and replaces every attribute by its
/// lattice value k * step (semi-soft rounding with `tau`, then k = round(f / step)).
SceneModel quantize_for_storage(SceneModel scene, double tau = 1.0);

struct EncodeStats {
    std::size_t header_bytes = 0;
    std::size_t weight_bytes = 0;
    std::size_t location_bytes = 0;
    std::size_t payload_bytes = 0;
    std::size_t total_bytes = 0;
    std::size_t escapes = 0;
    /// Sum of -log2 p over coded symbols under the context model.
    double estimate_bits = 0.0;
    /// Sum of -log2 (freq / total) over coded symbols, the ideal length of this exact code.
    double table_bits = 0.0;
};

/// Throws InvalidArgument if a symbol falls outside [-2^15, 2^15).
std::vector<std::uint8_t> encode(const SceneModel& scene, EncodeStats* stats = nullptr);
SceneModel decode(std::span<const std::uint8_t> bytes);

/// Bytes of the plain float32 serialization of the same anchors (locations and attributes).
std::size_t raw_float_size(const scc::AnchorSet& anchors);

}  // namespace bloomgs::codec
