// Copyright Contributors to the BloomGS Project
// SPDX-License-Identifier: Apache-2.0

#include "bloomgs/codec.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

namespace bloomgs::codec {
namespace {

constexpr std::uint32_t kTopValue = 1u << 24;
constexpr std::uint32_t kTableTotal = 1u << 16;
constexpr double kWindowSigmas = 8.0;
// Buckets are widened until one spans at most 1/32 of a deviation.
constexpr int kBucketResolutionLog2 = 5;
constexpr int kMaxShift = 16;

// ---------------------------------------------------------------------------
// Little-endian byte IO

class Writer {
public:
    void u8(std::uint8_t v) { bytes.push_back(v); }
    void u16(std::uint16_t v) { put(v, 2); }
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
    void raw(std::span<const std::uint8_t> b) { bytes.insert(bytes.end(), b.begin(), b.end()); }

    std::vector<std::uint8_t> bytes;

private:
    void put(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }
    double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
    std::span<const std::uint8_t> take(std::uint64_t n) {
        if (n > remaining()) throw FormatError(FormatErrorKind::Truncated, "stream ends inside a field");
        auto s = bytes_.subspan(pos_, static_cast<std::size_t>(n));
        pos_ += static_cast<std::size_t>(n);
        return s;
    }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::uint64_t get(int n) {
        if (static_cast<std::size_t>(n) > remaining())
            throw FormatError(FormatErrorKind::Truncated, "stream ends inside the header");
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += n;
        return v;
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Bucketed symbol tables

struct Table {
    std::int64_t origin = 0;  // first lattice index of bucket 0
    int shift = 0;            // bucket width is 2^shift
    std::vector<std::uint32_t> cumulative;

    std::size_t buckets() const { return cumulative.size() - 2; }
    std::size_t escape() const { return buckets(); }
    std::uint32_t total() const { return cumulative.back(); }
    std::int64_t end() const { return origin + (static_cast<std::int64_t>(buckets()) << shift); }
};

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    std::int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

Table make_table(double mean, double sigma, double step) {
    if (!(sigma > 0.0) || !(step > 0.0) || !std::isfinite(mean))
        throw InvalidArgument("symbol model needs finite mean and positive step and deviation");
    const double spread = sigma / step;
    Table t;
    if (spread >= 1.0) t.shift = std::clamp(std::ilogb(spread) - kBucketResolutionLog2, 0, kMaxShift);
    const std::int64_t width = std::int64_t{1} << t.shift;

    const double center_real = std::clamp(std::round(mean / step), static_cast<double>(kSymbolMin),
                                          static_cast<double>(kSymbolMax));
    const auto center = static_cast<std::int64_t>(center_real);
    const double half_window = std::min(std::ceil(kWindowSigmas * spread / static_cast<double>(width)) + 1.0, 4096.0);
    const auto m = static_cast<std::int64_t>(half_window);
    const std::int64_t m_lo = std::max(-m, floor_div(kSymbolMin - center, width));
    const std::int64_t m_hi = std::min(m, floor_div(kSymbolMax - center, width) + 1);
    t.origin = center + m_lo * width;
    const auto nb = static_cast<std::size_t>(m_hi - m_lo);

    std::vector<double> mass(nb + 1);
    double covered = 0.0;
    for (std::size_t b = 0; b < nb; ++b) {
        const double k0 = static_cast<double>(t.origin + static_cast<std::int64_t>(b) * width);
        const double lo = ((k0 - 0.5) * step - mean) / sigma;
        const double hi = ((k0 + static_cast<double>(width) - 0.5) * step - mean) / sigma;
        mass[b] = ad::normal_mass(lo, hi);
        covered += mass[b];
    }
    mass[nb] = std::max(0.0, 1.0 - covered);

    const double spare = static_cast<double>(kTableTotal - (nb + 1));
    t.cumulative.resize(nb + 2);
    t.cumulative[0] = 0;
    for (std::size_t s = 0; s <= nb; ++s) {
        const auto freq = 1u + static_cast<std::uint32_t>(std::floor(std::max(0.0, mass[s]) * spare));
        t.cumulative[s + 1] = t.cumulative[s] + freq;
    }
    if (t.total() > kTableTotal) throw NumericError("symbol table exceeds the coder precision");
    return t;
}

double slot_bits(const Table& t, std::size_t slot) {
    return -std::log2(static_cast<double>(t.cumulative[slot + 1] - t.cumulative[slot]) / t.total());
}

void encode_bits(RangeEncoder& enc, std::uint32_t value, int bits) {
    while (bits > 0) {
        const int n = std::min(bits, 16);
        bits -= n;
        enc.encode((value >> bits) & ((1u << n) - 1u), 1, 1u << n);
    }
}

std::uint32_t decode_bits(RangeDecoder& dec, int bits) {
    std::uint32_t value = 0;
    while (bits > 0) {
        const int n = std::min(bits, 16);
        bits -= n;
        const std::uint32_t v = dec.target(1u << n);
        dec.consume(v, 1);
        value |= v << bits;
    }
    return value;
}

// Returns the table bits spent.
double encode_symbol(RangeEncoder& enc, const Table& t, std::int64_t k, std::size_t& escapes) {
    if (k >= t.origin && k < t.end()) {
        const auto d = static_cast<std::uint64_t>(k - t.origin);
        const std::size_t slot = static_cast<std::size_t>(d >> t.shift);
        enc.encode(t.cumulative[slot], t.cumulative[slot + 1] - t.cumulative[slot], t.total());
        encode_bits(enc, static_cast<std::uint32_t>(d & ((std::uint64_t{1} << t.shift) - 1)), t.shift);
        return slot_bits(t, slot) + t.shift;
    }
    const std::size_t esc = t.escape();
    enc.encode(t.cumulative[esc], t.cumulative[esc + 1] - t.cumulative[esc], t.total());
    enc.encode_raw16(static_cast<std::uint32_t>(k - kSymbolMin));
    ++escapes;
    return slot_bits(t, esc) + 16.0;
}

std::int64_t decode_symbol(RangeDecoder& dec, const Table& t) {
    const std::uint32_t target = dec.target(t.total());
    const auto it = std::upper_bound(t.cumulative.begin(), t.cumulative.end(), target);
    const auto slot = static_cast<std::size_t>(it - t.cumulative.begin()) - 1;
    dec.consume(t.cumulative[slot], t.cumulative[slot + 1] - t.cumulative[slot]);
    std::int64_t k;
    if (slot == t.escape()) {
        k = static_cast<std::int64_t>(dec.decode_raw16()) + kSymbolMin;
        if (k >= t.origin && k < t.end())
            throw FormatError(FormatErrorKind::SymbolOutOfRange, "escaped symbol lies inside its window");
    } else {
        k = t.origin + (static_cast<std::int64_t>(slot) << t.shift) + decode_bits(dec, t.shift);
    }
    if (k < kSymbolMin || k > kSymbolMax) throw FormatError(FormatErrorKind::SymbolOutOfRange, "decoded symbol out of range");
    return k;
}

// ---------------------------------------------------------------------------
// Weight blob

void put_dense(std::vector<double>& blob, const scc::Dense& d) {
    blob.insert(blob.end(), d.weight.begin(), d.weight.end());
    blob.insert(blob.end(), d.bias.begin(), d.bias.end());
}

scc::Dense take_dense(std::span<const double> blob, std::size_t& pos, std::size_t in, std::size_t out) {
    scc::Dense d;
    d.in = in;
    d.out = out;
    d.weight.assign(blob.begin() + pos, blob.begin() + pos + in * out);
    pos += in * out;
    d.bias.assign(blob.begin() + pos, blob.begin() + pos + out);
    pos += out;
    return d;
}

std::size_t dense_size(std::size_t in, std::size_t out) { return in * out + out; }

void check_model(const SceneModel& s) {
    s.anchors.validate();
    const auto d = static_cast<std::size_t>(s.anchors.attribute_dim());
    const std::size_t h = static_cast<std::size_t>(scc::kHiddenWidth);
    const auto& m = s.model;
    auto ok = [](const scc::Dense& x, std::size_t in, std::size_t out) {
        return x.in == in && x.out == out && x.weight.size() == in * out && x.bias.size() == out;
    };
    if (!ok(m.trunk, s.grid.output_dim(), h) || !ok(m.quant_head, h, 3) || !ok(m.gauss_head, h, 2 * d))
        throw InvalidArgument("context model does not match the grid and anchor layout");
    if (s.decoder && (!ok(s.decoder->hidden, s.anchors.feature_dim, h) ||
                      !ok(s.decoder->output, h, 11 * static_cast<std::size_t>(s.anchors.k))))
        throw InvalidArgument("Gaussian decoder does not match the anchor layout");
    if (s.anchors.feature_dim > 0xFFFF || s.anchors.k > 0xFFFF || s.grid.levels().size() > 0xFF ||
        s.anchors.size() > 0xFFFFFFFFu)
        throw InvalidArgument("scene dimensions exceed the container fields");
    for (const auto& lv : s.grid.levels())
        if (lv.resolution > 0xFFFF || lv.features > 0xFF) throw InvalidArgument("hash level exceeds the container fields");
}

}  // namespace

// ---------------------------------------------------------------------------
// Range coder

void RangeEncoder::shift_low() {
    if (static_cast<std::uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
        const auto carry = static_cast<std::uint8_t>(low_ >> 32);
        std::uint8_t temp = cache_;
        do {
            out_.push_back(static_cast<std::uint8_t>(temp + carry));
            temp = 0xFF;
        } while (--cache_size_ != 0);
        cache_ = static_cast<std::uint8_t>(low_ >> 24);
    }
    ++cache_size_;
    low_ = (low_ & 0x00FFFFFFu) << 8;
}

void RangeEncoder::encode(std::uint32_t start, std::uint32_t size, std::uint32_t total) {
    if (size == 0 || total == 0 || total > kTableTotal || start + size > total)
        throw InvalidArgument("range coder interval is empty or out of bounds");
    range_ /= total;
    low_ += static_cast<std::uint64_t>(start) * range_;
    range_ *= size;
    while (range_ < kTopValue) {
        range_ <<= 8;
        shift_low();
    }
}

void RangeEncoder::encode_raw16(std::uint32_t value) { encode(value & 0xFFFFu, 1, 1u << 16); }

std::vector<std::uint8_t> RangeEncoder::finish() {
    for (int i = 0; i < 5; ++i) shift_low();
    return std::move(out_);
}

RangeDecoder::RangeDecoder(std::span<const std::uint8_t> data) : data_(data) {
    for (int i = 0; i < 5; ++i) code_ = (code_ << 8) | next();
}

std::uint8_t RangeDecoder::next() {
    if (pos_ >= data_.size()) throw FormatError(FormatErrorKind::Truncated, "coded payload is truncated");
    return data_[pos_++];
}

std::uint32_t RangeDecoder::target(std::uint32_t total) {
    range_ /= total;
    const std::uint32_t v = code_ / range_;
    if (v >= total) throw FormatError(FormatErrorKind::SymbolOutOfRange, "coded value outside the symbol table");
    return v;
}

void RangeDecoder::consume(std::uint32_t start, std::uint32_t size) {
    code_ -= start * range_;
    range_ *= size;
    while (range_ < kTopValue) {
        code_ = (code_ << 8) | next();
        range_ <<= 8;
    }
}

std::uint32_t RangeDecoder::decode_raw16() {
    const std::uint32_t v = target(1u << 16);
    consume(v, 1);
    return v;
}

// ---------------------------------------------------------------------------

SymbolTable build_table(double mean, double sigma, double step) {
    const Table t = make_table(mean, sigma, step);
    SymbolTable out;
    out.first = static_cast<std::int32_t>(t.origin);
    out.shift = t.shift;
    out.cumulative = t.cumulative;
    return out;
}

SceneModel quantize_for_storage(SceneModel scene, double tau) {
    scc::narrow_in_place(scene.anchors.locations);
    scc::narrow_in_place(scene.grid);
    scc::narrow_in_place(scene.model);
    if (scene.decoder) scc::narrow_in_place(*scene.decoder);
    const auto ctx = scc::evaluate_context(scene.anchors, scene.grid, scene.model);
    scene.anchors = scc::snap_to_lattice(scc::quantize_infer(scene.anchors, ctx, tau), ctx);
    return scene;
}

std::vector<std::uint8_t> encode(const SceneModel& input, EncodeStats* stats) {
    check_model(input);
    SceneModel s = input;
    scc::narrow_in_place(s.anchors.locations);
    scc::narrow_in_place(s.grid);
    scc::narrow_in_place(s.model);
    if (s.decoder) scc::narrow_in_place(*s.decoder);
    const auto& a = s.anchors;
    const std::size_t n = a.size();
    const int d = a.attribute_dim();

    Writer w;
    w.raw(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("BLMS"), 4));
    w.u16(kVersion);
    w.u16(s.decoder ? kFlagDecoder : 0);
    w.u32(static_cast<std::uint32_t>(n));
    w.u16(static_cast<std::uint16_t>(a.feature_dim));
    w.u16(static_cast<std::uint16_t>(a.k));
    w.u8(static_cast<std::uint8_t>(s.grid.levels().size()));
    for (const auto& lv : s.grid.levels()) {
        w.u16(static_cast<std::uint16_t>(lv.resolution));
        w.u32(lv.table_size);
        w.u8(static_cast<std::uint8_t>(lv.features));
    }
    const std::size_t header_end = w.bytes.size();

    std::vector<double> blob(s.grid.table());
    put_dense(blob, s.model.trunk);
    put_dense(blob, s.model.quant_head);
    put_dense(blob, s.model.gauss_head);
    if (s.decoder) {
        put_dense(blob, s.decoder->hidden);
        put_dense(blob, s.decoder->output);
    }
    if (blob.size() * 4 > 0xFFFFFFFFu) throw InvalidArgument("weight blob exceeds the container field");
    w.u32(static_cast<std::uint32_t>(blob.size() * 4));
    for (double v : blob) w.f32(v);
    const std::size_t weights_end = w.bytes.size();
    for (double v : a.locations) w.f32(v);
    const std::size_t locations_end = w.bytes.size();

    EncodeStats st;
    if (n > 0) {
        const auto ctx = scc::evaluate_context(a, s.grid, s.model);
        RangeEncoder enc;
        for (std::size_t i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) {
                const double step = ctx.step_for(i, a, j);
                const double mean = ctx.mean[i * d + j];
                const double sigma = ctx.sigma[i * d + j];
                const double v = a.attribute(i, j);
                if (!std::isfinite(v / step) || std::abs(std::round(v / step)) > 1e9)
                    throw InvalidArgument("attribute symbol out of range");
                const std::int64_t k = scc::lattice_index(v, step);
                if (k < kSymbolMin || k > kSymbolMax) throw InvalidArgument("attribute symbol out of range");
                const Table t = make_table(mean, sigma, step);
                st.table_bits += encode_symbol(enc, t, k, st.escapes);
                st.estimate_bits -= std::log2(scc::feature_probability(static_cast<double>(k) * step, step, mean, sigma));
            }
        const auto payload = enc.finish();
        w.u64(payload.size());
        w.raw(payload);
        st.payload_bytes = payload.size();
    } else {
        w.u64(0);
    }
    st.header_bytes = header_end + 4 + 8;
    st.weight_bytes = weights_end - header_end - 4;
    st.location_bytes = locations_end - weights_end;
    st.total_bytes = w.bytes.size();
    if (stats) *stats = st;
    return std::move(w.bytes);
}

SceneModel decode(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    const auto magic = r.take(4);
    if (std::memcmp(magic.data(), "BLMS", 4) != 0) throw FormatError(FormatErrorKind::BadMagic, "not a BLMS stream");
    const std::uint16_t version = r.u16();
    if (version != kVersion)
        throw FormatError(FormatErrorKind::UnsupportedVersion, "unsupported BLMS version " + std::to_string(version));
    const std::uint16_t flags = r.u16();
    if ((flags & ~kFlagDecoder) != 0) throw FormatError(FormatErrorKind::Malformed, "unknown flag bits");
    const std::uint32_t n = r.u32();
    const int feature_dim = r.u16();
    const int k = r.u16();
    if (feature_dim == 0 || k == 0) throw FormatError(FormatErrorKind::Malformed, "zero anchor dimensions");
    const int level_count = r.u8();
    if (level_count == 0) throw FormatError(FormatErrorKind::Malformed, "hash grid without levels");
    std::vector<scc::HashLevel> levels;
    for (int l = 0; l < level_count; ++l) {
        scc::HashLevel lv;
        lv.resolution = r.u16();
        lv.table_size = r.u32();
        lv.features = r.u8();
        levels.push_back(lv);
    }

    SceneModel s;
    try {
        s.grid = scc::HashGrid(levels);
    } catch (const InvalidArgument& e) {
        throw FormatError(FormatErrorKind::Malformed, e.what());
    }
    const std::size_t d = static_cast<std::size_t>(feature_dim) + 6 + 3 * static_cast<std::size_t>(k);
    const std::size_t h = static_cast<std::size_t>(scc::kHiddenWidth);
    std::size_t expected = s.grid.table().size() + dense_size(s.grid.output_dim(), h) + dense_size(h, 3) +
                           dense_size(h, 2 * d);
    const bool has_decoder = (flags & kFlagDecoder) != 0;
    if (has_decoder) expected += dense_size(feature_dim, h) + dense_size(h, 11 * static_cast<std::size_t>(k));

    const std::uint32_t blob_bytes = r.u32();
    if (blob_bytes != expected * 4) throw FormatError(FormatErrorKind::Malformed, "weight blob length mismatch");
    if (static_cast<std::uint64_t>(blob_bytes) > r.remaining())
        throw FormatError(FormatErrorKind::Truncated, "stream ends inside the weight blob");
    std::vector<double> blob(expected);
    for (double& v : blob) v = r.f32();
    std::copy_n(blob.begin(), s.grid.table().size(), s.grid.table().begin());
    std::size_t pos = s.grid.table().size();
    s.model.trunk = take_dense(blob, pos, s.grid.output_dim(), h);
    s.model.quant_head = take_dense(blob, pos, h, 3);
    s.model.gauss_head = take_dense(blob, pos, h, 2 * d);
    if (has_decoder) {
        scc::GaussianDecoder dec;
        dec.hidden = take_dense(blob, pos, feature_dim, h);
        dec.output = take_dense(blob, pos, h, 11 * static_cast<std::size_t>(k));
        s.decoder = std::move(dec);
    }

    if (static_cast<std::uint64_t>(n) * 12 > r.remaining())
        throw FormatError(FormatErrorKind::Truncated, "stream ends inside the location blob");
    s.anchors = scc::AnchorSet(feature_dim, k, n);
    for (double& v : s.anchors.locations) v = r.f32();
    const std::uint64_t payload_len = r.u64();
    const auto payload = r.take(payload_len);
    if (r.remaining() != 0) throw FormatError(FormatErrorKind::Malformed, "trailing bytes after the payload");
    for (double v : s.anchors.locations)
        if (!std::isfinite(v)) throw FormatError(FormatErrorKind::Malformed, "non-finite anchor location");
    for (double v : blob)
        if (!std::isfinite(v)) throw FormatError(FormatErrorKind::Malformed, "non-finite model weight");

    if (n == 0) {
        if (payload_len != 0) throw FormatError(FormatErrorKind::Malformed, "payload present for an empty scene");
        return s;
    }
    const auto ctx = scc::evaluate_context(s.anchors, s.grid, s.model);
    RangeDecoder dec(payload);
    const int dd = static_cast<int>(d);
    for (std::size_t i = 0; i < n; ++i)
        for (int j = 0; j < dd; ++j) {
            const double step = ctx.step_for(i, s.anchors, j);
            const Table t = make_table(ctx.mean[i * d + j], ctx.sigma[i * d + j], step);
            s.anchors.attribute(i, j) = static_cast<double>(decode_symbol(dec, t)) * step;
        }
    if (!dec.exhausted()) throw FormatError(FormatErrorKind::Malformed, "unused bytes in the coded payload");
    return s;
}

std::size_t raw_float_size(const scc::AnchorSet& anchors) {
    return anchors.size() * (3 + static_cast<std::size_t>(anchors.attribute_dim())) * 4;
}

}  // namespace bloomgs::codec
