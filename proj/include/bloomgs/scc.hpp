// Copyright Contributors to the BloomGS Project
// SPDX-License-Identifier: Apache-2.0
//
// Anchor-based splat representation with a hash-grid context model.
//
// Every anchor carries a location, a feature vector, six scaling values and K
// three-dimensional offsets. The attributes (feature, scaling, offsets) are
// quantized with a step predicted from the hash-grid feature at the anchor's
// location and are entropy-modelled by a per-dimension Gaussian whose mean and
// deviation come from the same context.
//
// Attribute vectors are laid out per anchor as [feature | scaling | offsets],
// D = feature_dim + 6 + 3K values in total.
#pragma once

#include "bloomgs/autodiff.hpp"
#include "bloomgs/core.hpp"
#include "bloomgs/renderer.hpp"
#include "bloomgs/rng.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace bloomgs::scc {

enum class Group : int { Feature = 0, Scaling = 1, Offset = 2 };

/// Base quantization step per attribute group.
inline constexpr std::array<double, 3> kEta = {2.5e-1, 2.5e-4, 5e-2};
/// Lower bound applied to interval probabilities.
inline constexpr double kProbabilityFloor = 1e-12;
inline constexpr double kSigmaFloor = 1e-6;
/// Hidden width of every two-layer map (part of the bitstream format).
inline constexpr int kHiddenWidth = 32;

struct AnchorSet {
    int feature_dim = 50;
    int k = 10;
    std::vector<double> locations;  // N x 3
    std::vector<double> features;   // N x feature_dim
    std::vector<double> scaling;    // N x 6
    std::vector<double> offsets;    // N x 3K

    AnchorSet() = default;
    AnchorSet(int feature_dim, int k, std::size_t count);

    std::size_t size() const { return locations.size() / 3; }
    int attribute_dim() const { return feature_dim + 6 + 3 * k; }
    Vec3 location(std::size_t i) const { return {locations[3 * i], locations[3 * i + 1], locations[3 * i + 2]}; }

    /// Group and within-group index of attribute dimension j.
    std::pair<Group, int> split_dim(int j) const;
    double attribute(std::size_t anchor, int j) const;
    double& attribute(std::size_t anchor, int j);

    /// Anchors i in `indices`, in that order.
    AnchorSet subset(std::span<const std::uint32_t> indices) const;

    /// Throws InvalidArgument on inconsistent sizes or non-finite values.
    void validate() const;
    bool operator==(const AnchorSet&) const = default;
};

/// Axis-aligned box used to normalize positions into the hash grid.
struct Bounds {
    Vec3 lo = Vec3::Zero();
    Vec3 hi = Vec3::Ones();

    static Bounds of(std::span<const double> locations);
    /// Position mapped to [0, 1]^3 (clamped); degenerate axes map to 0.
    Vec3 normalize(const Vec3& p) const;
};

struct HashLevel {
    int resolution = 16;
    std::uint32_t table_size = 1u << 13;
    int features = 4;
    bool operator==(const HashLevel&) const = default;
};

/// Trilinear lookups of one batch of positions: per level, 8 table rows and weights.
struct HashLookup {
    std::size_t count = 0;
    std::vector<std::uint32_t> rows;  // count x levels x 8, absolute row index into the table
    std::vector<double> weights;      // count x levels x 8
};

class HashGrid {
public:
    HashGrid() = default;
    explicit HashGrid(std::vector<HashLevel> levels);

    /// Four levels at resolutions 16, 32, 64, 128 with 2^13 rows of 4 features each.
    static std::vector<HashLevel> default_levels();
    /// Table entries drawn uniformly from [-1e-4, 1e-4].
    static HashGrid create(std::vector<HashLevel> levels, Rng& rng);

    const std::vector<HashLevel>& levels() const { return levels_; }
    int output_dim() const { return output_dim_; }
    std::vector<double>& table() { return table_; }
    const std::vector<double>& table() const { return table_; }

    /// Spatial hash of an integer lattice corner:
    /// (x * 1) xor (y * 2654435761) xor (z * 805459861), modulo the table size.
    static std::uint32_t hash(std::int64_t x, std::int64_t y, std::int64_t z, std::uint32_t table_size);

    HashLookup lookup(std::span<const double> locations, const Bounds& bounds) const;
    /// Interpolated features, count x output_dim, levels concatenated.
    std::vector<double> interpolate(const HashLookup& lookup) const;
    std::vector<double> feature(const Vec3& position, const Bounds& bounds) const;

    bool operator==(const HashGrid&) const = default;

private:
    std::vector<HashLevel> levels_;
    std::vector<std::size_t> row_offset_;  // first row of each level
    std::vector<double> table_;            // all rows, `features` doubles per row
    int output_dim_ = 0;
};

/// Differentiable grid lookup: table node -> count x output_dim features.
ad::Var hash_features(const ad::Var& table, const HashGrid& grid, const HashLookup& lookup);

/// Dense layer parameters, weight is out x in row-major.
struct Dense {
    std::size_t in = 0;
    std::size_t out = 0;
    std::vector<double> weight;
    std::vector<double> bias;

    static Dense create(std::size_t in, std::size_t out, Rng& rng);
    /// Row-major batch forward, same accumulation order as ad::linear.
    std::vector<double> forward(std::span<const double> x) const;
    bool operator==(const Dense&) const = default;
};

/// Hash feature -> shared tanh trunk -> quantization head (3) and Gaussian head (2D).
struct ContextModel {
    Dense trunk;
    Dense quant_head;
    Dense gauss_head;

    static ContextModel create(int hash_dim, int attribute_dim, Rng& rng);
    /// Sets the Gaussian-head biases to the per-dimension mean and deviation of `anchors`.
    void fit_prior(const AnchorSet& anchors);
    int attribute_dim() const { return static_cast<int>(gauss_head.out / 2); }
    bool operator==(const ContextModel&) const = default;
};

/// Anchor feature -> tanh hidden -> per-offset raw Gaussian attributes
/// [opacity K | color 3K | rotation 4K | scale 3K].
struct GaussianDecoder {
    Dense hidden;
    Dense output;

    static GaussianDecoder create(int feature_dim, int k, Rng& rng, double opacity_bias = -1.0);
    bool operator==(const GaussianDecoder&) const = default;
};

/// Per-anchor context predictions.
struct ContextOutputs {
    std::size_t count = 0;
    int attribute_dim = 0;
    std::vector<double> step;   // count x 3 (one per group)
    std::vector<double> mean;   // count x D
    std::vector<double> sigma;  // count x D

    double step_for(std::size_t anchor, const AnchorSet& layout, int j) const {
        return step[anchor * 3 + static_cast<int>(layout.split_dim(j).first)];
    }
};

/// Evaluates the context model at every anchor location (bounds from the same set).
ContextOutputs evaluate_context(const AnchorSet& anchors, const HashGrid& grid, const ContextModel& model);

/// eta_group * (1 + tanh(modifier)).
double quant_step(double modifier, Group group);
/// f + N(0, step^2) drawn from `rng`.
double quantize_train(double f, double step, Rng& rng);
/// Nearest lattice index round(f / step).
std::int64_t lattice_index(double f, double step);
/// k step + tau tanh((f - k step) / tau) step with k = round(f / step). At
/// tau = 1 this is the usual semi-soft rounding; tau -> 0 gives hard rounding.
double quantize_infer(double f, double step, double tau = 1.0);
/// Mass of N(mean, sigma^2) on [value - step/2, value + step/2], floored at 1e-12.
double feature_probability(double value, double step, double mean, double sigma);

/// Which quantizer the differentiable entropy path applies.
enum class QuantMode {
    Identity,  // attributes used as-is (gradient checks)
    Noise,     // f + eps * step with eps fixed per call (training)
};

/// Parameter nodes of the compressible model.
struct ModelVars {
    ad::Var features;  // N x feature_dim
    ad::Var scaling;   // N x 6
    ad::Var offsets;   // N x 3K
    ad::Var grid_table;
    ad::Var trunk_w, trunk_b, quant_w, quant_b, gauss_w, gauss_b;
};

struct EntropyResult {
    ad::Var bits_per_parameter;  // beta * sum(-log2 p)
    /// Quantized attributes, group-major: [all features | all scaling | all offsets].
    ad::Var quantized;
    ad::Var features_hat;
    ad::Var scaling_hat;
    ad::Var offsets_hat;
};

/// Differentiable entropy estimate for a batch of anchors. `noise` holds one
/// standard-normal draw per attribute in group-major order (ignored for Identity).
EntropyResult entropy_loss(const ModelVars& vars, const AnchorSet& layout, const HashGrid& grid,
                           const HashLookup& lookup, QuantMode mode, std::span<const double> noise);

/// Same estimate for plain values: beta * sum(-log2 p(attribute)).
double entropy_loss(const AnchorSet& quantized, const ContextOutputs& context);

/// Total bits sum(-log2 p) of lattice values under the context model.
double entropy_bits(const AnchorSet& quantized, const ContextOutputs& context);

/// lambda_vol * volume + lambda_entropy * entropy.
double scc_loss(double entropy, double volume, double lambda_vol = 1e-2, double lambda_entropy = 2e-3);

/// Differentiable decode of anchors into flat Gaussian parameters (renderer layout):
/// mean = x + o_k * l[0:3], scale = |l[3:6]| * sigmoid(raw), rotation normalized
/// (raw + identity), opacity and color through sigmoid.
ad::Var anchors_to_gaussians(const ad::Var& features, const ad::Var& scaling, const ad::Var& offsets,
                             std::span<const double> locations, int feature_dim, int k,
                             const ad::Var& hidden_w, const ad::Var& hidden_b, const ad::Var& out_w,
                             const ad::Var& out_b);

/// Plain-value decode into a renderable scene.
render::SplatScene anchors_to_gaussians(const AnchorSet& anchors, const GaussianDecoder& decoder,
                                        const Vec3& background = Vec3::Zero());

/// Mean over Gaussians of the product of the three scales.
ad::Var volume_loss(const ad::Var& gaussians);
double volume_loss(const render::SplatScene& scene);

/// Semi-soft rounding of every attribute with the context steps.
AnchorSet quantize_infer(const AnchorSet& anchors, const ContextOutputs& context, double tau = 1.0);
/// Hard lattice values k * step, k = round(value / step).
AnchorSet snap_to_lattice(const AnchorSet& anchors, const ContextOutputs& context);

/// Round-trips every parameter through float32, the storage precision of the bitstream.
std::vector<double> narrow(std::span<const double> values);
void narrow_in_place(std::vector<double>& values);
void narrow_in_place(Dense& d);
void narrow_in_place(ContextModel& m);
void narrow_in_place(GaussianDecoder& d);
void narrow_in_place(HashGrid& g);

}  // namespace bloomgs::scc
