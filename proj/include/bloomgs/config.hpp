// Copyright Contributors to the BloomGS Project
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: an INI file of `key = value` lines grouped in sections.
// Every key has a default; unknown sections or keys are rejected.
#pragma once

#include "bloomgs/core.hpp"
#include "bloomgs/dpr.hpp"
#include "bloomgs/geometry.hpp"
#include "bloomgs/scc.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace bloomgs {

struct CameraConfig {
    int width = 64;
    int height = 64;
    double focal = 55.4;

    Camera initial_camera() const;
};

struct SccConfig {
    int feature_dim = 50;
    int k = 10;
    std::vector<int> resolutions{16, 32, 64, 128};
    int table_log2 = 13;
    int level_features = 4;
    double lambda_vol = 1e-2;
    double lambda_entropy = 2e-3;
    /// Anchor voxel size as a fraction of the cloud bounding-box diagonal.
    double anchor_spacing = 0.01;
    double tau = 1.0;

    std::vector<scc::HashLevel> levels() const;
};

struct OptimConfig {
    double lr_offsets = 1e-2;
    double lr_scaling = 1e-3;
    double lr_features = 5e-3;
    double lr_grid = 5e-3;
    double lr_mlp = 2e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct ProviderConfig {
    std::string spec = "synthetic:room";
    double timeout_seconds = 600.0;
    int poll_interval_ms = 50;
    /// Synthetic provider only: per-view affine distortion of estimated depth,
    /// scale in [1 - d, 1 + d] and shift in [-d, d]. View 0 is always exact.
    double synthetic_depth_distortion = 0.0;
};

struct RunConfig {
    std::string prompt = "a cozy living room";
    std::uint64_t seed = 0;
    int iterations = 2000;
    int checkpoint_every = 500;
    double lambda_ssim = 0.2;
    /// Disables the depth-prior term (ablation).
    bool use_dpr = true;
    std::size_t min_overlap = 16;
    CameraConfig camera;
    geometry::TrajectoryConfig trajectory;
    dpr::DprConfig dpr;
    SccConfig scc;
    OptimConfig optim;
    ProviderConfig provider;

    /// Throws ConfigError naming the offending key.
    void validate() const;
};

/// Parses INI text over the defaults. Throws ConfigError on syntax errors,
/// unknown keys or invalid values.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
/// Every key with its effective value, in a form parse_config accepts.
std::string dump_config(const RunConfig& config);

}  // namespace bloomgs
