// Copyright Contributors to the BloomGS Project
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end stages: progressive generation of a point cloud, anchor training,
// compression and evaluation. Every stage reads its inputs from and writes its
// outputs to one run directory:
//
//   frames/frame_NNN.png   generated trajectory images
//   masks/mask_NNN.png     reprojection coverage of each frame (white = reprojected)
//   depth/depth_NNN.pfm    aligned depth prior of each frame
//   cloud.ply              final point cloud
//   cameras.json           trajectory and support cameras
//   config.ini             effective configuration
//   train_log.csv          per-iteration loss terms
//   checkpoints/           ckpt_NNNNNN.bin training checkpoints
//   scene.blms             compressed scene
//   report.json            sizes and metrics (deterministic for a fixed seed)
#pragma once

#include "bloomgs/codec.hpp"
#include "bloomgs/config.hpp"
#include "bloomgs/provider.hpp"
#include "bloomgs/renderer.hpp"
#include "bloomgs/scc.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace bloomgs::pipeline {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Generation

struct GenerateResult {
    std::vector<Camera> trajectory;
    std::vector<double> yaws;
    std::vector<Camera> support;
    std::vector<ColorImage> frames;
    std::vector<Mask> masks;
    std::vector<DepthMap> depths;  // aligned priors; frame 0 is the raw estimate
    PointCloud cloud;
    /// Points contributed by each frame.
    std::vector<std::size_t> points_added;
};

/// Runs the generation loop and persists every intermediate under `out`.
/// Failures inside the loop are rethrown with the failing camera index.
GenerateResult generate(const RunConfig& config, FrameProvider& provider, const fs::path& out);

// ---------------------------------------------------------------------------
// Training data and model state

struct TrainingView {
    Camera camera;
    ColorImage image;
    /// Pixels supervised photometrically: all of a trajectory view, the
    /// reprojection-valid pixels of a support view.
    Mask mask;
    bool trajectory = false;
    /// Aligned depth prior (trajectory views only).
    DepthMap prior;
};

struct TrainingData {
    PointCloud cloud;
    std::vector<TrainingView> views;  // trajectory views first, then support views
    std::vector<double> yaws;         // trajectory yaw of each trajectory view
};

/// Reads the generation outputs and reprojects the cloud into every camera.
TrainingData load_training_data(const fs::path& out, const RunConfig& config);

struct SceneState {
    scc::AnchorSet anchors;
    scc::HashGrid grid;
    scc::ContextModel model;
    scc::GaussianDecoder decoder;

    bool operator==(const SceneState&) const = default;
};

/// Anchors at the centroids of occupied voxels (edge = spacing x bounding-box
/// diagonal), zero features, scaling equal to the voxel edge, offsets uniform
/// in [-0.5, 0.5]. Locations are stored at float32 precision.
SceneState initialize_state(const PointCloud& cloud, const RunConfig& config);

void save_state(const fs::path& path, const SceneState& state);
/// Reads a state file or a compressed scene, detected by its magic bytes.
SceneState load_state(const fs::path& path);

/// The state as stored by the codec: float32 values and lattice attributes.
SceneState storage_form(const SceneState& state, double tau);
codec::SceneModel to_scene_model(const SceneState& state);

/// Pixels stop blending once their transmittance drops below this value.
inline constexpr double kMinTransmittance = 1e-4;
/// Renderer settings of every pipeline stage.
render::RenderSettings render_settings();

render::RenderOutput render_state(const SceneState& state, const Camera& camera);

// ---------------------------------------------------------------------------
// Training

struct LossTerms {
    double rgb = 0.0;
    double pixel = 0.0;
    double dist = 0.0;
    double smooth = 0.0;
    double dpr = 0.0;
    double entropy = 0.0;  // bits per parameter
    double volume = 0.0;
    double total = 0.0;
};

/// Anchors whose Gaussians can reach the image of `camera`.
std::vector<std::uint32_t> visible_anchors(const scc::AnchorSet& anchors, const Camera& camera);

/// Mean of the training objective over all views with a fixed evaluation noise
/// draw, so two states are compared on identical terms.
LossTerms evaluate_objective(const SceneState& state, const TrainingData& data, const RunConfig& config);

struct TrainOptions {
    /// Checkpoint to continue from.
    std::optional<fs::path> resume;
    /// Stops after this iteration count (the run is then incomplete).
    std::optional<int> stop_at;
};

struct TrainResult {
    SceneState state;
    int iterations = 0;
    LossTerms objective_initial;
    LossTerms objective_final;
    /// Loss terms of every iteration run by this call, in order.
    std::vector<LossTerms> history;
    int first_iteration = 0;
};

/// Optimizes the objective for config.iterations steps. Writes train_log.csv and
/// checkpoints under `out`. A non-finite loss saves checkpoints/last_good.bin
/// and throws NumericError.
TrainResult train(const RunConfig& config, const TrainingData& data, const fs::path& out,
                  const TrainOptions& options = {});

/// Path of the checkpoint written after `iteration` steps.
fs::path checkpoint_path(const fs::path& out, int iteration);
/// Highest-numbered checkpoint under `out`.
fs::path latest_checkpoint(const fs::path& out);
/// Checkpoint contents.
struct Checkpoint {
    int iteration = 0;
    SceneState state;
};
Checkpoint load_checkpoint(const fs::path& path);

// ---------------------------------------------------------------------------
// Compression and evaluation

struct CompressReport {
    codec::EncodeStats stats;
    std::size_t file_bytes = 0;
    std::size_t raw_float_bytes = 0;
    std::size_t anchors = 0;
    double ratio = 0.0;  // file bytes / raw float bytes
    double bits_per_anchor = 0.0;
};

CompressReport compress(const SceneState& state, double tau, const fs::path& file);

/// 10 log10(1 / mse) over masked pixels, capped at 100 dB.
double psnr(const ColorImage& a, const ColorImage& b, const Mask* mask = nullptr);
inline constexpr double kPsnrCap = 100.0;

struct ViewMetrics {
    std::string name;
    double psnr = 0.0;
    double masked_psnr = 0.0;
};

struct EvalReport {
    std::vector<ViewMetrics> views;
    double mean_psnr = 0.0;
    double mean_masked_psnr = 0.0;
    /// Held-out views between trajectory stops (provider references only).
    std::vector<ViewMetrics> heldout;
    double heldout_psnr = 0.0;
    double heldout_psnr_initial = 0.0;
    /// Mean |rendered depth - prior| over valid prior pixels of trajectory views.
    double depth_error = 0.0;
    double depth_error_initial = 0.0;
};

/// Yaws halfway between neighbouring trajectory stops.
std::vector<double> heldout_yaws(const std::vector<double>& trajectory_yaws);

EvalReport evaluate(const SceneState& state, const SceneState& initial, const TrainingData& data,
                    const RunConfig& config, FrameProvider* provider);

// ---------------------------------------------------------------------------
// Commands: each writes its section of report.json.

void run_generate(const RunConfig& config, FrameProvider& provider, const fs::path& out);
TrainResult run_train(const RunConfig& config, const fs::path& out, const TrainOptions& options = {});
CompressReport run_compress(const RunConfig& config, const fs::path& out);
EvalReport run_eval(const RunConfig& config, FrameProvider* provider, const fs::path& out);

}  // namespace bloomgs::pipeline
