// Copyright Contributors to the BloomGS Project
// SPDX-License-Identifier: Apache-2.0
//
// Frame providers: the image inpainting and depth estimation capabilities the
// generation loop depends on. Every call carries the camera it is made for so a
// provider can serve view-consistent content.
#pragma once

#include "bloomgs/config.hpp"
#include "bloomgs/core.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace bloomgs {

/// Camera a provider call is made for; index is the position along the trajectory.
struct ViewRequest {
    int index = 0;
    Camera camera;
};

class FrameProvider {
public:
    virtual ~FrameProvider() = default;

    virtual ColorImage initial_image(const std::string& prompt, const ViewRequest& view) = 0;
    /// Must return `partial` unchanged wherever mask = 1.
    virtual ColorImage complete_image(const ColorImage& partial, const Mask& mask, const std::string& prompt,
                                      const ViewRequest& view) = 0;
    virtual DepthMap estimate_depth(const ColorImage& image, const ViewRequest& view) = 0;
    /// Ground-truth view for evaluation, when the provider has one.
    virtual std::optional<ColorImage> reference_view(const Camera&) { return std::nullopt; }
};

/// Throws ProviderError listing differing pixels if `response` changes any mask = 1
/// pixel of `partial`. Pixels are compared at 8-bit precision, the precision of
/// every image a provider exchanges.
void check_mask_preserved(const ColorImage& partial, const Mask& mask, const ColorImage& response);

/// Procedural closed room with textured walls, floor and ceiling and a few
/// objects, ray cast analytically. Colors are 8-bit levels and depths are
/// float32 values so images and depths survive their file formats unchanged.
class SyntheticProvider : public FrameProvider {
public:
    /// Known scene ids: "room". Throws ProviderError otherwise.
    SyntheticProvider(const std::string& scene_id, std::uint64_t seed, double depth_distortion = 0.0);

    ColorImage initial_image(const std::string& prompt, const ViewRequest& view) override;
    ColorImage complete_image(const ColorImage& partial, const Mask& mask, const std::string& prompt,
                              const ViewRequest& view) override;
    /// Analytic z-depth; views other than 0 get a per-view affine distortion when enabled.
    DepthMap estimate_depth(const ColorImage& image, const ViewRequest& view) override;
    std::optional<ColorImage> reference_view(const Camera& camera) override;

    /// Analytic image and z-depth of `camera`.
    ColorImage render_color(const Camera& camera) const;
    DepthMap render_depth(const Camera& camera) const;
    /// Scale and shift applied to view `index`'s depth estimate.
    std::pair<double, double> depth_distortion(int index) const;

    struct Scene;

private:
    std::shared_ptr<const Scene> scene_;
    std::uint64_t seed_;
    double distortion_;
};

/// Out-of-process provider speaking a file protocol under `root`.
///
/// Call n (counting from 0 across all calls) writes its inputs to
/// requests/NNNN_<kind>.* and then waits for responses/NNNN_<kind>.*:
///   initial   request .json (prompt, camera)                      response .png
///   complete  request .png + _mask.png + .json                    response .png
///   depth     request .png + .json                                response .pfm
/// Responses must appear atomically (write then rename). Pre-populated
/// responses are consumed in order.
class DirectoryProvider : public FrameProvider {
public:
    DirectoryProvider(std::filesystem::path root, double timeout_seconds, int poll_interval_ms);

    ColorImage initial_image(const std::string& prompt, const ViewRequest& view) override;
    ColorImage complete_image(const ColorImage& partial, const Mask& mask, const std::string& prompt,
                              const ViewRequest& view) override;
    DepthMap estimate_depth(const ColorImage& image, const ViewRequest& view) override;

    int calls() const { return calls_; }

private:
    std::filesystem::path request(const std::string& kind);
    std::filesystem::path await(const std::filesystem::path& response) const;

    std::filesystem::path root_;
    double timeout_;
    int poll_ms_;
    int calls_ = 0;
};

/// "synthetic:<id>" or "dir:<path>". Throws ConfigError on an unknown scheme.
std::unique_ptr<FrameProvider> make_provider(const std::string& spec, const ProviderConfig& config,
                                             std::uint64_t seed);

}  // namespace bloomgs
