// Copyright Contributors to the BloomGS Project
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Exit codes: 0 success, 2 configuration error,
// 3 provider error, 4 numeric failure, 5 format or file error.

#include "bloomgs/config.hpp"
#include "bloomgs/geometry.hpp"
#include "bloomgs/io.hpp"
#include "bloomgs/pipeline.hpp"
#include "bloomgs/provider.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#ifdef __GLIBC__
#include <malloc.h>
#endif

using namespace bloomgs;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kProvider = 3, kNumeric = 4, kFormat = 5 };

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string provider;
    std::string resume;
    bool no_dpr = false;
    double yaw = 0.0;
    std::string state;
    std::string input;
};

RunConfig effective_config(const Options& o) {
    RunConfig cfg = o.config.empty() ? RunConfig{} : load_config(o.config);
    if (o.seed) cfg.seed = *o.seed;
    if (!o.provider.empty()) cfg.provider.spec = o.provider;
    if (o.no_dpr) cfg.use_dpr = false;
    cfg.validate();
    return cfg;
}

fs::path require_out(const Options& o) {
    if (o.out.empty()) throw ConfigError("--out <dir> is required");
    return o.out;
}

void print_terms(const char* label, const pipeline::LossTerms& t) {
    std::printf("%s: total %.6f  L_RGB %.6f  L_DPR %.6f  L_entropy %.4f bits  L_vol %.3g\n", label, t.total, t.rgb,
                t.dpr, t.entropy, t.volume);
}

int cmd_generate(const Options& o) {
    const auto cfg = effective_config(o);
    const auto out = require_out(o);
    auto provider = make_provider(cfg.provider.spec, cfg.provider, cfg.seed);
    pipeline::run_generate(cfg, *provider, out);
    std::printf("generated %d frames into %s\n", cfg.trajectory.num_cameras, out.string().c_str());
    return kOk;
}

int cmd_train(const Options& o) {
    const auto cfg = effective_config(o);
    const auto out = require_out(o);
    pipeline::TrainOptions opt;
    if (!o.resume.empty()) opt.resume = fs::path(o.resume);
    const auto r = pipeline::run_train(cfg, out, opt);
    std::printf("trained %d iterations, %zu anchors\n", r.iterations, r.state.anchors.size());
    print_terms("objective at initialization", r.objective_initial);
    print_terms("objective after training", r.objective_final);
    return kOk;
}

int cmd_compress(const Options& o) {
    const auto cfg = effective_config(o);
    const auto out = require_out(o);
    const auto r = pipeline::run_compress(cfg, out);
    std::printf("header      %10zu bytes\n", r.stats.header_bytes);
    std::printf("weights     %10zu bytes\n", r.stats.weight_bytes);
    std::printf("locations   %10zu bytes\n", r.stats.location_bytes);
    std::printf("payload     %10zu bytes (entropy estimate %.0f bytes)\n", r.stats.payload_bytes,
                r.stats.estimate_bits / 8.0);
    std::printf("total       %10zu bytes (file %zu bytes)\n", r.stats.total_bytes, r.file_bytes);
    std::printf("raw floats  %10zu bytes, ratio %.4f\n", r.raw_float_bytes, r.ratio);
    std::printf("%zu anchors, %.1f bits per anchor\n", r.anchors, r.bits_per_anchor);
    return kOk;
}

int cmd_decompress(const Options& o) {
    const auto out = require_out(o);
    const fs::path in = o.input.empty() ? out / "scene.blms" : fs::path(o.input);
    const auto state = pipeline::load_state(in);
    fs::create_directories(out);
    pipeline::save_state(out / "decompressed.state", state);
    std::printf("decoded %zu anchors into %s\n", state.anchors.size(), (out / "decompressed.state").string().c_str());
    return kOk;
}

int cmd_render(const Options& o) {
    const auto cfg = effective_config(o);
    const auto out = require_out(o);
    const fs::path in = o.state.empty() ? out / "scene.blms" : fs::path(o.state);
    const auto state = pipeline::load_state(in);
    const Camera initial = cfg.camera.initial_camera();
    const auto yaws = geometry::trajectory_yaws(cfg.trajectory.num_cameras, cfg.trajectory.rotation_step);
    double reach = 0.0;
    for (double y : yaws) reach = std::max(reach, std::abs(y));
    if (std::abs(o.yaw) > reach)
        std::fprintf(stderr, "warning: yaw %.4f lies outside the trajectory range [-%.4f, %.4f]; extrapolating\n",
                     o.yaw, reach, reach);
    const Camera cam = geometry::yawed_camera(initial, o.yaw, cfg.trajectory.pivot.value_or(initial.center()));
    const auto img = pipeline::render_state(state, cam);
    DepthMap depth(cam.width(), cam.height());
    for (int v = 0; v < cam.height(); ++v)
        for (int u = 0; u < cam.width(); ++u)
            if (img.alpha(u, v) > 0.0) depth.set(u, v, img.depth.value(u, v));
    fs::create_directories(out / "renders");
    char stem[64];
    std::snprintf(stem, sizeof stem, "yaw_%+.4f", o.yaw);
    io::write_png(out / "renders" / (std::string(stem) + ".png"), img.color);
    io::write_pfm(out / "renders" / (std::string(stem) + ".pfm"), depth);
    std::printf("wrote %s.png and %s.pfm\n", (out / "renders" / stem).string().c_str(),
                (out / "renders" / stem).string().c_str());
    return kOk;
}

int cmd_eval(const Options& o) {
    const auto cfg = effective_config(o);
    const auto out = require_out(o);
    // Only providers with analytic references serve held-out views; others would block on requests.
    std::unique_ptr<FrameProvider> provider;
    if (cfg.provider.spec.rfind("synthetic:", 0) == 0) provider = make_provider(cfg.provider.spec, cfg.provider, cfg.seed);
    const auto r = pipeline::run_eval(cfg, provider.get(), out);
    for (const auto& v : r.views) std::printf("%-16s psnr %7.3f  masked %7.3f\n", v.name.c_str(), v.psnr, v.masked_psnr);
    for (const auto& v : r.heldout) std::printf("%-16s psnr %7.3f\n", v.name.c_str(), v.psnr);
    std::printf("mean psnr %.3f, masked %.3f\n", r.mean_psnr, r.mean_masked_psnr);
    if (!r.heldout.empty())
        std::printf("held-out psnr %.3f (initialization %.3f)\n", r.heldout_psnr, r.heldout_psnr_initial);
    std::printf("depth error %.5f (initialization %.5f)\n", r.depth_error, r.depth_error_initial);
    return kOk;
}

int cmd_config(const Options& o) {
    std::cout << dump_config(effective_config(o));
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
    // Training allocates and frees large buffers every step; keep them in the heap.
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    CLI::App app{"BloomGS: progressive scene generation, anchor training and compression"};
    app.require_subcommand(1);
    Options o;
    app.add_option("--config", o.config, "INI configuration file")->check(CLI::ExistingFile);
    app.add_option("--seed", o.seed, "random seed (overrides run.seed)");
    app.add_option("--out", o.out, "run directory");
    app.add_option("--provider", o.provider, "synthetic:<id> or dir:<path>");

    auto* gen = app.add_subcommand("generate", "build the point cloud along the camera trajectory")->fallthrough();
    auto* tr = app.add_subcommand("train", "optimize anchors against the generated views")->fallthrough();
    tr->add_option("--resume", o.resume, "checkpoint to continue from");
    tr->add_flag("--no-dpr", o.no_dpr, "drop the depth-prior term (ablation)");
    auto* cmp = app.add_subcommand("compress", "encode the latest checkpoint into scene.blms")->fallthrough();
    auto* dec = app.add_subcommand("decompress", "decode a compressed scene into a state file")->fallthrough();
    dec->add_option("--in", o.input, "compressed scene (default <out>/scene.blms)");
    auto* ren = app.add_subcommand("render", "render a view of a trained state")->fallthrough();
    ren->add_option("--yaw", o.yaw, "yaw in radians relative to the initial camera");
    ren->add_option("--state", o.state, "scene or state file (default <out>/scene.blms)");
    auto* ev = app.add_subcommand("eval", "report PSNR and depth metrics")->fallthrough();
    auto* cf = app.add_subcommand("config", "print the effective configuration")->fallthrough();
    cf->add_flag("--dump", "print every key with its value (the default)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfig;
    }

    try {
        if (*gen) return cmd_generate(o);
        if (*tr) return cmd_train(o);
        if (*cmp) return cmd_compress(o);
        if (*dec) return cmd_decompress(o);
        if (*ren) return cmd_render(o);
        if (*ev) return cmd_eval(o);
        if (*cf) return cmd_config(o);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kConfig;
    } catch (const InvalidArgument& e) {
        std::fprintf(stderr, "invalid argument: %s\n", e.what());
        return kConfig;
    } catch (const ProviderError& e) {
        std::fprintf(stderr, "provider error: %s\n", e.what());
        return kProvider;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return kNumeric;
    } catch (const codec::FormatError& e) {
        std::fprintf(stderr, "format error: %s\n", e.what());
        return kFormat;
    } catch (const IoError& e) {
        std::fprintf(stderr, "file error: %s\n", e.what());
        return kFormat;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kFailure;
    }
    return kFailure;
}
