// Copyright Contributors to the BloomGS Project
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails. Criteria 9 and 10 run the desk-scale pipeline from
// configs/desk.ini under the work directory.

#include "bloomgs/codec.hpp"
#include "bloomgs/config.hpp"
#include "bloomgs/dpr.hpp"
#include "bloomgs/geometry.hpp"
#include "bloomgs/optim.hpp"
#include "bloomgs/pipeline.hpp"
#include "bloomgs/provider.hpp"
#include "bloomgs/renderer.hpp"
#include "bloomgs/scc.hpp"
#include "codec_fixture.hpp"
#include "oracles.hpp"
#include "support.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>
#include <string>

#ifdef __GLIBC__
#include <malloc.h>
#endif

using namespace bloomgs;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

// Collects failed checks; the first few are kept for the report line.
class Checks {
public:
    void expect(bool ok, const std::string& what) {
        if (ok) return;
        if (failures_++ < 3) detail_ += (detail_.empty() ? "" : "; ") + what;
    }
    Outcome outcome(const std::string& summary) const {
        if (failures_ == 0) return {true, summary};
        return {false, std::to_string(failures_) + " failed check(s): " + detail_};
    }

private:
    int failures_ = 0;
    std::string detail_;
};

std::string fmt(const char* f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

// ---------------------------------------------------------------------------
// 1. project(unproject(.)) is bit-exact

Outcome geometry_round_trip() {
    Checks c;
    Rng rng(101);
    SyntheticProvider room("room", 101);
    const RunConfig defaults;
    for (int trial = 0; trial < 20; ++trial) {
        Camera cam;
        ColorImage img;
        DepthMap depth;
        if (trial % 2 == 0) {
            cam = testing::random_camera(rng, 64, 64);
            img = testing::random_image(rng, 64, 64);
            depth = testing::random_depth(rng, 64, 64);
        } else {
            cam = geometry::yawed_camera(defaults.camera.initial_camera(), rng.uniform(-2.0, 2.0), Vec3::Zero());
            img = room.render_color(cam);
            depth = room.render_depth(cam);
        }
        const auto p = geometry::project(geometry::unproject(img, depth, cam, testing::full_mask(64, 64)), cam);
        c.expect(p.image == img, "color differs in trial " + std::to_string(trial));
        c.expect(p.depth == depth, "depth differs in trial " + std::to_string(trial));
        c.expect(p.mask == testing::full_mask(64, 64), "mask differs in trial " + std::to_string(trial));
    }
    return c.outcome("20 triples at 64x64 bit-exact");
}

// ---------------------------------------------------------------------------
// 2. depth alignment inverts affine perturbations

Outcome depth_alignment() {
    Checks c;
    Rng rng(102);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto ref = testing::random_depth(rng, 32, 32, 2.5, 6.0);
        const double a = rng.uniform(0.5, 2.0), b = rng.uniform(-1.0, 1.0);
        DepthMap warped(32, 32);
        for (int v = 0; v < 32; ++v)
            for (int u = 0; u < 32; ++u) warped.set(u, v, a * ref.value(u, v) + b);
        const auto r = geometry::align_depth(warped, ref, testing::full_mask(32, 32));
        const double es = testing::rel_diff(r.scale, 1.0 / a), et = testing::rel_diff(r.shift, -b / a);
        worst = std::max({worst, es, et});
        c.expect(es < 1e-9 && et < 1e-9, "trial " + std::to_string(trial) + fmt(" rel error %.3g", std::max(es, et)));
    }
    return c.outcome("100 perturbations, worst relative error " + fmt("%.2g", worst));
}

// ---------------------------------------------------------------------------
// 3. analytic versus finite-difference gradients

Outcome gradient_suite() {
    Checks c;
    Rng rng(103);
    double worst = 0.0;
    auto record = [&](const char* name, const optim::GradCheckReport& r) {
        worst = std::max(worst, r.max_relative_error);
        c.expect(r.max_relative_error < 1e-4, std::string(name) + fmt(" rel error %.3g", r.max_relative_error));
    };
    for (int trial = 0; trial < 3; ++trial) {
        std::vector<double> prior, rendered, weight;
        for (int i = 0; i < 64; ++i) {
            prior.push_back(rng.uniform(1.0, 3.0));
            rendered.push_back(prior.back() + rng.uniform(-0.5, 0.5));
            weight.push_back(rng.uniform(0.2, 1.0));
        }
        Mask valid(8, 8, 1);
        for (int i = 0; i < 6; ++i) valid(static_cast<int>(rng.below(8)), static_cast<int>(rng.below(8))) = 0;
        dpr::DprConfig cfg;
        cfg.sigma_color = 0.5;
        auto depth_check = [&](const std::function<dpr::LossGrad(std::span<const double>)>& f) {
            return optim::grad_check(
                [&](ad::Tape&, std::span<const ad::Var> x) { return dpr::as_node(x[0], f(x[0].value())); }, {rendered});
        };
        record("pixel", depth_check([&](auto d) { return dpr::pixel_depth_loss(prior, d, weight, valid); }));
        record("cmd", depth_check([&](auto d) { return dpr::dist_depth_loss(prior, d, valid, 5); }));
        record("smooth", depth_check([&](auto d) { return dpr::smooth_depth_loss(d, valid, cfg); }));

        const auto target = testing::random_image(rng, 8, 8);
        const auto start = testing::random_image(rng, 8, 8);
        record("photometric", optim::grad_check(
                                  [&](ad::Tape&, std::span<const ad::Var> in) {
                                      return render::photometric_loss(in[0], target, valid);
                                  },
                                  {start.data()}));
    }

    scc::AnchorSet a(50, 10, 64);
    for (double& x : a.locations) x = rng.uniform(-1, 1);
    for (double& x : a.features) x = rng.normal() * 0.5;
    for (double& x : a.scaling) x = rng.uniform(0.01, 0.05);
    for (double& x : a.offsets) x = rng.uniform(-0.5, 0.5);
    auto grid = scc::HashGrid::create({{2, 64, 4}, {4, 64, 4}}, rng);
    auto model = scc::ContextModel::create(grid.output_dim(), a.attribute_dim(), rng);
    for (double& b : model.quant_head.bias) b = rng.uniform(-0.5, 0.5);
    for (double& t : grid.table()) t = rng.uniform(-0.5, 0.5);
    model.fit_prior(a);
    std::vector<double> noise(64 * static_cast<std::size_t>(a.attribute_dim()));
    for (double& e : noise) e = rng.normal();
    const auto lookup = grid.lookup(a.locations, scc::Bounds::of(a.locations));
    record("entropy", optim::grad_check(
                          [&](ad::Tape&, std::span<const ad::Var> in) {
                              const scc::ModelVars v{in[0], in[1], in[2], in[3], in[4],
                                                     in[5], in[6], in[7], in[8], in[9]};
                              return scc::entropy_loss(v, a, grid, lookup, scc::QuantMode::Noise, noise)
                                  .bits_per_parameter;
                          },
                          {a.features, a.scaling, a.offsets, grid.table(), model.trunk.weight, model.trunk.bias,
                           model.quant_head.weight, model.quant_head.bias, model.gauss_head.weight,
                           model.gauss_head.bias}));
    return c.outcome("pixel, cmd, smooth, photometric, entropy; worst relative error " + fmt("%.2g", worst));
}

// ---------------------------------------------------------------------------
// 4. cmd_distance against brute-force moment sums

Outcome cmd_oracle() {
    Checks c;
    Rng rng(104);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> p(2 + rng.below(60)), q(2 + rng.below(60));
        for (double& x : p) x = rng.uniform(-3, 5);
        for (double& x : q) x = rng.normal() * 2.0 + 0.5;
        const int k = 1 + static_cast<int>(rng.below(6));
        const double got = dpr::cmd_distance(p, q, k), ref = testing::oracle::cmd(p, q, k);
        worst = std::max(worst, std::abs(got - ref));
        c.expect(std::abs(got - ref) <= 1e-12, "trial " + std::to_string(trial) + fmt(" differs by %.3g", got - ref));
        c.expect(dpr::cmd_distance(p, p, k) == 0.0, "CMD(P,P) != 0");
        c.expect(got == dpr::cmd_distance(q, p, k), "asymmetric");
    }
    return c.outcome("50 pairs, worst difference " + fmt("%.2g", worst));
}

// ---------------------------------------------------------------------------
// 5. renderer blend against direct evaluation

Outcome renderer_oracle() {
    Checks c;
    Rng rng(105);
    auto random_gaussian = [&](double spread) {
        Gaussian3D g;
        g.mean = Vec3(rng.uniform(-spread, spread), rng.uniform(-spread, spread), rng.uniform(1.5, 3.0));
        g.scale = Vec3(rng.uniform(0.05, 0.3), rng.uniform(0.05, 0.3), rng.uniform(0.05, 0.3));
        Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
        q.normalize();
        g.rotation = {q.w(), q.x(), q.y(), q.z()};
        g.opacity = rng.uniform(0.2, 0.9);
        g.color = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
        return g;
    };
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<Gaussian3D> gs;
        const int n = 1 + static_cast<int>(rng.below(4));
        for (int i = 0; i < n; ++i) gs.push_back(random_gaussian(0.05));
        const double f = rng.uniform(5.0, 30.0);
        const Camera cam(Intrinsics{f, f, 0.5, 0.5}, Mat3::Identity(), Vec3::Zero(), 1, 1);
        const render::SplatScene s{gs, Vec3(rng.uniform(), rng.uniform(), rng.uniform())};
        const auto out = render::render(s, cam);
        const auto ref = testing::oracle::blend(gs, cam, 0, 0, s.background);
        for (int ch = 0; ch < 3; ++ch) worst = std::max(worst, std::abs(out.color.at(0, 0, ch) - ref.color[ch]));
        worst = std::max({worst, std::abs(out.depth.value(0, 0) - ref.depth), std::abs(out.alpha(0, 0) - ref.alpha)});
    }
    c.expect(worst < 1e-9, fmt("single-pixel blend differs by %.3g", worst));

    // Telescoping: with black splats on a white background the color is the
    // final transmittance, so alpha + color = 1.
    double tele = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<Gaussian3D> gs;
        for (int i = 0; i < 30; ++i) gs.push_back(random_gaussian(0.6));
        render::SplatScene s{gs, Vec3::Ones()};
        render::SplatScene black = s;
        for (auto& g : black.gaussians) g.color = Vec3::Zero();
        const Camera cam = testing::simple_camera(16, 16, 20.0);
        const auto out = render::render(s, cam), dark = render::render(black, cam);
        for (int v = 0; v < 16; ++v)
            for (int u = 0; u < 16; ++u) tele = std::max(tele, std::abs(out.alpha(u, v) + dark.color.at(u, v, 0) - 1.0));
    }
    c.expect(tele < 1e-9, fmt("telescoping off by %.3g", tele));
    return c.outcome("100 single-pixel scenes within " + fmt("%.2g", worst) + ", telescoping within " +
                     fmt("%.2g", tele));
}

// ---------------------------------------------------------------------------
// 6. quantization semantics

Outcome quantization() {
    Checks c;
    const double q = scc::quantize_infer(0.3, 0.25, 1.0);
    c.expect(std::abs(q - 0.262490) <= 1e-6, fmt("quantize_infer(0.3, 0.25, 1) = %.9f", q));
    Rng rng(106);
    int checked = 0;
    double worst = 0.0;
    while (checked < 10000) {
        const double f = rng.uniform(-5, 5), w = rng.uniform(0.01, 1.0);
        if (std::abs(f / w - std::floor(f / w) - 0.5) < 1e-3) continue;
        const double hard = std::round(f / w) * w;
        const double soft = scc::quantize_infer(f, w, 1e-6);
        // Same bin, and the residual tau * tanh(.) * step stays within tau * step
        // up to the rounding of the final sum.
        c.expect(scc::lattice_index(soft, w) == scc::lattice_index(f, w), fmt("bin changed at f = %.17g", f));
        const double err = std::abs(soft - hard);
        worst = std::max(worst, err / w);
        c.expect(err <= 1e-6 * w + 4 * std::numeric_limits<double>::epsilon() * std::abs(hard),
                 fmt("tau=1e-6 deviates from hard rounding by %.3g steps", err / w));
        ++checked;
    }
    const int n = 100000;
    const double step = 0.25;
    double s = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
        const double e = scc::quantize_train(1.0, step, rng) - 1.0;
        s += e;
        s2 += e * e;
    }
    const double sd = std::sqrt(s2 / n - (s / n) * (s / n));
    c.expect(std::abs(sd / step - 1.0) <= 0.015, fmt("noise std / step = %.4f", sd / step));
    return c.outcome(fmt("q = %.6f", q) + fmt(", hard-rounding residual %.2g steps", worst) +
                     fmt(", noise std / step %.4f", sd / step));
}

// ---------------------------------------------------------------------------
// 7. codec round trip and rate

Outcome codec_rate() {
    Checks c;
    Rng rng(107);
    int round_trips = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t sizes[] = {1, 17, 512};
        const std::size_t n = sizes[trial % 3];
        const auto scene = testing::random_coded_scene(rng, n, trial % 2 == 0);
        const auto bytes = codec::encode(scene);
        const auto back = codec::decode(bytes);
        const bool same = back.anchors == scene.anchors && back.grid == scene.grid && back.model == scene.model &&
                          back.decoder == scene.decoder;
        c.expect(same, "round trip differs in trial " + std::to_string(trial));
        round_trips += same;
    }
    double worst_ratio = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
        const auto scene = testing::random_coded_scene(rng, 512);
        codec::EncodeStats st;
        codec::encode(scene, &st);
        const double payload_bits = 8.0 * static_cast<double>(st.payload_bytes);
        c.expect(payload_bits <= 1.05 * st.estimate_bits + 64 * 8,
                 fmt("payload %.0f bits", payload_bits) + fmt(" over 1.05 x estimate %.0f + 64 bytes", st.estimate_bits));
        c.expect(payload_bits >= st.table_bits, fmt("payload below the ideal code length %.0f bits", st.table_bits));
        worst_ratio = std::max(worst_ratio, payload_bits / st.estimate_bits);
    }
    return c.outcome(std::to_string(round_trips) + " bit-exact round trips, payload <= " +
                     fmt("%.4f x entropy estimate", worst_ratio));
}

// ---------------------------------------------------------------------------
// 8. probability model

Outcome probability() {
    Checks c;
    const double p = scc::feature_probability(0, 1, 0, 1);
    c.expect(std::abs(p - 0.382925) <= 1e-6, fmt("feature_probability(0, 1, 0, 1) = %.9f", p));
    Rng rng(108);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const double mu = rng.uniform(-3, 3), sigma = rng.uniform(0.05, 2.0), w = rng.uniform(0.05, 1.0);
        const auto lo = static_cast<long>(std::floor((mu - 12 * sigma) / w)) - 1;
        const auto hi = static_cast<long>(std::ceil((mu + 12 * sigma) / w)) + 1;
        double total = 0.0;
        for (long k = lo; k <= hi; ++k) total += scc::feature_probability(static_cast<double>(k) * w, w, mu, sigma);
        worst = std::max(worst, std::abs(total - 1.0));
    }
    c.expect(worst <= 1e-6, fmt("lattice mass off by %.3g", worst));
    return c.outcome(fmt("p = %.6f", p) + fmt(", lattice mass within %.2g of 1", worst));
}

// ---------------------------------------------------------------------------
// 9 and 10. desk-scale pipeline

struct RunSummary {
    pipeline::TrainResult train;
    pipeline::CompressReport compress;
    pipeline::EvalReport eval;
};

RunSummary run_pipeline(const RunConfig& cfg, const fs::path& out) {
    fs::remove_all(out);
    auto provider = make_provider(cfg.provider.spec, cfg.provider, cfg.seed);
    pipeline::run_generate(cfg, *provider, out);
    RunSummary r;
    r.train = pipeline::run_train(cfg, out);
    r.compress = pipeline::run_compress(cfg, out);
    r.eval = pipeline::run_eval(cfg, provider.get(), out);
    return r;
}

struct DeskRun {
    RunSummary full;
    RunSummary ablation;
};

DeskRun desk_run(const fs::path& work, const std::string& tag) {
    RunConfig cfg = load_config(BLOOMGS_SOURCE_DIR "/configs/desk.ini");
    DeskRun d;
    d.full = run_pipeline(cfg, work / ("full" + tag));
    cfg.use_dpr = false;
    d.ablation = run_pipeline(cfg, work / ("ablation" + tag));
    return d;
}

Outcome end_to_end(const fs::path& work, double* seconds) {
    Checks c;
    const auto t0 = std::chrono::steady_clock::now();
    const auto d = desk_run(work, "");
    *seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto& f = d.full;
    const double before = f.train.objective_initial.total, after = f.train.objective_final.total;
    c.expect(after < before, fmt("(a) objective %.6f", before) + fmt(" -> %.6f", after));
    const double gain = f.eval.heldout_psnr - f.eval.heldout_psnr_initial;
    c.expect(!f.eval.heldout.empty() && gain >= 8.0, fmt("(b) held-out gain %.2f dB", gain));
    c.expect(f.compress.ratio <= 0.30, fmt("(c) size ratio %.4f", f.compress.ratio));
    c.expect(f.eval.depth_error < d.ablation.eval.depth_error,
             fmt("(d) depth error %.5f", f.eval.depth_error) + fmt(" vs ablation %.5f", d.ablation.eval.depth_error));
    c.expect(*seconds < 30 * 60, fmt("runtime %.0f s", *seconds));
    return c.outcome(fmt("(a) objective %.4f", before) + fmt(" -> %.4f", after) +
                     fmt("; (b) held-out PSNR %.2f", f.eval.heldout_psnr_initial) +
                     fmt(" -> %.2f dB", f.eval.heldout_psnr) + fmt(" (+%.2f)", gain) +
                     fmt("; (c) %.0f", static_cast<double>(f.compress.file_bytes)) +
                     fmt(" / %.0f bytes", static_cast<double>(f.compress.raw_float_bytes)) +
                     fmt(" = %.3f", f.compress.ratio) + fmt("; (d) depth error %.4f", f.eval.depth_error) +
                     fmt(" vs %.4f without DPR", d.ablation.eval.depth_error));
}

Outcome determinism(const fs::path& work) {
    Checks c;
    if (!fs::exists(work / "full" / "scene.blms")) desk_run(work, "");
    desk_run(work, "_repeat");
    for (const char* run : {"full", "ablation"})
        for (const char* file : {"scene.blms", "report.json"}) {
            const auto a = slurp(work / run / file), b = slurp(work / (std::string(run) + "_repeat") / file);
            c.expect(!a.empty() && a == b, std::string(run) + "/" + file + " differs");
        }
    return c.outcome("scene.blms and report.json byte-identical for the full and ablation runs");
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    CLI::App app{"BloomGS acceptance suite"};
    std::vector<int> only;
    std::string work = (fs::temp_directory_path() / "bloomgs_acceptance").string();
    app.add_option("--only", only, "criteria to run (default: all)")->delimiter(',')->check(CLI::Range(1, 10));
    app.add_option("--work", work, "scratch directory of the end-to-end runs");
    CLI11_PARSE(app, argc, argv);
    const std::set<int> selected(only.begin(), only.end());

    struct Criterion {
        int id;
        const char* name;
        double limit_seconds;  // 0: no limit
        std::function<Outcome()> run;
    };
    double e2e_seconds = 0.0;
    const std::vector<Criterion> criteria = {
        {1, "geometry round trip", 5.0, geometry_round_trip},
        {2, "depth alignment", 0.0, depth_alignment},
        {3, "loss gradient suite", 120.0, gradient_suite},
        {4, "CMD oracle equivalence", 0.0, cmd_oracle},
        {5, "renderer blend oracle", 0.0, renderer_oracle},
        {6, "quantization semantics", 0.0, quantization},
        {7, "codec round trip and rate", 30.0, codec_rate},
        {8, "probability model", 0.0, probability},
        {9, "desk-scale end-to-end run", 0.0, [&] { return end_to_end(work, &e2e_seconds); }},
        {10, "determinism", 0.0, [&] { return determinism(work); }},
    };

    int failed = 0;
    for (const auto& cr : criteria) {
        if (!selected.empty() && !selected.count(cr.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = cr.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (cr.limit_seconds > 0 && secs >= cr.limit_seconds) {
            o.pass = false;
            o.detail += fmt("; runtime %.1f s over the limit", secs);
        }
        failed += !o.pass;
        std::printf("criterion %2d %s: %s (%s, %.1f s)\n", cr.id, o.pass ? "PASS" : "FAIL", cr.name, o.detail.c_str(),
                    secs);
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
